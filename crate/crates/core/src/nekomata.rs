//! Grid nekomata builders, their parameter equations, and circuit classification.

use serde::Serialize;

use crate::circuit::{Circuit, Gate, Layer, LocalState};
use crate::error::{QacError, Result};
use crate::transforms::fanout_tree;

/// Largest M accepted by `choose_m`.
pub const MAX_M: u64 = 1 << 48;

/// Largest grid the builders will emit.
pub const MAX_GRID_QUBITS: usize = 1 << 26;

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct GridParams {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: u64,
    pub delta: f64,
    pub epsilon: Option<f64>,
}

impl GridParams {
    /// Parameters from the target error, with M from `choose_m` and delta from `solve_delta`.
    pub fn from_epsilon(n: usize, epsilon: f64) -> Result<GridParams> {
        let m = choose_m(n, epsilon)?;
        Ok(GridParams {
            n,
            m,
            delta: solve_delta(n, m)?,
            epsilon: Some(epsilon),
        })
    }

    pub fn residual(&self) -> f64 {
        delta_residual(self.n, self.m, self.delta)
    }
}

/// ceil((ln 2 / 4) (n ln 2 / eps')^n) with eps' = 2 eps / 3.
pub fn choose_m(n: usize, epsilon: f64) -> Result<u64> {
    let raw = choose_m_raw(n, epsilon)?;
    if !raw.is_finite() || raw > MAX_M as f64 {
        return Err(QacError::TooLarge(format!(
            "M = {raw:.6e} for n = {n}, epsilon = {epsilon} exceeds 2^48"
        )));
    }
    Ok((raw.ceil() as u64).max(1))
}

/// The real number whose ceiling `choose_m` returns.
pub fn choose_m_raw(n: usize, epsilon: f64) -> Result<f64> {
    if n == 0 || !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(QacError::InvalidParameter(format!(
            "need n >= 1 and 0 < epsilon < 1 (got n = {n}, epsilon = {epsilon})"
        )));
    }
    let ln2 = std::f64::consts::LN_2;
    let eps_p = 2.0 * epsilon / 3.0;
    let base = ln2 * n as f64 / eps_p;
    Ok(ln2 / 4.0 * (n as f64 * base.ln()).exp())
}

/// (1 - 2 delta^n)^{2M}, evaluated through ln1p for small delta^n.
pub fn column_zero_power(n: usize, m: u64, delta: f64) -> f64 {
    let x = delta.powi(n as i32);
    (2.0 * m as f64 * (-2.0 * x).ln_1p()).exp()
}

pub fn delta_residual(n: usize, m: u64, delta: f64) -> f64 {
    (column_zero_power(n, m, delta) - 0.5).abs()
}

/// The root of (1 - 2 delta^n)^{2M} = 1/2 in (0, 2^{-1/n}), by bisection to float resolution.
pub fn solve_delta(n: usize, m: u64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(QacError::InvalidParameter(format!(
            "need n >= 1 and M >= 1 (got n = {n}, M = {m})"
        )));
    }
    let mut lo = 0.0f64;
    let mut hi = 0.5f64.powf(1.0 / n as f64);
    for _ in 0..2200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        // the left side decreases in delta
        if column_zero_power(n, m, mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick the endpoint with the smaller residual
    let best = if delta_residual(n, m, lo) <= delta_residual(n, m, hi) {
        lo
    } else {
        hi
    };
    Ok(best)
}

/// Grid position (row r, column c) in the column-major layout.
pub fn grid_qubit(n: usize, row: usize, col: usize) -> usize {
    col * n + row
}

fn check_grid(n: usize, m: u64, delta: f64) -> Result<usize> {
    if n == 0 || m == 0 {
        return Err(QacError::InvalidParameter(format!(
            "grid needs n >= 1 and M >= 1 (got n = {n}, M = {m})"
        )));
    }
    let hi = 0.5f64.powf(1.0 / n as f64);
    if !(delta > 0.0 && delta < hi) {
        return Err(QacError::InvalidParameter(format!(
            "delta = {delta} outside (0, {hi})"
        )));
    }
    if delta.powi(n as i32) > 0.25 {
        return Err(QacError::Precondition(format!(
            "delta^n = {} exceeds 1/4, the columns would not be nice",
            delta.powi(n as i32)
        )));
    }
    let total = (m as usize)
        .checked_add(1)
        .and_then(|c| c.checked_mul(n))
        .filter(|&t| t <= MAX_GRID_QUBITS)
        .ok_or_else(|| {
            QacError::TooLarge(format!("grid {n} x {} exceeds {MAX_GRID_QUBITS} qubits", m + 1))
        })?;
    Ok(total)
}

/// Depth-2 grid on n(M+1) qubits: one R-tensor per ancilla column, then one OR per row
/// into the target column (the last column).
pub fn build_depth2_nekomata(n: usize, m: u64, delta: f64) -> Result<Circuit> {
    let total = check_grid(n, m, delta)?;
    let m = m as usize;
    let f = LocalState::biased(delta);
    let cols: Vec<Gate> = (0..m)
        .map(|c| Gate::rtensor((0..n).map(|r| (grid_qubit(n, r, c), f))))
        .collect();
    let rows: Vec<Gate> = (0..n)
        .map(|r| {
            let ctl: Vec<usize> = (0..m).map(|c| grid_qubit(n, r, c)).collect();
            Gate::or(&ctl, grid_qubit(n, r, m))
        })
        .collect();
    let mut c = Circuit::new(total);
    c.push_layer(cols).push_layer(rows);
    let targets: Vec<usize> = (0..n).map(|r| grid_qubit(n, r, m)).collect();
    Ok(c.with_targets(&targets))
}

/// Number of core targets m = ceil(n / 2^{d-2}).
pub fn core_targets(n: usize, d: usize) -> usize {
    let block = 1usize << (d - 2).min(62);
    n.div_ceil(block)
}

/// Sizes of m contiguous balanced blocks covering n targets.
pub fn partition_sizes(n: usize, m: usize) -> Vec<usize> {
    let (base, extra) = (n / m, n % m);
    (0..m).map(|i| base + usize::from(i < extra)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthDReport {
    pub core: GridParams,
    pub core_targets: usize,
    pub blocks: Vec<usize>,
}

/// Depth-d construction: a depth-2 grid on m = ceil(n/2^{d-2}) targets, then CNOT fanout
/// trees spreading each core target over its block of new qubits.
///
/// `m_override` and `delta_override` replace the formula values (small-scale simulation).
pub fn build_depthd_nekomata(
    n: usize,
    d: usize,
    epsilon: f64,
    m_override: Option<u64>,
    delta_override: Option<f64>,
) -> Result<(Circuit, DepthDReport)> {
    if !(2..=64).contains(&d) || n == 0 {
        return Err(QacError::InvalidParameter(format!(
            "depth-d construction needs n >= 1 and 2 <= d <= 64 (got n = {n}, d = {d})"
        )));
    }
    let mcore = core_targets(n, d);
    let big_m = match m_override {
        Some(m) => m,
        None => choose_m(mcore, epsilon)?,
    };
    let delta = match delta_override {
        Some(x) => x,
        None => solve_delta(mcore, big_m)?,
    };
    let grid = build_depth2_nekomata(mcore, big_m, delta)?;
    let core_t = grid.target_indices();
    let blocks = partition_sizes(n, mcore);
    let total = grid.num_qubits + n - mcore;

    let mut c = grid.embed(total, &(0..grid.num_qubits).collect::<Vec<_>>());
    let mut fresh = grid.num_qubits;
    let mut targets = Vec::with_capacity(n);
    let mut tree_layers: Vec<Vec<Gate>> = Vec::new();
    for (i, &size) in blocks.iter().enumerate() {
        let mut wires = vec![core_t[i]];
        wires.extend(fresh..fresh + size - 1);
        fresh += size - 1;
        let tree = fanout_tree(size, 2)?.embed(total, &wires);
        for (k, l) in tree.layers.into_iter().enumerate() {
            if tree_layers.len() <= k {
                tree_layers.push(Vec::new());
            }
            tree_layers[k].extend(l.gates);
        }
        targets.extend(wires);
    }
    c.layers.extend(tree_layers.into_iter().map(Layer::new));
    let c = Circuit {
        targets: None,
        ..c
    }
    .with_targets(&targets);
    Ok((
        c,
        DepthDReport {
            core: GridParams {
                n: mcore,
                m: big_m,
                delta,
                epsilon: Some(epsilon),
            },
            core_targets: mcore,
            blocks,
        },
    ))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct ImpurityBound {
    /// 4 M delta^n (1 - delta^n - (1-delta)^n)
    pub union: f64,
    /// 4 M n delta^{n+1}
    pub relaxed: f64,
}

pub fn impurity_bound(n: usize, m: u64, delta: f64) -> ImpurityBound {
    let dn = delta.powi(n as i32);
    let mf = m as f64;
    ImpurityBound {
        union: 4.0 * mf * dn * (1.0 - dn - (1.0 - delta).powi(n as i32)),
        relaxed: 4.0 * mf * n as f64 * dn * delta,
    }
}

/// Exact probability that one column is neither all zeros nor all ones.
pub fn column_impurity_exact(n: usize, delta: f64) -> f64 {
    let dn = delta.powi(n as i32);
    let pure = (1.0 - 2.0 * dn).powi(2) + 4.0 * dn * (1.0 - delta).powi(n as i32);
    (1.0 - pure).max(0.0)
}

/// Exact probability that some column is impure.
pub fn grid_impurity_exact(n: usize, m: u64, delta: f64) -> f64 {
    1.0 - (1.0 - column_impurity_exact(n, delta)).powf(m as f64)
}

/// Exact all-zeros and all-ones target probabilities of the depth-2 grid.
///
/// A set S of s rows is all zero in one column with probability
/// (1-2 delta^n)^2 + 4 delta^n (delta^s - delta^n); inclusion-exclusion over S gives the all-ones law.
pub fn grid_target_law(n: usize, m: u64, delta: f64) -> (f64, f64) {
    let dn = delta.powi(n as i32);
    let z = (1.0 - 2.0 * dn).powi(2);
    let p = column_zero_power(n, m, delta);
    let mut q = 0.0;
    let mut binom = 1.0f64;
    for s in 0..=n {
        let ps = z + 4.0 * dn * (delta.powi(s as i32) - dn);
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        q += sign * binom * ps.powf(m as f64);
        binom = binom * (n - s) as f64 / (s + 1) as f64;
    }
    (p, q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationResult {
    pub purely_classical: bool,
    pub mostly_classical: bool,
    pub nice: bool,
    /// When mostly classical: the first-layer gates forming L (all other gates form C).
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub l: Layer,
    pub c: Circuit,
}

/// Probability that R_chi leaves |0...0> alone, prod_j |<0|chi_j>|^2.
pub fn zero_overlap(g: &Gate) -> Option<f64> {
    match g {
        Gate::RTensor { factors } => Some(factors.values().map(|s| s.amp0.norm_sqr()).product()),
        _ => None,
    }
}

/// Purely classical: every gate permutes basis states (up to phase).
/// Mostly classical: that holds after the first layer. Nice: additionally every
/// non-classical multi-qubit R-tensor gate in the first layer has zero overlap <= 1/4.
pub fn classify(c: &Circuit) -> ClassificationResult {
    let purely = c.gates().all(Gate::is_classical);
    let rest_classical = c.layers.iter().skip(1).flat_map(|l| &l.gates).all(Gate::is_classical);
    if !rest_classical {
        return ClassificationResult {
            purely_classical: false,
            mostly_classical: false,
            nice: false,
            witness: None,
        };
    }
    let first = c.layers.first().cloned().unwrap_or_default();
    let (lgates, cgates): (Vec<Gate>, Vec<Gate>) =
        first.gates.into_iter().partition(|g| !g.is_classical());
    // Toffoli, OR and fanout gates are always classical, so L holds only
    // one-qubit gates and R-tensor gates
    let nice = lgates
        .iter()
        .all(|g| !g.is_multi_qubit() || matches!(zero_overlap(g), Some(z) if z <= 0.25));
    let mut rest = Circuit {
        num_qubits: c.num_qubits,
        layers: Vec::new(),
        targets: c.targets.clone(),
    };
    if !cgates.is_empty() {
        rest.layers.push(Layer::new(cgates));
    }
    rest.layers.extend(c.layers.iter().skip(1).cloned());
    ClassificationResult {
        purely_classical: purely,
        mostly_classical: true,
        nice,
        witness: Some(Witness {
            l: Layer::new(lgates),
            c: rest,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevec::{best_nekomata_fidelity, run_zero};
    use approx::assert_abs_diff_eq;

    #[test]
    fn choose_m_examples() {
        assert_eq!(choose_m(2, 0.15).unwrap(), 34);
        assert_eq!(choose_m(1, 0.6).unwrap(), 1);
        assert_eq!(choose_m(2, 0.3).unwrap(), 9);
        assert_eq!(choose_m(4, 0.15).unwrap(), 102402);
        assert!(matches!(choose_m(12, 0.01), Err(QacError::TooLarge(_))));
        assert!(choose_m(0, 0.1).is_err());
        assert!(choose_m(2, 1.0).is_err());
    }

    #[test]
    fn solve_delta_closed_forms() {
        let d = solve_delta(1, 1).unwrap();
        assert_abs_diff_eq!(d, (1.0 - 0.5f64.sqrt()) / 2.0, epsilon = 1e-15);
        let d = solve_delta(2, 1).unwrap();
        assert_abs_diff_eq!(d, ((1.0 - 0.5f64.sqrt()) / 2.0).sqrt(), epsilon = 1e-15);
        assert!(delta_residual(2, 3, solve_delta(2, 3).unwrap()) <= 1e-12);
    }

    #[test]
    fn depth2_small_grid() {
        let delta = solve_delta(2, 3).unwrap();
        let c = build_depth2_nekomata(2, 3, delta).unwrap();
        assert_eq!(c.num_qubits, 8);
        assert_eq!((c.size(), c.depth()), (5, 2));
        assert_eq!(c.target_indices(), vec![6, 7]);
        let r = best_nekomata_fidelity(&run_zero(&c).unwrap(), &[6, 7]).unwrap();
        assert_abs_diff_eq!(r.p, 0.5, epsilon = 1e-10);
        let (p, q) = grid_target_law(2, 3, delta);
        assert_abs_diff_eq!(p, r.p, epsilon = 1e-12);
        assert_abs_diff_eq!(q, r.q, epsilon = 1e-12);
        let k = classify(&c);
        assert!(k.mostly_classical && k.nice && !k.purely_classical);
    }

    #[test]
    fn single_row_grid() {
        let delta = solve_delta(1, 1).unwrap();
        let c = build_depth2_nekomata(1, 1, delta).unwrap();
        assert_eq!(c.num_qubits, 2);
        let s = run_zero(&c).unwrap();
        let d = s.measurement_distribution(&[1]).unwrap();
        assert_abs_diff_eq!(d.prob(0), 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(d.prob(1), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn impurity_examples() {
        let b = impurity_bound(3, 5, 0.0);
        assert_eq!((b.union, b.relaxed), (0.0, 0.0));
        let b = impurity_bound(1, 7, 0.3);
        assert_abs_diff_eq!(b.union, 0.0, epsilon = 1e-16);
        let delta = solve_delta(2, 3).unwrap();
        let b = impurity_bound(2, 3, delta);
        assert!(b.union <= b.relaxed + 1e-15);
        assert!(b.union >= grid_impurity_exact(2, 3, delta));
    }

    #[test]
    fn depthd_matches_depth2_at_d2() {
        let (c, rep) = build_depthd_nekomata(3, 2, 0.3, Some(2), None).unwrap();
        let d2 = build_depth2_nekomata(3, 2, rep.core.delta).unwrap();
        assert_eq!(c, d2);
    }

    #[test]
    fn depthd_small() {
        let (c, rep) = build_depthd_nekomata(4, 3, 0.3, Some(3), None).unwrap();
        assert_eq!(rep.core_targets, 2);
        assert_eq!(c.size(), 3 + 2 + 2);
        assert!(c.depth() <= 3);
        let r = best_nekomata_fidelity(&run_zero(&c).unwrap(), &c.target_indices()).unwrap();
        assert!(r.fidelity >= 0.7, "{r:?}");
        let k = classify(&c);
        assert!(k.mostly_classical && k.nice);
        let (c8, _) = build_depthd_nekomata(8, 3, 0.3, Some(1), None).unwrap();
        assert!(c8.depth() <= 3);
    }

    #[test]
    fn classify_examples() {
        let mut c = Circuit::new(3);
        c.push_layer(vec![Gate::cnot(0, 1)]).push_layer(vec![Gate::cnot(1, 2)]);
        let k = classify(&c);
        assert!(k.purely_classical && k.mostly_classical && k.nice);

        let heavy = LocalState::real(0.9f64.sqrt(), 0.1f64.sqrt());
        let mut c = Circuit::new(3);
        c.push_layer(vec![Gate::rtensor([(0, heavy), (1, heavy)])])
            .push_layer(vec![Gate::cnot(0, 2)]);
        let k = classify(&c);
        assert!(k.mostly_classical && !k.nice);

        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::h(0)]).push_layer(vec![Gate::h(1)]);
        assert!(!classify(&c).mostly_classical);
    }
}
