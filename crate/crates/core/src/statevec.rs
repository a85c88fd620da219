//! Dense state-vector simulation. Qubit 0 is the most significant bit of a basis index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::circuit::{c_from_json, c_to_json, parse_error, Circuit, ComplexJson, Gate, LocalState, C64};
use crate::error::{QacError, Result};

/// Largest register simulated densely.
pub const MAX_QUBITS: usize = 24;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<C64>,
}

/// Bit mask of qubit `q` in an `n`-qubit basis index.
#[inline]
pub fn qmask(n: usize, q: usize) -> usize {
    1usize << (n - 1 - q)
}

/// Bit value of qubit `q` in basis index `i`.
#[inline]
pub fn bit(n: usize, i: usize, q: usize) -> usize {
    (i >> (n - 1 - q)) & 1
}

impl StateVector {
    pub fn zero(num_qubits: usize) -> Result<StateVector> {
        Self::basis(num_qubits, 0)
    }

    pub fn basis(num_qubits: usize, index: usize) -> Result<StateVector> {
        check_width(num_qubits)?;
        let dim = 1usize << num_qubits;
        if index >= dim {
            return Err(QacError::InvalidParameter(format!(
                "basis index {index} out of range for {num_qubits} qubits"
            )));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(StateVector { num_qubits, amps })
    }

    /// Basis state from a bit slice, bits[q] for qubit q.
    pub fn from_bits(bits: &[u8]) -> Result<StateVector> {
        let n = bits.len();
        let idx = bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b as usize & 1));
        Self::basis(n, idx)
    }

    /// Takes raw amplitudes and renormalizes them.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<StateVector> {
        let dim = amps.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(QacError::InvalidParameter(format!(
                "amplitude count {dim} is not a power of two"
            )));
        }
        let n = dim.trailing_zeros() as usize;
        check_width(n)?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(QacError::InvalidParameter("zero or non-finite norm".into()));
        }
        Ok(StateVector {
            num_qubits: n,
            amps: amps.into_iter().map(|a| a / norm).collect(),
        })
    }

    /// Product state of the given one-qubit states.
    pub fn product(states: &[LocalState]) -> Result<StateVector> {
        let n = states.len();
        check_width(n)?;
        let mut amps = vec![C64::new(1.0, 0.0)];
        for s in states {
            let mut next = Vec::with_capacity(amps.len() * 2);
            for a in &amps {
                next.push(a * s.amp0);
                next.push(a * s.amp1);
            }
            amps = next;
        }
        Self::from_amplitudes(amps)
    }

    /// (|0^n> + |1^n>)/sqrt(2).
    pub fn cat(n: usize) -> Result<StateVector> {
        check_width(n)?;
        let dim = 1usize << n;
        let mut amps = vec![ZERO; dim];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        amps[0] = C64::new(s, 0.0);
        amps[dim - 1] += C64::new(s, 0.0);
        Self::from_amplitudes(amps)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitude(&self, index: usize) -> C64 {
        self.amps[index]
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        same_dim(self, other)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn scaled(&self, s: C64) -> StateVector {
        StateVector {
            num_qubits: self.num_qubits,
            amps: self.amps.iter().map(|a| a * s).collect(),
        }
    }

    /// Tensor product self ⊗ other (self on the leading qubits).
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        check_width(self.num_qubits + other.num_qubits)?;
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ok(StateVector {
            num_qubits: self.num_qubits + other.num_qubits,
            amps,
        })
    }

    pub fn apply_gate(&self, g: &Gate) -> Result<StateVector> {
        let mut s = self.clone();
        s.apply_gate_mut(g)?;
        Ok(s)
    }

    pub fn apply_gate_mut(&mut self, g: &Gate) -> Result<()> {
        let n = self.num_qubits;
        for q in g.support() {
            if q.0 >= n {
                return Err(QacError::QubitOutOfRange {
                    qubit: q.0,
                    num_qubits: n,
                });
            }
        }
        let amps = &mut self.amps;
        match g {
            Gate::OneQubit { qubit, matrix } => {
                let m = qmask(n, qubit.0);
                for i in 0..amps.len() {
                    if i & m == 0 {
                        let (a, b) = (amps[i], amps[i | m]);
                        amps[i] = matrix[0][0] * a + matrix[0][1] * b;
                        amps[i | m] = matrix[1][0] * a + matrix[1][1] * b;
                    }
                }
            }
            Gate::Toffoli { controls, target } => {
                let cm = controls.iter().fold(0, |acc, c| acc | qmask(n, c.0));
                let t = qmask(n, target.0);
                for i in 0..amps.len() {
                    if i & t == 0 && i & cm == cm {
                        amps.swap(i, i | t);
                    }
                }
            }
            Gate::Or { controls, target } => {
                let cm = controls.iter().fold(0, |acc, c| acc | qmask(n, c.0));
                let t = qmask(n, target.0);
                for i in 0..amps.len() {
                    if i & t == 0 && i & cm != 0 {
                        amps.swap(i, i | t);
                    }
                }
            }
            Gate::Fanout { control, targets } => {
                let c = qmask(n, control.0);
                let tm = targets.iter().fold(0, |acc, q| acc | qmask(n, q.0));
                let lead = qmask(n, targets[0].0);
                for i in 0..amps.len() {
                    if i & c != 0 && i & lead == 0 {
                        amps.swap(i, i ^ tm);
                    }
                }
            }
            Gate::RTensor { factors } => {
                let sup: Vec<(usize, LocalState)> =
                    factors.iter().map(|(q, s)| (qmask(n, q.0), *s)).collect();
                let k = sup.len();
                // chi amplitude and index offset for each support pattern
                let mut coef = vec![C64::new(1.0, 0.0); 1 << k];
                let mut off = vec![0usize; 1 << k];
                for s in 0..(1usize << k) {
                    for (j, (m, st)) in sup.iter().enumerate() {
                        let b = (s >> (k - 1 - j)) & 1;
                        coef[s] *= st.amp(b);
                        if b == 1 {
                            off[s] |= m;
                        }
                    }
                }
                let smask = off[(1 << k) - 1];
                for base in 0..amps.len() {
                    if base & smask != 0 {
                        continue;
                    }
                    let mut ov = ZERO;
                    for s in 0..coef.len() {
                        ov += coef[s].conj() * amps[base | off[s]];
                    }
                    if ov == ZERO {
                        continue;
                    }
                    for s in 0..coef.len() {
                        amps[base | off[s]] -= coef[s] * ov * 2.0;
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact marginal distribution of a standard-basis measurement of `qubits`.
    pub fn measurement_distribution(&self, qubits: &[usize]) -> Result<MeasurementDistribution> {
        let n = self.num_qubits;
        let mut seen = vec![false; n];
        for &q in qubits {
            if q >= n {
                return Err(QacError::QubitOutOfRange {
                    qubit: q,
                    num_qubits: n,
                });
            }
            if std::mem::replace(&mut seen[q], true) {
                return Err(QacError::InvalidParameter(format!("qubit {q} repeated")));
            }
        }
        let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let key = qubits
                .iter()
                .fold(0u64, |k, &q| (k << 1) | bit(n, i, q) as u64);
            *acc.entry(key).or_insert(0.0) += p;
        }
        Ok(MeasurementDistribution::from_packed(qubits.to_vec(), acc))
    }

    /// Project qubit `qubit` on `basis` (branch 0) and on its canonical complement (branch 1).
    pub fn measure_in_basis(&self, qubit: usize, basis: &LocalState) -> Result<[Branch; 2]> {
        let n = self.num_qubits;
        if qubit >= n {
            return Err(QacError::QubitOutOfRange {
                qubit,
                num_qubits: n,
            });
        }
        let comp = basis.complement();
        Ok([self.project(qubit, basis), self.project(qubit, &comp)])
    }

    fn project(&self, qubit: usize, b: &LocalState) -> Branch {
        let n = self.num_qubits;
        let m = qmask(n, qubit);
        let mut amps = vec![ZERO; self.dim()];
        let mut p = 0.0;
        for i in 0..self.dim() {
            if i & m != 0 {
                continue;
            }
            let ov = b.amp0.conj() * self.amps[i] + b.amp1.conj() * self.amps[i | m];
            amps[i] = b.amp0 * ov;
            amps[i | m] = b.amp1 * ov;
            p += ov.norm_sqr();
        }
        let p = clamp_prob(p);
        let state = if p > 1e-300 {
            let s = 1.0 / p.sqrt();
            Some(StateVector {
                num_qubits: n,
                amps: amps.into_iter().map(|a| a * s).collect(),
            })
        } else {
            None
        };
        Branch {
            probability: p,
            state,
        }
    }

    /// Drops qubit `qubit`, which must be in the product state `s` (within `tol`).
    pub fn remove_qubit(&self, qubit: usize, s: &LocalState) -> Result<StateVector> {
        let n = self.num_qubits;
        if n < 2 {
            return Err(QacError::InvalidParameter("cannot remove the last qubit".into()));
        }
        let m = qmask(n, qubit);
        let mut out = Vec::with_capacity(self.dim() / 2);
        for i in 0..self.dim() {
            if i & m != 0 {
                continue;
            }
            out.push(s.amp0.conj() * self.amps[i] + s.amp1.conj() * self.amps[i | m]);
        }
        // re-insert in order: indices without bit m enumerate the reduced register
        let reduced = StateVector::from_amplitudes(out)?;
        Ok(reduced)
    }

    pub fn to_json(&self) -> String {
        let wire = StateJson {
            num_qubits: self.num_qubits,
            amplitudes: self.amps.iter().map(|&a| c_to_json(a)).collect(),
        };
        serde_json::to_string_pretty(&wire).expect("state serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<StateVector> {
        let wire: StateJson = serde_json::from_str(text).map_err(parse_error)?;
        let amps: Vec<C64> = wire.amplitudes.iter().map(c_from_json).collect();
        if amps.len() != 1usize.checked_shl(wire.num_qubits as u32).unwrap_or(0) {
            return Err(QacError::DimensionMismatch {
                left: amps.len(),
                right: 1usize << wire.num_qubits.min(63),
            });
        }
        let s = Self::from_amplitudes(amps)?;
        Ok(s)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateJson {
    num_qubits: usize,
    amplitudes: Vec<ComplexJson>,
}

/// One outcome of a basis measurement. `state` is None for a zero-probability branch.
#[derive(Clone, Debug)]
pub struct Branch {
    pub probability: f64,
    pub state: Option<StateVector>,
}

fn check_width(n: usize) -> Result<()> {
    if n == 0 {
        return Err(QacError::InvalidParameter("state needs at least one qubit".into()));
    }
    if n > MAX_QUBITS {
        return Err(QacError::TooLarge(format!(
            "{n} qubits exceeds the dense simulation cap of {MAX_QUBITS}"
        )));
    }
    Ok(())
}

fn same_dim(a: &StateVector, b: &StateVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(QacError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Clamp tiny negative round-off to 0.
pub fn clamp_prob(p: f64) -> f64 {
    if (-1e-12..0.0).contains(&p) {
        0.0
    } else {
        p
    }
}

/// Runs every layer of `c` on `input`.
pub fn run(c: &Circuit, input: &StateVector) -> Result<StateVector> {
    if c.num_qubits != input.num_qubits {
        return Err(QacError::DimensionMismatch {
            left: c.num_qubits,
            right: input.num_qubits,
        });
    }
    let mut s = input.clone();
    for g in c.gates() {
        s.apply_gate_mut(g)?;
    }
    Ok(s)
}

/// Runs `c` on |0...0>.
pub fn run_zero(c: &Circuit) -> Result<StateVector> {
    run(c, &StateVector::zero(c.num_qubits)?)
}

/// |<a|b>|^2
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr().min(1.0))
}

/// 1 - ||a - b||^2
pub fn phase_dependent_fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    same_dim(a, b)?;
    let d: f64 = a
        .amps
        .iter()
        .zip(&b.amps)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    Ok(1.0 - d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementDistribution {
    pub qubits: Vec<usize>,
    /// Outcome bits packed with qubits[0] as the most significant bit.
    pub probs: BTreeMap<u64, f64>,
}

impl MeasurementDistribution {
    pub fn from_packed(qubits: Vec<usize>, probs: BTreeMap<u64, f64>) -> Self {
        let probs = probs
            .into_iter()
            .map(|(k, p)| (k, clamp_prob(p)))
            .filter(|&(_, p)| p > 0.0)
            .collect();
        MeasurementDistribution { qubits, probs }
    }

    pub fn width(&self) -> usize {
        self.qubits.len()
    }

    pub fn prob(&self, outcome: u64) -> f64 {
        self.probs.get(&outcome).copied().unwrap_or(0.0)
    }

    /// Probability of a bitstring like "0110".
    pub fn prob_str(&self, bits: &str) -> f64 {
        match u64::from_str_radix(bits, 2) {
            Ok(k) if bits.len() == self.width() => self.prob(k),
            _ => 0.0,
        }
    }

    pub fn all_zeros(&self) -> f64 {
        self.prob(0)
    }

    pub fn all_ones(&self) -> f64 {
        let w = self.width();
        if w == 0 {
            return self.prob(0);
        }
        self.prob(if w == 64 { u64::MAX } else { (1u64 << w) - 1 })
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn bitstring(&self, outcome: u64) -> String {
        bits_to_string(outcome, self.width())
    }

    /// Total variation distance, 0.5 * sum |p - q|.
    pub fn tv_distance(&self, other: &MeasurementDistribution) -> f64 {
        tv_distance(&self.probs, &other.probs)
    }
}

pub fn tv_distance(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> f64 {
    let mut s = 0.0;
    for (k, p) in a {
        s += (p - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, q) in b {
        if !a.contains_key(k) {
            s += q.abs();
        }
    }
    0.5 * s
}

pub fn bits_to_string(v: u64, width: usize) -> String {
    (0..width)
        .map(|i| if (v >> (width - 1 - i)) & 1 == 1 { '1' } else { '0' })
        .collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct NekomataReport {
    /// All-zeros target probability.
    pub p: f64,
    /// All-ones target probability.
    pub q: f64,
    /// ((sqrt p + sqrt q)/sqrt 2)^2, the best fidelity with any nekomata on the targets.
    pub fidelity: f64,
}

pub fn best_nekomata_fidelity(s: &StateVector, targets: &[usize]) -> Result<NekomataReport> {
    if targets.is_empty() {
        return Err(QacError::InvalidParameter("need at least one target".into()));
    }
    let d = s.measurement_distribution(targets)?;
    let (p, q) = (d.all_zeros(), d.all_ones());
    let f = (p.sqrt() + q.sqrt()).powi(2) / 2.0;
    Ok(NekomataReport {
        p,
        q,
        fidelity: f.min(1.0),
    })
}

/// Columns of the circuit's unitary: the output for each basis input.
pub fn unitary_columns(c: &Circuit) -> Result<Vec<StateVector>> {
    let dim = 1usize << c.num_qubits;
    (0..dim)
        .map(|i| run(c, &StateVector::basis(c.num_qubits, i)?))
        .collect()
}

/// Max entrywise deviation between the unitaries of two circuits on the same register.
pub fn max_unitary_deviation(a: &Circuit, b: &Circuit) -> Result<f64> {
    if a.num_qubits != b.num_qubits {
        return Err(QacError::DimensionMismatch {
            left: a.num_qubits,
            right: b.num_qubits,
        });
    }
    let mut worst: f64 = 0.0;
    for i in 0..(1usize << a.num_qubits) {
        let x = StateVector::basis(a.num_qubits, i)?;
        let (ya, yb) = (run(a, &x)?, run(b, &x)?);
        for (u, v) in ya.amps.iter().zip(&yb.amps) {
            worst = worst.max((u - v).norm());
        }
    }
    Ok(worst)
}

/// Max deviation between the unitary of `c` and the permutation `f` on basis indices.
pub fn max_deviation_from_permutation<F: Fn(usize) -> usize>(c: &Circuit, f: F) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..(1usize << c.num_qubits) {
        let y = run(c, &StateVector::basis(c.num_qubits, i)?)?;
        let j = f(i);
        for (k, a) in y.amps.iter().enumerate() {
            let want = if k == j { 1.0 } else { 0.0 };
            worst = worst.max((a - C64::new(want, 0.0)).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{mat2, parity4_example};
    use approx::assert_abs_diff_eq;

    fn bits(s: &str) -> StateVector {
        StateVector::from_bits(&s.bytes().map(|b| b - b'0').collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn toffoli_action() {
        let out = bits("110").apply_gate(&Gate::toffoli(&[0, 1], 2)).unwrap();
        assert_eq!(out, bits("111"));
    }

    #[test]
    fn r_one_is_z() {
        let g = Gate::rtensor([(0, LocalState::one())]);
        assert_eq!(bits("0").apply_gate(&g).unwrap(), bits("0"));
        let out = bits("1").apply_gate(&g).unwrap();
        assert_abs_diff_eq!(out.amplitude(1).re, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn r_plus_plus_on_zero() {
        let g = Gate::rtensor([(0, LocalState::plus()), (1, LocalState::plus())]);
        let out = bits("00").apply_gate(&g).unwrap();
        let want = [0.5, -0.5, -0.5, -0.5];
        for (a, w) in out.amplitudes().iter().zip(want) {
            assert_abs_diff_eq!(a.re, w, epsilon = 1e-15);
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-15);
        }
        let d = out.measurement_distribution(&[0, 1]).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(d.prob(k), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn fig1_run() {
        let out = run(&parity4_example(), &bits("0111")).unwrap();
        assert_eq!(out, bits("1111"));
        let empty = Circuit::new(4);
        assert_eq!(run(&empty, &bits("0101")).unwrap(), bits("0101"));
    }

    #[test]
    fn hh_is_identity() {
        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::h(0)]).push_layer(vec![Gate::h(0)]);
        let x = StateVector::from_amplitudes(vec![
            C64::new(0.1, 0.2),
            C64::new(0.3, -0.1),
            C64::new(-0.5, 0.0),
            C64::new(0.2, 0.7),
        ])
        .unwrap();
        let y = run(&c, &x).unwrap();
        for (a, b) in x.amplitudes().iter().zip(y.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fidelity_examples() {
        let cat = StateVector::cat(2).unwrap();
        assert_abs_diff_eq!(fidelity(&cat, &cat).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(fidelity(&bits("00"), &bits("11")).unwrap(), 0.0);
        assert_abs_diff_eq!(fidelity(&bits("00"), &cat).unwrap(), 0.5, epsilon = 1e-15);
        assert!(fidelity(&bits("0"), &cat).is_err());
    }

    #[test]
    fn phase_dependent_examples() {
        let psi = StateVector::from_amplitudes(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap();
        assert_abs_diff_eq!(phase_dependent_fidelity(&psi, &psi).unwrap(), 1.0);
        let neg = psi.scaled(C64::new(-1.0, 0.0));
        assert_abs_diff_eq!(phase_dependent_fidelity(&psi, &neg).unwrap(), -3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fidelity(&psi, &neg).unwrap(), 1.0, epsilon = 1e-15);
        let plus = StateVector::product(&[LocalState::plus()]).unwrap();
        assert_abs_diff_eq!(
            phase_dependent_fidelity(&bits("0"), &plus).unwrap(),
            2f64.sqrt() - 1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn distributions() {
        let d = StateVector::cat(3).unwrap().measurement_distribution(&[0, 1, 2]).unwrap();
        assert_eq!(d.probs.len(), 2);
        assert_abs_diff_eq!(d.prob_str("000"), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.prob_str("111"), 0.5, epsilon = 1e-15);
        let plus = StateVector::product(&[LocalState::plus()]).unwrap();
        let d = plus.measurement_distribution(&[0]).unwrap();
        assert_abs_diff_eq!(d.prob(0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.prob(1), 0.5, epsilon = 1e-15);
        assert!(plus.measurement_distribution(&[1]).is_err());
    }

    #[test]
    fn marginal_order_follows_qubit_list() {
        let s = bits("100");
        let d = s.measurement_distribution(&[2, 0]).unwrap();
        assert_eq!(d.prob_str("01"), 1.0);
    }

    #[test]
    fn measure_examples() {
        let br = bits("0").measure_in_basis(0, &LocalState::zero()).unwrap();
        assert_abs_diff_eq!(br[0].probability, 1.0);
        assert_eq!(br[1].probability, 0.0);
        assert!(br[1].state.is_none());
        let plus = StateVector::product(&[LocalState::plus()]).unwrap();
        let br = plus.measure_in_basis(0, &LocalState::zero()).unwrap();
        assert_abs_diff_eq!(br[0].probability, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(br[1].probability, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn nekomata_fidelity_examples() {
        let r = best_nekomata_fidelity(&StateVector::cat(2).unwrap(), &[0, 1]).unwrap();
        assert_abs_diff_eq!(r.fidelity, 1.0, epsilon = 1e-12);
        let r = best_nekomata_fidelity(&bits("00"), &[0, 1]).unwrap();
        assert_abs_diff_eq!(r.fidelity, 0.5, epsilon = 1e-15);
        let s = StateVector::from_amplitudes(vec![
            C64::new(0.9f64.sqrt(), 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.1f64.sqrt(), 0.0),
        ])
        .unwrap();
        let r = best_nekomata_fidelity(&s, &[0, 1]).unwrap();
        // brute-force maximum over (|00> e^{i phi} + |11>)/sqrt 2
        let mut best: f64 = 0.0;
        for k in 0..20000 {
            let phi = k as f64 / 20000.0 * std::f64::consts::TAU;
            let s2 = std::f64::consts::FRAC_1_SQRT_2;
            let nu = StateVector::from_amplitudes(vec![
                C64::from_polar(s2, phi),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(s2, 0.0),
            ])
            .unwrap();
            best = best.max(fidelity(&nu, &s).unwrap());
        }
        assert_abs_diff_eq!(r.fidelity, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(r.fidelity, best, epsilon = 1e-8);
    }

    #[test]
    fn or_and_fanout_actions() {
        let or = Gate::or(&[0, 1], 2);
        assert_eq!(bits("010").apply_gate(&or).unwrap(), bits("011"));
        assert_eq!(bits("000").apply_gate(&or).unwrap(), bits("000"));
        let f = Gate::fanout(0, &[1, 2, 3]);
        assert_eq!(bits("1010").apply_gate(&f).unwrap(), bits("1101"));
        assert_eq!(bits("0010").apply_gate(&f).unwrap(), bits("0010"));
        let x = Gate::one_qubit(1, mat2::x());
        assert_eq!(bits("00").apply_gate(&x).unwrap(), bits("01"));
    }

    #[test]
    fn state_json_round_trip() {
        let s = StateVector::product(&[LocalState::plus(), LocalState::one()]).unwrap();
        let back = StateVector::from_json(&s.to_json()).unwrap();
        for (a, b) in s.amplitudes().iter().zip(back.amplitudes()) {
            assert!((a - b).norm() < 1e-16);
        }
    }

    #[test]
    fn width_cap() {
        assert!(matches!(StateVector::zero(25), Err(QacError::TooLarge(_))));
    }
}
