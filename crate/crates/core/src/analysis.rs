//! Numerical bounds on circuits and states: the Delta angle metric, projection chains,
//! interpolating states, a generalized Markov inequality, Turan's random-permutation
//! independent set and the depth-2 ancilla-reduction procedure.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{Circuit, Gate, Layer, LocalState, QubitId, C64};
use crate::error::{QacError, Result};
use crate::random::{random_groups, random_local_state, random_unit_vector};
use crate::rng::trial_rng;
use crate::statevec::{best_nekomata_fidelity, clamp_prob, StateVector};

pub const CHAIN_TOL: f64 = 1e-10;
/// Constant used for the empirical check of the small-circuit fidelity bound.
pub const SMALL_C: f64 = 0.22;
/// Qubit cap for the depth-2 reduction.
pub const REDUCE_MAX_QUBITS: usize = 14;

fn ip(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn delta_raw(a: &[C64], b: &[C64]) -> f64 {
    ip(a, b).norm().min(1.0).acos()
}

/// arccos |<a|b>|, in [0, pi/2].
pub fn delta_metric(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm().min(1.0).acos())
}

// ---- projection chains ----

#[derive(Clone, Debug)]
pub struct ProjectionChain {
    pub dim: usize,
    pub projections: Vec<DMatrix<C64>>,
    pub input: DVector<C64>,
}

impl ProjectionChain {
    pub fn new(projections: Vec<DMatrix<C64>>, input: DVector<C64>) -> Result<ProjectionChain> {
        let dim = input.len();
        if projections.is_empty() {
            return Err(QacError::InvalidParameter("chain needs at least one projection".into()));
        }
        for q in &projections {
            if q.nrows() != dim || q.ncols() != dim {
                return Err(QacError::DimensionMismatch {
                    left: q.nrows(),
                    right: dim,
                });
            }
            let idem = (q * q - q).camax();
            let herm = (q.adjoint() - q).camax();
            if idem > CHAIN_TOL || herm > CHAIN_TOL {
                return Err(QacError::InvalidParameter(format!(
                    "not an orthogonal projection (idempotence error {idem:.3e}, hermiticity error {herm:.3e})"
                )));
            }
        }
        if (input.norm() - 1.0).abs() > 1e-10 {
            return Err(QacError::InvalidParameter("input state is not normalized".into()));
        }
        Ok(ProjectionChain {
            dim,
            projections,
            input,
        })
    }

    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }
}

/// Projection onto the span of `rank` random directions.
pub fn random_projection<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> DMatrix<C64> {
    if rank == 0 {
        return DMatrix::zeros(dim, dim);
    }
    let cols: Vec<C64> = random_unit_vector(dim * rank, rng);
    let v = DMatrix::from_column_slice(dim, rank, &cols).qr().q();
    &v * v.adjoint()
}

pub fn random_projection_chain<R: Rng + ?Sized>(max_dim: usize, max_len: usize, rng: &mut R) -> ProjectionChain {
    let dim = rng.random_range(2..=max_dim);
    let d = rng.random_range(1..=max_len);
    let qs = (0..d)
        .map(|_| {
            let rank = rng.random_range(1..=dim);
            random_projection(dim, rank, rng)
        })
        .collect();
    let input = DVector::from_vec(random_unit_vector(dim, rng));
    ProjectionChain::new(qs, input).expect("random projections are valid")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainBound {
    /// |Q_d ... Q_1 iota|
    pub lhs: f64,
    /// exp(-<iota|(I - Q_d)|iota> / (2d))
    pub rhs: f64,
    /// cos(arccos |Q_d iota| / d)^d, the exact maximum over Q_1..Q_{d-1}
    pub strong: f64,
    pub holds: bool,
    pub holds_strong: bool,
}

pub fn check_projection_chain_bound(chain: &ProjectionChain) -> ChainBound {
    let d = chain.len() as f64;
    let mut v = chain.input.clone();
    for q in &chain.projections {
        v = q * v;
    }
    let lhs = v.norm();
    let last = chain.projections.last().expect("chain is nonempty");
    let qi = last * &chain.input;
    let keep = clamp_prob(chain.input.dotc(&qi).re);
    let rhs = (-(1.0 - keep).max(0.0) / (2.0 * d)).exp();
    let strong = (qi.norm().min(1.0).acos() / d).cos().powf(d);
    ChainBound {
        lhs,
        rhs,
        strong,
        holds: lhs <= rhs + CHAIN_TOL,
        holds_strong: lhs <= strong + CHAIN_TOL,
    }
}

// ---- interpolating states ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Interpolation {
    /// chi_0 = sigma, chi_1 .. chi_{d-1}, chi_d = tau (phase-normalized).
    pub states: Vec<Vec<C64>>,
    pub product: f64,
    pub closed_form: f64,
}

fn chain_product(states: &[Vec<C64>]) -> f64 {
    states.windows(2).map(|w| ip(&w[0], &w[1]).norm()).product()
}

/// States cos(j eta) sigma + sin(j eta) delta-hat with eta = arccos<sigma|tau> / d.
pub fn optimal_interpolation(sigma: &[C64], tau: &[C64], d: usize) -> Result<Interpolation> {
    if sigma.len() != tau.len() {
        return Err(QacError::DimensionMismatch {
            left: sigma.len(),
            right: tau.len(),
        });
    }
    if d == 0 {
        return Err(QacError::InvalidParameter("d must be at least 1".into()));
    }
    let ov = ip(sigma, tau);
    let c = ov.norm().min(1.0);
    let closed_form = (c.acos() / d as f64).cos().powi(d as i32);
    let phase = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { C64::new(1.0, 0.0) };
    let tau_n: Vec<C64> = tau.iter().map(|&a| a * phase).collect();
    let orth: Vec<C64> = tau_n.iter().zip(sigma).map(|(&t, &s)| t - s * c).collect();
    let on = orth.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let mut states = Vec::with_capacity(d + 1);
    if on < 1e-14 {
        for _ in 0..d {
            states.push(sigma.to_vec());
        }
    } else {
        let dh: Vec<C64> = orth.iter().map(|&a| a / on).collect();
        let eta = c.acos() / d as f64;
        for j in 0..d {
            let (s, co) = (j as f64 * eta).sin_cos();
            states.push(sigma.iter().zip(&dh).map(|(&a, &b)| a * co + b * s).collect());
        }
    }
    states.push(tau_n);
    let product = chain_product(&states);
    if (product - closed_form).abs() > 1e-10 {
        return Err(QacError::Precondition(format!(
            "interpolation product {product} differs from closed form {closed_form}"
        )));
    }
    Ok(Interpolation {
        states,
        product,
        closed_form,
    })
}

/// Largest product over `trials` random rank-1 chains between sigma and tau.
pub fn random_chain_max<R: Rng + ?Sized>(sigma: &[C64], tau: &[C64], d: usize, trials: usize, rng: &mut R) -> f64 {
    let mut best: f64 = 0.0;
    for t in 0..trials {
        let mut states = vec![sigma.to_vec()];
        for j in 1..d {
            // half the trials perturb the straight path, half are uniform
            let s: Vec<C64> = if t % 2 == 0 {
                let w = j as f64 / d as f64;
                let noise = random_unit_vector(sigma.len(), rng);
                let eps = rng.random::<f64>() * 0.3;
                let v: Vec<C64> = sigma
                    .iter()
                    .zip(tau)
                    .zip(&noise)
                    .map(|((&a, &b), &z)| a * (1.0 - w) + b * w + z * eps)
                    .collect();
                let n = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
                v.into_iter().map(|a| a / n).collect()
            } else {
                random_unit_vector(sigma.len(), rng)
            };
            states.push(s);
        }
        states.push(tau.to_vec());
        best = best.max(chain_product(&states));
    }
    best
}

// ---- scalar inequalities ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCheck {
    pub points: usize,
    /// max over the grid of cos r - exp(-r^2/2)
    pub max_excess: f64,
    pub holds: bool,
}

/// cos r <= exp(-r^2/2) on a uniform grid over [0, 1].
pub fn check_cos_exp_inequality(points: usize) -> GridCheck {
    let points = points.max(2);
    let max_excess = (0..points)
        .into_par_iter()
        .map(|i| {
            let r = i as f64 / (points - 1) as f64;
            r.cos() - (-r * r / 2.0).exp()
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    GridCheck {
        points,
        max_excess,
        holds: max_excess <= 1e-12,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TriangleCheck {
    pub trials: usize,
    /// min over triples of Delta(a,b) + Delta(b,c) - Delta(a,c)
    pub min_slack: f64,
    pub holds: bool,
}

pub fn delta_triangle_check(trials: usize, dim: usize, seed: u64) -> TriangleCheck {
    let min_slack = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let a = random_unit_vector(dim, &mut rng);
            let b = random_unit_vector(dim, &mut rng);
            let c = random_unit_vector(dim, &mut rng);
            delta_raw(&a, &b) + delta_raw(&b, &c) - delta_raw(&a, &c)
        })
        .reduce(|| f64::INFINITY, f64::min);
    TriangleCheck {
        trials,
        min_slack,
        holds: min_slack >= -1e-9,
    }
}

// ---- generalized Markov ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovWitness {
    pub t: f64,
    /// P(X >= t)
    pub tail: f64,
    /// delta E[X] / t
    pub bound: f64,
    /// a e^{1/delta - 1}
    pub upper: f64,
}

/// A t in [a, a e^{1/delta - 1}] with P(X >= t) <= delta E[X] / t, for a finite law
/// given as (value, probability) pairs.
pub fn generalized_markov_t(law: &[(f64, f64)], a: f64, delta: f64) -> Result<MarkovWitness> {
    if !(delta > 0.0 && delta <= 1.0) || !(a > 0.0) {
        return Err(QacError::InvalidParameter("need 0 < delta <= 1 and a > 0".into()));
    }
    if law.iter().any(|&(x, p)| x < 0.0 || p < 0.0 || !x.is_finite()) {
        return Err(QacError::InvalidParameter("law must be nonnegative and finite".into()));
    }
    let total: f64 = law.iter().map(|l| l.1).sum();
    let mean: f64 = law.iter().map(|&(x, p)| x * p).sum::<f64>() / total;
    let tail_ge = |t: f64| law.iter().filter(|l| l.0 >= t).map(|l| l.1).sum::<f64>() / total;
    let tail_gt = |t: f64| law.iter().filter(|l| l.0 > t).map(|l| l.1).sum::<f64>() / total;
    let upper = a * (1.0 / delta - 1.0).exp();
    let witness = |t: f64| MarkovWitness {
        t,
        tail: tail_ge(t),
        bound: delta * mean / t,
        upper,
    };
    if tail_ge(a) <= delta * mean / a {
        return Ok(witness(a));
    }
    let mut cuts: Vec<f64> = law.iter().map(|l| l.0).filter(|&x| x > a && x < upper).collect();
    cuts.push(a);
    cuts.push(upper);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    // on (l, r] the tail is the constant P(X > l); the best t is min(r, delta E / P)
    for w in cuts.windows(2) {
        let (l, r) = (w[0], w[1]);
        let p = tail_gt(l);
        let t = if p > 0.0 { r.min(delta * mean / p) } else { r };
        if t > l && tail_ge(t) <= delta * mean / t * (1.0 + 1e-12) {
            return Ok(witness(t));
        }
    }
    Err(QacError::Precondition("no witness found; the law is inconsistent".into()))
}

// ---- Turan ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Graph {
    pub n: usize,
    pub adj: Vec<BTreeSet<usize>>,
}

impl Graph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        let mut adj = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(QacError::InvalidParameter(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(QacError::InvalidParameter(format!("self-loop at {u}")));
            }
            if !adj[u].insert(v) {
                return Err(QacError::InvalidParameter(format!("duplicate edge ({u}, {v})")));
            }
            adj[v].insert(u);
        }
        Ok(Graph { n, adj })
    }

    /// Erdos-Renyi G(n, p).
    pub fn random<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        Graph::new(n, &edges).expect("generated graph is simple")
    }

    pub fn average_degree(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.adj.iter().map(BTreeSet::len).sum::<usize>() as f64 / self.n as f64
    }

    /// sum_u 1/(deg u + 1), the expected size of one random-permutation draw.
    pub fn expected_turan_size(&self) -> f64 {
        self.adj.iter().map(|a| 1.0 / (a.len() as f64 + 1.0)).sum()
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        let s: BTreeSet<usize> = set.iter().copied().collect();
        set.iter().all(|&u| self.adj[u].is_disjoint(&s))
    }
}

/// Vertices ranked below all their neighbours under `rank`.
pub fn turan_set_for_ranks(g: &Graph, rank: &[usize]) -> Vec<usize> {
    (0..g.n)
        .filter(|&u| g.adj[u].iter().all(|&v| rank[u] < rank[v]))
        .collect()
}

pub fn turan_draw<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Vec<usize> {
    let mut rank: Vec<usize> = (0..g.n).collect();
    rank.shuffle(rng);
    turan_set_for_ranks(g, &rank)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuranResult {
    pub best: Vec<usize>,
    pub draws: usize,
    pub mean_size: f64,
    pub std_error: f64,
    /// sum_u 1/(deg u + 1)
    pub expected: f64,
    /// n / (average degree + 1)
    pub turan_bound: f64,
    pub all_independent: bool,
}

/// Repeated random-permutation draws; keeps the largest set.
pub fn turan_independent_set<R: Rng + ?Sized>(g: &Graph, draws: usize, rng: &mut R) -> TuranResult {
    let mut best = Vec::new();
    let mut sizes = Vec::with_capacity(draws);
    let mut all_independent = true;
    for _ in 0..draws.max(1) {
        let s = turan_draw(g, rng);
        all_independent &= g.is_independent(&s);
        sizes.push(s.len() as f64);
        if s.len() > best.len() {
            best = s;
        }
    }
    let k = sizes.len() as f64;
    let mean_size = sizes.iter().sum::<f64>() / k;
    let var = sizes.iter().map(|s| (s - mean_size).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    TuranResult {
        best,
        draws: sizes.len(),
        mean_size,
        std_error: (var / k).sqrt(),
        expected: g.expected_turan_size(),
        turan_bound: g.n as f64 / (g.average_degree() + 1.0),
        all_independent,
    }
}

// ---- nekomata fidelity bounds ----

/// Random state with weight pushed towards |0..0> and |1..1> on the targets, so the
/// nekomata fidelity is not trivially small.
pub fn random_near_nekomata<R: Rng + ?Sized>(n: usize, targets: &[usize], rng: &mut R) -> StateVector {
    let dim = 1usize << n;
    let mut v = random_unit_vector(dim, rng);
    let w0 = rng.random::<f64>() * 3.0;
    let w1 = rng.random::<f64>() * 3.0;
    let mask0 = |i: usize| targets.iter().all(|&t| i >> (n - 1 - t) & 1 == 0);
    let mask1 = |i: usize| targets.iter().all(|&t| i >> (n - 1 - t) & 1 == 1);
    for (i, a) in v.iter_mut().enumerate() {
        if mask0(i) {
            *a *= 1.0 + w0 * dim as f64;
        } else if mask1(i) {
            *a *= 1.0 + w1 * dim as f64;
        }
    }
    StateVector::from_amplitudes(v).expect("nonzero vector")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NekLbCheck {
    pub trials: usize,
    /// min of 1/2 + sqrt(min(p,q)) - best fidelity
    pub min_slack: f64,
    pub holds: bool,
}

pub fn check_nek_lb(trials: usize, seed: u64) -> Result<NekLbCheck> {
    let slacks: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let n = rng.random_range(1..=7);
            let k = rng.random_range(1..=n);
            let mut qs: Vec<usize> = (0..n).collect();
            qs.shuffle(&mut rng);
            let targets = &qs[..k];
            let s = random_near_nekomata(n, targets, &mut rng);
            let r = best_nekomata_fidelity(&s, targets)?;
            Ok(0.5 + r.p.min(r.q).sqrt() - r.fidelity)
        })
        .collect::<Result<_>>()?;
    let min_slack = slacks.into_iter().fold(f64::INFINITY, f64::min);
    Ok(NekLbCheck {
        trials,
        min_slack,
        holds: min_slack >= -1e-10,
    })
}

/// Measuring qubit 0 of R_{|d,chi>} iota in the |d> basis versus measuring first and then
/// applying R_chi on the |d> outcome. Returns the largest deviation in branch probability
/// or branch state over both outcomes.
pub fn meas_z_deviation<R: Rng + ?Sized>(n2: usize, n3: usize, rng: &mut R) -> Result<f64> {
    let n = 1 + n2 + n3;
    let iota = StateVector::from_amplitudes(random_unit_vector(1 << n, rng))?;
    let d = random_local_state(rng);
    let chi: Vec<LocalState> = (0..n2).map(|_| random_local_state(rng)).collect();
    let full = Gate::rtensor(std::iter::once((0, d)).chain(chi.iter().enumerate().map(|(i, &s)| (i + 1, s))));
    let first = iota.apply_gate(&full)?.measure_in_basis(0, &d)?;
    let second = iota.measure_in_basis(0, &d)?;
    let mut dev: f64 = 0.0;
    for (b, (x, y)) in first.iter().zip(second.iter()).enumerate() {
        dev = dev.max((x.probability - y.probability).abs());
        let (Some(sx), Some(sy)) = (&x.state, &y.state) else {
            continue;
        };
        let sy = if b == 0 && n2 > 0 {
            sy.apply_gate(&Gate::rtensor(chi.iter().enumerate().map(|(i, &s)| (i + 1, s))))?
        } else if b == 0 {
            // R on an empty register is -I
            sy.scaled(C64::new(-1.0, 0.0))
        } else {
            sy.clone()
        };
        for (a, c) in sx.amplitudes().iter().zip(sy.amplitudes()) {
            dev = dev.max((a - c).norm());
        }
    }
    Ok(dev)
}

// ---- small-circuit fidelity bound ----

fn apply_local(amps: &mut [C64], n: usize, q: usize, m: &[[C64; 2]; 2]) {
    let mask = 1usize << (n - 1 - q);
    for i in 0..amps.len() {
        if i & mask == 0 {
            let (a, b) = (amps[i], amps[i | mask]);
            amps[i] = m[0][0] * a + m[0][1] * b;
            amps[i | mask] = m[1][0] * a + m[1][1] * b;
        }
    }
}

fn proj_matrix(s: &LocalState, complement: bool) -> [[C64; 2]; 2] {
    let s = if complement { s.complement() } else { *s };
    [
        [s.amp0 * s.amp0.conj(), s.amp0 * s.amp1.conj()],
        [s.amp1 * s.amp0.conj(), s.amp1 * s.amp1.conj()],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmallInstanceCheck {
    pub num_targets: usize,
    pub num_ancillas: usize,
    pub depth: usize,
    /// multi-qubit gates touching the targets
    pub target_gates: usize,
    pub fidelity: f64,
    pub q_norm: f64,
    pub q_prime_norm: f64,
    /// fidelity <= 1/2 + min(|Q alpha|, |Q' alpha|)
    pub intermediate_holds: bool,
    /// each of |Q alpha|, |Q' alpha| below 3^g exp(-S / (2(d+1)))
    pub product_bound_holds: bool,
    /// target_gates <= c n / (d+1), in which case the final bound is checked
    pub small: bool,
    pub final_bound: f64,
    pub final_holds: bool,
}

/// One random instance: rank-1 projections Q_j on each target, a desired state splitting
/// evenly between Q and Q', and a random circuit of multi-qubit R-tensor gates.
pub fn check_small_instance<R: Rng + ?Sized>(
    n: usize,
    ancillas: usize,
    depth: usize,
    rng: &mut R,
) -> Result<SmallInstanceCheck> {
    let total = n + ancillas;
    let qstates: Vec<LocalState> = (0..n).map(|_| random_local_state(rng)).collect();
    let project = |v: &[C64], comp: bool| -> Vec<C64> {
        let mut w = v.to_vec();
        for (j, s) in qstates.iter().enumerate() {
            apply_local(&mut w, total, j, &proj_matrix(s, comp));
        }
        w
    };
    let norm = |v: &[C64]| v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let dim = 1usize << total;
    let (qu, qv) = loop {
        let qu = project(&random_unit_vector(dim, rng), false);
        let qv = project(&random_unit_vector(dim, rng), true);
        if norm(&qu) > 1e-6 && norm(&qv) > 1e-6 {
            break (qu, qv);
        }
    };
    let (nu, nv) = (norm(&qu), norm(&qv));
    let goal: Vec<C64> = qu
        .iter()
        .zip(&qv)
        .map(|(&a, &b)| (a / nu + b / nv) / 2f64.sqrt())
        .collect();

    let mut c = Circuit::new(total);
    let mut target_gates = 0;
    for _ in 0..depth {
        let mut gates = Vec::new();
        for g in random_groups(total, 3, rng) {
            if g.len() < 2 || rng.random_bool(0.3) {
                continue;
            }
            if g.iter().any(|&q| q < n) {
                target_gates += 1;
            }
            gates.push(Gate::rtensor(g.iter().map(|&q| (q, random_local_state(rng)))));
        }
        if !gates.is_empty() {
            c.push_layer(gates);
        }
    }
    let d = c.depth();
    let iota: Vec<LocalState> = (0..total).map(|_| random_local_state(rng)).collect();
    let alpha = crate::statevec::run(&c, &StateVector::product(&iota)?)?;
    let a = alpha.amplitudes();
    let fidelity = ip(&goal, a).norm_sqr();
    let q_norm = norm(&project(a, false));
    let q_prime_norm = norm(&project(a, true));
    let s_minus: f64 = (0..n).map(|j| 1.0 - qstates[j].inner(&iota[j]).norm_sqr()).sum();
    let s_plus = n as f64 - s_minus;
    let three_g = 3f64.powi(target_gates as i32);
    let dd = 2.0 * (d as f64 + 1.0);
    let product_bound_holds = q_norm <= three_g * (-s_minus / dd).exp() + 1e-10
        && q_prime_norm <= three_g * (-s_plus / dd).exp() + 1e-10;
    let small = target_gates as f64 <= SMALL_C * n as f64 / (d as f64 + 1.0);
    let final_bound = 0.5 + ((SMALL_C * 3f64.ln() - 0.25) * n as f64 / (d as f64 + 1.0)).exp();
    Ok(SmallInstanceCheck {
        num_targets: n,
        num_ancillas: ancillas,
        depth: d,
        target_gates,
        fidelity,
        q_norm,
        q_prime_norm,
        intermediate_holds: fidelity <= 0.5 + q_norm.min(q_prime_norm) + 1e-10,
        product_bound_holds,
        small,
        final_bound,
        final_holds: !small || fidelity <= final_bound + 1e-10,
    })
}

// ---- depth-2 ancilla reduction ----

/// L2 L1 |iota> with a designated target set; all gates are R-tensor gates.
#[derive(Clone, Debug, PartialEq)]
pub struct Construction {
    pub num_qubits: usize,
    pub l2: Layer,
    pub l1: Layer,
    pub input: Vec<LocalState>,
    pub targets: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ReductionCase {
    /// ancilla untouched by both layers, dropped
    Untouched,
    /// ancilla touched only by L1, measured in its L1 factor basis
    OnlyL1,
    /// ancilla touched only by L2, measured in its L2 factor basis
    OnlyL2,
    /// an L1 gate with no targets, its qubits measured in their L2 factor bases
    AncillaGateL1,
    /// an L2 gate with no targets, removed before measuring one of its ancillas
    AncillaGateL2,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionStep {
    pub case: ReductionCase,
    pub ancillas_before: usize,
    pub ancillas_after: usize,
    pub fidelity_before: f64,
    pub fidelity_after: f64,
    /// index of the kept branch among the nonzero-probability branches
    pub branch: usize,
    pub branches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub construction: Construction,
    pub initial_fidelity: f64,
    pub final_fidelity: f64,
    pub steps: Vec<ReductionStep>,
}

fn factors_of(g: &Gate) -> &BTreeMap<QubitId, LocalState> {
    match g {
        Gate::RTensor { factors } => factors,
        _ => unreachable!("constructions hold only rtensor gates"),
    }
}

impl Construction {
    pub fn new(num_qubits: usize, l2: Layer, l1: Layer, input: Vec<LocalState>, targets: Vec<usize>) -> Result<Self> {
        let c = Construction {
            num_qubits,
            l2,
            l1,
            input,
            targets,
        };
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<()> {
        if self.num_qubits > REDUCE_MAX_QUBITS {
            return Err(QacError::TooLarge(format!(
                "{} qubits exceeds the reduction cap of {REDUCE_MAX_QUBITS}",
                self.num_qubits
            )));
        }
        if self.input.len() != self.num_qubits {
            return Err(QacError::DimensionMismatch {
                left: self.input.len(),
                right: self.num_qubits,
            });
        }
        if self.input.iter().any(|s| !s.is_normalized()) {
            return Err(QacError::Precondition("input factors must be normalized".into()));
        }
        let ts: BTreeSet<usize> = self.targets.iter().copied().collect();
        if ts.len() != self.targets.len() || ts.iter().any(|&t| t >= self.num_qubits) || ts.is_empty() {
            return Err(QacError::Precondition("targets must be distinct, nonempty and in range".into()));
        }
        for g in self.l1.gates.iter().chain(&self.l2.gates) {
            if !matches!(g, Gate::RTensor { .. }) {
                return Err(QacError::Precondition("layers may only hold rtensor gates".into()));
            }
        }
        self.circuit().ensure_valid()
    }

    pub fn circuit(&self) -> Circuit {
        let mut c = Circuit::new(self.num_qubits);
        c.push_layer(self.l1.gates.clone()).push_layer(self.l2.gates.clone());
        c.with_targets(&self.targets)
    }

    pub fn ancillas(&self) -> Vec<usize> {
        (0..self.num_qubits).filter(|q| !self.targets.contains(q)).collect()
    }

    pub fn output(&self) -> Result<StateVector> {
        crate::statevec::run(&self.circuit(), &StateVector::product(&self.input)?)
    }

    /// Probability that the targets measure to `goal` (goal qubit i is targets[i]).
    pub fn target_fidelity(&self, goal: &StateVector) -> Result<f64> {
        if goal.num_qubits() != self.targets.len() {
            return Err(QacError::DimensionMismatch {
                left: goal.num_qubits(),
                right: self.targets.len(),
            });
        }
        let out = self.output()?;
        let n = self.num_qubits;
        let anc = self.ancillas();
        let mut acc = vec![C64::new(0.0, 0.0); 1 << anc.len()];
        for (i, &amp) in out.amplitudes().iter().enumerate() {
            let t = self.targets.iter().fold(0usize, |k, &q| (k << 1) | (i >> (n - 1 - q) & 1));
            let a = anc.iter().fold(0usize, |k, &q| (k << 1) | (i >> (n - 1 - q) & 1));
            acc[a] += goal.amplitude(t).conj() * amp;
        }
        Ok(acc.iter().map(|a| a.norm_sqr()).sum())
    }

    fn gate_on(layer: &Layer, q: usize) -> Option<usize> {
        layer.gates.iter().position(|g| g.support_indices().contains(&q))
    }

    /// True when every ancilla is touched by both layers and every gate touches a target.
    pub fn is_reduced(&self) -> bool {
        self.find_case().is_none()
    }

    fn find_case(&self) -> Option<(ReductionCase, usize)> {
        let anc = self.ancillas();
        for &h in &anc {
            match (Self::gate_on(&self.l2, h), Self::gate_on(&self.l1, h)) {
                (None, None) => return Some((ReductionCase::Untouched, h)),
                (None, Some(_)) => return Some((ReductionCase::OnlyL1, h)),
                (Some(_), None) => return Some((ReductionCase::OnlyL2, h)),
                _ => {}
            }
        }
        let touches = |g: &Gate| g.support_indices().iter().any(|q| self.targets.contains(q));
        if let Some(i) = self.l1.gates.iter().position(|g| !touches(g)) {
            return Some((ReductionCase::AncillaGateL1, i));
        }
        if let Some(i) = self.l2.gates.iter().position(|g| !touches(g)) {
            return Some((ReductionCase::AncillaGateL2, i));
        }
        None
    }

    /// Drop the qubits in `gone` and renumber the rest.
    fn without(&self, gone: &BTreeSet<usize>, l2: Vec<Gate>, l1: Vec<Gate>) -> Construction {
        let mut map = vec![usize::MAX; self.num_qubits];
        let mut next = 0;
        for (q, slot) in map.iter_mut().enumerate() {
            if !gone.contains(&q) {
                *slot = next;
                next += 1;
            }
        }
        Construction {
            num_qubits: next,
            l2: Layer::new(l2.iter().map(|g| g.remap(&map)).collect()),
            l1: Layer::new(l1.iter().map(|g| g.remap(&map)).collect()),
            input: (0..self.num_qubits)
                .filter(|q| !gone.contains(q))
                .map(|q| self.input[q])
                .collect(),
            targets: self.targets.iter().map(|&t| map[t]).collect(),
        }
    }
}

/// Condition a layer on measuring `qubits` in the bases given by that layer's own factors:
/// a gate survives (minus the measured factors) iff every measured factor gave the
/// factor state; an emptied surviving gate is a global sign and is dropped.
fn condition_layer(layer: &Layer, outcomes: &BTreeMap<usize, bool>) -> Vec<Gate> {
    let mut out = Vec::new();
    for g in &layer.gates {
        let f = factors_of(g);
        let hit: Vec<bool> = f.keys().filter_map(|q| outcomes.get(&q.0).copied()).collect();
        if hit.iter().any(|&on| !on) {
            continue;
        }
        let rest: Vec<(usize, LocalState)> = f
            .iter()
            .filter(|(q, _)| !outcomes.contains_key(&q.0))
            .map(|(q, s)| (q.0, *s))
            .collect();
        if !rest.is_empty() {
            out.push(Gate::rtensor(rest));
        }
    }
    out
}

/// Candidate constructions from measuring the ancillas in `measured` (each with the basis
/// state the given layer assigns it), with their branch probabilities.
fn measured_branches(
    c: &Construction,
    measured: &[usize],
    bases_from_l2: bool,
    drop_l1_gate: Option<usize>,
) -> Result<Vec<(f64, Construction)>> {
    let layer = if bases_from_l2 { &c.l2 } else { &c.l1 };
    let basis: Vec<LocalState> = measured
        .iter()
        .map(|&q| {
            let g = &layer.gates[Construction::gate_on(layer, q).expect("measured qubit is covered")];
            factors_of(g)[&QubitId(q)]
        })
        .collect();
    let gone: BTreeSet<usize> = measured.iter().copied().collect();
    // amplitudes of the measured register before the layer doing the conditioning
    let pre: Vec<C64> = if let Some(gi) = drop_l1_gate {
        let g = &c.l1.gates[gi];
        let qs = g.support_indices();
        let local: Vec<LocalState> = qs.iter().map(|&q| c.input[q]).collect();
        let remapped = g.remap(&{
            let mut m = vec![usize::MAX; c.num_qubits];
            for (i, &q) in qs.iter().enumerate() {
                m[q] = i;
            }
            m
        });
        StateVector::product(&local)?.apply_gate(&remapped)?.amplitudes().to_vec()
    } else {
        let s = c.input[measured[0]];
        vec![s.amp0, s.amp1]
    };
    let k = measured.len();
    let mut out = Vec::new();
    for outcome in 0..(1usize << k) {
        // bit i of outcome (MSB first) set means the complement of basis i
        let mut amp = C64::new(0.0, 0.0);
        for (idx, &a) in pre.iter().enumerate() {
            let mut w = C64::new(1.0, 0.0);
            for (i, b) in basis.iter().enumerate() {
                let want = if outcome >> (k - 1 - i) & 1 == 0 { *b } else { b.complement() };
                w *= want.amp(idx >> (k - 1 - i) & 1).conj();
            }
            amp += w * a;
        }
        let p = amp.norm_sqr();
        let outcomes: BTreeMap<usize, bool> = measured
            .iter()
            .enumerate()
            .map(|(i, &q)| (q, outcome >> (k - 1 - i) & 1 == 0))
            .collect();
        let (l2, l1) = if bases_from_l2 {
            let mut l1: Vec<Gate> = c.l1.gates.clone();
            if let Some(gi) = drop_l1_gate {
                l1.remove(gi);
            }
            (condition_layer(&c.l2, &outcomes), l1)
        } else {
            (c.l2.gates.clone(), condition_layer(&c.l1, &outcomes))
        };
        out.push((p, c.without(&gone, l2, l1)));
    }
    Ok(out)
}

/// Measure out ancillas until every ancilla is touched by both layers and every gate touches
/// a target, keeping at each step the branch with the highest goal fidelity (lowest index on
/// ties). The fidelity never decreases.
pub fn reduce_depth2_construction(c: &Construction, goal: &StateVector) -> Result<Reduction> {
    c.check()?;
    let initial_fidelity = c.target_fidelity(goal)?;
    let mut cur = c.clone();
    let mut fid = initial_fidelity;
    let mut steps = Vec::new();
    while let Some((case, idx)) = cur.find_case() {
        let before = cur.ancillas().len();
        let candidates: Vec<(f64, Construction)> = match case {
            ReductionCase::Untouched => {
                let l2 = cur.l2.gates.clone();
                let l1 = cur.l1.gates.clone();
                vec![(1.0, cur.without(&BTreeSet::from([idx]), l2, l1))]
            }
            ReductionCase::OnlyL1 => measured_branches(&cur, &[idx], false, None)?,
            ReductionCase::OnlyL2 => measured_branches(&cur, &[idx], true, None)?,
            ReductionCase::AncillaGateL1 => {
                let qs = cur.l1.gates[idx].support_indices();
                measured_branches(&cur, &qs, true, Some(idx))?
            }
            ReductionCase::AncillaGateL2 => {
                let g = cur.l2.gates.remove(idx);
                let h = g.support_indices()[0];
                if Construction::gate_on(&cur.l1, h).is_some() {
                    measured_branches(&cur, &[h], false, None)?
                } else {
                    let l2 = cur.l2.gates.clone();
                    let l1 = cur.l1.gates.clone();
                    vec![(1.0, cur.without(&BTreeSet::from([h]), l2, l1))]
                }
            }
        };
        let mut best: Option<(usize, f64, Construction)> = None;
        let mut live = 0;
        for (p, cand) in candidates {
            if p < 1e-14 {
                continue;
            }
            let f = cand.target_fidelity(goal)?;
            if best.as_ref().is_none_or(|b| f > b.1) {
                best = Some((live, f, cand));
            }
            live += 1;
        }
        let (branch, f, next) = best.ok_or_else(|| QacError::Precondition("no branch has positive probability".into()))?;
        steps.push(ReductionStep {
            case,
            ancillas_before: before,
            ancillas_after: next.ancillas().len(),
            fidelity_before: fid,
            fidelity_after: f,
            branch,
            branches: live,
        });
        fid = f;
        cur = next;
    }
    Ok(Reduction {
        construction: cur,
        initial_fidelity,
        final_fidelity: fid,
        steps,
    })
}

/// Random depth-2 construction on `n` qubits with the given targets.
pub fn random_construction<R: Rng + ?Sized>(n: usize, targets: &[usize], rng: &mut R) -> Construction {
    let layer = |rng: &mut R| -> Layer {
        let mut gates = Vec::new();
        for g in random_groups(n, 3, rng) {
            if rng.random_bool(0.25) {
                continue;
            }
            gates.push(Gate::rtensor(g.iter().map(|&q| (q, random_local_state(rng)))));
        }
        Layer::new(gates)
    };
    let l1 = layer(rng);
    let l2 = layer(rng);
    let input = (0..n).map(|_| random_local_state(rng)).collect();
    Construction::new(n, l2, l1, input, targets.to_vec()).expect("random construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn ls(s: LocalState) -> StateVector {
        StateVector::product(&[s]).unwrap()
    }

    #[test]
    fn delta_examples() {
        let z = ls(LocalState::zero());
        assert_eq!(delta_metric(&z, &z).unwrap(), 0.0);
        assert_abs_diff_eq!(delta_metric(&z, &ls(LocalState::one())).unwrap(), FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(delta_metric(&z, &ls(LocalState::plus())).unwrap(), FRAC_PI_2 / 2.0, epsilon = 1e-15);
        assert!(delta_metric(&z, &StateVector::zero(2).unwrap()).is_err());
    }

    #[test]
    fn chain_examples() {
        let q0 = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        let h = 0.5f64.sqrt();
        let plus = DVector::from_vec(vec![C64::new(h, 0.0), C64::new(h, 0.0)]);
        let b = check_projection_chain_bound(&ProjectionChain::new(vec![q0.clone()], plus).unwrap());
        assert_abs_diff_eq!(b.lhs, h, epsilon = 1e-15);
        assert_abs_diff_eq!(b.rhs, (-0.25f64).exp(), epsilon = 1e-15);
        assert!(b.holds);
        let zero = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let b = check_projection_chain_bound(&ProjectionChain::new(vec![q0.clone(), q0], zero).unwrap());
        assert_eq!(b.rhs, 1.0);
        let bad = DMatrix::from_element(2, 2, C64::new(1.0, 0.0));
        assert!(ProjectionChain::new(vec![bad], DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)])).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let s = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let t = vec![C64::new(0.0, 0.0), C64::new(0.0, 1.0)];
        let r = optimal_interpolation(&s, &t, 2).unwrap();
        assert_abs_diff_eq!(r.product, 0.5, epsilon = 1e-12);
        let h = 0.5f64.sqrt();
        // chi_1 = (sigma + delta-hat)/sqrt 2 with delta-hat = |1> after phase fixing
        assert_abs_diff_eq!(r.states[1][0].re, h, epsilon = 1e-12);
        assert_abs_diff_eq!(r.states[1][1].norm(), h, epsilon = 1e-12);
        let mut rng = rng_from_seed(8);
        let a = random_unit_vector(8, &mut rng);
        let b = random_unit_vector(8, &mut rng);
        let r = optimal_interpolation(&a, &b, 1).unwrap();
        assert_abs_diff_eq!(r.product, ip(&a, &b).norm(), epsilon = 1e-12);
        let r = optimal_interpolation(&a, &b, 5).unwrap();
        assert!(random_chain_max(&a, &b, 5, 1000, &mut rng) <= r.product + 1e-12);
        let same = optimal_interpolation(&a, &a, 3).unwrap();
        assert_abs_diff_eq!(same.product, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cos_exp_and_triangle() {
        assert!(check_cos_exp_inequality(10_001).holds);
        assert!(1f64.cos() <= (-0.5f64).exp());
        assert!(delta_triangle_check(2000, 8, 1).holds);
    }

    #[test]
    fn markov_examples() {
        let w = generalized_markov_t(&[(1.0, 1.0)], 2.0, 1.0).unwrap();
        assert_eq!((w.t, w.tail), (2.0, 0.0));
        let u: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.1)).collect();
        let w = generalized_markov_t(&u, 1.0, 1.0).unwrap();
        assert_eq!(w.t, 1.0);
        assert_abs_diff_eq!(w.tail, 0.9, epsilon = 1e-12);
        // geometric-like law, a = E[X], delta = 1/2
        let law: Vec<(f64, f64)> = (0..40).map(|k| (k as f64, 0.5f64.powi(k + 1))).collect();
        let mean: f64 = law.iter().map(|l| l.0 * l.1).sum::<f64>() / law.iter().map(|l| l.1).sum::<f64>();
        let w = generalized_markov_t(&law, mean, 0.5).unwrap();
        assert!(w.t >= mean && w.t <= mean * std::f64::consts::E + 1e-12);
        assert!(w.tail <= w.bound * (1.0 + 1e-12));
    }

    #[test]
    fn turan_examples() {
        let mut rng = rng_from_seed(2);
        let e = Graph::new(5, &[]).unwrap();
        assert_eq!(turan_draw(&e, &mut rng), vec![0, 1, 2, 3, 4]);
        let k3 = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        for _ in 0..20 {
            assert_eq!(turan_draw(&k3, &mut rng).len(), 1);
        }
        // path: enumerate all 6 rankings
        let p = Graph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let total: usize = perms.iter().map(|r| turan_set_for_ranks(&p, r).len()).sum();
        assert_abs_diff_eq!(total as f64 / 6.0, 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.expected_turan_size(), 4.0 / 3.0, epsilon = 1e-15);
        assert!(p.expected_turan_size() >= 9.0 / 7.0);
        assert!(Graph::new(2, &[(0, 0)]).is_err());
        assert!(Graph::new(2, &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn nek_lb_and_meas_z() {
        assert!(check_nek_lb(200, 4).unwrap().holds);
        let mut rng = rng_from_seed(6);
        for (a, b) in [(0, 1), (1, 0), (2, 2), (3, 1)] {
            assert!(meas_z_deviation(a, b, &mut rng).unwrap() < 1e-12);
        }
    }

    #[test]
    fn small_instances() {
        let mut rng = rng_from_seed(7);
        for _ in 0..50 {
            let r = check_small_instance(4, 2, 2, &mut rng).unwrap();
            assert!(r.intermediate_holds && r.product_bound_holds && r.final_holds, "{r:?}");
        }
    }

    fn cat(n: usize) -> StateVector {
        StateVector::cat(n).unwrap()
    }

    #[test]
    fn reduction_examples() {
        let mut rng = rng_from_seed(9);
        // already reduced: one gate per layer over target 0 and ancilla 1
        let g = |rng: &mut _| Gate::rtensor([(0, random_local_state(rng)), (1, random_local_state(rng))]);
        let c = Construction::new(
            2,
            Layer::new(vec![g(&mut rng)]),
            Layer::new(vec![g(&mut rng)]),
            vec![random_local_state(&mut rng), random_local_state(&mut rng)],
            vec![0],
        )
        .unwrap();
        let r = reduce_depth2_construction(&c, &cat(1)).unwrap();
        assert_eq!(r.construction, c);
        assert!(r.steps.is_empty());

        // untouched ancilla is dropped
        let c = Construction::new(
            3,
            Layer::new(vec![Gate::rtensor([(0, LocalState::plus()), (1, LocalState::one())])]),
            Layer::new(vec![]),
            vec![LocalState::plus(), LocalState::zero(), LocalState::zero()],
            vec![0, 1],
        )
        .unwrap();
        let r = reduce_depth2_construction(&c, &cat(2)).unwrap();
        assert_eq!(r.construction.num_qubits, 2);
        assert_eq!(r.steps[0].case, ReductionCase::Untouched);
        assert_abs_diff_eq!(r.final_fidelity, r.initial_fidelity, epsilon = 1e-12);

        // ancilla 2 only in L1
        let c = Construction::new(
            3,
            Layer::new(vec![Gate::rtensor([(0, random_local_state(&mut rng)), (1, random_local_state(&mut rng))])]),
            Layer::new(vec![Gate::rtensor([(1, random_local_state(&mut rng)), (2, random_local_state(&mut rng))])]),
            (0..3).map(|_| random_local_state(&mut rng)).collect(),
            vec![0, 1],
        )
        .unwrap();
        let r = reduce_depth2_construction(&c, &cat(2)).unwrap();
        assert_eq!(r.steps[0].case, ReductionCase::OnlyL1);
        assert_eq!(r.construction.num_qubits, 2);
        assert!(r.final_fidelity >= r.initial_fidelity - 1e-12);
    }

    #[test]
    fn measured_branches_average_to_original() {
        // the branch-probability-weighted fidelity equals the original
        let mut rng = rng_from_seed(10);
        for _ in 0..30 {
            let c = random_construction(6, &[0, 1, 2], &mut rng);
            let goal = cat(3);
            let Some((case, idx)) = c.find_case() else { continue };
            let branches = match case {
                ReductionCase::OnlyL1 => measured_branches(&c, &[idx], false, None).unwrap(),
                ReductionCase::OnlyL2 => measured_branches(&c, &[idx], true, None).unwrap(),
                ReductionCase::AncillaGateL1 => {
                    let qs = c.l1.gates[idx].support_indices();
                    measured_branches(&c, &qs, true, Some(idx)).unwrap()
                }
                _ => continue,
            };
            let total: f64 = branches.iter().map(|b| b.0).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
            let avg: f64 = branches
                .iter()
                .map(|(p, b)| p * b.target_fidelity(&goal).unwrap())
                .sum();
            assert_abs_diff_eq!(avg, c.target_fidelity(&goal).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn random_reductions() {
        let mut rng = rng_from_seed(11);
        for _ in 0..40 {
            let c = random_construction(7, &[0, 2, 4], &mut rng);
            let r = reduce_depth2_construction(&c, &cat(3)).unwrap();
            assert!(r.construction.is_reduced());
            assert!(r.final_fidelity >= r.initial_fidelity - 1e-10);
            for s in &r.steps {
                assert!(s.ancillas_after < s.ancillas_before);
                assert!(s.fidelity_after >= s.fidelity_before - 1e-10);
            }
        }
    }
}
