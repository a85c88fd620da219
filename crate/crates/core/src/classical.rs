//! Classical simulation of standard-basis measurements of mostly-classical circuits.
//!
//! A mostly-classical circuit is C L with L a single layer and C classical. Measuring
//! L|0...0> first and pushing the bits through C gives the same target law.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{classical_rtensor, mat2, Circuit, ClassicalRTensor, Gate, LocalState, QubitId};
use crate::error::{QacError, Result};
use crate::nekomata::classify;
use crate::rng::trial_rng;
use crate::statevec::{run_zero, MeasurementDistribution};

/// Factors with p below this are treated as p = 0 and dropped.
pub const ELIDE_TOL: f64 = 1e-15;
/// Full enumeration cap for `GateOutputDistribution::probs`.
pub const ENUM_MAX_ARITY: usize = 20;
/// Arity cap for the factorized sampler.
pub const FACTORIZED_MAX_ARITY: usize = 12;
/// Input width cap for exact influence computation.
pub const EXACT_INFLUENCE_MAX_WIDTH: usize = 24;

fn rtensor_factors(g: &Gate) -> Result<&BTreeMap<QubitId, LocalState>> {
    match g {
        Gate::RTensor { factors } => Ok(factors),
        _ => Err(QacError::InvalidParameter("expected an rtensor gate".into())),
    }
}

/// Law of a standard-basis measurement of R_chi|0...0>.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateOutputDistribution {
    /// All factor qubits, ascending.
    pub qubits: Vec<usize>,
    /// Positions in `qubits` of the factors kept after dropping p = 0.
    pub active: Vec<usize>,
    /// p_j = |<1|chi_j>|^2 for the active factors.
    pub p: Vec<f64>,
    /// prod_j (1 - p_j) over the active factors.
    pub zero_product: f64,
    /// (1 - 2 prod_j (1 - p_j))^2
    pub all_zeros_prob: f64,
}

impl GateOutputDistribution {
    pub fn arity(&self) -> usize {
        self.qubits.len()
    }

    /// True when prod (1 - p_j) <= 1/4 and the law is a convex combination.
    pub fn is_nice(&self) -> bool {
        self.zero_product <= 0.25
    }

    /// Probability of outcome `y` (one bit per factor qubit).
    pub fn prob(&self, y: &[u8]) -> f64 {
        assert_eq!(y.len(), self.arity());
        let mut on_active = vec![false; self.arity()];
        for &a in &self.active {
            on_active[a] = true;
        }
        if y.iter().zip(&on_active).any(|(&b, &act)| b == 1 && !act) {
            return 0.0;
        }
        if y.iter().all(|&b| b == 0) {
            return self.all_zeros_prob;
        }
        let bern: f64 = self
            .active
            .iter()
            .zip(&self.p)
            .map(|(&a, &p)| if y[a] == 1 { p } else { 1.0 - p })
            .product();
        4.0 * self.zero_product * bern
    }

    /// Full table keyed by the packed outcome (first qubit most significant).
    pub fn probs(&self) -> Result<BTreeMap<u64, f64>> {
        let k = self.arity();
        if k > ENUM_MAX_ARITY {
            return Err(QacError::TooLarge(format!(
                "enumerating an arity-{k} gate (cap {ENUM_MAX_ARITY})"
            )));
        }
        let mut out = BTreeMap::new();
        let mut y = vec![0u8; k];
        for v in 0..(1u64 << k) {
            for (i, b) in y.iter_mut().enumerate() {
                *b = ((v >> (k - 1 - i)) & 1) as u8;
            }
            let p = self.prob(&y);
            if p > 0.0 {
                out.insert(v, p);
            }
        }
        Ok(out)
    }

    /// One exact draw, one bit per factor qubit.
    ///
    /// Nice gates use the convex combination: all zeros with probability 1 - 4P, otherwise
    /// independent Bernoullis. Other gates are sampled bit by bit from exact prefix masses.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let mut y = vec![0u8; self.arity()];
        let big_p = self.zero_product;
        if self.active.is_empty() {
            return y;
        }
        if self.is_nice() {
            if rng.random::<f64>() < 1.0 - 4.0 * big_p {
                return y;
            }
            for (&a, &p) in self.active.iter().zip(&self.p) {
                y[a] = u8::from(rng.random::<f64>() < p);
            }
            return y;
        }
        // mass of a prefix: 4P prod Bern(prefix) + [prefix all zero] (1 - 4P)
        let excess = 1.0 - 4.0 * big_p;
        let mut bern = 1.0;
        let mut all_zero = true;
        for (&a, &p) in self.active.iter().zip(&self.p) {
            let cur = 4.0 * big_p * bern + if all_zero { excess } else { 0.0 };
            let one = 4.0 * big_p * bern * p;
            if rng.random::<f64>() * cur < one {
                y[a] = 1;
                bern *= p;
                all_zero = false;
            } else {
                bern *= 1.0 - p;
            }
        }
        y
    }
}

/// The d1 law of an R-tensor gate acting on |0...0>.
pub fn exact_rtensor_distribution(g: &Gate) -> Result<GateOutputDistribution> {
    let f = rtensor_factors(g)?;
    let qubits: Vec<usize> = f.keys().map(|q| q.0).collect();
    let mut active = Vec::new();
    let mut p = Vec::new();
    for (i, s) in f.values().enumerate() {
        let pj = s.p_one().min(1.0);
        if pj > ELIDE_TOL {
            active.push(i);
            p.push(pj);
        }
    }
    let zero_product: f64 = p.iter().map(|x| 1.0 - x).product();
    Ok(GateOutputDistribution {
        qubits,
        active,
        p,
        zero_product,
        all_zeros_prob: (1.0 - 2.0 * zero_product).powi(2),
    })
}

pub fn sample_rtensor<R: Rng + ?Sized>(g: &Gate, rng: &mut R) -> Result<Vec<u8>> {
    Ok(exact_rtensor_distribution(g)?.sample(rng))
}

// ---- classical evaluation ----

#[derive(Clone, Debug)]
enum Op {
    Not(usize),
    Toffoli(Vec<usize>, usize),
    Or(Vec<usize>, usize),
    Fanout(usize, Vec<usize>),
    ControlledNot(Vec<(usize, u8)>, usize),
}

/// A purely classical circuit compiled to bit operations.
#[derive(Clone, Debug)]
pub struct ClassicalProgram {
    pub num_qubits: usize,
    ops: Vec<Op>,
}

impl ClassicalProgram {
    pub fn compile(c: &Circuit) -> Result<ClassicalProgram> {
        let mut ops = Vec::new();
        for (li, layer) in c.layers.iter().enumerate() {
            for g in &layer.gates {
                let op = match g {
                    Gate::OneQubit { qubit, matrix } => {
                        if mat2::is_antidiagonal(matrix, 1e-9) {
                            Some(Op::Not(qubit.0))
                        } else if mat2::is_monomial(matrix, 1e-9) {
                            None
                        } else {
                            return Err(non_classical(li));
                        }
                    }
                    Gate::Toffoli { controls, target } => {
                        Some(Op::Toffoli(controls.iter().map(|q| q.0).collect(), target.0))
                    }
                    Gate::Or { controls, target } => {
                        Some(Op::Or(controls.iter().map(|q| q.0).collect(), target.0))
                    }
                    Gate::Fanout { control, targets } => {
                        Some(Op::Fanout(control.0, targets.iter().map(|q| q.0).collect()))
                    }
                    Gate::RTensor { factors } => match classical_rtensor(factors) {
                        Some(ClassicalRTensor::Diagonal) => None,
                        Some(ClassicalRTensor::ControlledNot { pattern, flip }) => Some(
                            Op::ControlledNot(pattern.iter().map(|(q, b)| (q.0, *b)).collect(), flip.0),
                        ),
                        None => return Err(non_classical(li)),
                    },
                };
                ops.extend(op);
            }
        }
        Ok(ClassicalProgram {
            num_qubits: c.num_qubits,
            ops,
        })
    }

    pub fn run(&self, bits: &mut [u8]) {
        for op in &self.ops {
            match op {
                Op::Not(q) => bits[*q] ^= 1,
                Op::Toffoli(cs, t) => {
                    if cs.iter().all(|&c| bits[c] == 1) {
                        bits[*t] ^= 1;
                    }
                }
                Op::Or(cs, t) => {
                    if cs.iter().any(|&c| bits[c] == 1) {
                        bits[*t] ^= 1;
                    }
                }
                Op::Fanout(c, ts) => {
                    if bits[*c] == 1 {
                        for &t in ts {
                            bits[t] ^= 1;
                        }
                    }
                }
                Op::ControlledNot(pat, t) => {
                    if pat.iter().all(|&(q, b)| bits[q] == b) {
                        bits[*t] ^= 1;
                    }
                }
            }
        }
    }
}

fn non_classical(layer: usize) -> QacError {
    QacError::Precondition(format!("layer {layer} holds a gate that is not classical"))
}

/// Bitwise evaluation of a purely classical circuit.
pub fn run_classical(c: &Circuit, x: &[u8]) -> Result<Vec<u8>> {
    if x.len() != c.num_qubits {
        return Err(QacError::DimensionMismatch {
            left: x.len(),
            right: c.num_qubits,
        });
    }
    let prog = ClassicalProgram::compile(c)?;
    let mut bits = x.to_vec();
    prog.run(&mut bits);
    Ok(bits)
}

// ---- influences ----

/// For each input wire, the output wires it influences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfluenceMap {
    pub sets: Vec<BTreeSet<usize>>,
}

impl InfluenceMap {
    pub fn max_size(&self) -> usize {
        self.sets.iter().map(BTreeSet::len).max().unwrap_or(0)
    }

    pub fn is_subset_of(&self, other: &InfluenceMap) -> bool {
        self.sets.len() == other.sets.len()
            && self.sets.iter().zip(&other.sets).all(|(a, b)| a.is_subset(b))
    }
}

/// Over-approximation by forward propagation of dependency sets.
pub fn influences_structural(c: &Circuit) -> Result<InfluenceMap> {
    let prog = ClassicalProgram::compile(c)?;
    let n = c.num_qubits;
    let mut dep: Vec<BTreeSet<usize>> = (0..n).map(|q| BTreeSet::from([q])).collect();
    for op in &prog.ops {
        match op {
            Op::Not(_) => {}
            Op::Toffoli(cs, t) | Op::Or(cs, t) => {
                let add: Vec<usize> = cs.iter().flat_map(|&c| dep[c].iter().copied()).collect();
                dep[*t].extend(add);
            }
            Op::Fanout(c, ts) => {
                let add = dep[*c].clone();
                for &t in ts {
                    dep[t].extend(add.iter().copied());
                }
            }
            Op::ControlledNot(pat, t) => {
                let add: Vec<usize> = pat.iter().flat_map(|&(q, _)| dep[q].iter().copied()).collect();
                dep[*t].extend(add);
            }
        }
    }
    let mut sets = vec![BTreeSet::new(); n];
    for (out, ins) in dep.iter().enumerate() {
        for &i in ins {
            sets[i].insert(out);
        }
    }
    Ok(InfluenceMap { sets })
}

/// Exact influences: input j influences output k if flipping j changes k for some input.
///
/// Only the inputs in the backward light cone of j's forward light cone are enumerated.
pub fn influences_exact(c: &Circuit) -> Result<InfluenceMap> {
    let prog = ClassicalProgram::compile(c)?;
    let structural = influences_structural(c)?;
    let n = c.num_qubits;
    let mut back: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, outs) in structural.sets.iter().enumerate() {
        for &k in outs {
            back[k].insert(i);
        }
    }
    let mut sets = vec![BTreeSet::new(); n];
    for j in 0..n {
        let fwd = &structural.sets[j];
        let cone: BTreeSet<usize> = fwd.iter().flat_map(|&k| back[k].iter().copied()).collect();
        let others: Vec<usize> = cone.iter().copied().filter(|&i| i != j).collect();
        if others.len() + 1 > EXACT_INFLUENCE_MAX_WIDTH {
            return Err(QacError::TooLarge(format!(
                "light cone of input {j} has width {} (cap {EXACT_INFLUENCE_MAX_WIDTH})",
                others.len() + 1
            )));
        }
        let mut x = vec![0u8; n];
        let mut y = vec![0u8; n];
        for mask in 0..(1u64 << others.len()) {
            for (b, &i) in others.iter().enumerate() {
                x[i] = ((mask >> b) & 1) as u8;
            }
            x[j] = 0;
            y.copy_from_slice(&x);
            y[j] = 1;
            let (mut a, mut b) = (x.clone(), y.clone());
            prog.run(&mut a);
            prog.run(&mut b);
            for &k in fwd {
                if a[k] != b[k] {
                    sets[j].insert(k);
                }
            }
            if sets[j].len() == fwd.len() {
                break;
            }
        }
    }
    Ok(InfluenceMap { sets })
}

// ---- tau tree ----

/// Binomial coefficient, None on overflow.
pub fn binom_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(r)
}

/// Rank of a sorted k-subset in the combinatorial number system.
pub fn subset_rank(sorted: &[usize]) -> Option<u128> {
    let mut r: u128 = 0;
    for (i, &c) in sorted.iter().enumerate() {
        r = r.checked_add(binom_u128(c as u64, i as u64 + 1)?)?;
    }
    Some(r)
}

/// Left-complete binary tree over the C(n_t, s) target subsets; each gate factor hangs
/// below the subset holding the targets it influences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauTree {
    pub num_targets: usize,
    pub set_size: usize,
    pub num_leaves: u128,
    pub depth: u32,
    /// Subset (leaf) rank for each factor, in factor order.
    pub leaf_of: Vec<u128>,
    /// The subset for each factor, as target positions.
    pub leaf_sets: Vec<Vec<usize>>,
}

impl TauTree {
    /// `influenced[j]`: target positions influenced by factor j. Sets are padded with the
    /// lowest-index targets up to `set_size`, which grows to the largest influence set.
    pub fn new(num_targets: usize, set_size: usize, influenced: &[BTreeSet<usize>]) -> Result<TauTree> {
        let s = influenced
            .iter()
            .map(BTreeSet::len)
            .max()
            .unwrap_or(0)
            .max(set_size.min(num_targets))
            .max(1);
        if s > num_targets {
            return Err(QacError::InvalidParameter(format!(
                "leaf set size {s} exceeds {num_targets} targets"
            )));
        }
        let num_leaves = binom_u128(num_targets as u64, s as u64)
            .ok_or_else(|| QacError::TooLarge("number of tau-tree leaves overflows".into()))?;
        let depth = if num_leaves <= 1 {
            0
        } else {
            128 - (num_leaves - 1).leading_zeros()
        };
        let mut leaf_of = Vec::with_capacity(influenced.len());
        let mut leaf_sets = Vec::with_capacity(influenced.len());
        for inf in influenced {
            let mut set = inf.clone();
            let mut t = 0;
            while set.len() < s {
                set.insert(t);
                t += 1;
            }
            let v: Vec<usize> = set.into_iter().collect();
            if v.iter().any(|&t| t >= num_targets) {
                return Err(QacError::InvalidParameter("influenced target out of range".into()));
            }
            leaf_of.push(subset_rank(&v).expect("rank fits when the leaf count fits"));
            leaf_sets.push(v);
        }
        Ok(TauTree {
            num_targets,
            set_size: s,
            num_leaves,
            depth,
            leaf_of,
            leaf_sets,
        })
    }

    /// Tree for a gate with nothing after it: each factor is its own target.
    pub fn trivial(arity: usize) -> TauTree {
        let inf: Vec<BTreeSet<usize>> = (0..arity).map(|j| BTreeSet::from([j])).collect();
        TauTree::new(arity, 1, &inf).expect("trivial tree")
    }
}

/// Randomness used by one factorized draw.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplerTrace {
    pub b: bool,
    /// Highlighted edges between depth k and k+1, as (parent index, child index).
    /// The last level links subset leaves to factor indices.
    pub highlighted: Vec<Vec<(u128, u128)>>,
    /// Node indices along the highlighted root-to-leaf path, ending at the factor index.
    pub path: Vec<u128>,
    /// The factor reached by the highlighted path.
    pub j: Option<usize>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

/// Antiderivative of prod_{k != j} (1 - p_k r) on [0, 1], for inverse-CDF draws of M_j.
#[derive(Clone, Debug)]
struct MinLaw {
    /// coefficients of the antiderivative, constant term first
    anti: Vec<f64>,
    dens: Vec<f64>,
    total: f64,
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

impl MinLaw {
    fn new(others: impl Iterator<Item = f64>) -> MinLaw {
        let mut dens = vec![1.0];
        for p in others {
            let mut next = vec![0.0; dens.len() + 1];
            for (i, &c) in dens.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c * p;
            }
            dens = next;
        }
        let mut anti = vec![0.0; dens.len() + 1];
        for (i, &c) in dens.iter().enumerate() {
            anti[i + 1] = c / (i as f64 + 1.0);
        }
        let total = poly_eval(&anti, 1.0);
        MinLaw { anti, dens, total }
    }

    /// Solve F(x) = u by safeguarded Newton.
    fn invert(&self, u: f64) -> f64 {
        let target = u * self.total;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = u;
        for _ in 0..100 {
            let f = poly_eval(&self.anti, x) - target;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = poly_eval(&self.dens, x);
            let mut nx = if d > 0.0 { x - f / d } else { f64::NAN };
            if !(nx > lo && nx < hi) {
                nx = 0.5 * (lo + hi);
            }
            if (nx - x).abs() <= 1e-15 || hi - lo <= 1e-15 {
                return nx;
            }
            x = nx;
        }
        x
    }
}

/// Factorized sampler for one R-tensor gate (B, highlighted tree edges, M, S).
#[derive(Clone, Debug)]
pub struct FactorizedGate {
    pub dist: GateOutputDistribution,
    pub tree: TauTree,
    /// P(J = j | min R < 1) for each active factor.
    pub j_mass: Vec<f64>,
    b_prob: f64,
    min_laws: Vec<MinLaw>,
    /// mass of every materialized node, level 0 (root) to depth (subset leaves)
    levels: Vec<BTreeMap<u128, f64>>,
    /// factors hanging below each subset leaf
    children: BTreeMap<u128, Vec<usize>>,
}

impl FactorizedGate {
    /// `tree` has one entry per active factor; None uses the trivial tree.
    pub fn new(g: &Gate, tree: Option<TauTree>) -> Result<FactorizedGate> {
        let dist = exact_rtensor_distribution(g)?;
        let k = dist.active.len();
        if k > FACTORIZED_MAX_ARITY {
            return Err(QacError::TooLarge(format!(
                "factorized sampler arity {k} exceeds {FACTORIZED_MAX_ARITY}"
            )));
        }
        let tree = tree.unwrap_or_else(|| TauTree::trivial(k));
        if tree.leaf_of.len() != k {
            return Err(QacError::InvalidParameter(format!(
                "tau tree has {} factors, gate has {k} active factors",
                tree.leaf_of.len()
            )));
        }
        let big_p = dist.zero_product;
        let nonzero = 1.0 - big_p;
        let mut min_laws = Vec::with_capacity(k);
        let mut j_mass = Vec::with_capacity(k);
        for j in 0..k {
            let law = MinLaw::new((0..k).filter(|&i| i != j).map(|i| dist.p[i]));
            j_mass.push(if nonzero > 0.0 {
                dist.p[j] * law.total / nonzero
            } else {
                0.0
            });
            min_laws.push(law);
        }
        let mut levels = vec![BTreeMap::new(); tree.depth as usize + 1];
        let mut children: BTreeMap<u128, Vec<usize>> = BTreeMap::new();
        for (j, &leaf) in tree.leaf_of.iter().enumerate() {
            if j_mass[j] > 0.0 {
                *levels[tree.depth as usize].entry(leaf).or_insert(0.0) += j_mass[j];
                children.entry(leaf).or_default().push(j);
            }
        }
        for d in (0..tree.depth as usize).rev() {
            let below: Vec<(u128, f64)> = levels[d + 1].iter().map(|(&i, &m)| (i, m)).collect();
            for (i, m) in below {
                *levels[d].entry(i / 2).or_insert(0.0) += m;
            }
        }
        Ok(FactorizedGate {
            b_prob: 4.0 * big_p - 4.0 * big_p * big_p,
            dist,
            tree,
            j_mass,
            min_laws,
            levels,
            children,
        })
    }

    fn pick<R: Rng + ?Sized>(rng: &mut R, weights: &[(u128, f64)]) -> u128 {
        let total: f64 = weights.iter().map(|w| w.1).sum();
        let mut u = rng.random::<f64>() * total;
        for &(i, w) in weights {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.iter().rev().find(|w| w.1 > 0.0).map(|w| w.0).unwrap_or(weights[0].0)
    }

    /// One draw with its trace; bits follow the gate's factor qubits.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<u8>, SamplerTrace) {
        let k = self.dist.active.len();
        let mut y = vec![0u8; self.dist.arity()];
        let mut trace = SamplerTrace {
            b: false,
            highlighted: Vec::new(),
            path: Vec::new(),
            j: None,
            m: Vec::new(),
            s: Vec::new(),
        };
        if k == 0 {
            return (y, trace);
        }
        if k == 1 {
            // single qubit: direct Bernoulli(|<1|G|0>|^2) = 4p(1-p)
            let p = self.dist.p[0];
            let one = rng.random::<f64>() < 4.0 * p * (1.0 - p);
            y[self.dist.active[0]] = u8::from(one);
            trace.b = one;
            return (y, trace);
        }
        trace.b = rng.random::<f64>() < self.b_prob;
        // highlight one child edge at every materialized node with nonzero mass
        let depth = self.tree.depth as usize;
        let mut chosen: Vec<BTreeMap<u128, u128>> = vec![BTreeMap::new(); depth + 1];
        for d in 0..depth {
            let mut edges = Vec::new();
            for (&i, &m) in &self.levels[d] {
                if m <= 0.0 {
                    continue;
                }
                let kids: Vec<(u128, f64)> = [2 * i, 2 * i + 1]
                    .into_iter()
                    .map(|c| (c, self.levels[d + 1].get(&c).copied().unwrap_or(0.0)))
                    .collect();
                let c = Self::pick(rng, &kids);
                chosen[d].insert(i, c);
                edges.push((i, c));
            }
            trace.highlighted.push(edges);
        }
        let mut edges = Vec::new();
        for (&leaf, js) in &self.children {
            let w: Vec<(u128, f64)> = js.iter().map(|&j| (j as u128, self.j_mass[j])).collect();
            let c = Self::pick(rng, &w);
            chosen[depth].insert(leaf, c);
            edges.push((leaf, c));
        }
        trace.highlighted.push(edges);

        let mut node = 0u128;
        trace.path.push(node);
        for level in chosen.iter() {
            node = level[&node];
            trace.path.push(node);
        }
        let jj = node as usize;
        trace.j = Some(jj);

        trace.m = self
            .min_laws
            .iter()
            .map(|law| law.invert(rng.random::<f64>()))
            .collect();
        trace.s = (0..k).map(|_| rng.random::<f64>()).collect();

        if trace.b {
            let mu = trace.m[jj];
            for j in 0..k {
                let p = self.dist.p[j];
                let survive = if j == jj {
                    true
                } else {
                    trace.s[j] <= p * (1.0 - mu) / (1.0 - p * mu)
                };
                y[self.dist.active[j]] = u8::from(survive);
            }
        }
        (y, trace)
    }
}

/// One factorized draw of an R-tensor gate on |0...0>.
pub fn appendix_b_sample_gate<R: Rng + ?Sized>(
    g: &Gate,
    tree: Option<TauTree>,
    rng: &mut R,
) -> Result<(Vec<u8>, SamplerTrace)> {
    Ok(FactorizedGate::new(g, tree)?.sample(rng))
}

// ---- whole-circuit sampler ----

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum SamplerKind {
    Direct,
    Factorized,
}

#[derive(Clone, Debug)]
enum LSampler {
    OneQubit { qubit: usize, p1: f64 },
    Direct(GateOutputDistribution),
    Factorized(FactorizedGate),
}

/// Samples target bitstrings of C L |0...0>.
#[derive(Clone, Debug)]
pub struct MostlyClassicalSampler {
    pub num_qubits: usize,
    pub targets: Vec<usize>,
    pub kind: SamplerKind,
    program: ClassicalProgram,
    l: Vec<LSampler>,
}

impl MostlyClassicalSampler {
    pub fn new(c: &Circuit, kind: SamplerKind) -> Result<MostlyClassicalSampler> {
        c.ensure_valid()?;
        let cls = classify(c);
        let w = cls
            .witness
            .ok_or_else(|| QacError::Precondition("circuit is not mostly classical".into()))?;
        let program = ClassicalProgram::compile(&w.c)?;
        let targets = c.target_indices();
        let tpos: BTreeMap<usize, usize> = targets.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let inf = if kind == SamplerKind::Factorized {
            Some(influences_structural(&w.c)?)
        } else {
            None
        };
        let set_size = 1usize << w.c.depth().min(62);
        let mut l = Vec::new();
        for g in &w.l.gates {
            match g {
                Gate::OneQubit { qubit, matrix } => l.push(LSampler::OneQubit {
                    qubit: qubit.0,
                    p1: matrix[1][0].norm_sqr().min(1.0),
                }),
                Gate::RTensor { .. } => match kind {
                    SamplerKind::Direct => l.push(LSampler::Direct(exact_rtensor_distribution(g)?)),
                    SamplerKind::Factorized => {
                        let dist = exact_rtensor_distribution(g)?;
                        let inf = inf.as_ref().expect("influences computed");
                        let influenced: Vec<BTreeSet<usize>> = dist
                            .active
                            .iter()
                            .map(|&a| {
                                inf.sets[dist.qubits[a]]
                                    .iter()
                                    .filter_map(|o| tpos.get(o).copied())
                                    .collect()
                            })
                            .collect();
                        let tree = if targets.is_empty() {
                            TauTree::trivial(dist.active.len())
                        } else {
                            TauTree::new(targets.len(), set_size, &influenced)?
                        };
                        l.push(LSampler::Factorized(FactorizedGate::new(g, Some(tree))?));
                    }
                },
                _ => unreachable!("L holds only one-qubit and rtensor gates"),
            }
        }
        Ok(MostlyClassicalSampler {
            num_qubits: c.num_qubits,
            targets,
            kind,
            program,
            l,
        })
    }

    /// One draw of all wires after the circuit.
    pub fn sample_all<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let mut bits = vec![0u8; self.num_qubits];
        for s in &self.l {
            match s {
                LSampler::OneQubit { qubit, p1 } => bits[*qubit] = u8::from(rng.random::<f64>() < *p1),
                LSampler::Direct(d) => {
                    for (q, b) in d.qubits.iter().zip(d.sample(rng)) {
                        bits[*q] = b;
                    }
                }
                LSampler::Factorized(g) => {
                    let (y, _) = g.sample(rng);
                    for (q, b) in g.dist.qubits.iter().zip(y) {
                        bits[*q] = b;
                    }
                }
            }
        }
        self.program.run(&mut bits);
        bits
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let all = self.sample_all(rng);
        self.targets.iter().map(|&t| all[t]).collect()
    }

    /// `trials` draws, trial i using stream (seed, i).
    pub fn sample_trials(&self, trials: u64, seed: u64) -> Vec<Vec<u8>> {
        (0..trials)
            .into_par_iter()
            .map(|t| self.sample(&mut trial_rng(seed, t)))
            .collect()
    }

    /// Empirical law over packed target strings (at most 64 targets).
    pub fn empirical(&self, trials: u64, seed: u64) -> Result<MeasurementDistribution> {
        if self.targets.len() > 64 {
            return Err(QacError::TooLarge("more than 64 targets".into()));
        }
        let counts = (0..trials)
            .into_par_iter()
            .fold(BTreeMap::new, |mut acc: BTreeMap<u64, u64>, t| {
                *acc.entry(pack(&self.sample(&mut trial_rng(seed, t)))).or_insert(0) += 1;
                acc
            })
            .reduce(BTreeMap::new, |mut a, b| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                a
            });
        let probs = counts
            .into_iter()
            .map(|(k, v)| (k, v as f64 / trials as f64))
            .collect();
        Ok(MeasurementDistribution::from_packed(self.targets.clone(), probs))
    }
}

/// Bits packed with the first bit most significant.
pub fn pack(bits: &[u8]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
}

pub fn sample_mostly_classical<R: Rng + ?Sized>(c: &Circuit, rng: &mut R) -> Result<Vec<u8>> {
    Ok(MostlyClassicalSampler::new(c, SamplerKind::Direct)?.sample(rng))
}

/// Exact target law from the state-vector oracle.
pub fn exact_target_law(c: &Circuit) -> Result<MeasurementDistribution> {
    run_zero(c)?.measurement_distribution(&c.target_indices())
}

// ---- Hamming-weight concentration ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailRow {
    pub epsilon: f64,
    /// mean + epsilon * n
    pub threshold: f64,
    pub empirical: f64,
    /// exp(-2 epsilon^2 n / r)
    pub bound: f64,
    /// bound plus three binomial standard errors
    pub bound_with_slack: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HammingStats {
    pub num_targets: usize,
    pub trials: u64,
    pub mean: f64,
    pub variance: f64,
    pub depth: usize,
    /// r = 2^depth, used in the tail bound
    pub r: f64,
    /// largest structural influence of a first-layer output on the targets
    pub r_structural: usize,
    pub tails: Vec<TailRow>,
}

pub const TAIL_EPSILONS: [f64; 3] = [0.05, 0.1, 0.2];

pub fn hamming_stats_from_weights(
    weights: &[usize],
    num_targets: usize,
    depth: usize,
    r_structural: usize,
) -> HammingStats {
    let t = weights.len() as f64;
    let mean = weights.iter().map(|&w| w as f64).sum::<f64>() / t;
    let variance = weights.iter().map(|&w| (w as f64 - mean).powi(2)).sum::<f64>() / t;
    let r = 2f64.powi(depth as i32);
    let n = num_targets as f64;
    let tails = TAIL_EPSILONS
        .iter()
        .map(|&eps| {
            let threshold = mean + eps * n;
            let hits = weights.iter().filter(|&&w| w as f64 >= threshold).count();
            let empirical = hits as f64 / t;
            let bound = (-2.0 * eps * eps * n / r).exp();
            let bound_with_slack = bound + 3.0 * (bound * (1.0 - bound) / t).sqrt();
            TailRow {
                epsilon: eps,
                threshold,
                empirical,
                bound,
                bound_with_slack,
                within: empirical <= bound_with_slack,
            }
        })
        .collect();
    HammingStats {
        num_targets,
        trials: weights.len() as u64,
        mean,
        variance,
        depth,
        r,
        r_structural,
        tails,
    }
}

/// Monte-Carlo Hamming-weight statistics of the target measurement.
pub fn hamming_stats(c: &Circuit, trials: u64, seed: u64, kind: SamplerKind) -> Result<HammingStats> {
    let sampler = MostlyClassicalSampler::new(c, kind)?;
    let weights: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let y = sampler.sample(&mut trial_rng(seed, t));
            y.iter().filter(|&&b| b == 1).count()
        })
        .collect();
    let w = classify(c).witness.expect("sampler accepted the circuit");
    let inf = influences_structural(&w.c)?;
    let tset: BTreeSet<usize> = sampler.targets.iter().copied().collect();
    let r_structural = w
        .l
        .gates
        .iter()
        .flat_map(|g| g.support_indices())
        .map(|q| inf.sets[q].intersection(&tset).count())
        .max()
        .unwrap_or(0);
    Ok(hamming_stats_from_weights(
        &weights,
        sampler.targets.len(),
        c.depth(),
        r_structural,
    ))
}

/// n independent qubits, each H|0>.
pub fn read1_family(n: usize) -> Circuit {
    let mut c = Circuit::new(n);
    c.push_layer((0..n).map(Gate::h).collect());
    c
}

/// m coins, each copied onto r wires by a CNOT fanout tree.
pub fn read_r_family(m: usize, r: usize) -> Result<Circuit> {
    let n = m * r;
    let mut c = Circuit::new(n);
    c.push_layer((0..m).map(|i| Gate::h(i * r)).collect());
    let tree = crate::transforms::fanout_tree(r, 2)?;
    for layer in &tree.layers {
        let mut gates = Vec::new();
        for i in 0..m {
            let map: Vec<usize> = (i * r..(i + 1) * r).collect();
            gates.extend(layer.gates.iter().map(|g| g.remap(&map)));
        }
        c.push_layer(gates);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::statevec::StateVector;
    use crate::transforms::fanout_tree;
    use approx::assert_abs_diff_eq;

    fn oracle(g: &Gate) -> BTreeMap<u64, f64> {
        let n = g.support().last().unwrap().0 + 1;
        let s = StateVector::zero(n).unwrap().apply_gate(g).unwrap();
        s.measurement_distribution(&g.support_indices()).unwrap().probs
    }

    #[test]
    fn d1_examples() {
        let z = Gate::rtensor([(0, LocalState::one())]);
        let d = exact_rtensor_distribution(&z).unwrap().probs().unwrap();
        assert_eq!(d, BTreeMap::from([(0, 1.0)]));
        let d = exact_rtensor_distribution(&Gate::cz(0, 1)).unwrap().probs().unwrap();
        assert_eq!(d, BTreeMap::from([(0, 1.0)]));
        let pp = Gate::rtensor([(0, LocalState::plus()), (1, LocalState::plus())]);
        let d = exact_rtensor_distribution(&pp).unwrap().probs().unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(d[&k], 0.25, epsilon = 1e-15);
        }
        let o = oracle(&pp);
        for k in 0..4 {
            assert_abs_diff_eq!(d[&k], o[&k], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_factor_is_elided() {
        let g = Gate::rtensor([(0, LocalState::plus()), (1, LocalState::zero()), (2, LocalState::minus())]);
        let d = exact_rtensor_distribution(&g).unwrap();
        assert_eq!(d.active, vec![0, 2]);
        let law = d.probs().unwrap();
        let o = oracle(&g);
        assert_abs_diff_eq!(crate::statevec::tv_distance(&law, &o), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sampler_basics() {
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            assert_eq!(sample_rtensor(&Gate::cz(0, 1), &mut rng).unwrap(), vec![0, 0]);
        }
        let pp = Gate::rtensor([(0, LocalState::plus()), (1, LocalState::plus())]);
        let d = exact_rtensor_distribution(&pp).unwrap();
        let mut counts = [0u32; 4];
        for _ in 0..100_000 {
            counts[pack(&d.sample(&mut rng)) as usize] += 1;
        }
        let tv: f64 = counts.iter().map(|&c| (c as f64 / 1e5 - 0.25).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 0.02, "tv = {tv}");
    }

    #[test]
    fn non_nice_sampler_matches_law() {
        // P = 0.9^3 > 1/4
        let s = LocalState::real(0.9f64.sqrt(), 0.1f64.sqrt());
        let g = Gate::rtensor([(0, s), (1, s), (2, s)]);
        let d = exact_rtensor_distribution(&g).unwrap();
        assert!(!d.is_nice());
        let law = d.probs().unwrap();
        let mut rng = rng_from_seed(2);
        let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
        let t = 200_000;
        for _ in 0..t {
            *counts.entry(pack(&d.sample(&mut rng))).or_insert(0.0) += 1.0 / t as f64;
        }
        assert!(crate::statevec::tv_distance(&law, &counts) < 0.01);
    }

    #[test]
    fn classical_runs() {
        assert_eq!(run_classical(&crate::circuit::parity4_example(), &[0, 1, 1, 1]).unwrap(), vec![1, 1, 1, 1]);
        let mut c = Circuit::new(3);
        c.push_layer(vec![Gate::toffoli(&[0, 1], 2)]);
        assert_eq!(run_classical(&c, &[1, 1, 0]).unwrap(), vec![1, 1, 1]);
        let mut c = Circuit::new(3);
        c.push_layer(vec![Gate::or(&[0, 1], 2)]);
        assert_eq!(run_classical(&c, &[0, 1, 0]).unwrap(), vec![0, 1, 1]);
        let t = fanout_tree(8, 2).unwrap();
        assert_eq!(run_classical(&t, &[1, 0, 0, 0, 0, 0, 0, 0]).unwrap(), vec![1; 8]);
        let mut h = Circuit::new(1);
        h.push_layer(vec![Gate::h(0)]);
        assert!(run_classical(&h, &[0]).is_err());
    }

    #[test]
    fn influence_examples() {
        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::cnot(0, 1)]);
        let e = influences_exact(&c).unwrap();
        assert_eq!(e.sets, vec![BTreeSet::from([0, 1]), BTreeSet::from([1])]);
        let id = Circuit::new(3);
        let e = influences_exact(&id).unwrap();
        assert!(e.sets.iter().enumerate().all(|(i, s)| *s == BTreeSet::from([i])));
        for d in 1..=4 {
            let t = fanout_tree(1 << d, 2).unwrap();
            let e = influences_exact(&t).unwrap();
            assert_eq!(e.sets[0].len(), 1 << d);
            let s = influences_structural(&t).unwrap();
            assert!(e.is_subset_of(&s));
            assert!(s.max_size() <= 1 << t.depth());
        }
    }

    #[test]
    fn exact_influence_can_be_smaller() {
        // two CNOTs from 0 into 1 cancel
        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::cnot(0, 1)]).push_layer(vec![Gate::cnot(0, 1)]);
        let e = influences_exact(&c).unwrap();
        let s = influences_structural(&c).unwrap();
        assert_eq!(e.sets[0], BTreeSet::from([0]));
        assert_eq!(s.sets[0], BTreeSet::from([0, 1]));
    }

    #[test]
    fn ranks() {
        assert_eq!(binom_u128(64, 32), Some(1832624140942590534));
        // ranks of the 2-subsets of 4 are 0..6
        let mut seen = BTreeSet::new();
        for a in 0..4 {
            for b in a + 1..4 {
                seen.insert(subset_rank(&[a, b]).unwrap());
            }
        }
        assert_eq!(seen, (0..6).collect());
    }

    #[test]
    fn factorized_examples() {
        let mut rng = rng_from_seed(3);
        // single qubit: Bernoulli(4p(1-p))
        let g = Gate::rtensor([(0, LocalState::plus())]);
        let s = FactorizedGate::new(&g, None).unwrap();
        let ones = (0..20_000).filter(|_| s.sample(&mut rng).0[0] == 1).count();
        assert!((ones as f64 / 20_000.0 - 1.0).abs() < 1e-12);
        // p = (1, 1): always zeros
        let g = Gate::cz(0, 1);
        let s = FactorizedGate::new(&g, None).unwrap();
        for _ in 0..1000 {
            let (y, t) = s.sample(&mut rng);
            assert_eq!(y, vec![0, 0]);
            assert!(!t.b);
        }
        // R_{|++>}
        let pp = Gate::rtensor([(0, LocalState::plus()), (1, LocalState::plus())]);
        let s = FactorizedGate::new(&pp, None).unwrap();
        let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
        for _ in 0..100_000 {
            let (y, t) = s.sample(&mut rng);
            assert_eq!(t.path.len(), t.highlighted.len() + 1);
            *counts.entry(pack(&y)).or_insert(0.0) += 1e-5;
        }
        let law = exact_rtensor_distribution(&pp).unwrap().probs().unwrap();
        assert!(crate::statevec::tv_distance(&law, &counts) <= 0.02);
    }

    #[test]
    fn factorized_matches_law_with_tree() {
        let ps: [f64; 4] = [0.9, 0.35, 0.6, 0.15];
        let g = Gate::rtensor(ps.iter().enumerate().map(|(q, &p)| (q, LocalState::real((1.0 - p).sqrt(), p.sqrt()))));
        let inf: Vec<BTreeSet<usize>> = vec![
            BTreeSet::from([0, 1]),
            BTreeSet::from([2]),
            BTreeSet::from([4, 1]),
            BTreeSet::from([3]),
        ];
        let tree = TauTree::new(5, 2, &inf).unwrap();
        assert_eq!(tree.num_leaves, 10);
        assert_eq!(tree.depth, 4);
        let s = FactorizedGate::new(&g, Some(tree)).unwrap();
        let law = exact_rtensor_distribution(&g).unwrap().probs().unwrap();
        let mut rng = rng_from_seed(11);
        let t = 200_000;
        let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
        for _ in 0..t {
            *counts.entry(pack(&s.sample(&mut rng).0)).or_insert(0.0) += 1.0 / t as f64;
        }
        assert!(crate::statevec::tv_distance(&law, &counts) <= 0.01);
    }

    #[test]
    fn j_masses_sum_to_one() {
        let g = Gate::rtensor((0..5).map(|q| (q, LocalState::real((0.2 + 0.1 * q as f64).sqrt(), (0.8 - 0.1 * q as f64).sqrt()))));
        let s = FactorizedGate::new(&g, None).unwrap();
        assert_abs_diff_eq!(s.j_mass.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn min_law_inverse() {
        let law = MinLaw::new([0.5, 0.9].into_iter());
        for u in [0.0, 0.1, 0.5, 0.9, 0.999] {
            let x = law.invert(u);
            assert_abs_diff_eq!(poly_eval(&law.anti, x) / law.total, u, epsilon = 1e-12);
        }
    }

    #[test]
    fn mostly_classical_examples() {
        let mut c = Circuit::new(2);
        c.push_layer(vec![Gate::cz(0, 1)]).push_layer(vec![Gate::cnot(0, 1)]);
        let s = MostlyClassicalSampler::new(&c, SamplerKind::Direct).unwrap();
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            assert_eq!(s.sample(&mut rng), vec![0, 0]);
        }
        let mut cat = Circuit::new(4);
        cat.push_layer(vec![Gate::h(0)]);
        let cat = cat.then(&fanout_tree(4, 2).unwrap());
        let s = MostlyClassicalSampler::new(&cat, SamplerKind::Direct).unwrap();
        let d = s.empirical(100_000, 9).unwrap();
        assert_eq!(d.probs.len(), 2);
        assert!((d.prob_str("0000") - 0.5).abs() <= 3.0 * (0.25f64 / 1e5).sqrt());
    }

    #[test]
    fn hamming_examples() {
        let mut c = Circuit::new(3);
        c.push_layer(vec![Gate::x(0)]).push_layer(vec![Gate::cnot(0, 1)]);
        let h = hamming_stats(&c, 1000, 1, SamplerKind::Direct).unwrap();
        assert_eq!(h.variance, 0.0);
        assert_eq!(h.mean, 2.0);
        let h = hamming_stats(&read1_family(50), 2000, 1, SamplerKind::Direct).unwrap();
        assert_eq!(h.r, 1.0);
        assert!((h.mean - 25.0).abs() < 1.0);
        let fam = read_r_family(10, 4).unwrap();
        let h = hamming_stats(&fam, 2000, 1, SamplerKind::Direct).unwrap();
        assert_eq!((h.r, h.r_structural), (4.0, 4));
    }
}
