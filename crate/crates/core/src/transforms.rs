//! Circuit rewrites: OR expansion, R-tensor normal form, Hadamard conjugation,
//! fanout trees and the parity / cat / nekomata reductions.

use std::collections::BTreeMap;

use crate::circuit::{mat2, Circuit, Gate, Layer, LocalState, Matrix2, QubitId, C64};
use crate::error::{QacError, Result};
use crate::statevec::{run, StateVector};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ReferenceKind {
    /// |b, x> -> |b xor parity(x), x>
    Parity,
    /// |b, x> -> |b, x_1 xor b, ..., x_{n-1} xor b>
    Fanout,
}

/// U_parity or U_fanout on n qubits; qubit 0 holds b.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ReferenceUnitary {
    pub kind: ReferenceKind,
    pub n: usize,
}

impl ReferenceUnitary {
    pub const DENSE_CAP: usize = 12;

    pub fn parity(n: usize) -> Self {
        ReferenceUnitary {
            kind: ReferenceKind::Parity,
            n,
        }
    }

    pub fn fanout(n: usize) -> Self {
        ReferenceUnitary {
            kind: ReferenceKind::Fanout,
            n,
        }
    }

    /// Image of basis index `i` (qubit 0 is the most significant bit).
    pub fn apply_basis(&self, i: usize) -> usize {
        let n = self.n;
        let top = 1usize << (n - 1);
        let rest = i & (top - 1);
        match self.kind {
            ReferenceKind::Parity => {
                if rest.count_ones() % 2 == 1 {
                    i ^ top
                } else {
                    i
                }
            }
            ReferenceKind::Fanout => {
                if i & top != 0 {
                    i ^ (top - 1)
                } else {
                    i
                }
            }
        }
    }

    /// Dense row-major matrix; only for n <= 12.
    pub fn matrix(&self) -> Result<Vec<C64>> {
        if self.n > Self::DENSE_CAP {
            return Err(QacError::TooLarge(format!(
                "dense reference matrix for n = {} (cap {})",
                self.n,
                Self::DENSE_CAP
            )));
        }
        let dim = 1usize << self.n;
        let mut m = vec![C64::new(0.0, 0.0); dim * dim];
        for col in 0..dim {
            m[self.apply_basis(col) * dim + col] = C64::new(1.0, 0.0);
        }
        Ok(m)
    }
}

/// Replace each OR gate by X on its controls, a Toffoli, then X on controls and target.
pub fn expand_or(c: &Circuit) -> Circuit {
    let mut out = Circuit {
        num_qubits: c.num_qubits,
        layers: Vec::new(),
        targets: c.targets.clone(),
    };
    for layer in &c.layers {
        let mut pre = Vec::new();
        let mut mid = Vec::new();
        let mut post = Vec::new();
        for g in &layer.gates {
            match g {
                Gate::Or { controls, target } => {
                    for q in controls {
                        pre.push(Gate::x(q.0));
                        post.push(Gate::x(q.0));
                    }
                    post.push(Gate::x(target.0));
                    mid.push(Gate::Toffoli {
                        controls: controls.clone(),
                        target: *target,
                    });
                }
                g => mid.push(g.clone()),
            }
        }
        for gates in [pre, mid, post] {
            if !gates.is_empty() {
                out.layers.push(Layer::new(gates));
            }
        }
    }
    out
}

/// Canonical one-qubit unitary V with V|1> = chi: second column chi,
/// first column a phase times (-conj amp1, conj amp0) with a real nonnegative first entry.
pub fn unitary_one_to(chi: &LocalState) -> Matrix2 {
    let (c0, c1) = (chi.amp0, chi.amp1);
    let col0 = if c1.norm() > 0.0 {
        let ph = -c1 / c1.norm();
        (ph * -c1.conj(), ph * c0.conj())
    } else {
        (C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    };
    [[col0.0, c0], [col0.1, c1]]
}

/// Canonical U with U|-> = chi: V H, rephased so that U[0][0] is real and nonnegative.
pub fn unitary_minus_to(chi: &LocalState) -> Matrix2 {
    let u = mat2::mul(&unitary_one_to(chi), &mat2::h());
    let a = u[0][0];
    if a.norm() > 1e-15 {
        mat2::scale(&u, a.conj() / a.norm())
    } else {
        u
    }
}

/// Write R_chi as L T L^dagger, T a generalized Toffoli whose target is the last factor.
///
/// Returns the one-qubit gates of L and the Toffoli. With one factor, T is X.
pub fn synthesize_rtensor(factors: &BTreeMap<QubitId, LocalState>) -> Result<(Vec<Gate>, Gate)> {
    let n = factors.len();
    if n == 0 {
        return Err(QacError::InvalidParameter("rtensor needs a factor".into()));
    }
    let mut layer = Vec::with_capacity(n);
    let mut controls = Vec::with_capacity(n - 1);
    let mut target = 0;
    for (j, (q, s)) in factors.iter().enumerate() {
        if j + 1 < n {
            layer.push(Gate::one_qubit(q.0, unitary_one_to(s)));
            controls.push(q.0);
        } else {
            layer.push(Gate::one_qubit(q.0, unitary_minus_to(s)));
            target = q.0;
        }
    }
    Ok((layer, Gate::toffoli(&controls, target)))
}

/// The three-layer circuit L, T, L^dagger on `num_qubits` wires.
pub fn synthesized_circuit(
    num_qubits: usize,
    factors: &BTreeMap<QubitId, LocalState>,
) -> Result<Circuit> {
    let (l, t) = synthesize_rtensor(factors)?;
    let mut c = Circuit::new(num_qubits);
    c.push_layer(l.iter().map(Gate::inverse).collect());
    c.push_layer(vec![t]);
    c.push_layer(l);
    Ok(c)
}

fn reflection_matrix(s: &LocalState) -> Matrix2 {
    let mut m = mat2::identity();
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] -= s.amp(i) * s.amp(j).conj() * 2.0;
        }
    }
    m
}

/// Multi-qubit gate G written as A R_chi, with A a one-qubit layer on G's support.
fn as_reflection(g: &Gate) -> Result<(BTreeMap<QubitId, LocalState>, Vec<(QubitId, Matrix2)>)> {
    match g {
        Gate::Toffoli { controls, target } => {
            let mut f: BTreeMap<_, _> = controls.iter().map(|&q| (q, LocalState::one())).collect();
            f.insert(*target, LocalState::minus());
            Ok((f, Vec::new()))
        }
        Gate::Or { controls, target } => {
            let mut f: BTreeMap<_, _> = controls.iter().map(|&q| (q, LocalState::zero())).collect();
            f.insert(*target, LocalState::minus());
            Ok((f, vec![(*target, mat2::x())]))
        }
        Gate::RTensor { factors } => Ok((factors.clone(), Vec::new())),
        Gate::Fanout { .. } => Err(QacError::Unsupported(
            "fanout gates have no single-reflection form; expand them first".into(),
        )),
        Gate::OneQubit { .. } => unreachable!("one-qubit gates are folded into the pending layer"),
    }
}

/// One layer of one-qubit gates followed by multi-qubit R-tensor gates only,
/// with the same unitary and the same topology.
///
/// Layers are processed from last to first while a pending one-qubit layer P
/// is pushed toward the input: P A R_chi = R_{P A chi} P A.
pub fn to_rtensor_normal_form(c: &Circuit) -> Result<Circuit> {
    let mut pending: BTreeMap<QubitId, Matrix2> = BTreeMap::new();
    let mut rlayers: Vec<Layer> = Vec::new();
    let fold = |p: &mut BTreeMap<QubitId, Matrix2>, q: QubitId, u: &Matrix2| {
        let e = p.entry(q).or_insert_with(mat2::identity);
        *e = mat2::mul(e, u);
    };
    for layer in c.layers.iter().rev() {
        let mut emitted = Vec::new();
        for g in &layer.gates {
            if !g.is_multi_qubit() {
                let (q, m) = match g {
                    Gate::OneQubit { qubit, matrix } => (*qubit, *matrix),
                    Gate::RTensor { factors } => {
                        let (q, s) = factors.iter().next().expect("one factor");
                        (*q, reflection_matrix(s))
                    }
                    Gate::Toffoli { target, .. } => (*target, mat2::x()),
                    Gate::Or { target, .. } | Gate::Fanout { control: target, .. } => {
                        (*target, mat2::identity())
                    }
                };
                match pending.get_mut(&q) {
                    Some(p) => *p = mat2::mul(p, &m),
                    None => {
                        pending.insert(q, m);
                    }
                }
                continue;
            }
            let (mut factors, a) = as_reflection(g)?;
            for (q, m) in &a {
                fold(&mut pending, *q, m);
            }
            for (q, s) in factors.iter_mut() {
                if let Some(p) = pending.get(q) {
                    *s = s.apply(p);
                }
            }
            emitted.push(Gate::RTensor { factors });
        }
        if !emitted.is_empty() {
            rlayers.push(Layer::new(emitted));
        }
    }
    let mut out = Circuit {
        num_qubits: c.num_qubits,
        layers: Vec::with_capacity(rlayers.len() + 1),
        targets: c.targets.clone(),
    };
    let first: Vec<Gate> = pending
        .into_iter()
        .map(|(q, m)| Gate::one_qubit(q.0, m))
        .collect();
    if !first.is_empty() {
        out.layers.push(Layer::new(first));
    }
    out.layers.extend(rlayers.into_iter().rev());
    Ok(out)
}

/// (H^n ⊗ I) c (H^n ⊗ I).
pub fn conjugate_by_hadamards(c: &Circuit, n: usize) -> Result<Circuit> {
    if n > c.num_qubits {
        return Err(QacError::InvalidParameter(format!(
            "cannot conjugate {n} wires of a {}-qubit circuit",
            c.num_qubits
        )));
    }
    let hs = || Layer::new((0..n).map(Gate::h).collect());
    let mut out = Circuit {
        num_qubits: c.num_qubits,
        layers: vec![hs()],
        targets: c.targets.clone(),
    };
    out.layers.extend(c.layers.iter().cloned());
    out.layers.push(hs());
    Ok(out)
}

/// Restricted fanout |b, 0^{n-1}> -> |b^n> on n qubits with gates of arity <= m.
///
/// Level k copies the bit from the first m^{k-1} wires to the first min(n, m^k).
pub fn fanout_tree(n: usize, m: usize) -> Result<Circuit> {
    if n == 0 || m < 2 {
        return Err(QacError::InvalidParameter(format!(
            "fanout tree needs n >= 1 and m >= 2 (got n = {n}, m = {m})"
        )));
    }
    let mut c = Circuit::new(n);
    let mut have = 1usize;
    while have < n {
        let next = have.saturating_mul(m).min(n);
        let mut gates = Vec::new();
        let mut fresh = have;
        for holder in 0..have {
            if fresh >= next {
                break;
            }
            let end = (fresh + m - 1).min(next);
            let ts: Vec<usize> = (fresh..end).collect();
            gates.push(Gate::fanout(holder, &ts));
            fresh = end;
        }
        c.push_layer(gates);
        have = next;
    }
    Ok(c)
}

/// Smallest d with m^d >= n.
pub fn ceil_log(n: usize, m: usize) -> usize {
    let mut d = 0;
    let mut p = 1usize;
    while p < n {
        p = p.saturating_mul(m);
        d += 1;
    }
    d
}

/// Clean parity from a nekomata constructor.
///
/// `nek` acts on a wires and its first n wires are the nekomata targets.
/// Output wires: inputs 0..n, nekomata wires n..n+a, parity wire n+a.
pub fn parity_from_nekomata(nek: &Circuit, n: usize) -> Result<Circuit> {
    let a = nek.num_qubits;
    if a < n || n == 0 {
        return Err(QacError::InvalidParameter(format!(
            "constructor has {a} wires but {n} targets were requested"
        )));
    }
    let total = n + a + 1;
    let map: Vec<usize> = (n..n + a).collect();
    let c = nek.embed(total, &map);
    let cdag = c.inverse();
    let cz: Vec<Gate> = (0..n).map(|i| Gate::cz(i, n + i)).collect();
    let or = Gate::or(&(n..n + a).collect::<Vec<_>>(), n + a);

    let mut out = Circuit::new(total);
    out.layers.extend(c.layers.iter().cloned());
    out.push_layer(cz.clone());
    out.layers.extend(cdag.layers.iter().cloned());
    out.push_layer(vec![or]);
    out.layers.extend(c.layers.iter().cloned());
    out.push_layer(cz);
    out.layers.extend(cdag.layers.iter().cloned());
    let mut t: Vec<usize> = (0..n).collect();
    t.push(n + a);
    Ok(out.with_targets(&t))
}

/// Basis-index permutation of U_parity on (inputs, b) ⊗ I on the nekomata wires,
/// in the wire layout of `parity_from_nekomata`.
pub fn parity_layout_permutation(a: usize) -> impl Fn(usize) -> usize {
    move |i: usize| {
        // the parity wire is last, so it is the low bit
        if (i >> (a + 1)).count_ones() % 2 == 1 {
            i ^ 1
        } else {
            i
        }
    }
}

/// H on wire 0 followed by `c`.
pub fn cat_from_restricted_fanout(c: &Circuit, n: usize) -> Result<Circuit> {
    if n > c.num_qubits || n == 0 {
        return Err(QacError::InvalidParameter(format!(
            "cat on {n} wires from a {}-qubit circuit",
            c.num_qubits
        )));
    }
    let mut out = Circuit::new(c.num_qubits);
    out.push_layer(vec![Gate::h(0)]);
    out.layers.extend(c.layers.iter().cloned());
    out.targets = c
        .targets
        .clone()
        .or_else(|| Some((0..n).map(QubitId).collect()));
    Ok(out)
}

/// X on every designated target after `c`.
pub fn flip_targets(c: &Circuit) -> Circuit {
    let mut out = c.clone();
    let xs: Vec<Gate> = c.target_indices().into_iter().map(Gate::x).collect();
    out.push_layer(xs);
    out
}

/// Both sides of the open-control simplification on k+2 wires.
///
/// Wire 0 is the control, wire 1 the ancilla (starts in |0>), wires 2..k+2 the open controls.
pub fn open_control_sides(k: usize) -> (Circuit, Circuit) {
    let n = k + 2;
    let open: Vec<usize> = (2..n).collect();
    let mut left = Circuit::new(n);
    left.push_layer(vec![Gate::or(&open, 1)])
        .push_layer(vec![Gate::x(1)])
        .push_layer(vec![Gate::cz(0, 1)])
        .push_layer(vec![Gate::x(1)])
        .push_layer(vec![Gate::or(&open, 1)]);
    let mut right = Circuit::new(n);
    let mut f = vec![(0, LocalState::one())];
    f.extend(open.iter().map(|&q| (q, LocalState::zero())));
    right.push_layer(vec![Gate::rtensor(f)]);
    (left, right)
}

/// Whether both sides agree on every basis input with the ancilla in |0>, within 1e-10.
pub fn fig7_rewrite_check(k: usize) -> Result<bool> {
    if k < 1 {
        return Err(QacError::InvalidParameter("need k >= 1 open controls".into()));
    }
    let (l, r) = open_control_sides(k);
    let n = k + 2;
    let anc = crate::statevec::qmask(n, 1);
    for i in (0..(1usize << n)).filter(|i| i & anc == 0) {
        let x = StateVector::basis(n, i)?;
        let (a, b) = (run(&l, &x)?, run(&r, &x)?);
        let dev = a
            .amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(u, v)| (u - v).norm())
            .fold(0.0, f64::max);
        if dev > 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Depth-7 approximate clean parity from the depth-2 grid construction.
///
/// Equivalent on clean ancillas to `parity_from_nekomata(flip_targets(grid), n)`
/// after every row's OR, X, CZ, X, OR block is replaced by R_{|1,0^M>} on
/// (input i, row i's ancillas). Wire layout as in `parity_from_nekomata`.
pub fn parity_depth7(n: usize, m: usize, delta: f64) -> Result<Circuit> {
    let grid = crate::nekomata::build_depth2_nekomata(n, m as u64, delta)?;
    let a = grid.num_qubits;
    let total = n + a + 1;
    let map = grid_wire_map(n, m);
    let cols = grid.embed(total, &map);
    let col_layer = cols.layers[0].clone();
    let rows: Vec<Gate> = (0..n)
        .map(|r| {
            let mut f = vec![(r, LocalState::one())];
            f.extend((0..m).map(|col| (map[crate::nekomata::grid_qubit(n, r, col)], LocalState::zero())));
            Gate::rtensor(f)
        })
        .collect();
    let or = Gate::or(&(n..n + a).collect::<Vec<_>>(), n + a);
    let mut out = Circuit::new(total);
    out.layers.push(col_layer.clone());
    out.push_layer(rows.clone());
    out.layers.push(col_layer.clone());
    out.push_layer(vec![or]);
    out.layers.push(col_layer.clone());
    out.push_layer(rows);
    out.layers.push(col_layer);
    let mut t: Vec<usize> = (0..n).collect();
    t.push(n + a);
    Ok(out.with_targets(&t))
}

/// Grid wire i -> position after the n input wires, with the target column first
/// so that the constructor's first n wires are its targets.
pub fn grid_wire_map(n: usize, m: usize) -> Vec<usize> {
    let a = n * (m + 1);
    (0..a)
        .map(|q| {
            let (col, row) = (q / n, q % n);
            let pos = if col == m { row } else { n + col * n + row };
            n + pos
        })
        .collect()
}

/// The grid constructor with X on its targets, relabelled so its targets come first.
pub fn flipped_grid_constructor(n: usize, m: usize, delta: f64) -> Result<Circuit> {
    let grid = crate::nekomata::build_depth2_nekomata(n, m as u64, delta)?;
    let a = grid.num_qubits;
    let map: Vec<usize> = grid_wire_map(n, m).into_iter().map(|p| p - n).collect();
    Ok(flip_targets(&grid).embed(a, &map))
}
