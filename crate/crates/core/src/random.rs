//! Random instances for property checks and verification sweeps.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::circuit::{Circuit, Gate, LocalState, Matrix2, C64};

pub fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-random unit vector of length `dim`.
pub fn random_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..dim).map(|_| gaussian_c64(rng)).collect();
        let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

pub fn random_local_state<R: Rng + ?Sized>(rng: &mut R) -> LocalState {
    let v = random_unit_vector(2, rng);
    LocalState::new(v[0], v[1])
}

/// Haar-random 2x2 unitary.
pub fn random_unitary2<R: Rng + ?Sized>(rng: &mut R) -> Matrix2 {
    let a = random_local_state(rng);
    let phase = C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
    [
        [a.amp0, -a.amp1.conj() * phase],
        [a.amp1, a.amp0.conj() * phase],
    ]
}

/// R-tensor gate on qubits 0..arity with random factors.
pub fn random_rtensor_gate<R: Rng + ?Sized>(arity: usize, rng: &mut R) -> Gate {
    Gate::rtensor((0..arity).map(|q| (q, random_local_state(rng))))
}

/// Shuffle `qubits` and cut them into groups of size 1..=max_arity.
pub fn random_groups<R: Rng + ?Sized>(n: usize, max_arity: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut qs: Vec<usize> = (0..n).collect();
    qs.shuffle(rng);
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let k = rng.random_range(1..=max_arity.max(1)).min(n - i);
        let mut g = qs[i..i + k].to_vec();
        g.sort_unstable();
        out.push(g);
        i += k;
    }
    out
}

fn split_target<R: Rng + ?Sized>(g: &[usize], rng: &mut R) -> (Vec<usize>, usize) {
    let t = g[rng.random_range(0..g.len())];
    (g.iter().copied().filter(|&q| q != t).collect(), t)
}

/// Random QAC circuit: `layers` layers mixing one-qubit unitaries, Toffoli, OR and R-tensor gates.
pub fn random_qac_circuit<R: Rng + ?Sized>(n: usize, layers: usize, rng: &mut R) -> Circuit {
    let mut c = Circuit::new(n);
    for _ in 0..layers {
        let mut gates = Vec::new();
        for g in random_groups(n, 4, rng) {
            if g.len() == 1 {
                if rng.random_bool(0.6) {
                    gates.push(Gate::one_qubit(g[0], random_unitary2(rng)));
                }
                continue;
            }
            let (cs, t) = split_target(&g, rng);
            gates.push(match rng.random_range(0..3) {
                0 => Gate::toffoli(&cs, t),
                1 => Gate::or(&cs, t),
                _ => Gate::rtensor(g.iter().map(|&q| (q, random_local_state(rng)))),
            });
        }
        c.push_layer(gates);
    }
    c
}

/// A classical R-tensor gate: basis-state controls and a |-> factor.
fn controlled_not_rtensor<R: Rng + ?Sized>(g: &[usize], rng: &mut R) -> Gate {
    let (cs, t) = split_target(g, rng);
    let mut f: Vec<(usize, LocalState)> = cs
        .iter()
        .map(|&q| (q, if rng.random_bool(0.5) { LocalState::one() } else { LocalState::zero() }))
        .collect();
    f.push((t, LocalState::minus()));
    Gate::rtensor(f)
}

/// Random mostly-classical circuit: one layer of arbitrary one-qubit and R-tensor gates,
/// then `classical_layers` layers of classical gates, with `num_targets` random targets.
pub fn random_mostly_classical<R: Rng + ?Sized>(
    n: usize,
    num_targets: usize,
    classical_layers: usize,
    rng: &mut R,
) -> Circuit {
    let mut c = Circuit::new(n);
    let mut first = Vec::new();
    for g in random_groups(n, 4, rng) {
        if g.len() == 1 {
            first.push(Gate::one_qubit(g[0], random_unitary2(rng)));
        } else {
            first.push(Gate::rtensor(g.iter().map(|&q| (q, random_local_state(rng)))));
        }
    }
    c.push_layer(first);
    for _ in 0..classical_layers {
        let mut gates = Vec::new();
        for g in random_groups(n, 3, rng) {
            if g.len() == 1 {
                if rng.random_bool(0.3) {
                    gates.push(Gate::x(g[0]));
                }
                continue;
            }
            let (cs, t) = split_target(&g, rng);
            gates.push(match rng.random_range(0..3) {
                0 => Gate::toffoli(&cs, t),
                1 => Gate::or(&cs, t),
                _ => controlled_not_rtensor(&g, rng),
            });
        }
        c.push_layer(gates);
    }
    let mut qs: Vec<usize> = (0..n).collect();
    qs.shuffle(rng);
    let mut t = qs[..num_targets.min(n)].to_vec();
    t.sort_unstable();
    c.with_targets(&t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::mat2;
    use crate::nekomata::classify;
    use crate::rng::rng_from_seed;

    #[test]
    fn generated_instances_are_valid() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            assert!(mat2::unitarity_error(&random_unitary2(&mut rng)) < 1e-12);
            let c = random_qac_circuit(6, 3, &mut rng);
            c.ensure_valid().unwrap();
            let m = random_mostly_classical(7, 3, 2, &mut rng);
            m.ensure_valid().unwrap();
            assert!(classify(&m).mostly_classical);
        }
    }
}
