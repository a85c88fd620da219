//! Verification suites run by `qac verify`. Each check draws from its own sub-seed
//! `sub_seed(seed, check name)`, and trial i of a check uses stream i of that sub-seed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::*;
use crate::classical::exact_rtensor_distribution;
use crate::error::{QacError, Result};
use crate::random::{random_rtensor_gate, random_unit_vector};
use crate::rng::{rng_from_seed, sub_seed, trial_rng};
use crate::statevec::StateVector;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Projections,
    Metric,
    Markov,
    Turan,
    Depth2Reduce,
    Nekomata,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = [
        "projections",
        "metric",
        "markov",
        "turan",
        "depth2-reduce",
        "nekomata",
        "all",
    ];
}

impl FromStr for Suite {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Suite> {
        Ok(match s {
            "projections" => Suite::Projections,
            "metric" => Suite::Metric,
            "markov" => Suite::Markov,
            "turan" => Suite::Turan,
            "depth2-reduce" => Suite::Depth2Reduce,
            "nekomata" => Suite::Nekomata,
            "all" => Suite::All,
            _ => {
                return Err(QacError::InvalidParameter(format!(
                    "unknown suite {s:?} (expected one of {})",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = [
            Suite::Projections,
            Suite::Metric,
            Suite::Markov,
            Suite::Turan,
            Suite::Depth2Reduce,
            Suite::Nekomata,
            Suite::All,
        ]
        .iter()
        .position(|s| s == self)
        .expect("listed");
        f.write_str(Suite::NAMES[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn check(name: &str, passed: bool, details: Value) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        details,
    }
}

fn projections(seed: u64) -> Result<Vec<CheckResult>> {
    let s = sub_seed(seed, "projection-chains");
    let bounds: Vec<ChainBound> = (0..500u64)
        .into_par_iter()
        .map(|t| check_projection_chain_bound(&random_projection_chain(16, 6, &mut trial_rng(s, t))))
        .collect();
    let worst = bounds.iter().map(|b| b.lhs - b.rhs).fold(f64::NEG_INFINITY, f64::max);
    let worst_strong = bounds.iter().map(|b| b.lhs - b.strong).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![check(
        "projection-chain-bound",
        bounds.iter().all(|b| b.holds && b.holds_strong),
        json!({"chains": 500, "max_lhs_minus_rhs": worst, "max_lhs_minus_closed_form": worst_strong}),
    )];

    let s = sub_seed(seed, "interpolation");
    let rows: Vec<(f64, f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(s, t);
            let dim = rng.random_range(2..=8);
            let d = rng.random_range(1..=6);
            let a = random_unit_vector(dim, &mut rng);
            let b = random_unit_vector(dim, &mut rng);
            let r = optimal_interpolation(&a, &b, d)?;
            let alt = random_chain_max(&a, &b, d, 1000, &mut rng);
            Ok(((r.product - r.closed_form).abs(), alt - r.product, r.product))
        })
        .collect::<Result<_>>()?;
    let err = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let excess = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    out.push(check(
        "interpolation-optimal",
        err <= 1e-10 && excess <= 1e-10,
        json!({"instances": 20, "alternatives_per_instance": 1000, "max_closed_form_error": err, "max_alternative_excess": excess}),
    ));

    let g = check_cos_exp_inequality(1_000_001);
    out.push(check("cos-exp", g.holds, serde_json::to_value(&g)?));
    Ok(out)
}

fn metric(seed: u64) -> Result<Vec<CheckResult>> {
    let t = delta_triangle_check(10_000, 8, sub_seed(seed, "delta-triangle"));
    let z = StateVector::zero(1)?;
    let one = StateVector::basis(1, 1)?;
    let plus = StateVector::from_amplitudes(vec![crate::C64::new(1.0, 0.0); 2])?;
    let examples = [
        delta_metric(&z, &z)?,
        delta_metric(&z, &one)?,
        delta_metric(&z, &plus)?,
    ];
    let ex_ok = examples[0].abs() < 1e-15
        && (examples[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12
        && (examples[2] - std::f64::consts::FRAC_PI_4).abs() < 1e-12;
    Ok(vec![
        check("delta-triangle", t.holds, serde_json::to_value(&t)?),
        check("delta-examples", ex_ok, json!({"values": examples})),
    ])
}

fn markov(seed: u64) -> Result<Vec<CheckResult>> {
    let s = sub_seed(seed, "generalized-markov");
    let rows: Vec<bool> = (0..200u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(s, t);
            let k = rng.random_range(1..=30);
            let law: Vec<(f64, f64)> = (0..k)
                .map(|_| (rng.random::<f64>() * 100.0 * rng.random::<f64>().powi(3), rng.random::<f64>() + 1e-3))
                .collect();
            let total: f64 = law.iter().map(|l| l.1).sum();
            let mean = law.iter().map(|l| l.0 * l.1).sum::<f64>() / total;
            let a = (mean * (0.1 + rng.random::<f64>() * 2.0)).max(1e-3);
            let delta = 0.05 + rng.random::<f64>() * 0.95;
            let w = generalized_markov_t(&law, a, delta)?;
            Ok(w.t >= a && w.t <= w.upper * (1.0 + 1e-12) && w.tail <= w.bound * (1.0 + 1e-9))
        })
        .collect::<Result<_>>()?;
    let ok = rows.iter().filter(|&&b| b).count();
    Ok(vec![check(
        "generalized-markov",
        ok == rows.len(),
        json!({"laws": rows.len(), "witnesses_valid": ok}),
    )])
}

/// Per graph: |mean - sum 1/(deg+1)| <= 3 standard errors, every draw independent.
pub fn turan_sweep(seed: u64, graphs: usize, draws: usize) -> Vec<(usize, TuranResult)> {
    let s = sub_seed(seed, "turan");
    (0..graphs as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(s, t);
            let n = rng.random_range(2..=50);
            let p = rng.random::<f64>() * 0.5;
            let g = crate::analysis::Graph::random(n, p, &mut rng);
            (n, turan_independent_set(&g, draws, &mut rng))
        })
        .collect()
}

fn turan(seed: u64) -> Result<Vec<CheckResult>> {
    let rows = turan_sweep(seed, 100, 1000);
    let within = rows
        .iter()
        .filter(|(_, r)| (r.mean_size - r.expected).abs() <= 3.0 * r.std_error + 1e-12)
        .count();
    let independent = rows.iter().all(|(_, r)| r.all_independent);
    let above_bound = rows
        .iter()
        .all(|(_, r)| r.mean_size >= r.turan_bound - 3.0 * r.std_error - 1e-12);
    Ok(vec![
        check("turan-independent", independent, json!({"graphs": rows.len()})),
        check(
            "turan-expected-size",
            within == rows.len(),
            json!({"graphs": rows.len(), "draws_per_graph": 1000, "within_3_sigma": within}),
        ),
        check("turan-bound", above_bound, json!({"graphs": rows.len()})),
    ])
}

fn depth2_reduce(seed: u64) -> Result<Vec<CheckResult>> {
    let s = sub_seed(seed, "depth2-reduce");
    let rows: Vec<(bool, bool, bool, usize)> = (0..40u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(s, t);
            let n = rng.random_range(3..=9);
            let k = rng.random_range(1..=n.min(4));
            let targets: Vec<usize> = (0..k).map(|i| i * n / k).collect();
            let c = random_construction(n, &targets, &mut rng);
            let goal = StateVector::cat(k)?;
            let r = reduce_depth2_construction(&c, &goal)?;
            let mono = r
                .steps
                .iter()
                .all(|s| s.ancillas_after < s.ancillas_before && s.fidelity_after >= s.fidelity_before - 1e-10);
            Ok((
                r.construction.is_reduced(),
                r.final_fidelity >= r.initial_fidelity - 1e-10,
                mono,
                r.steps.len(),
            ))
        })
        .collect::<Result<_>>()?;
    let all = |f: fn(&(bool, bool, bool, usize)) -> bool| rows.iter().all(f);
    Ok(vec![check(
        "depth2-reduce",
        all(|r| r.0) && all(|r| r.1) && all(|r| r.2),
        json!({
            "constructions": rows.len(),
            "reduced": rows.iter().filter(|r| r.0).count(),
            "fidelity_kept": rows.iter().filter(|r| r.1).count(),
            "strict_descent": rows.iter().filter(|r| r.2).count(),
            "total_steps": rows.iter().map(|r| r.3).sum::<usize>(),
        }),
    )])
}

fn nekomata_bounds(seed: u64) -> Result<Vec<CheckResult>> {
    let nek = check_nek_lb(1000, sub_seed(seed, "nek-lb"))?;
    let mut rng = rng_from_seed(sub_seed(seed, "meas-z"));
    let mut mz: f64 = 0.0;
    for _ in 0..200 {
        let n2 = rng.random_range(0..=2);
        let n3 = rng.random_range(0..=3 - n2);
        mz = mz.max(meas_z_deviation(n2, n3, &mut rng)?);
    }
    let s = sub_seed(seed, "small-circuit");
    let small: Vec<SmallInstanceCheck> = (0..200u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(s, t);
            let n = rng.random_range(2..=6);
            let a = rng.random_range(0..=8 - n);
            let d = rng.random_range(1..=3);
            check_small_instance(n, a, d, &mut rng)
        })
        .collect::<Result<_>>()?;
    let s = sub_seed(seed, "d1-distr");
    let d1: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(s, t);
            let k = rng.random_range(1..=6);
            let g = random_rtensor_gate(k, &mut rng);
            let formula = exact_rtensor_distribution(&g)?.probs()?;
            let oracle = StateVector::zero(k)?
                .apply_gate(&g)?
                .measurement_distribution(&(0..k).collect::<Vec<_>>())?;
            let mut dev: f64 = 0.0;
            for key in formula.keys().chain(oracle.probs.keys()) {
                dev = dev.max((formula.get(key).copied().unwrap_or(0.0) - oracle.prob(*key)).abs());
            }
            Ok(dev)
        })
        .collect::<Result<_>>()?;
    let d1_max = d1.into_iter().fold(0.0, f64::max);
    Ok(vec![
        check("nek-lb", nek.holds, serde_json::to_value(&nek)?),
        check("meas-z", mz <= 1e-10, json!({"instances": 200, "max_deviation": mz})),
        check(
            "small-circuit-intermediate",
            small.iter().all(|r| r.intermediate_holds),
            json!({"instances": small.len()}),
        ),
        check(
            "small-circuit-product-bound",
            small.iter().all(|r| r.product_bound_holds && r.final_holds),
            json!({
                "instances": small.len(),
                "c": SMALL_C,
                "instances_in_small_regime": small.iter().filter(|r| r.small).count(),
            }),
        ),
        check("d1-distr", d1_max <= 1e-10, json!({"gates": 200, "max_deviation": d1_max})),
    ])
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let checks = match suite {
        Suite::Projections => projections(seed)?,
        Suite::Metric => metric(seed)?,
        Suite::Markov => markov(seed)?,
        Suite::Turan => turan(seed)?,
        Suite::Depth2Reduce => depth2_reduce(seed)?,
        Suite::Nekomata => nekomata_bounds(seed)?,
        Suite::All => {
            let mut v = Vec::new();
            for f in [projections, metric, markov, turan, depth2_reduce, nekomata_bounds] {
                v.extend(f(seed)?);
            }
            v
        }
    };
    Ok(VerifyReport {
        suite,
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().to_string(), name);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn quick_suites_pass() {
        for s in [Suite::Metric, Suite::Markov, Suite::Depth2Reduce] {
            let r = run_suite(s, 1).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
}
