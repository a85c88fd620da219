use proptest::prelude::*;

use qac_core::analysis::{check_projection_chain_bound, delta_metric, random_projection_chain};
use qac_core::classical::{exact_rtensor_distribution, influences_exact, influences_structural, run_classical};
use qac_core::random::{random_mostly_classical, random_qac_circuit, random_rtensor_gate, random_unit_vector};
use qac_core::rng::rng_from_seed;
use qac_core::statevec::{max_unitary_deviation, run, run_zero, StateVector};
use qac_core::transforms::{expand_or, fanout_tree, to_rtensor_normal_form};
use qac_core::{Circuit, Gate};

fn small_circuit() -> impl Strategy<Value = Circuit> {
    (2usize..=6, 1usize..=4, any::<u64>()).prop_map(|(n, l, s)| random_qac_circuit(n, l, &mut rng_from_seed(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circuits_preserve_norm(c in small_circuit(), s in any::<u64>()) {
        let v = StateVector::from_amplitudes(random_unit_vector(1 << c.num_qubits, &mut rng_from_seed(s))).unwrap();
        let out = run(&c, &v).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_form_keeps_unitary_and_topology(c in small_circuit()) {
        let nf = to_rtensor_normal_form(&c).unwrap();
        prop_assert!(max_unitary_deviation(&c, &nf).unwrap() <= 1e-9);
        prop_assert_eq!(c.topology(), nf.topology());
        // one-qubit gates only in the first layer
        for layer in nf.layers.iter().skip(1) {
            prop_assert!(layer.gates.iter().all(|g| g.is_multi_qubit()));
        }
    }

    #[test]
    fn expand_or_is_exact(c in small_circuit()) {
        let e = expand_or(&c);
        prop_assert!(max_unitary_deviation(&c, &e).unwrap() <= 1e-12);
        let no_or = e.gates().all(|g| !matches!(g, Gate::Or { .. }));
        prop_assert!(no_or);
    }

    #[test]
    fn fanout_tree_bounds(n in 1usize..=200, m in 2usize..=9, b in 0u8..=1) {
        let c = fanout_tree(n, m).unwrap();
        let depth = (0..).find(|&d| (m as u128).pow(d) >= n as u128).unwrap() as usize;
        prop_assert_eq!(c.depth(), depth);
        prop_assert!(c.size() < n.max(1));
        prop_assert!(c.gates().all(|g| g.arity() <= m));
        let mut x = vec![0u8; n];
        x[0] = b;
        prop_assert_eq!(run_classical(&c, &x).unwrap(), vec![b; n]);
    }

    #[test]
    fn exact_influence_within_structural(n in 3usize..=9, k in 1usize..=3, l in 1usize..=3, s in any::<u64>()) {
        let c = random_mostly_classical(n, k, l, &mut rng_from_seed(s));
        let mut classical = Circuit::new(n);
        classical.layers = c.layers[1..].to_vec();
        let e = influences_exact(&classical).unwrap();
        let st = influences_structural(&classical).unwrap();
        prop_assert!(e.is_subset_of(&st));
        prop_assert!(st.max_size() <= 1usize << classical.depth());
    }

    #[test]
    fn d1_law_matches_state_vector(k in 1usize..=6, s in any::<u64>()) {
        let g = random_rtensor_gate(k, &mut rng_from_seed(s));
        let d = exact_rtensor_distribution(&g).unwrap();
        let mut c = Circuit::new(k);
        c.push_layer(vec![g]);
        let out = run_zero(&c).unwrap();
        let mut total = 0.0;
        for i in 0..1usize << k {
            let y: Vec<u8> = (0..k).map(|q| ((i >> (k - 1 - q)) & 1) as u8).collect();
            let p = d.prob(&y);
            prop_assert!((p - out.amplitude(i).norm_sqr()).abs() <= 1e-10);
            total += p;
        }
        prop_assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn json_round_trip(c in small_circuit()) {
        let back = Circuit::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back.topology(), c.topology());
        prop_assert!(max_unitary_deviation(&c, &back).unwrap() == 0.0);
        prop_assert_eq!(back.to_json(), c.to_json());
    }

    #[test]
    fn delta_is_symmetric_and_bounded(s in any::<u64>(), q in 1usize..=4) {
        let dim = 1usize << q;
        let mut rng = rng_from_seed(s);
        let a = StateVector::from_amplitudes(random_unit_vector(dim, &mut rng)).unwrap();
        let b = StateVector::from_amplitudes(random_unit_vector(dim, &mut rng)).unwrap();
        let ab = delta_metric(&a, &b).unwrap();
        prop_assert!((ab - delta_metric(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&ab));
        prop_assert!(delta_metric(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn projection_chain_bound_holds(s in any::<u64>()) {
        let b = check_projection_chain_bound(&random_projection_chain(12, 5, &mut rng_from_seed(s)));
        prop_assert!(b.holds && b.holds_strong, "{:?}", b);
    }
}
