use std::ffi::{CStr, CString};
use std::ptr;

use qac_ffi::*;

fn last_error() -> String {
    let p = qac_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const PARITY4: &str = r#"{"num_qubits": 4, "layers": [
  [{"kind": "toffoli", "controls": [0], "target": 1}],
  [{"kind": "toffoli", "controls": [1], "target": 2}],
  [{"kind": "toffoli", "controls": [0], "target": 3}]
]}"#;

#[test]
fn json_handle_round_trip() {
    unsafe {
        let src = CString::new(PARITY4).unwrap();
        let mut c = ptr::null_mut();
        assert_eq!(qac_circuit_from_json(src.as_ptr(), &mut c), QacStatus::Ok);
        assert!(qac_last_error_message().is_null());
        let (mut size, mut depth, mut n) = (0usize, 0usize, 0usize);
        assert_eq!(qac_circuit_size(c, &mut size), QacStatus::Ok);
        assert_eq!(qac_circuit_depth(c, &mut depth), QacStatus::Ok);
        assert_eq!(qac_circuit_num_qubits(c, &mut n), QacStatus::Ok);
        assert_eq!((size, depth, n), (3, 3, 4));

        let mut s = ptr::null_mut();
        assert_eq!(qac_circuit_to_json(c, &mut s), QacStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(qac_circuit_from_json(s, &mut back), QacStatus::Ok);
        let mut s2 = ptr::null_mut();
        assert_eq!(qac_circuit_to_json(back, &mut s2), QacStatus::Ok);
        assert_eq!(CStr::from_ptr(s), CStr::from_ptr(s2));
        qac_string_free(s);
        qac_string_free(s2);
        qac_circuit_free(back);
        qac_circuit_free(c);
        qac_circuit_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(qac_circuit_from_json(ptr::null(), &mut c), QacStatus::NullPointer);
        let bad = CString::new("{\"num_qubits\": 2, \"layers\": [[{\"kind\": \"toffoli\", \"controls\": [0], \"target\": 0}]]}").unwrap();
        assert_eq!(qac_circuit_from_json(bad.as_ptr(), &mut c), QacStatus::InvalidCircuit);
        assert!(last_error().contains("invalid"));
        let junk = CString::new("{ nope").unwrap();
        assert_eq!(qac_circuit_from_json(junk.as_ptr(), &mut c), QacStatus::Parse);
        let bytes = [0xffu8, 0xfe, 0];
        assert_eq!(qac_circuit_from_json(bytes.as_ptr().cast(), &mut c), QacStatus::InvalidUtf8);
        assert!(c.is_null());

        let mut m = 0u64;
        assert_eq!(qac_choose_m(12, 0.01, &mut m), QacStatus::TooLarge);
        assert_eq!(qac_choose_m(2, 1.5, &mut m), QacStatus::InvalidParameter);
        assert_eq!(qac_fanout_tree(4, 1, &mut c), QacStatus::InvalidParameter);
        let mut n = 0usize;
        assert_eq!(qac_circuit_size(ptr::null(), &mut n), QacStatus::NullPointer);
        assert_eq!(CStr::from_ptr(qac_status_name(QacStatus::TooLarge)).to_str().unwrap(), "too large");
        assert!(!CStr::from_ptr(qac_version()).to_bytes().is_empty());
    }
}

#[test]
fn builders_and_parameters() {
    unsafe {
        let mut m = 0u64;
        assert_eq!(qac_choose_m(2, 0.15, &mut m), QacStatus::Ok);
        assert_eq!(m, 34);
        let mut delta = 0.0;
        assert_eq!(qac_solve_delta(2, 3, &mut delta), QacStatus::Ok);
        assert!(((1.0 - 2.0 * delta * delta).powi(6) - 0.5).abs() < 1e-12);

        let mut g = ptr::null_mut();
        assert_eq!(qac_build_depth2_nekomata(2, 3, delta, &mut g), QacStatus::Ok);
        let (mut f, mut p, mut q) = (0.0, 0.0, 0.0);
        assert_eq!(qac_best_nekomata_fidelity(g, &mut f, &mut p, &mut q), QacStatus::Ok);
        assert!((p - 0.5).abs() < 1e-9);
        assert!(f >= 1.0 - 1.5 * (0.5 - q));
        assert_eq!(qac_best_nekomata_fidelity(g, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), QacStatus::Ok);

        let mut nf = ptr::null_mut();
        assert_eq!(qac_normal_form(g, &mut nf), QacStatus::Ok);
        let (mut d1, mut d2) = (0usize, 0usize);
        qac_circuit_depth(g, &mut d1);
        qac_circuit_depth(nf, &mut d2);
        assert_eq!(d1, d2);

        let mut t = ptr::null_mut();
        assert_eq!(qac_fanout_tree(4, 2, &mut t), QacStatus::Ok);
        let mut par = ptr::null_mut();
        assert_eq!(qac_parity_from_nekomata(t, 2, &mut par), QacStatus::Ok);
        let mut dp = 0usize;
        qac_circuit_depth(par, &mut dp);
        assert_eq!(dp, 4 * 2 + 3);
        for c in [g, nf, t, par] {
            qac_circuit_free(c);
        }
    }
}

#[test]
fn sampling_matches_core() {
    unsafe {
        let mut g = ptr::null_mut();
        let mut delta = 0.0;
        qac_solve_delta(2, 3, &mut delta);
        assert_eq!(qac_build_depth2_nekomata(2, 3, delta, &mut g), QacStatus::Ok);
        let mut k = 0usize;
        qac_circuit_num_targets(g, &mut k);
        assert_eq!(k, 2);
        let mut small = [0u8; 3];
        assert_eq!(qac_sample_targets(g, 10, 5, small.as_mut_ptr(), small.len()), QacStatus::BufferTooSmall);
        let mut buf = vec![9u8; 2 * 500];
        assert_eq!(qac_sample_targets(g, 500, 5, buf.as_mut_ptr(), buf.len()), QacStatus::Ok);
        assert!(buf.iter().all(|&b| b <= 1));
        let mut again = vec![0u8; 2 * 500];
        qac_sample_targets(g, 500, 5, again.as_mut_ptr(), again.len());
        assert_eq!(buf, again);

        let mut s = ptr::null_mut();
        qac_circuit_to_json(g, &mut s);
        let core = qac_core::Circuit::from_json(CStr::from_ptr(s).to_str().unwrap()).unwrap();
        qac_string_free(s);
        let rows = qac_core::classical::MostlyClassicalSampler::new(&core, qac_core::classical::SamplerKind::Direct)
            .unwrap()
            .sample_trials(500, 5);
        assert_eq!(rows.concat(), buf);
        qac_circuit_free(g);

        // H, CNOT, H on the copy, CNOT back: the second H is not in the first layer
        let mut q = qac_core::Circuit::new(2);
        q.push_layer(vec![qac_core::Gate::h(0)])
            .push_layer(vec![qac_core::Gate::cnot(0, 1)])
            .push_layer(vec![qac_core::Gate::h(1)])
            .push_layer(vec![qac_core::Gate::cnot(1, 0)]);
        let src = CString::new(q.to_json()).unwrap();
        let mut c = ptr::null_mut();
        assert_eq!(qac_circuit_from_json(src.as_ptr(), &mut c), QacStatus::Ok);
        let mut b = [0u8; 4];
        assert_eq!(qac_sample_targets(c, 1, 0, b.as_mut_ptr(), 4), QacStatus::Precondition);
        assert!(last_error().contains("not mostly classical"));
        qac_circuit_free(c);
    }
}
