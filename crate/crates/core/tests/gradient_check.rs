//! Backward pass vs. central finite differences on random small networks.

mod common;

#[test]
fn backward_matches_finite_differences() {
    for case in 0..20 {
        let err = common::case_error(case);
        assert!(err < 1e-4, "case {case}: max relative error {err}");
    }
}
