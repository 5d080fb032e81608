use hilbert_traces::derham::{build_instance, Domain};
use hilbert_traces::regular::{RegularDecomposition, RegularError, RegularSpec, Wplus};
use hilbert_traces::synthetic::{random_pair, SyntheticOptions};
use hilbert_traces::trace::assemble_all;
use hilbert_traces::verify::{verify, VerifyOptions};
use hilbert_traces::{Execution, Side, Tolerances};

#[test]
fn full_regular_subspaces_decompose_cube() {
    let pair = build_instance(Domain::Cube, 2, Execution::Parallel).unwrap();
    let tol = Tolerances { samples: 1000, ..Tolerances::default() };
    let policy = tol.rank_policy();
    for side in [Side::Primal, Side::Dual] {
        for k in pair.indices() {
            let dec = RegularDecomposition::build(&pair, side, k, &RegularSpec::full(), &policy).unwrap();
            assert!(dec.residual <= 1e-10, "{side:?} k={k}: {:e}", dec.residual);
            assert!(dec.lift_range_residual <= 1e-10 && dec.pot_range_residual <= 1e-10);
        }
    }
    let report = verify(&pair, &VerifyOptions { tol, seed: 1, exec: Execution::Parallel, regular: Some(RegularSpec::full()) });
    let regular: Vec<_> = report
        .checks
        .iter()
        .filter(|c| c.tag.starts_with("regular") || c.tag.contains("characterization") || c.tag.contains("range-quotient") || c.tag == "trace-space-decomposition")
        .collect();
    assert!(regular.len() > 20);
    let failed: Vec<_> = regular.iter().filter(|c| !c.passed()).map(|c| (&c.name, c.level, c.value)).collect();
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn zero_regular_subspace_has_no_decomposition() {
    let pair = build_instance(Domain::Cube, 1, Execution::Sequential).unwrap();
    let policy = Tolerances::default().rank_policy();
    let spec = RegularSpec::zero(pair.indices());
    for side in [Side::Primal, Side::Dual] {
        for k in pair.indices() {
            let res = RegularDecomposition::build(&pair, side, k, &spec, &policy);
            let ny = res.as_ref().map(|d| d.model.y.dim()).unwrap_or(1);
            if ny > 0 {
                assert!(matches!(res, Err(RegularError::NoDecomposition { .. })), "{side:?} k={k}");
            }
        }
    }
}

#[test]
fn wrong_basis_shape_is_rejected() {
    let pair = build_instance(Domain::Cube, 1, Execution::Sequential).unwrap();
    let mut spec = RegularSpec::full();
    spec.primal.insert(1, Wplus::Basis(hilbert_traces::linalg::Mat::identity(3, 3)));
    let res = RegularDecomposition::build(&pair, Side::Primal, 1, &spec, &Tolerances::default().rank_policy());
    assert!(matches!(res, Err(RegularError::Dimension { .. })));
}

#[test]
fn spec_round_trips_through_json() {
    let mut spec = RegularSpec::zero([0, 2]);
    spec.dual.insert(1, Wplus::Basis(hilbert_traces::linalg::Mat::from_row_slice(2, 1, &[0.25, -1.5])));
    let bytes = spec.to_bytes();
    let back = RegularSpec::from_bytes(&bytes).unwrap();
    assert_eq!(back, spec);
    assert_eq!(back.to_bytes(), bytes);
    assert!(RegularSpec::from_bytes(br#"{"schema":"other","primal":[],"dual":[]}"#).is_err());
}

#[test]
fn synthetic_pairs_decompose_with_full_subspaces() {
    let tol = Tolerances::default();
    let policy = tol.rank_policy();
    for seed in 0..10u64 {
        let pair = random_pair(seed, &SyntheticOptions::default());
        let traces = assemble_all(&pair, &policy, Execution::Sequential);
        let checks = hilbert_traces::regular::regular_checks(&pair, &RegularSpec::full(), &traces, &tol, seed, Execution::Sequential);
        let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).map(|c| (&c.name, c.level, c.value)).collect();
        assert!(failed.is_empty(), "seed {seed}: {failed:?}");
    }
}
