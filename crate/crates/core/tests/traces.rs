//! Trace systems, surface operators and trace complexes on seeded synthetic
//! pairs, where interior subcomplexes and ranks are known by construction.

use std::sync::Arc;

use hilbert_traces::linalg::{rank, InnerProductSpace, Mat, Vector};
use hilbert_traces::sampling::gaussian_block;
use hilbert_traces::surface::{check_commuting, trace_complex, SurfaceOps};
use hilbert_traces::synthetic::{cochain_pair, random_cochain, random_pair, SyntheticOptions};
use hilbert_traces::trace::{assemble_all, range_annihilator_residuals, DUAL_SIGN};
use hilbert_traces::verify::{verify, VerifyOptions};
use hilbert_traces::{Execution, Side, Tolerances, TraceSystem};
use proptest::prelude::*;

fn opts(general: bool) -> SyntheticOptions {
    SyntheticOptions { levels: 4, max_block: 8, max_extra: 3, general_basis: general, full_boundary: false }
}

#[test]
fn euclidean_identity_pairing_is_isometric() {
    let e = Arc::new(InnerProductSpace::euclidean(3));
    let ts = TraceSystem::from_pairing(0, Mat::identity(3, 3), e.clone(), e, None, None, &Tolerances::default().rank_policy());
    let x = Vector::from_vec(vec![1.0, -2.0, 0.5]);
    let (dn, qn, ratio) = ts.isometry_defect(Side::Primal, &x).unwrap();
    assert!((dn - qn).abs() < 1e-15 && (ratio - 1.0).abs() < 1e-15);
    assert_eq!(ts.dual_sign, DUAL_SIGN);
    let y = Vector::from_vec(vec![0.0, 1.0, 1.0]);
    // T^n y = sign * B y.
    assert_eq!(ts.apply(Side::Dual, &y).unwrap(), &y * DUAL_SIGN);
}

#[test]
fn fifty_synthetic_pairs_verify() {
    let tol = Tolerances { samples: 500, ..Tolerances::default() };
    let policy = tol.rank_policy();
    for seed in 0..50u64 {
        let pair = random_pair(seed, &opts(seed % 2 == 0));
        let max_dim = pair.levels().iter().map(|l| l.w.dim().max(l.d.dim()).max(l.dt.dim())).max().unwrap();
        assert!(max_dim <= 60);
        let traces = assemble_all(&pair, &policy, Execution::Parallel);
        for ts in &traces {
            let (a, b, dims_ok) = range_annihilator_residuals(ts, &policy);
            assert!(dims_ok && a <= 1e-10 && b <= 1e-10, "seed {seed} k={}: {a:e} {b:e}", ts.k);
        }
        for w in traces.windows(2) {
            let ops = SurfaceOps::build(&pair, &w[0], &w[1]);
            let c = check_commuting(&pair, &w[0], &w[1], &ops);
            assert!(c.max() <= 1e-10, "seed {seed} k={}: {c:?}", w[0].k);
        }
        let report = verify(&pair, &VerifyOptions { tol, seed, ..Default::default() });
        let failed: Vec<_> = report.failures().map(|c| (&c.name, c.level, c.value)).collect();
        assert!(failed.is_empty(), "seed {seed}: {failed:?}");
    }
}

/// Boundary coordinates of each cochain space.
fn boundary_sets(c: &hilbert_traces::synthetic::Cochain) -> Vec<Vec<usize>> {
    c.dims().iter().zip(&c.interior).map(|(&n, i)| (0..n).filter(|j| !i.contains(j)).collect()).collect()
}

#[test]
fn trace_kernel_is_interior_plus_boundary_cycles() {
    // (d - PdP)(x_i + x_b) = d x_b, so the left kernel is I + ker(d on B).
    let policy = Tolerances::default().rank_policy();
    for seed in 0..20u64 {
        let c = random_cochain(seed, &opts(false));
        let bsets = boundary_sets(&c);
        let pair = random_pair(seed, &opts(false));
        for ts in assemble_all(&pair, &policy, Execution::Sequential) {
            if ts.k < 0 {
                continue;
            }
            let k = ts.k as usize;
            let l = pair.level(ts.k).unwrap();
            let interior = l.interior_d.as_ref().unwrap().len();
            let rank_b = c.d.get(k).map_or(0, |d| rank(&d.select_columns(&bsets[k]), &policy));
            assert_eq!(ts.kernel(Side::Primal).ncols(), interior + bsets[k].len() - rank_b, "seed {seed} k={k}");
            assert_eq!(ts.q_primal.dim(), rank_b, "seed {seed} k={k}");
        }
    }
}

#[test]
fn trace_complex_dimensions_and_cohomology_agree() {
    let policy = Tolerances::default().rank_policy();
    for seed in 0..20u64 {
        let c = random_cochain(seed, &opts(false));
        let bsets = boundary_sets(&c);
        let pair = cochain_pair(&c, "t").unwrap();
        let traces = assemble_all(&pair, &policy, Execution::Sequential);
        let ops: Vec<SurfaceOps> = traces.windows(2).map(|w| SurfaceOps::build(&pair, &w[0], &w[1])).collect();
        let complex = trace_complex(&traces, &ops);
        let expect: Vec<usize> = traces
            .iter()
            .map(|ts| match ts.k {
                k if k < 0 => 0,
                k => c.d.get(k as usize).map_or(0, |d| rank(&d.select_columns(&bsets[k as usize]), &policy)),
            })
            .collect();
        assert_eq!(complex.dims(), expect, "seed {seed}");
        assert!(complex.square_residual() <= 1e-10);
        assert!(complex.cohomology(&policy).agree(), "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_is_bounded_by_quotient_norm(seed in any::<u64>(), general in any::<bool>()) {
        let pair = random_pair(seed, &opts(general));
        let policy = Tolerances::default().rank_policy();
        for ts in assemble_all(&pair, &policy, Execution::Sequential) {
            for side in [Side::Primal, Side::Dual] {
                let n = ts.space(side).dim();
                if n == 0 { continue; }
                let xs = gaussian_block(n, 16, seed, 99, (ts.k + 10) as u64);
                for j in 0..16 {
                    let x: Vector = xs.column(j).into_owned();
                    let (dn, qn, _) = ts.isometry_defect(side, &x).unwrap();
                    prop_assert!(dn <= qn * (1.0 + 1e-12) + 1e-14 * ts.space(side).norm(&x));
                    prop_assert!(qn <= ts.space(side).norm(&x) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn duality_map_is_bijective_contraction(seed in any::<u64>()) {
        let pair = random_pair(seed, &opts(true));
        let policy = Tolerances::default().rank_policy();
        for ts in assemble_all(&pair, &policy, Execution::Sequential) {
            let k = ts.k_matrix();
            prop_assert_eq!(k.nrows(), k.ncols());
            prop_assert_eq!(rank(&k, &policy), k.nrows());
            prop_assert!(ts.k_norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn extension_is_a_section(seed in any::<u64>()) {
        let pair = random_pair(seed, &opts(true));
        let policy = Tolerances::default().rank_policy();
        for ts in assemble_all(&pair, &policy, Execution::Sequential) {
            let n = ts.d.dim();
            if n == 0 { continue; }
            let x: Vector = gaussian_block(n, 1, seed, 77, 0).column(0).into();
            let phi = ts.apply(Side::Primal, &x).unwrap();
            let xe = ts.min_norm_extension(Side::Primal, &phi, 1e-9).unwrap();
            let back = ts.apply(Side::Primal, &xe).unwrap();
            prop_assert!((back - &phi).norm() <= 1e-9 * phi.norm().max(1e-300) + 1e-14 * x.norm());
            prop_assert!(ts.d.norm(&xe) <= ts.quotient_norm(Side::Primal, &x).unwrap() * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn random_pairs_are_reproducible(seed in any::<u64>()) {
        let a = hilbert_traces::complex::io::to_bytes(&random_pair(seed, &opts(true)));
        let b = hilbert_traces::complex::io::to_bytes(&random_pair(seed, &opts(true)));
        prop_assert_eq!(&a, &b);
        let back = hilbert_traces::complex::io::from_bytes(&a).unwrap();
        prop_assert_eq!(hilbert_traces::complex::io::to_bytes(&back), a);
    }
}
