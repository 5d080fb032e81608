//! Hilbert traces of a complex pair: the pairing matrix `B_k`, its kernels
//! (the domains with boundary conditions), the quotient trace spaces, the
//! minimum-norm trace extension and the duality map `K_k`.
//!
//! `T^t x` has coefficients `B^T x` on `Dt`; `T^n y` has coefficients
//! `dual_sign * B y` on `D` with `dual_sign = -1`, so that
//! `<T^t x, y> = -<T^n y, x>`.

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::complex::ComplexPair;
use crate::config::Tolerances;
use crate::exec::Execution;
use crate::linalg::{
    annihilator, compare_spans, kernel_at_scale, pseudo_inverse, range_of, rank, spectral_norm, truncate_to_rank,
    InnerProductSpace, Mat, QuotientSpace, RankPolicy, Vector,
};
use crate::report::Check;
use crate::sampling;

/// Sign relating the dual trace to the transposed primal trace.
pub const DUAL_SIGN: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotientBasis {
    /// Gram-orthonormal complement of the kernel.
    Orthogonal,
    /// Unit vectors of boundary degrees of freedom.
    Coordinate,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("functional is not in the trace range (relative residual {residual:e} > {tol:e})")]
    NotInRange { residual: f64, tol: f64 },
    #[error("vector length {got} does not match dimension {expected}")]
    Dimension { got: usize, expected: usize },
}

#[derive(Debug, Clone)]
pub struct TraceSystem {
    pub k: i32,
    pub b: Mat,
    pub dual_sign: f64,
    pub d: Arc<InnerProductSpace>,
    pub dt: Arc<InnerProductSpace>,
    /// Euclidean-orthonormal basis of the left kernel of `B`.
    pub ker_primal: Mat,
    /// Euclidean-orthonormal basis of the right kernel of `B`.
    pub ker_dual: Mat,
    pub q_primal: QuotientSpace,
    pub q_dual: QuotientSpace,
    pub basis_primal: QuotientBasis,
    pub basis_dual: QuotientBasis,
    pub rank: usize,
    pub threshold: f64,
    pub singular_values: Vec<f64>,
    pub warnings: Vec<String>,
    ext_primal: Mat,
    ext_dual: Mat,
}

fn max_diagonal(g: &Mat) -> f64 {
    g.diagonal().iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn coordinate_candidate(
    ker: &Mat,
    interior: Option<&Vec<usize>>,
    n: usize,
    policy: &RankPolicy,
) -> Option<Vec<usize>> {
    let interior = interior?;
    if interior.len() != ker.ncols() {
        return None;
    }
    let e = Mat::from_fn(n, interior.len(), |r, c| if interior[c] == r { 1.0 } else { 0.0 });
    let cmp = compare_spans(&e, ker, policy);
    if !cmp.equal(1e-10) {
        return None;
    }
    let inner: std::collections::BTreeSet<usize> = interior.iter().copied().collect();
    Some((0..n).filter(|i| !inner.contains(i)).collect())
}

impl TraceSystem {
    /// Assembles level `k` of the pair.
    pub fn assemble(pair: &ComplexPair, k: i32, policy: &RankPolicy) -> Self {
        let b = pair.pairing(k);
        let d = pair.d(k).clone();
        let dt = pair.dt(k).clone();
        let (interior_d, interior_dt) = match pair.level(k) {
            Ok(l) => (l.interior_d.clone(), l.interior_dt.clone()),
            Err(_) => (None, None),
        };
        Self::from_pairing(k, b, d, dt, interior_d.as_ref(), interior_dt.as_ref(), policy)
    }

    /// Builds the trace system of an explicit pairing matrix.
    pub fn from_pairing(
        k: i32,
        b: Mat,
        d: Arc<InnerProductSpace>,
        dt: Arc<InnerProductSpace>,
        interior_d: Option<&Vec<usize>>,
        interior_dt: Option<&Vec<usize>>,
        policy: &RankPolicy,
    ) -> Self {
        assert_eq!(b.shape(), (d.dim(), dt.dim()), "pairing shape must be dim D x dim Dt");
        // |b(x, y)| <= |x|_D |y|_Dt, so the Gram diagonals fix the size of B
        // even when it cancels to roundoff.
        let scale = (max_diagonal(d.gram()) * max_diagonal(dt.gram())).sqrt();
        let b = if b.norm() <= policy.threshold(b.nrows(), b.ncols(), scale) {
            Mat::zeros(b.nrows(), b.ncols())
        } else {
            truncate_to_rank(&b, policy, scale)
        };
        let left = kernel_at_scale(&b.transpose(), policy, scale);
        let right = kernel_at_scale(&b, policy, scale);
        let mut warnings = Vec::new();
        if left.unstable || right.unstable {
            warnings.push(format!(
                "level {k}: singular values within the rank band around {:e}",
                left.threshold
            ));
        }
        if left.rank != right.rank {
            warnings.push(format!(
                "level {k}: rank of B ({}) and B^T ({}) disagree",
                right.rank, left.rank
            ));
        }
        let (q_primal, basis_primal, ker_primal) =
            match coordinate_candidate(&left.kernel, interior_d, d.dim(), policy) {
                Some(bdry) => {
                    let q = QuotientSpace::coordinate(d.clone(), &bdry);
                    let ker = q.kernel().clone();
                    (q, QuotientBasis::Coordinate, ker)
                }
                None => (
                    QuotientSpace::orthogonal(d.clone(), left.kernel.clone(), policy),
                    QuotientBasis::Orthogonal,
                    left.kernel.clone(),
                ),
            };
        let (q_dual, basis_dual, ker_dual) =
            match coordinate_candidate(&right.kernel, interior_dt, dt.dim(), policy) {
                Some(bdry) => {
                    let q = QuotientSpace::coordinate(dt.clone(), &bdry);
                    let ker = q.kernel().clone();
                    (q, QuotientBasis::Coordinate, ker)
                }
                None => (
                    QuotientSpace::orthogonal(dt.clone(), right.kernel.clone(), policy),
                    QuotientBasis::Orthogonal,
                    right.kernel.clone(),
                ),
            };
        let ext_primal = pseudo_inverse(&(b.transpose() * q_primal.min_reps()), policy);
        let ext_dual = pseudo_inverse(&(&b * q_dual.min_reps() * DUAL_SIGN), policy);
        Self {
            k,
            rank: left.rank,
            threshold: left.threshold,
            singular_values: right.singular_values.clone(),
            b,
            dual_sign: DUAL_SIGN,
            d,
            dt,
            ker_primal,
            ker_dual,
            q_primal,
            q_dual,
            basis_primal,
            basis_dual,
            warnings,
            ext_primal,
            ext_dual,
        }
    }

    pub fn space(&self, side: Side) -> &Arc<InnerProductSpace> {
        match side {
            Side::Primal => &self.d,
            Side::Dual => &self.dt,
        }
    }

    /// Space on which the traces of `side` act as functionals.
    pub fn target(&self, side: Side) -> &Arc<InnerProductSpace> {
        match side {
            Side::Primal => &self.dt,
            Side::Dual => &self.d,
        }
    }

    pub fn quotient(&self, side: Side) -> &QuotientSpace {
        match side {
            Side::Primal => &self.q_primal,
            Side::Dual => &self.q_dual,
        }
    }

    pub fn kernel(&self, side: Side) -> &Mat {
        match side {
            Side::Primal => &self.ker_primal,
            Side::Dual => &self.ker_dual,
        }
    }

    /// Matrix of the trace of `side`: coefficients of `T x` are `trace_matrix * x`.
    pub fn trace_matrix(&self, side: Side) -> Mat {
        match side {
            Side::Primal => self.b.transpose(),
            Side::Dual => &self.b * self.dual_sign,
        }
    }

    fn check_len(&self, side: Side, x: &Vector) -> Result<(), TraceError> {
        let n = self.space(side).dim();
        if x.len() == n {
            Ok(())
        } else {
            Err(TraceError::Dimension { got: x.len(), expected: n })
        }
    }

    /// Coefficients of `T^t x` (primal) or `T^n y` (dual).
    pub fn apply(&self, side: Side, x: &Vector) -> Result<Vector, TraceError> {
        self.check_len(side, x)?;
        Ok(match side {
            Side::Primal => self.b.tr_mul(x),
            Side::Dual => &self.b * x * self.dual_sign,
        })
    }

    /// `||P x||` in the graph Gram of the side's domain model.
    pub fn quotient_norm(&self, side: Side, x: &Vector) -> Result<f64, TraceError> {
        self.check_len(side, x)?;
        Ok(self.quotient(side).norm(x))
    }

    /// `(||T x||', ||[x]||, ratio)`; the ratio is 1 on the kernel.
    pub fn isometry_defect(&self, side: Side, x: &Vector) -> Result<(f64, f64, f64), TraceError> {
        let phi = self.apply(side, x)?;
        let dn = self.target(side).dual_norm(&phi);
        let qn = self.quotient_norm(side, x)?;
        let xn = self.space(side).norm(x);
        let ratio = if qn <= 64.0 * f64::EPSILON * xn || qn == 0.0 { 1.0 } else { dn / qn };
        Ok((dn, qn, ratio))
    }

    /// Minimum-norm `x` with `T x = phi`; `x` is Gram-orthogonal to the kernel.
    pub fn min_norm_extension(
        &self,
        side: Side,
        phi: &Vector,
        tol: f64,
    ) -> Result<Vector, TraceError> {
        let target = self.target(side);
        if phi.len() != target.dim() {
            return Err(TraceError::Dimension { got: phi.len(), expected: target.dim() });
        }
        let q = self.quotient(side);
        let ext = match side {
            Side::Primal => &self.ext_primal,
            Side::Dual => &self.ext_dual,
        };
        let x = if q.dim() == 0 {
            Vector::zeros(self.space(side).dim())
        } else {
            q.min_reps() * (ext * phi)
        };
        let scale = target.dual_norm(phi);
        if scale > 0.0 {
            let back = self.apply(side, &x)?;
            let residual = target.dual_norm(&(back - phi)) / scale;
            if residual > tol {
                return Err(TraceError::NotInRange { residual, tol });
            }
        }
        Ok(x)
    }

    /// Quotient coordinates of the pairing: `<<[x],[y]>> = cx^T K cy`.
    pub fn k_matrix(&self) -> Mat {
        self.q_primal.min_reps().transpose() * &self.b * self.q_dual.min_reps()
    }

    /// `<<[x],[y]>>` evaluated through quotient coordinates.
    pub fn duality_pairing(&self, x: &Vector, y: &Vector) -> Result<f64, TraceError> {
        self.check_len(Side::Primal, x)?;
        self.check_len(Side::Dual, y)?;
        let cx = self.q_primal.class_of(x);
        let cy = self.q_dual.class_of(y);
        Ok(cx.dot(&(self.k_matrix() * cy)))
    }

    /// Norm of `K` from the primal quotient into the dual of the dual quotient.
    pub fn k_norm(&self) -> f64 {
        let k = self.k_matrix();
        if k.nrows() == 0 || k.ncols() == 0 {
            return 0.0;
        }
        let lp = self.q_primal.gram().cholesky_l();
        let ld = self.q_dual.gram().cholesky_l();
        // sup |cx^T K cy| / (|Lp^T cx| |Ld^T cy|)
        let left = lp.solve_lower_triangular(&k).expect("positive diagonal");
        let both = ld
            .solve_lower_triangular(&left.transpose())
            .expect("positive diagonal")
            .transpose();
        spectral_norm(&both)
    }

    /// Operator norm of the trace of `side` into the dual of the target model.
    pub fn trace_norm(&self, side: Side) -> f64 {
        let t = self.trace_matrix(side);
        if t.nrows() == 0 || t.ncols() == 0 {
            return 0.0;
        }
        let ls = self.space(side).cholesky_l();
        let lt = self.target(side).cholesky_l();
        let w = lt.solve_lower_triangular(&t).expect("positive diagonal");
        let w = ls.solve_lower_triangular(&w.transpose()).expect("positive diagonal");
        spectral_norm(&w)
    }
}

/// Assembles every level of the pair.
pub fn assemble_all(pair: &ComplexPair, policy: &RankPolicy, exec: Execution) -> Vec<TraceSystem> {
    let ks: Vec<i32> = pair.indices().collect();
    exec.map_slice(&ks, |&k| TraceSystem::assemble(pair, k, policy))
}

/// Literal harmonic-extension formula: primal `x = -lift_D(At R^{-1} phi)`,
/// dual `y = -lift_Dt(A R^{-1} psi)`. Returns the candidate and the relative
/// residual of expressing it in the domain model.
pub fn literal_extension(
    pair: &ComplexPair,
    ts: &TraceSystem,
    side: Side,
    phi: &Vector,
    policy: &RankPolicy,
) -> (Vector, f64) {
    let k = ts.k;
    let target = ts.target(side);
    let r = target.riesz(phi);
    let (w, inj) = match (side, pair.level(k)) {
        (Side::Primal, Ok(l)) => (-(&l.at * &r), l.inj_d.clone()),
        (Side::Dual, Ok(l)) => (-(&l.a * &r), l.inj_dt.clone()),
        (_, Err(_)) => return (Vector::zeros(ts.space(side).dim()), 0.0),
    };
    if inj.ncols() == 0 {
        return (Vector::zeros(0), if w.norm() == 0.0 { 0.0 } else { 1.0 });
    }
    let x = pseudo_inverse(&inj, policy) * &w;
    let scale = w.norm();
    let residual = if scale == 0.0 { 0.0 } else { (&inj * &x - &w).norm() / scale };
    (x, residual)
}

/// Mutual-projection residuals of `rowspace(B)` against `annihilator(ker_dual)`
/// and `colspace(B)` against `annihilator(ker_primal)`.
pub fn range_annihilator_residuals(ts: &TraceSystem, policy: &RankPolicy) -> (f64, f64, bool) {
    let row = range_of(&ts.b.transpose(), policy).basis;
    let col = range_of(&ts.b, policy).basis;
    let ann_dual = annihilator(&ts.ker_dual, policy);
    let ann_primal = annihilator(&ts.ker_primal, policy);
    let a = compare_spans(&row, &ann_dual, policy);
    let b = compare_spans(&col, &ann_primal, policy);
    let dims_ok = a.dim_a == a.dim_b && b.dim_a == b.dim_b;
    (a.residual(), b.residual(), dims_ok)
}

/// Sampled one-sided isometry bound `||T x||' <= ||[x]|| <= ||x||`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsometrySample {
    pub violations: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

pub fn isometry_samples(
    ts: &TraceSystem,
    side: Side,
    tol: &Tolerances,
    seed: u64,
    exec: Execution,
) -> IsometrySample {
    let space = ts.space(side);
    let n = space.dim();
    if n == 0 {
        return IsometrySample { violations: 0, min_ratio: 1.0, max_ratio: 1.0 };
    }
    let name = match side {
        Side::Primal => "isometry-primal",
        Side::Dual => "isometry-dual",
    };
    let stream = sampling::stream_id(name, ts.k);
    let sizes = sampling::blocks(tol.samples);
    let t = ts.trace_matrix(side);
    let p = ts.quotient(side).projector().clone();
    let target = ts.target(side);
    let slack = tol.norm_slack;
    let per_block = exec.map(sizes.len(), |bi| {
        let x = sampling::gaussian_block(n, sizes[bi], seed, stream, bi as u64);
        let dn = target.dual_norms(&(&t * &x));
        let qn = space.norms(&(&p * &x));
        let xn = space.norms(&x);
        let mut s = IsometrySample { violations: 0, min_ratio: f64::INFINITY, max_ratio: 0.0 };
        for j in 0..sizes[bi] {
            if dn[j] > (1.0 + slack) * qn[j] || qn[j] > (1.0 + slack) * xn[j] {
                s.violations += 1;
            }
            let ratio = if qn[j] <= 64.0 * f64::EPSILON * xn[j] { 1.0 } else { dn[j] / qn[j] };
            s.min_ratio = s.min_ratio.min(ratio);
            s.max_ratio = s.max_ratio.max(ratio);
        }
        s
    });
    per_block.into_iter().fold(
        IsometrySample { violations: 0, min_ratio: f64::INFINITY, max_ratio: 0.0 },
        |a, s| IsometrySample {
            violations: a.violations + s.violations,
            min_ratio: a.min_ratio.min(s.min_ratio),
            max_ratio: a.max_ratio.max(s.max_ratio),
        },
    )
}

fn rel(a: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        a.abs()
    } else {
        a.abs() / scale
    }
}

/// Small deterministic probe sets for identity checks.
const PROBES: usize = 32;

/// All trace-level checks for level `ts.k`.
pub fn trace_checks(
    pair: &ComplexPair,
    ts: &TraceSystem,
    tol: &Tolerances,
    seed: u64,
    exec: Execution,
) -> Vec<Check> {
    let k = ts.k;
    let lv = Some(k);
    let policy = tol.rank_policy();
    let gate = if pair.is_integer_instance() { tol.exact } else { tol.identity };
    let bnorm = ts.b.norm();
    let mut out = Vec::new();

    for w in &ts.warnings {
        out.push(Check::info("rank-stability", lv, "rank-threshold", 1.0).with_detail(w.clone()));
    }

    let t = Instant::now();
    let r1 = if bnorm == 0.0 { 0.0 } else { (ts.b.tr_mul(&ts.ker_primal)).norm() / bnorm };
    let r2 = if bnorm == 0.0 { 0.0 } else { (&ts.b * &ts.ker_dual).norm() / bnorm };
    out.push(Check::bound("kernel-annihilates-pairing", lv, "trace-kernel", r1.max(r2), tol.identity).timed(t));

    let (qp, qd) = (ts.q_primal.dim(), ts.q_dual.dim());
    out.push(
        Check::verdict("quotient-dimensions", lv, "trace-space-dimension", qp == ts.rank && qd == ts.rank, ts.rank as f64)
            .with_detail(format!("dim Q_primal {qp}, dim Q_dual {qd}, rank B {}", ts.rank)),
    );

    let t = Instant::now();
    let (ra, rb, dims_ok) = range_annihilator_residuals(ts, &policy);
    out.push(
        Check::verdict("range-annihilator", lv, "range-annihilator", dims_ok && ra.max(rb) <= tol.identity, ra.max(rb))
            .with_detail(format!("rowspace {ra:e}, colspace {rb:e}"))
            .timed(t),
    );

    if let Ok(level) = pair.level(k) {
        for (name, idx, n, side) in [
            ("interior-kernel-primal", &level.interior_d, ts.d.dim(), Side::Primal),
            ("interior-kernel-dual", &level.interior_dt, ts.dt.dim(), Side::Dual),
        ] {
            let Some(idx) = idx else { continue };
            let e = Mat::from_fn(n, idx.len(), |r, c| if idx[c] == r { 1.0 } else { 0.0 });
            let t = Instant::now();
            let res = if bnorm == 0.0 {
                0.0
            } else {
                (ts.trace_matrix(side) * &e).norm() / bnorm
            };
            out.push(Check::bound(&format!("{name}-containment"), lv, "interior-in-trace-kernel", res, tol.exact).timed(t));
            let excess = ts.kernel(side).ncols() as f64 - idx.len() as f64;
            out.push(
                Check::info(&format!("{name}-excess"), lv, "trace-kernel-equals-interior", excess)
                    .with_detail(format!("kernel {} vs interior {}", ts.kernel(side).ncols(), idx.len())),
            );
        }
    }

    for side in [Side::Primal, Side::Dual] {
        let sfx = match side {
            Side::Primal => "primal",
            Side::Dual => "dual",
        };
        let t = Instant::now();
        let s = isometry_samples(ts, side, tol, seed, exec);
        out.push(
            Check::verdict(&format!("isometry-bound-{sfx}"), lv, "trace-norm-bound", s.violations == 0, s.violations as f64)
                .with_detail(format!("{} samples", tol.samples))
                .timed(t),
        );
        out.push(
            Check::info(&format!("isometry-defect-{sfx}"), lv, "trace-isometry", s.min_ratio)
                .with_detail(format!("min ratio {:.12}, max ratio {:.12}", s.min_ratio, s.max_ratio)),
        );
        out.push(Check::info(&format!("trace-norm-{sfx}"), lv, "trace-norm", ts.trace_norm(side)));

        // Section property: the class of the extension of T x is the class of x.
        let t = Instant::now();
        let n = ts.space(side).dim();
        let mut worst: f64 = 0.0;
        let mut ortho: f64 = 0.0;
        let mut failed = false;
        if n > 0 {
            let xs = sampling::gaussian_block(n, PROBES, seed, sampling::stream_id(&format!("section-{sfx}"), k), 0);
            let q = ts.quotient(side);
            let space = ts.space(side);
            for j in 0..PROBES {
                let x: Vector = xs.column(j).into_owned();
                let phi = ts.apply(side, &x).expect("dimension");
                match ts.min_norm_extension(side, &phi, tol.extension) {
                    Ok(xe) => {
                        let diff = q.norm(&(&xe - &x));
                        worst = worst.max(rel(diff, q.norm(&x).max(f64::MIN_POSITIVE)));
                        let kg = ts.kernel(side).tr_mul(&(space.gram() * &xe)).norm();
                        ortho = ortho.max(rel(kg, space.gram().norm() * xe.norm()));
                    }
                    Err(_) => failed = true,
                }
            }
        }
        out.push(
            Check::verdict(&format!("extension-section-{sfx}"), lv, "extension-section", !failed && worst <= tol.extension && ortho <= tol.identity, worst.max(ortho))
                .with_detail(format!("class residual {worst:e}, kernel orthogonality {ortho:e}"))
                .timed(t),
        );

        // Literal harmonic-extension formula, reported only.
        if n > 0 && ts.target(side).dim() > 0 {
            let xs = sampling::gaussian_block(n, 1, seed, sampling::stream_id(&format!("literal-{sfx}"), k), 0);
            let x: Vector = xs.column(0).into_owned();
            let phi = ts.apply(side, &x).expect("dimension");
            let (xl, repr) = literal_extension(pair, ts, side, &phi, &policy);
            let detail = if repr <= tol.lift {
                let back = ts.apply(side, &xl).expect("dimension");
                let scale = ts.target(side).dual_norm(&phi);
                let res = rel(ts.target(side).dual_norm(&(back - &phi)), scale);
                format!("representable; trace residual {res:e}")
            } else {
                format!("not representable in the domain model (residual {repr:e})")
            };
            out.push(Check::info(&format!("literal-extension-{sfx}"), lv, "harmonic-extension", repr).with_detail(detail));
        }
    }

    // Sign relation between the two traces.
    let t = Instant::now();
    let (nd, nt) = (ts.d.dim(), ts.dt.dim());
    let mut sign_res: f64 = 0.0;
    let mut shift_res: f64 = 0.0;
    let mut ibp_res: f64 = 0.0;
    if nd > 0 && nt > 0 {
        let st = sampling::stream_id("duality", k);
        let xs = sampling::gaussian_block(nd, PROBES, seed, st, 0);
        let ys = sampling::gaussian_block(nt, PROBES, seed, st, 1);
        let zs = sampling::gaussian_block(ts.ker_primal.ncols().max(1), PROBES, seed, st, 2);
        let kmat = ts.k_matrix();
        for j in 0..PROBES {
            let x: Vector = xs.column(j).into_owned();
            let y: Vector = ys.column(j).into_owned();
            let scale = ts.d.norm(&x) * ts.dt.norm(&y);
            let tx = ts.apply(Side::Primal, &x).expect("dimension");
            let ny = ts.apply(Side::Dual, &y).expect("dimension");
            sign_res = sign_res.max(rel(tx.dot(&y) + ny.dot(&x), scale));
            let bxy = x.dot(&(&ts.b * &y));
            let shifted = if ts.ker_primal.ncols() > 0 {
                &x + &ts.ker_primal * zs.column(j)
            } else {
                x.clone()
            };
            let p0 = ts.duality_pairing(&x, &y).expect("dimension");
            let p1 = ts.duality_pairing(&shifted, &y).expect("dimension");
            shift_res = shift_res.max(rel(p1 - p0, scale));
            let cx = ts.q_primal.class_of(&x);
            let cy = ts.q_dual.class_of(&y);
            ibp_res = ibp_res.max(rel(cx.dot(&(&kmat * cy)) - bxy, scale));
        }
    }
    out.push(Check::bound("dual-sign", lv, "dual-trace-sign", sign_res, gate).timed(t));
    out.push(Check::bound("duality-well-defined", lv, "duality-pairing", shift_res, tol.identity));
    out.push(Check::bound("integration-by-parts-closure", lv, "duality-pairing", ibp_res, tol.identity));

    let t = Instant::now();
    let kmat = ts.k_matrix();
    let kr = rank(&kmat, &policy);
    out.push(
        Check::verdict("duality-bijective", lv, "duality-isomorphism", kr == qp && kr == qd, kr as f64)
            .with_detail(format!("rank {kr}, dims {qp} and {qd}"))
            .timed(t),
    );
    let kn = ts.k_norm();
    out.push(Check::bound("duality-norm", lv, "duality-isomorphism", kn, 1.0 + tol.norm_slack));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclid(n: usize) -> Arc<InnerProductSpace> {
        Arc::new(InnerProductSpace::euclidean(n))
    }

    #[test]
    fn zero_pairing_gives_full_kernels() {
        let ts = TraceSystem::from_pairing(0, Mat::zeros(3, 2), euclid(3), euclid(2), None, None, &RankPolicy::default());
        assert_eq!(ts.ker_primal.ncols(), 3);
        assert_eq!(ts.ker_dual.ncols(), 2);
        assert_eq!(ts.q_primal.dim(), 0);
        assert_eq!(ts.k_norm(), 0.0);
    }

    #[test]
    fn identity_pairing_is_isometric() {
        let ts = TraceSystem::from_pairing(0, Mat::identity(4, 4), euclid(4), euclid(4), None, None, &RankPolicy::default());
        let x = Vector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let (_, _, ratio) = ts.isometry_defect(Side::Primal, &x).unwrap();
        assert!((ratio - 1.0).abs() < 1e-14);
    }

    #[test]
    fn extension_rejects_functionals_outside_range() {
        let mut b = Mat::zeros(2, 2);
        b[(0, 0)] = 1.0;
        let ts = TraceSystem::from_pairing(0, b, euclid(2), euclid(2), None, None, &RankPolicy::default());
        let phi = Vector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(ts.min_norm_extension(Side::Primal, &phi, 1e-9), Err(TraceError::NotInRange { .. })));
    }

    #[test]
    fn dimension_mismatch_reported() {
        let ts = TraceSystem::from_pairing(0, Mat::identity(2, 2), euclid(2), euclid(2), None, None, &RankPolicy::default());
        assert!(matches!(ts.apply(Side::Primal, &Vector::zeros(3)), Err(TraceError::Dimension { .. })));
    }
}
