//! Gram-metric dense linear algebra: inner-product spaces, rank-revealing
//! kernels, projectors, quotients and annihilators.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Gram matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("basis is rank deficient: rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },
}

/// Singular-value rank threshold `tau = max(m, n) * eps * sigma_max * factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    pub factor: f64,
    /// Singular values within `[tau / band, tau * band]` flag the decision as unstable.
    pub band: f64,
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self { factor: 1e3, band: 10.0 }
    }
}

impl RankPolicy {
    pub fn threshold(&self, m: usize, n: usize, sigma_max: f64) -> f64 {
        m.max(n) as f64 * f64::EPSILON * sigma_max * self.factor
    }
}

/// Relative symmetry tolerance accepted for Gram matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `||a - b||_F / max(||a||_F, ||b||_F)`, zero when both vanish.
pub fn relative_residual(a: &Mat, b: &Mat) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// `||a - b||_F / max(||a||_F, ||b||_F, scale)`, zero when all vanish.
///
/// `scale` bounds the size of the factors forming `a` and `b`, so identities
/// whose sides cancel to roundoff are not reported as relative failures.
pub fn scaled_residual(a: &Mat, b: &Mat, scale: f64) -> f64 {
    let s = a.norm().max(b.norm()).max(scale);
    if s == 0.0 {
        0.0
    } else {
        (a - b).norm() / s
    }
}

/// Finite-dimensional Hilbert space given by an SPD Gram matrix.
#[derive(Debug, Clone)]
pub struct InnerProductSpace {
    gram: Mat,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl InnerProductSpace {
    pub fn new(gram: Mat) -> Result<Self, LinalgError> {
        let n = gram.nrows();
        if gram.ncols() != n {
            return Err(LinalgError::Dimension(format!(
                "Gram is {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if n == 0 {
            return Ok(Self { gram, chol: None });
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NotSpd("non-finite entry".into()));
        }
        let asym = max_abs(&(&gram - gram.transpose()));
        let scale = max_abs(&gram);
        if asym > SYMMETRY_TOL * scale {
            return Err(LinalgError::NotSpd(format!(
                "asymmetry {asym:e} exceeds {SYMMETRY_TOL:e} relative"
            )));
        }
        let sym = (&gram + gram.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone())
            .ok_or_else(|| LinalgError::NotSpd("Cholesky factorization failed".into()))?;
        if chol.l_dirty().diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(LinalgError::NotSpd("non-positive pivot".into()));
        }
        Ok(Self { gram: sym, chol: Some(chol) })
    }

    pub fn euclidean(n: usize) -> Self {
        Self::new(Mat::identity(n, n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    pub fn inner(&self, x: &Vector, y: &Vector) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        x.dot(&(&self.gram * y))
    }

    pub fn norm(&self, x: &Vector) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    /// Column-wise Gram norms of a block of vectors.
    pub fn norms(&self, xs: &Mat) -> Vec<f64> {
        if self.dim() == 0 {
            return vec![0.0; xs.ncols()];
        }
        let gx = &self.gram * xs;
        (0..xs.ncols())
            .map(|j| xs.column(j).dot(&gx.column(j)).max(0.0).sqrt())
            .collect()
    }

    /// `G^{-1} rhs` through the Cholesky factor.
    pub fn solve(&self, rhs: &Mat) -> Mat {
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => Mat::zeros(0, rhs.ncols()),
        }
    }

    pub fn solve_vec(&self, rhs: &Vector) -> Vector {
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => Vector::zeros(0),
        }
    }

    /// Riesz representative `G^{-1} phi`.
    pub fn riesz(&self, phi: &Vector) -> Vector {
        self.solve_vec(phi)
    }

    /// `sqrt(phi^T G^{-1} phi)`.
    pub fn dual_norm(&self, phi: &Vector) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        phi.dot(&self.solve_vec(phi)).max(0.0).sqrt()
    }

    /// Column-wise dual norms of a block of functionals.
    pub fn dual_norms(&self, phis: &Mat) -> Vec<f64> {
        if self.dim() == 0 {
            return vec![0.0; phis.ncols()];
        }
        let r = self.solve(phis);
        (0..phis.ncols())
            .map(|j| phis.column(j).dot(&r.column(j)).max(0.0).sqrt())
            .collect()
    }

    /// Lower Cholesky factor `L` with `G = L L^T`.
    pub fn cholesky_l(&self) -> Mat {
        match &self.chol {
            Some(c) => c.l(),
            None => Mat::zeros(0, 0),
        }
    }

    /// Matrix whose columns are a Gram-orthonormal basis: `L^{-T}`.
    pub fn orthonormal_frame(&self) -> Mat {
        let n = self.dim();
        if n == 0 {
            return Mat::zeros(0, 0);
        }
        let l = self.cholesky_l();
        l.transpose()
            .solve_upper_triangular(&Mat::identity(n, n))
            .expect("Cholesky factor has positive diagonal")
    }
}

/// Subspace of an inner-product space spanned by the columns of `basis`.
#[derive(Debug, Clone)]
pub struct Subspace {
    parent: Arc<InnerProductSpace>,
    basis: Mat,
}

impl Subspace {
    pub fn new(
        parent: Arc<InnerProductSpace>,
        basis: Mat,
        policy: &RankPolicy,
    ) -> Result<Self, LinalgError> {
        if basis.nrows() != parent.dim() {
            return Err(LinalgError::Dimension(format!(
                "basis has {} rows, parent has dimension {}",
                basis.nrows(),
                parent.dim()
            )));
        }
        let cols = basis.ncols();
        let rank = range_of(&basis, policy).rank;
        if rank < cols {
            return Err(LinalgError::RankDeficient { rank, cols });
        }
        Ok(Self { parent, basis })
    }

    pub fn parent(&self) -> &Arc<InnerProductSpace> {
        &self.parent
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn induced_gram(&self) -> Mat {
        self.basis.transpose() * self.parent.gram() * &self.basis
    }

    pub fn projector(&self) -> Mat {
        orthogonal_projector(&self.parent, &self.basis)
    }

    /// Gram-orthonormal basis of the Gram-orthogonal complement.
    pub fn complement(&self, policy: &RankPolicy) -> Mat {
        orthogonal_complement(&self.parent, &self.basis, policy)
    }

    /// Basis of `{phi : phi^T s = 0 for all s in the subspace}` in dual coefficients.
    pub fn annihilator(&self, policy: &RankPolicy) -> Mat {
        annihilator(&self.basis, policy)
    }
}

/// Outcome of a singular-value rank decision.
#[derive(Debug, Clone)]
pub struct NullSpace {
    /// Euclidean-orthonormal kernel basis (n x nullity).
    pub kernel: Mat,
    /// Euclidean-orthonormal basis of the row space (n x rank).
    pub corange: Mat,
    pub rank: usize,
    pub threshold: f64,
    pub singular_values: Vec<f64>,
    pub unstable: bool,
}

/// Column-space basis and rank of a matrix.
#[derive(Debug, Clone)]
pub struct Range {
    pub basis: Mat,
    pub rank: usize,
    pub threshold: f64,
    pub unstable: bool,
}

// nalgebra's own bidiagonal SVD loses accuracy on some rectangular inputs
// (reconstruction errors near 1e-9 at condition number 3), so the
// decomposition is LAPACK's.
/// Thin SVD with singular values in decreasing order.
fn sorted_svd(mat: &Mat) -> (Vec<f64>, Option<Mat>, Option<Mat>) {
    let svd = nalgebra_lapack::SVD::new(mat.clone()).expect("LAPACK SVD converges on finite input");
    let p = svd.singular_values.len();
    let mut order: Vec<usize> = (0..p).collect();
    let sd = &svd.singular_values;
    order.sort_by(|&a, &b| sd[b].partial_cmp(&sd[a]).expect("finite singular values"));
    let s: Vec<f64> = order.iter().map(|&i| sd[i]).collect();
    let u = Mat::from_fn(mat.nrows(), p, |r, c| svd.u[(r, order[c])]);
    let vt = Mat::from_fn(p, mat.ncols(), |r, c| svd.vt[(order[r], c)]);
    (s, Some(u), Some(vt))
}

/// Singular values in decreasing order; empty for empty matrices.
pub fn singular_values(mat: &Mat) -> Vec<f64> {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return Vec::new();
    }
    sorted_svd(mat).0
}

fn count_rank(s: &[f64], tau: f64, band: f64) -> (usize, bool) {
    // Ties at the threshold count towards the rank, so the kernel is the smaller one.
    let rank = s.iter().filter(|&&v| v >= tau && v > 0.0).count();
    let unstable = tau > 0.0 && s.iter().any(|&v| v > tau / band && v < tau * band);
    (rank, unstable)
}

/// Kernel of an `m x n` matrix at the policy's relative threshold.
pub fn kernel_of(mat: &Mat, policy: &RankPolicy) -> NullSpace {
    kernel_at_scale(mat, policy, 0.0)
}

/// Kernel with the threshold taken relative to `max(sigma_max, scale)`.
///
/// For products whose factors cancel, `scale` is the size of the uncancelled
/// factor, so roundoff is not mistaken for rank.
pub fn kernel_at_scale(mat: &Mat, policy: &RankPolicy, scale: f64) -> NullSpace {
    let (m, n) = (mat.nrows(), mat.ncols());
    if n == 0 {
        return NullSpace {
            kernel: Mat::zeros(0, 0),
            corange: Mat::zeros(0, 0),
            rank: 0,
            threshold: 0.0,
            singular_values: vec![],
            unstable: false,
        };
    }
    let sigma_guess = mat.norm();
    if m == 0 || max_abs(mat) == 0.0 || sigma_guess < policy.threshold(m, n, scale) {
        return NullSpace {
            kernel: Mat::identity(n, n),
            corange: Mat::zeros(n, 0),
            rank: 0,
            threshold: 0.0,
            singular_values: vec![0.0; m.min(n)],
            unstable: false,
        };
    }
    // Zero rows keep the row space and expose a full right singular basis.
    let work = if m < n {
        let mut p = Mat::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(mat);
        p
    } else {
        mat.clone()
    };
    let (s, _, vt) = sorted_svd(&work);
    let vt = vt.expect("right singular vectors requested");
    let tau = policy.threshold(m, n, s[0].max(scale));
    let (rank, unstable) = count_rank(&s, tau, policy.band);
    let v = vt.transpose();
    NullSpace {
        kernel: v.columns(rank, n - rank).into_owned(),
        corange: v.columns(0, rank).into_owned(),
        rank,
        threshold: tau,
        singular_values: s.into_iter().take(m.min(n)).collect(),
        unstable,
    }
}

/// Removes the singular components below the threshold taken relative to
/// `max(sigma_max, scale)`, so that kernels and ranges of the result agree
/// with one rank decision.
pub fn truncate_to_rank(mat: &Mat, policy: &RankPolicy, scale: f64) -> Mat {
    let (m, n) = (mat.nrows(), mat.ncols());
    if m == 0 || n == 0 || max_abs(mat) == 0.0 {
        return mat.clone();
    }
    let (s, u, vt) = sorted_svd(mat);
    let tau = policy.threshold(m, n, s[0].max(scale));
    if s.iter().all(|&v| v == 0.0 || v >= tau) {
        return mat.clone();
    }
    let (u, vt) = (u.expect("u"), vt.expect("v_t"));
    let mut out = mat.clone();
    for (i, &v) in s.iter().enumerate().filter(|(_, &v)| v < tau && v > 0.0) {
        out -= (u.column(i) * v) * vt.row(i);
    }
    out
}

/// Euclidean-orthonormal basis of the column space.
pub fn range_of(mat: &Mat, policy: &RankPolicy) -> Range {
    let (m, n) = (mat.nrows(), mat.ncols());
    if m == 0 || n == 0 || max_abs(mat) == 0.0 {
        return Range { basis: Mat::zeros(m, 0), rank: 0, threshold: 0.0, unstable: false };
    }
    let (s, u, _) = sorted_svd(mat);
    let u = u.expect("left singular vectors requested");
    let tau = policy.threshold(m, n, s[0]);
    let (rank, unstable) = count_rank(&s, tau, policy.band);
    Range { basis: u.columns(0, rank).into_owned(), rank, threshold: tau, unstable }
}

pub fn rank(mat: &Mat, policy: &RankPolicy) -> usize {
    range_of(mat, policy).rank
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(mat: &Mat) -> f64 {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0.0;
    }
    singular_values(mat).first().copied().unwrap_or(0.0)
}

/// Gram-orthogonal projector onto `span(basis)`: `S (S^T G S)^{-1} S^T G`.
pub fn orthogonal_projector(space: &InnerProductSpace, basis: &Mat) -> Mat {
    let n = space.dim();
    assert_eq!(basis.nrows(), n, "basis rows must match the space dimension");
    if basis.ncols() == 0 || n == 0 {
        return Mat::zeros(n, n);
    }
    let gs = space.gram() * basis;
    let induced = basis.transpose() * &gs;
    let chol = Cholesky::new((&induced + induced.transpose()) * 0.5)
        .expect("induced Gram of a full-rank basis is SPD");
    basis * chol.solve(&gs.transpose())
}

/// Re-expresses a full-rank basis as a Gram-orthonormal basis of the same span.
pub fn gram_orthonormalize(space: &InnerProductSpace, basis: &Mat) -> Mat {
    if basis.ncols() == 0 {
        return basis.clone();
    }
    let induced = basis.transpose() * space.gram() * basis;
    let chol = Cholesky::new((&induced + induced.transpose()) * 0.5)
        .expect("induced Gram of a full-rank basis is SPD");
    let lt = chol.l().transpose();
    // basis * L^{-T}
    let inv_lt = lt
        .solve_upper_triangular(&Mat::identity(basis.ncols(), basis.ncols()))
        .expect("positive diagonal");
    basis * inv_lt
}

/// Gram-orthonormal basis of the Gram-orthogonal complement of `span(basis)`.
pub fn orthogonal_complement(space: &InnerProductSpace, basis: &Mat, policy: &RankPolicy) -> Mat {
    let n = space.dim();
    if basis.ncols() == 0 {
        return space.orthonormal_frame();
    }
    // x is G-orthogonal to S iff G x lies in the Euclidean complement of S.
    let euclid = kernel_of(&basis.transpose(), policy).kernel;
    if euclid.ncols() == 0 {
        return Mat::zeros(n, 0);
    }
    gram_orthonormalize(space, &space.solve(&euclid))
}

/// Annihilator of `span(basis)` in dual coefficients.
pub fn annihilator(basis: &Mat, policy: &RankPolicy) -> Mat {
    let n = basis.nrows();
    if basis.ncols() == 0 {
        return Mat::identity(n, n);
    }
    kernel_of(&basis.transpose(), policy).kernel
}

/// Intersection of two subspaces as the kernel of stacked complementary projectors.
pub fn intersection(space: &InnerProductSpace, a: &Mat, b: &Mat, policy: &RankPolicy) -> Mat {
    let n = space.dim();
    if a.ncols() == 0 || b.ncols() == 0 || n == 0 {
        return Mat::zeros(n, 0);
    }
    let id = Mat::identity(n, n);
    let qa = &id - orthogonal_projector(space, a);
    let qb = &id - orthogonal_projector(space, b);
    let mut stacked = Mat::zeros(2 * n, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&qa);
    stacked.view_mut((n, 0), (n, n)).copy_from(&qb);
    kernel_of(&stacked, policy).kernel
}

/// Mutual containment of two column spans measured with Euclidean projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanComparison {
    pub dim_a: usize,
    pub dim_b: usize,
    /// Distance of the unit ball of `a` from `b`.
    pub a_in_b: f64,
    /// Distance of the unit ball of `b` from `a`.
    pub b_in_a: f64,
}

impl SpanComparison {
    pub fn residual(&self) -> f64 {
        self.a_in_b.max(self.b_in_a)
    }

    pub fn equal(&self, tol: f64) -> bool {
        self.dim_a == self.dim_b && self.residual() <= tol
    }
}

fn containment(qa: &Mat, qb: &Mat) -> f64 {
    if qa.ncols() == 0 {
        return 0.0;
    }
    if qb.ncols() == 0 {
        return 1.0;
    }
    let proj = qb * (qb.transpose() * qa);
    spectral_norm(&(qa - proj))
}

/// Compares `span(a)` and `span(b)` after orthonormalising both.
pub fn compare_spans(a: &Mat, b: &Mat, policy: &RankPolicy) -> SpanComparison {
    let qa = range_of(a, policy).basis;
    let qb = range_of(b, policy).basis;
    SpanComparison {
        dim_a: qa.ncols(),
        dim_b: qb.ncols(),
        a_in_b: containment(&qa, &qb),
        b_in_a: containment(&qb, &qa),
    }
}

/// Distance of `span(a)` from `span(b)`, the latter given by any spanning set.
pub fn containment_residual(a: &Mat, b: &Mat, policy: &RankPolicy) -> f64 {
    let qa = range_of(a, policy).basis;
    let qb = range_of(b, policy).basis;
    containment(&qa, &qb)
}

/// Least-squares solution of `mat x = rhs` through a thin SVD pseudo-inverse.
pub fn pseudo_inverse(mat: &Mat, policy: &RankPolicy) -> Mat {
    let (m, n) = (mat.nrows(), mat.ncols());
    if m == 0 || n == 0 || max_abs(mat) == 0.0 {
        return Mat::zeros(n, m);
    }
    let (s, u, vt) = sorted_svd(mat);
    let (u, vt) = (u.expect("u"), vt.expect("v_t"));
    let tau = policy.threshold(m, n, s[0]);
    let r = s.iter().filter(|&&v| v >= tau && v > 0.0).count();
    let mut out = Mat::zeros(n, m);
    for i in 0..r {
        out += (vt.row(i).transpose() / s[i]) * u.column(i).transpose();
    }
    out
}

/// Quotient `parent / span(kernel)` with explicit representatives.
///
/// `coords * reps = I`, `coords * kernel = 0`; the quotient Gram is
/// `(P reps)^T G (P reps)` with `P` the Gram-orthogonal projector onto the
/// complement of the kernel.
#[derive(Debug, Clone)]
pub struct QuotientSpace {
    parent: Arc<InnerProductSpace>,
    kernel: Mat,
    reps: Mat,
    coords: Mat,
    projector: Mat,
    gram: InnerProductSpace,
}

impl QuotientSpace {
    /// Representatives form a Gram-orthonormal basis of the kernel's complement.
    pub fn orthogonal(parent: Arc<InnerProductSpace>, kernel: Mat, policy: &RankPolicy) -> Self {
        let n = parent.dim();
        let reps = orthogonal_complement(&parent, &kernel, policy);
        let coords = reps.transpose() * parent.gram();
        let projector = if n == 0 { Mat::zeros(0, 0) } else { &reps * &coords };
        let q = reps.ncols();
        Self {
            parent,
            kernel,
            reps,
            coords,
            projector,
            gram: InnerProductSpace::euclidean(q),
        }
    }

    /// Representatives are the unit vectors of `indices`; requires the kernel
    /// to be spanned by the remaining unit vectors.
    pub fn coordinate(parent: Arc<InnerProductSpace>, indices: &[usize]) -> Self {
        let n = parent.dim();
        let chosen: std::collections::BTreeSet<usize> = indices.iter().copied().collect();
        let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
        let kernel = Mat::from_fn(n, rest.len(), |r, c| if rest[c] == r { 1.0 } else { 0.0 });
        let sel: Vec<usize> = chosen.into_iter().collect();
        let reps = Mat::from_fn(n, sel.len(), |r, c| if sel[c] == r { 1.0 } else { 0.0 });
        let coords = reps.transpose();
        // A kernel spanning everything gives the exact zero projector.
        let projector = if rest.len() == n {
            Mat::zeros(n, n)
        } else {
            Mat::identity(n, n) - orthogonal_projector(&parent, &kernel)
        };
        let pr = &projector * &reps;
        let g = pr.transpose() * parent.gram() * &pr;
        let gram = InnerProductSpace::new(g).expect("complement of a coordinate kernel is SPD");
        Self { parent, kernel, reps, coords, projector, gram }
    }

    pub fn parent(&self) -> &Arc<InnerProductSpace> {
        &self.parent
    }

    pub fn dim(&self) -> usize {
        self.reps.ncols()
    }

    pub fn kernel(&self) -> &Mat {
        &self.kernel
    }

    pub fn reps(&self) -> &Mat {
        &self.reps
    }

    /// Maps parent vectors to quotient coordinates.
    pub fn coords(&self) -> &Mat {
        &self.coords
    }

    /// Gram-orthogonal projector onto the complement of the kernel.
    pub fn projector(&self) -> &Mat {
        &self.projector
    }

    pub fn gram(&self) -> &InnerProductSpace {
        &self.gram
    }

    /// Minimal-norm representatives `P reps`.
    pub fn min_reps(&self) -> Mat {
        &self.projector * &self.reps
    }

    pub fn norm(&self, x: &Vector) -> f64 {
        self.parent.norm(&(&self.projector * x))
    }

    pub fn class_of(&self, x: &Vector) -> Vector {
        &self.coords * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_space_is_trivial() {
        let s = InnerProductSpace::new(Mat::zeros(0, 0)).unwrap();
        assert_eq!(s.dim(), 0);
        assert_eq!(s.dual_norm(&Vector::zeros(0)), 0.0);
        assert_eq!(orthogonal_projector(&s, &Mat::zeros(0, 0)).nrows(), 0);
        let q = QuotientSpace::orthogonal(Arc::new(s), Mat::zeros(0, 0), &RankPolicy::default());
        assert_eq!(q.dim(), 0);
    }

    #[test]
    fn asymmetric_gram_rejected() {
        let g = Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(InnerProductSpace::new(g), Err(LinalgError::NotSpd(_))));
    }

    #[test]
    fn indefinite_gram_rejected() {
        let g = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(InnerProductSpace::new(g), Err(LinalgError::NotSpd(_))));
    }

    #[test]
    fn kernel_of_wide_and_tall() {
        let p = RankPolicy::default();
        let wide = Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let ns = kernel_of(&wide, &p);
        assert_eq!((ns.rank, ns.kernel.ncols()), (1, 2));
        assert!((&wide * &ns.kernel).norm() < 1e-15);
        let tall = wide.transpose();
        let ns = kernel_of(&tall, &p);
        assert_eq!((ns.rank, ns.kernel.ncols()), (1, 0));
    }

    #[test]
    fn threshold_tie_counts_towards_rank() {
        let (r, unstable) = count_rank(&[1.0, 1e-9], 1e-9, 10.0);
        assert_eq!(r, 2);
        assert!(unstable);
    }

    #[test]
    fn coordinate_quotient_maps() {
        let g = Mat::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 2.0, 0.5, 0.0, 0.5, 2.0]);
        let space = Arc::new(InnerProductSpace::new(g).unwrap());
        let q = QuotientSpace::coordinate(space, &[0, 2]);
        assert_eq!(q.dim(), 2);
        assert!((q.coords() * q.reps() - Mat::identity(2, 2)).norm() == 0.0);
        assert!((q.coords() * q.kernel()).norm() == 0.0);
    }
}
