//! Surface operators between trace spaces and the trace complex.
//!
//! For the level pair `(k, k+1)`:
//! `D^t_k = (At_{k+1})'` has matrix `At_lift_{k+1}^T`,
//! `D^n_{k+1} = (A_k)'` has matrix `A_lift_k^T`,
//! `S^t_k [x] = [A_k x]` and `S^n_{k+1} [y] = [At_{k+1} y]` in quotient coordinates.

use std::time::Instant;

use thiserror::Error;

use crate::complex::{composition_residual, ComplexPair};
use crate::config::Tolerances;
use crate::linalg::{containment_residual, kernel_of, max_abs, relative_residual, scaled_residual, InnerProductSpace, Mat, RankPolicy};
use crate::report::Check;
use crate::trace::TraceSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("level {k}: {side} kernel is not mapped into the next kernel (residual {residual:e})")]
    WellDefinedness { k: i32, side: &'static str, residual: f64 },
}

#[derive(Debug, Clone)]
pub struct SurfaceOps {
    pub k: i32,
    /// `Dt_k' -> Dt_{k+1}'`.
    pub dt_op: Mat,
    /// `D_{k+1}' -> D_k'`.
    pub dn_op: Mat,
    /// `Q_primal(k) -> Q_primal(k+1)`.
    pub st: Mat,
    /// `Q_dual(k+1) -> Q_dual(k)`.
    pub sn: Mat,
    pub well_defined_t: f64,
    pub well_defined_n: f64,
}

fn mapped_kernel_residual(coords_next: &Mat, lift: &Mat, ker: &Mat) -> f64 {
    if ker.ncols() == 0 || coords_next.nrows() == 0 {
        return 0.0;
    }
    let image = lift * ker;
    let scale = coords_next.norm() * image.norm().max(lift.norm() * ker.norm());
    if scale == 0.0 {
        return 0.0;
    }
    let c = coords_next * image;
    if max_abs(&c) == 0.0 {
        0.0
    } else {
        c.norm() / scale
    }
}

/// Zeroes a product that cancelled to roundoff of its factors' size `scale`.
fn chop(m: Mat, scale: f64) -> Mat {
    let tau = RankPolicy::default().threshold(m.nrows(), m.ncols(), scale);
    if m.norm() <= tau {
        Mat::zeros(m.nrows(), m.ncols())
    } else {
        m
    }
}

impl SurfaceOps {
    pub fn build(pair: &ComplexPair, lower: &TraceSystem, upper: &TraceSystem) -> Self {
        let k = lower.k;
        assert_eq!(upper.k, k + 1, "surface operators need adjacent levels");
        let a_lift = pair.a_lift(k);
        let at_lift = pair.at_lift(k + 1);
        let st = chop(
            upper.q_primal.coords() * &a_lift * lower.q_primal.reps(),
            upper.q_primal.coords().norm() * a_lift.norm() * lower.q_primal.reps().norm(),
        );
        let sn = chop(
            lower.q_dual.coords() * &at_lift * upper.q_dual.reps(),
            lower.q_dual.coords().norm() * at_lift.norm() * upper.q_dual.reps().norm(),
        );
        let well_defined_t = mapped_kernel_residual(upper.q_primal.coords(), &a_lift, &lower.ker_primal);
        let well_defined_n = mapped_kernel_residual(lower.q_dual.coords(), &at_lift, &upper.ker_dual);
        Self {
            k,
            dt_op: at_lift.transpose(),
            dn_op: a_lift.transpose(),
            st,
            sn,
            well_defined_t,
            well_defined_n,
        }
    }

    /// Builds and rejects operators whose kernels are not mapped into kernels.
    pub fn try_build(
        pair: &ComplexPair,
        lower: &TraceSystem,
        upper: &TraceSystem,
        tol: f64,
    ) -> Result<Self, SurfaceError> {
        let s = Self::build(pair, lower, upper);
        if s.well_defined_t > tol {
            return Err(SurfaceError::WellDefinedness { k: s.k, side: "primal", residual: s.well_defined_t });
        }
        if s.well_defined_n > tol {
            return Err(SurfaceError::WellDefinedness { k: s.k, side: "dual", residual: s.well_defined_n });
        }
        Ok(s)
    }
}

/// Residuals of the four commuting relations at `(k, k+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Commuting {
    /// `-D^t_k T^t_k = T^t_{k+1} A_k`.
    pub trace_primal: f64,
    /// `-D^n_{k+1} T^n_{k+1} = T^n_k At_{k+1}`.
    pub trace_dual: f64,
    /// `<<S^t [x], [z]>> = -<<[x], S^n [z]>>`.
    pub quotient_pairing: f64,
    /// `K_{k+1} S^t = -(S^n)' K_k`.
    pub duality_map: f64,
}

impl Commuting {
    pub fn max(&self) -> f64 {
        self.trace_primal.max(self.trace_dual).max(self.quotient_pairing).max(self.duality_map)
    }
}

pub fn check_commuting(pair: &ComplexPair, lower: &TraceSystem, upper: &TraceSystem, ops: &SurfaceOps) -> Commuting {
    let k = lower.k;
    let a_lift = pair.a_lift(k);
    let at_lift = pair.at_lift(k + 1);
    let sigma = lower.dual_sign;

    // Residuals are measured against the size of the factors, since both
    // sides may vanish up to roundoff.
    let lhs = -(&ops.dt_op * lower.b.transpose());
    let rhs = upper.b.transpose() * &a_lift;
    let scale = ops.dt_op.norm() * lower.b.norm() + upper.b.norm() * a_lift.norm();
    let trace_primal = scaled_residual(&lhs, &rhs, scale);

    let lhs = -(&ops.dn_op * (&upper.b * sigma));
    let rhs = (&lower.b * sigma) * &at_lift;
    let scale = ops.dn_op.norm() * upper.b.norm() + lower.b.norm() * at_lift.norm();
    let trace_dual = scaled_residual(&lhs, &rhs, scale);

    // `st` and `sn` may themselves be roundoff, so their scale is that of their factors.
    let st_scale = upper.q_primal.coords().norm() * a_lift.norm() * lower.q_primal.reps().norm();
    let sn_scale = lower.q_dual.coords().norm() * at_lift.norm() * upper.q_dual.reps().norm();
    let k_lower = lower.k_matrix();
    let k_upper = upper.k_matrix();
    let lhs = ops.st.transpose() * &k_upper;
    let rhs = -(&k_lower * &ops.sn);
    let scale = st_scale * k_upper.norm() + k_lower.norm() * sn_scale;
    let quotient_pairing = scaled_residual(&lhs, &rhs, scale);

    // Functionals on Dt_{k+1} through representatives.
    let reps_lower = lower.q_primal.min_reps();
    let reps_upper = upper.q_primal.min_reps();
    let lhs = upper.b.transpose() * &reps_upper * &ops.st;
    let rhs = -(&ops.dt_op * lower.b.transpose() * &reps_lower);
    let scale = upper.b.norm() * reps_upper.norm() * st_scale + ops.dt_op.norm() * lower.b.norm() * reps_lower.norm();
    let duality_map = scaled_residual(&lhs, &rhs, scale);

    Commuting { trace_primal, trace_dual, quotient_pairing, duality_map }
}

/// Distance of `D^t_k(R(T^t_k))` from `R(T^t_{k+1})`.
pub fn key_containment(lower: &TraceSystem, upper: &TraceSystem, ops: &SurfaceOps, policy: &RankPolicy) -> f64 {
    let image = chop(&ops.dt_op * lower.b.transpose(), ops.dt_op.norm() * lower.b.norm());
    if image.ncols() == 0 || image.nrows() == 0 || max_abs(&image) == 0.0 {
        return 0.0;
    }
    containment_residual(&image, &upper.b.transpose(), policy)
}

/// A finite complex of inner-product spaces `V_i -> V_{i+1}`.
#[derive(Debug, Clone)]
pub struct BoundedComplex {
    pub k_min: i32,
    pub spaces: Vec<InnerProductSpace>,
    /// `diffs[i]: spaces[i] -> spaces[i+1]`.
    pub diffs: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohomology {
    pub k_min: i32,
    pub by_rank: Vec<usize>,
    pub by_hodge: Vec<usize>,
    /// Smallest nonzero Hodge-Laplacian eigenvalue per degree (0 when none).
    pub smallest_nonzero: Vec<f64>,
    pub unstable: bool,
}

impl Cohomology {
    pub fn agree(&self) -> bool {
        self.by_rank == self.by_hodge
    }

    /// Dimensions on the support of the nonzero spaces.
    pub fn dims(&self) -> Vec<usize> {
        self.by_rank.clone()
    }
}

impl BoundedComplex {
    pub fn new(k_min: i32, spaces: Vec<InnerProductSpace>, diffs: Vec<Mat>) -> Self {
        assert_eq!(diffs.len() + 1, spaces.len().max(1), "one differential between consecutive spaces");
        for (i, d) in diffs.iter().enumerate() {
            assert_eq!(d.shape(), (spaces[i + 1].dim(), spaces[i].dim()), "differential {i} shape");
        }
        Self { k_min, spaces, diffs }
    }

    /// Drops zero spaces at both ends.
    pub fn trimmed(&self) -> Self {
        let n = self.spaces.len();
        let first = (0..n).find(|&i| self.spaces[i].dim() > 0);
        let Some(first) = first else {
            return Self { k_min: self.k_min, spaces: vec![], diffs: vec![] };
        };
        let last = (0..n).rev().find(|&i| self.spaces[i].dim() > 0).expect("nonempty");
        Self {
            k_min: self.k_min + first as i32,
            spaces: self.spaces[first..=last].to_vec(),
            diffs: self.diffs[first..last].to_vec(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.spaces.iter().map(|s| s.dim()).collect()
    }

    /// Largest relative residual of `d_{i+1} d_i`.
    pub fn square_residual(&self) -> f64 {
        self.diffs.windows(2).map(|w| composition_residual(&w[1], &w[0])).fold(0.0, f64::max)
    }

    fn diff(&self, i: isize) -> Mat {
        let n = self.spaces.len() as isize;
        if i < 0 || i + 1 >= n {
            let rows = if i + 1 >= 0 && i + 1 < n { self.spaces[(i + 1) as usize].dim() } else { 0 };
            let cols = if i >= 0 && i < n { self.spaces[i as usize].dim() } else { 0 };
            Mat::zeros(rows, cols)
        } else {
            self.diffs[i as usize].clone()
        }
    }

    /// Differential in Gram-orthonormal coordinates: `L_{i+1}^T d_i L_i^{-T}`.
    fn whitened(&self, i: isize) -> Mat {
        let d = self.diff(i);
        if d.nrows() == 0 || d.ncols() == 0 {
            return d;
        }
        let src = &self.spaces[i as usize];
        let dst = &self.spaces[(i + 1) as usize];
        dst.cholesky_l().transpose() * d * src.orthonormal_frame()
    }

    pub fn cohomology(&self, policy: &RankPolicy) -> Cohomology {
        let n = self.spaces.len();
        let mut unstable = false;
        let ranks: Vec<usize> = (0..n)
            .map(|i| {
                let r = crate::linalg::range_of(&self.diff(i as isize), policy);
                unstable |= r.unstable;
                r.rank
            })
            .collect();
        let by_rank = (0..n)
            .map(|i| {
                let prev = if i > 0 { ranks[i - 1] } else { 0 };
                // Saturates only if the rank threshold misjudged a cancelled product.
                self.spaces[i].dim().saturating_sub(ranks[i] + prev)
            })
            .collect();
        let mut by_hodge = Vec::with_capacity(n);
        let mut smallest = Vec::with_capacity(n);
        for i in 0..n {
            let dim = self.spaces[i].dim();
            let down = self.whitened(i as isize - 1).transpose();
            let up = self.whitened(i as isize);
            // Laplacian = S^T S with S = [d_{i-1}^*; d_i].
            let mut s = Mat::zeros(down.nrows() + up.nrows(), dim);
            if dim > 0 {
                s.view_mut((0, 0), (down.nrows(), dim)).copy_from(&down);
                s.view_mut((down.nrows(), 0), (up.nrows(), dim)).copy_from(&up);
            }
            let ns = kernel_of(&s, policy);
            unstable |= ns.unstable;
            by_hodge.push(ns.kernel.ncols());
            let sv = &ns.singular_values;
            let nz = sv.iter().take(ns.rank).cloned().fold(f64::INFINITY, f64::min);
            smallest.push(if nz.is_finite() { nz * nz } else { 0.0 });
        }
        Cohomology { k_min: self.k_min, by_rank, by_hodge, smallest_nonzero: smallest, unstable }
    }
}

/// The trace complex `Q_primal(k) --S^t_k--> Q_primal(k+1)`.
pub fn trace_complex(traces: &[TraceSystem], ops: &[SurfaceOps]) -> BoundedComplex {
    let k_min = traces.first().map_or(0, |t| t.k);
    let spaces = traces.iter().map(|t| t.q_primal.gram().clone()).collect();
    let diffs = ops.iter().map(|o| o.st.clone()).collect();
    BoundedComplex::new(k_min, spaces, diffs)
}

/// The dual trace complex written in ascending order: `Q_dual(k+1) --S^n--> Q_dual(k)`
/// is reversed so that index `i` carries `Q_dual(k_max - i)`.
pub fn dual_trace_complex(traces: &[TraceSystem], ops: &[SurfaceOps]) -> BoundedComplex {
    let k_max = traces.last().map_or(0, |t| t.k);
    let spaces = traces.iter().rev().map(|t| t.q_dual.gram().clone()).collect();
    let diffs = ops.iter().rev().map(|o| o.sn.clone()).collect();
    BoundedComplex::new(-k_max, spaces, diffs)
}

/// The domain complex `D_k --A_k--> D_{k+1}` in graph Grams.
pub fn domain_complex(pair: &ComplexPair) -> BoundedComplex {
    let ks: Vec<i32> = pair.indices().collect();
    let spaces = ks.iter().map(|&k| (**pair.d(k)).clone()).collect();
    let diffs = ks.windows(2).map(|w| pair.a_lift(w[0])).collect();
    BoundedComplex::new(pair.k_min(), spaces, diffs)
}

/// The subcomplex on the trace kernels (domains with boundary conditions).
pub fn kernel_complex(pair: &ComplexPair, traces: &[TraceSystem], policy: &RankPolicy) -> (BoundedComplex, f64) {
    let mut worst: f64 = 0.0;
    let spaces = traces
        .iter()
        .map(|t| InnerProductSpace::new(t.ker_primal.transpose() * t.d.gram() * &t.ker_primal).expect("kernel Gram is SPD"))
        .collect();
    let diffs = traces
        .windows(2)
        .map(|w| {
            let image = pair.a_lift(w[0].k) * &w[0].ker_primal;
            let kn = &w[1].ker_primal;
            // Euclidean-orthonormal kernel basis: coordinates are K^T v.
            let c = kn.transpose() * &image;
            if image.ncols() > 0 && image.nrows() > 0 {
                worst = worst.max(relative_residual(&(kn * &c), &image));
            }
            let _ = policy;
            c
        })
        .collect();
    (BoundedComplex::new(pair.k_min(), spaces, diffs), worst)
}

/// Surface-level checks for the pair `(k, k+1)`.
pub fn surface_checks(
    pair: &ComplexPair,
    lower: &TraceSystem,
    upper: &TraceSystem,
    ops: &SurfaceOps,
    next: Option<&SurfaceOps>,
    tol: &Tolerances,
) -> Vec<Check> {
    let lv = Some(lower.k);
    let policy = tol.rank_policy();
    let gate = if pair.is_integer_instance() { tol.exact } else { tol.identity };
    let mut out = Vec::new();
    out.push(Check::bound("surface-well-defined-primal", lv, "surface-operator", ops.well_defined_t, tol.identity));
    out.push(Check::bound("surface-well-defined-dual", lv, "surface-operator", ops.well_defined_n, tol.identity));
    let t = Instant::now();
    let c = check_commuting(pair, lower, upper, ops);
    out.push(Check::bound("commuting-trace-primal", lv, "surface-commuting", c.trace_primal, gate).timed(t));
    out.push(Check::bound("commuting-trace-dual", lv, "surface-commuting", c.trace_dual, gate));
    out.push(Check::bound("commuting-quotient-pairing", lv, "surface-integration-by-parts", c.quotient_pairing, gate));
    out.push(Check::bound("commuting-duality-map", lv, "surface-duality", c.duality_map, gate));
    let t = Instant::now();
    out.push(Check::bound("key-containment", lv, "surface-range", key_containment(lower, upper, ops, &policy), tol.identity).timed(t));
    if let Some(n) = next {
        let st = composition_residual(&n.st, &ops.st);
        out.push(Check::bound("surface-square-primal", lv, "trace-complex-property", st, gate));
        let sn = composition_residual(&ops.sn, &n.sn);
        out.push(Check::bound("surface-square-dual", lv, "trace-complex-property", sn, gate));
        let dt = composition_residual(&n.dt_op, &ops.dt_op);
        let exact = if pair.is_integer_instance() { 0.0 } else { tol.identity };
        out.push(Check::bound("dual-surface-square", lv, "trace-complex-property", dt, exact));
    }
    out
}
