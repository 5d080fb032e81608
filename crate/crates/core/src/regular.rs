//! Regular decompositions of the domain models and the characterizations of
//! trace ranges through subspaces of extra regularity.
//!
//! The primal side at level `k` decomposes `Y = Dt_k` as `W+_Y + At_{k+1} W+_Z`
//! with `Z = Dt_{k+1}`; the dual side decomposes `Y = D_k` as `W+_Y + A_{k-1} W+_Z`
//! with `Z = D_{k-1}`. Regular subspaces are given in coordinates of the domain
//! model they live in and carry the Gram induced from it.
//!
//! Density hypotheses have no finite-dimensional content beyond spanning, so
//! they are checked as rank conditions and reported, never assumed.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complex::io::{IoError, MatrixJson};
use crate::complex::ComplexPair;
use crate::config::Tolerances;
use crate::exec::Execution;
use crate::linalg::{
    compare_spans, containment_residual, gram_orthonormalize, intersection, kernel_at_scale, kernel_of, orthogonal_projector,
    pseudo_inverse, range_of, rank, scaled_residual, singular_values, spectral_norm, InnerProductSpace, Mat, QuotientSpace, RankPolicy, Vector,
};
use crate::report::Check;
use crate::sampling;
use crate::surface::SurfaceOps;
use crate::trace::{Side, TraceSystem};

pub const REGULAR_SCHEMA: &str = "hilbert-regular/v1";

/// Number of random functionals used for sampled norm-equivalence constants.
pub const CHAR_SAMPLES: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularError {
    #[error("level {k} ({side:?}): W+ and its image span rank {rank} < {dim}; no regular decomposition")]
    NoDecomposition { k: i32, side: Side, rank: usize, dim: usize },
    #[error("level {k} ({side:?}): W+ basis has {rows} rows, the domain model has dimension {expected}")]
    Dimension { k: i32, side: Side, rows: usize, expected: usize },
}

/// A regular subspace of one domain model.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Wplus {
    #[default]
    Full,
    Zero,
    Basis(Mat),
}

impl Wplus {
    fn spanning_set(&self, n: usize) -> Mat {
        match self {
            Wplus::Full => Mat::identity(n, n),
            Wplus::Zero => Mat::zeros(n, 0),
            Wplus::Basis(b) => b.clone(),
        }
    }
}

/// Regular subspaces per side and level; absent entries are full spaces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegularSpec {
    /// Subspaces of `Dt_k`.
    pub primal: BTreeMap<i32, Wplus>,
    /// Subspaces of `D_k`.
    pub dual: BTreeMap<i32, Wplus>,
}

impl RegularSpec {
    pub fn full() -> Self {
        Self::default()
    }

    /// Every regular subspace of both sides is `{0}` on the given levels.
    pub fn zero(levels: impl IntoIterator<Item = i32>) -> Self {
        let mut s = Self::default();
        for k in levels {
            s.primal.insert(k, Wplus::Zero);
            s.dual.insert(k, Wplus::Zero);
        }
        s
    }

    pub fn get(&self, side: Side, k: i32) -> &Wplus {
        static FULL: Wplus = Wplus::Full;
        let map = match side {
            Side::Primal => &self.primal,
            Side::Dual => &self.dual,
        };
        map.get(&k).unwrap_or(&FULL)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WplusJson {
    level: i32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    basis: Option<MatrixJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegularJson {
    schema: String,
    #[serde(default)]
    primal: Vec<WplusJson>,
    #[serde(default)]
    dual: Vec<WplusJson>,
}

fn entries_to_json(map: &BTreeMap<i32, Wplus>) -> Vec<WplusJson> {
    map.iter()
        .map(|(&level, w)| match w {
            Wplus::Full => WplusJson { level, kind: "full".into(), basis: None },
            Wplus::Zero => WplusJson { level, kind: "zero".into(), basis: None },
            Wplus::Basis(b) => WplusJson { level, kind: "basis".into(), basis: Some(MatrixJson::encode(b)) },
        })
        .collect()
}

fn entries_from_json(entries: &[WplusJson]) -> Result<BTreeMap<i32, Wplus>, IoError> {
    let mut map = BTreeMap::new();
    for e in entries {
        let w = match (e.kind.as_str(), &e.basis) {
            ("full", None) => Wplus::Full,
            ("zero", None) => Wplus::Zero,
            ("basis", Some(m)) => Wplus::Basis(m.decode()?),
            (kind, _) => {
                return Err(IoError::Payload(format!("level {}: invalid regular entry kind {kind:?}", e.level)))
            }
        };
        if map.insert(e.level, w).is_some() {
            return Err(IoError::Payload(format!("level {} listed twice", e.level)));
        }
    }
    Ok(map)
}

impl RegularSpec {
    pub fn to_bytes(&self) -> Vec<u8> {
        let doc = RegularJson {
            schema: REGULAR_SCHEMA.into(),
            primal: entries_to_json(&self.primal),
            dual: entries_to_json(&self.dual),
        };
        let mut bytes = serde_json::to_vec_pretty(&doc).expect("serialisable");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        let doc: RegularJson = serde_json::from_slice(bytes)?;
        if doc.schema != REGULAR_SCHEMA {
            return Err(IoError::Schema { expected: REGULAR_SCHEMA.into(), found: doc.schema });
        }
        Ok(Self { primal: entries_from_json(&doc.primal)?, dual: entries_from_json(&doc.dual)? })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Spaces and operators entering one side of one level.
#[derive(Debug, Clone)]
pub struct SideModel {
    pub k: i32,
    pub side: Side,
    /// Level of `Z`.
    pub z_level: i32,
    pub y: Arc<InnerProductSpace>,
    pub z: Arc<InnerProductSpace>,
    /// `Z -> Y`: `At_{k+1}` lifted (primal) or `A_{k-1}` lifted (dual).
    pub d: Mat,
}

impl SideModel {
    pub fn new(pair: &ComplexPair, side: Side, k: i32) -> Self {
        match side {
            Side::Primal => Self {
                k,
                side,
                z_level: k + 1,
                y: pair.dt(k).clone(),
                z: pair.dt(k + 1).clone(),
                d: pair.at_lift(k + 1),
            },
            Side::Dual => Self {
                k,
                side,
                z_level: k - 1,
                y: pair.d(k).clone(),
                z: pair.d(k - 1).clone(),
                d: pair.a_lift(k - 1),
            },
        }
    }
}

fn orthonormal_columns(set: &Mat, n: usize, policy: &RankPolicy) -> Mat {
    if set.ncols() == 0 {
        return Mat::zeros(n, 0);
    }
    range_of(set, policy).basis
}

fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let mut m = Mat::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut(a.shape(), b.shape()).copy_from(b);
    m
}

fn hstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows());
    let mut m = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    m
}

fn vstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.ncols(), b.ncols());
    let mut m = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    m
}

fn gram_space(m: Mat) -> Arc<InnerProductSpace> {
    let sym = (&m + m.transpose()) * 0.5;
    Arc::new(InnerProductSpace::new(sym).expect("Gram of a full-rank basis is positive definite"))
}

fn relative(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `y = (L + d V) y` with `R(L) in W+_Y`, `R(V) in W+_Z` and minimal
/// `|L y|^2 + |V y|^2` in the induced norms.
#[derive(Debug, Clone)]
pub struct RegularDecomposition {
    pub model: SideModel,
    /// Euclidean-orthonormal basis of `W+_Y` in `Y` coordinates.
    pub wa: Mat,
    /// Euclidean-orthonormal basis of `W+_Z` in `Z` coordinates.
    pub wb: Mat,
    /// Induced Grams of the two regular subspaces.
    pub ha: Arc<InnerProductSpace>,
    pub hb: Arc<InnerProductSpace>,
    /// `Y -> Y`.
    pub lift: Mat,
    /// `Y -> Z`.
    pub pot: Mat,
    /// Coefficients of `L y` and `V y` in the bases `wa`, `wb`.
    pub coeffs: Mat,
    pub coverage_rank: usize,
    pub residual: f64,
    pub lift_range_residual: f64,
    pub pot_range_residual: f64,
    /// Operator norm of `y -> (L y, V y)`.
    pub stability: f64,
}

impl RegularDecomposition {
    pub fn build(pair: &ComplexPair, side: Side, k: i32, spec: &RegularSpec, policy: &RankPolicy) -> Result<Self, RegularError> {
        let model = SideModel::new(pair, side, k);
        let (ny, nz) = (model.y.dim(), model.z.dim());
        let sa = spec.get(side, k).spanning_set(ny);
        let sb = spec.get(side, model.z_level).spanning_set(nz);
        if sa.nrows() != ny {
            return Err(RegularError::Dimension { k, side, rows: sa.nrows(), expected: ny });
        }
        if sb.nrows() != nz {
            return Err(RegularError::Dimension { k: model.z_level, side, rows: sb.nrows(), expected: nz });
        }
        let wa = orthonormal_columns(&sa, ny, policy);
        let wb = orthonormal_columns(&sb, nz, policy);
        let (p, q) = (wa.ncols(), wb.ncols());
        let ha = gram_space(wa.transpose() * model.y.gram() * &wa);
        let hb = gram_space(wb.transpose() * model.z.gram() * &wb);
        let m = hstack(&wa, &(&model.d * &wb));
        let coverage_rank = if ny == 0 { 0 } else { rank(&m, policy) };
        if coverage_rank < ny {
            return Err(RegularError::NoDecomposition { k, side, rank: coverage_rank, dim: ny });
        }
        if ny == 0 {
            return Ok(Self {
                lift: Mat::zeros(0, 0),
                pot: Mat::zeros(nz, 0),
                coeffs: Mat::zeros(p + q, 0),
                model,
                wa,
                wb,
                ha,
                hb,
                coverage_rank,
                residual: 0.0,
                lift_range_residual: 0.0,
                pot_range_residual: 0.0,
                stability: 0.0,
            });
        }
        // Minimise c^T H c subject to M c = y through c = H^{-1/2} u.
        let h = gram_space(block_diag(ha.gram(), hb.gram()));
        let frame = h.orthonormal_frame();
        let coeffs = &frame * pseudo_inverse(&(&m * &frame), policy);
        let ca = coeffs.rows(0, p).into_owned();
        let cb = coeffs.rows(p, q).into_owned();
        let lift = &wa * ca;
        let pot = &wb * cb;
        let id = Mat::identity(ny, ny);
        let residual = spectral_norm(&(&lift + &model.d * &pot - &id));
        let lift_range_residual = relative(spectral_norm(&(&lift - &wa * (wa.transpose() * &lift))), spectral_norm(&lift));
        let pot_range_residual = relative(spectral_norm(&(&pot - &wb * (wb.transpose() * &pot))), spectral_norm(&pot));
        let stability = spectral_norm(&(h.cholesky_l().transpose() * &coeffs * model.y.orthonormal_frame()));
        Ok(Self {
            model,
            wa,
            wb,
            ha,
            hb,
            lift,
            pot,
            coeffs,
            coverage_rank,
            residual,
            lift_range_residual,
            pot_range_residual,
            stability,
        })
    }

    pub fn k(&self) -> i32 {
        self.model.k
    }

    pub fn side(&self) -> Side {
        self.model.side
    }

    /// `M = [wa, d wb]`; its transpose maps `Y'` into `W- x W-`.
    pub fn coverage_matrix(&self) -> Mat {
        hstack(&self.wa, &(&self.model.d * &self.wb))
    }
}

/// The surface operator extended from `Y'` to functionals on `W+_Y` only,
/// acting into the dual of `W+_Z(d) = { z in W+_Z : d z in W+_Y }`.
#[derive(Debug, Clone)]
pub struct SurfaceExtension {
    /// `W+_Z(d)` in `wb` coefficients (`q x r`, Euclidean orthonormal).
    pub n: Mat,
    /// `wa Q = d wb N`.
    pub q: Mat,
    /// The extension `W-_Y -> W+_Z(d)'`, i.e. `Q^T`.
    pub matrix: Mat,
    pub solve_residual: f64,
    /// Agreement with the original surface operator on restricted functionals.
    pub consistency: f64,
    /// Norm of the extension in the `W-` norm and the graph norm of `W+_Z(d)`.
    pub continuity: f64,
    /// `W+_Z(d) = W+_Z`, the finite shadow of the graph-space density hypothesis.
    pub graph_dense: bool,
}

impl SurfaceExtension {
    /// `op` is the original surface operator `Y' -> Z'`.
    pub fn build(reg: &RegularDecomposition, op: &Mat, policy: &RankPolicy) -> Self {
        let (p, q) = (reg.wa.ncols(), reg.wb.ncols());
        let dwb = &reg.model.d * &reg.wb;
        let n = if q == 0 {
            Mat::zeros(0, 0)
        } else if p == 0 {
            kernel_of(&dwb, policy).kernel
        } else {
            let ny = reg.model.y.dim();
            let comp = Mat::identity(ny, ny) - orthogonal_projector(&reg.model.y, &reg.wa);
            kernel_at_scale(&(comp * &dwb), policy, spectral_norm(&dwb)).kernel
        };
        let r = n.ncols();
        let target = &dwb * &n;
        let qm = reg.wa.transpose() * &target;
        let solve_residual = relative((&reg.wa * &qm - &target).norm(), target.norm());
        let matrix = qm.transpose();
        let original = n.transpose() * reg.wb.transpose() * op;
        let restricted = &matrix * reg.wa.transpose();
        let consistency = relative((&restricted - &original).norm(), op.norm().max(original.norm()));
        let continuity = if r == 0 || p == 0 {
            0.0
        } else {
            let hz = gram_space(n.transpose() * reg.hb.gram() * &n + qm.transpose() * reg.ha.gram() * &qm);
            spectral_norm(&(reg.ha.cholesky_l().transpose() * &qm * hz.orthonormal_frame()))
        };
        Self { graph_dense: r == q, n, q: qm, matrix, solve_residual, consistency, continuity }
    }
}

/// `Y' = W-_Y(D)`: the map `J = M^T` against the compatibility description.
#[derive(Debug, Clone)]
pub struct DualCharacterization {
    pub injective: bool,
    /// Mutual projection residual of `R(J)` and `ker [-Q^T, N^T]`.
    pub set_residual: f64,
    pub dims_equal: bool,
    /// Exact norm-equivalence constants.
    pub exact_min: f64,
    pub exact_max: f64,
    /// Sampled ratios `|J phi| / |phi|`.
    pub sampled_min: f64,
    pub sampled_max: f64,
}

pub fn dual_characterization(
    reg: &RegularDecomposition,
    ext: &SurfaceExtension,
    policy: &RankPolicy,
    seed: u64,
    exec: Execution,
) -> DualCharacterization {
    let ny = reg.model.y.dim();
    let (p, q) = (reg.wa.ncols(), reg.wb.ncols());
    if ny == 0 {
        return DualCharacterization {
            injective: true,
            set_residual: 0.0,
            dims_equal: true,
            exact_min: 0.0,
            exact_max: 0.0,
            sampled_min: 0.0,
            sampled_max: 0.0,
        };
    }
    let j = reg.coverage_matrix().transpose();
    let compat = hstack(&(-ext.q.transpose()), &ext.n.transpose());
    let model = if compat.nrows() == 0 { Mat::identity(p + q, p + q) } else { kernel_of(&compat, policy).kernel };
    let cmp = compare_spans(&j, &model, policy);
    let injective = rank(&j, policy) == ny;

    let h = gram_space(block_diag(reg.ha.gram(), reg.hb.gram()));
    let ly = reg.model.y.cholesky_l();
    let op = h.cholesky_l().solve_lower_triangular(&(&j * &ly)).expect("positive diagonal");
    let sv = singular_values(&op);
    let exact_max = sv.first().copied().unwrap_or(0.0);
    let exact_min = if sv.len() < ny { 0.0 } else { sv.last().copied().unwrap_or(0.0) };

    let stream = sampling::stream_id(&format!("dual-characterization-{:?}", reg.side()), reg.k());
    let blocks = sampling::blocks(CHAR_SAMPLES);
    let ratios = exec.map(blocks.len(), |bi| {
        let w = sampling::gaussian_block(ny, blocks[bi], seed, stream, bi as u64);
        let phi = &ly * &w;
        let jp = &j * &phi;
        let mut out = Vec::with_capacity(w.ncols());
        for c in 0..w.ncols() {
            let num = h.dual_norm(&jp.column(c).into_owned());
            let den = reg.model.y.dual_norm(&phi.column(c).into_owned());
            out.push(num / den);
        }
        out
    });
    let ratios: Vec<f64> = ratios.into_iter().flatten().collect();
    let sampled_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let sampled_max = ratios.iter().copied().fold(0.0, f64::max);
    DualCharacterization {
        injective,
        set_residual: cmp.residual(),
        dims_equal: cmp.dim_a == cmp.dim_b,
        exact_min,
        exact_max,
        sampled_min,
        sampled_max,
    }
}

/// Regular kernels, regular quotients and the hatted operators of one side.
#[derive(Debug, Clone)]
pub struct RegularQuotients {
    /// `W+_Y` intersected with the trace kernel of `Y` (in `Y` coordinates).
    pub wnot_a: Mat,
    /// `W+_Z` intersected with the trace kernel of `Z`.
    pub wnot_b: Mat,
    /// `W+_Y / wnot_a` and `W+_Z / wnot_b` in basis coefficients.
    pub t_plus_a: QuotientSpace,
    pub t_plus_b: QuotientSpace,
    /// `T+_Z -> trace space of Y`.
    pub shat: Mat,
    /// Dual of `shat`.
    pub dhat: Mat,
    pub spanning_a: bool,
    pub spanning_b: bool,
    pub spanning_residual: f64,
    /// `shat` against the surface operator composed with the embedding of `T+_Z`.
    pub shat_consistency: f64,
    /// `dhat` against the restricted original surface operator.
    pub dhat_consistency: f64,
}

fn trace_kernel(ts: &TraceSystem, side: Side) -> (&Mat, &QuotientSpace) {
    // The primal regular side lives in `Dt`, whose trace kernel is the dual one.
    match side {
        Side::Primal => (&ts.ker_dual, &ts.q_dual),
        Side::Dual => (&ts.ker_primal, &ts.q_primal),
    }
}

fn regular_kernel(space: &InnerProductSpace, w: &Mat, ker: &Mat, policy: &RankPolicy) -> Mat {
    if space.dim() == 0 {
        return Mat::zeros(0, 0);
    }
    intersection(space, w, ker, policy)
}

impl RegularQuotients {
    /// `op` is the original surface operator `Y' -> Z'`; `sop` the quotient
    /// surface operator from the trace space of `Z` into that of `Y`.
    pub fn build(
        reg: &RegularDecomposition,
        ts_y: &TraceSystem,
        ts_z: &TraceSystem,
        op: &Mat,
        sop: &Mat,
        tol: &Tolerances,
    ) -> Self {
        let policy = tol.rank_policy();
        let side = reg.side();
        let (ker_y, q_y) = trace_kernel(ts_y, side);
        let (ker_z, q_z) = trace_kernel(ts_z, side);
        let wnot_a = regular_kernel(&reg.model.y, &reg.wa, ker_y, &policy);
        let wnot_b = regular_kernel(&reg.model.z, &reg.wb, ker_z, &policy);
        let omega_a = reg.wa.transpose() * &wnot_a;
        let omega_b = reg.wb.transpose() * &wnot_b;
        let t_plus_a = QuotientSpace::orthogonal(reg.ha.clone(), omega_a, &policy);
        let t_plus_b = QuotientSpace::orthogonal(reg.hb.clone(), omega_b, &policy);
        let cmp_a = compare_spans(&wnot_a, ker_y, &policy);
        let cmp_b = compare_spans(&wnot_b, ker_z, &policy);
        let spanning_a = cmp_a.equal(tol.identity);
        let spanning_b = cmp_b.equal(tol.identity);

        let emb_z = &reg.wb * t_plus_b.reps();
        let shat = q_y.coords() * &reg.model.d * &emb_z;
        let via_sop = sop * (q_z.coords() * &emb_z);
        // Both sides may cancel to roundoff; measure against the factor sizes.
        let scale = q_y.coords().norm() * reg.model.d.norm() * emb_z.norm()
            + sop.norm() * q_z.coords().norm() * emb_z.norm();
        let shat_consistency = scaled_residual(&shat, &via_sop, scale);
        let dhat = shat.transpose();
        let restricted = emb_z.transpose() * op * q_y.coords().transpose();
        let dhat_consistency = scaled_residual(&dhat, &restricted, scale + emb_z.norm() * op.norm() * q_y.coords().norm());
        Self {
            wnot_a,
            wnot_b,
            t_plus_a,
            t_plus_b,
            shat,
            dhat,
            spanning_a,
            spanning_b,
            spanning_residual: cmp_a.residual(),
            shat_consistency,
            dhat_consistency,
        }
    }
}

/// Range of the trace against its two regular characterizations and the
/// quotient reformulation.
#[derive(Debug, Clone)]
pub struct RangeCharacterization {
    pub range_dim: usize,
    /// `J R(T)` against `W-(D)` intersected with the annihilator of `wnot_a`.
    pub first_residual: f64,
    pub first_dims_equal: bool,
    /// `R(T)` against the annihilator of `wnot_a + d wnot_b` in `Y'`.
    pub iterated_residual: f64,
    pub iterated_dims_equal: bool,
    /// Canonical map into `T-_Y x T-_Z`: containment in the model set.
    pub quotient_containment: f64,
    pub quotient_dim: usize,
    pub quotient_rank: usize,
    pub quotient_min_sv: f64,
    pub quotient_max_sv: f64,
}

impl RangeCharacterization {
    pub fn first_holds(&self, tol: f64) -> bool {
        self.first_dims_equal && self.first_residual <= tol
    }

    pub fn iterated_holds(&self, tol: f64) -> bool {
        self.iterated_dims_equal && self.iterated_residual <= tol
    }

    pub fn quotient_bijective(&self, tol: f64) -> bool {
        self.quotient_dim == self.range_dim && self.quotient_rank == self.range_dim && self.quotient_containment <= tol
    }
}

pub fn range_characterization(
    reg: &RegularDecomposition,
    ext: &SurfaceExtension,
    rq: &RegularQuotients,
    ts_y: &TraceSystem,
    policy: &RankPolicy,
) -> RangeCharacterization {
    let ny = reg.model.y.dim();
    let (p, q) = (reg.wa.ncols(), reg.wb.ncols());
    // Primal regular side: R(T^t) in Dt'. Dual regular side: R(T^n) in D'.
    let t = ts_y.trace_matrix(reg.side());
    let range = if ny == 0 { Mat::zeros(0, 0) } else { range_of(&t, policy).basis };
    let range_dim = range.ncols();

    let j = reg.coverage_matrix().transpose();
    let omega_a = reg.wa.transpose() * &rq.wnot_a;
    let compat = hstack(&(-ext.q.transpose()), &ext.n.transpose());
    let ann = hstack(&omega_a.transpose(), &Mat::zeros(omega_a.ncols(), q));
    let constraints = vstack(&compat, &ann);
    let model = if constraints.nrows() == 0 {
        Mat::identity(p + q, p + q)
    } else {
        kernel_of(&constraints, policy).kernel
    };
    let first = compare_spans(&(&j * &range), &model, policy);

    let spanning = hstack(&rq.wnot_a, &(&reg.model.d * &rq.wnot_b));
    let iterated_model = if ny == 0 {
        Mat::zeros(0, 0)
    } else if spanning.ncols() == 0 {
        Mat::identity(ny, ny)
    } else {
        kernel_of(&spanning.transpose(), policy).kernel
    };
    let iterated = compare_spans(&range, &iterated_model, policy);

    // Quotient duals: a functional vanishing on wnot is identified with its
    // values on the representatives, and recovered as coords^T u.
    let ra = rq.t_plus_a.reps();
    let rb = rq.t_plus_b.reps();
    let (ma, mb) = (ra.ncols(), rb.ncols());
    let phi_map = vstack(&(ra.transpose() * reg.wa.transpose()), &(rb.transpose() * reg.wb.transpose() * reg.model.d.transpose()));
    let ker_m = if p + q == 0 { Mat::zeros(0, 0) } else { kernel_of(&reg.coverage_matrix(), policy).kernel };
    let lifted = block_diag(&rq.t_plus_a.coords().transpose(), &rq.t_plus_b.coords().transpose());
    let sigma = if ma + mb == 0 {
        Mat::zeros(0, 0)
    } else if ker_m.ncols() == 0 {
        Mat::identity(ma + mb, ma + mb)
    } else {
        kernel_of(&(ker_m.transpose() * &lifted), policy).kernel
    };
    let (quotient_containment, quotient_rank, quotient_min_sv, quotient_max_sv) = if range_dim == 0 {
        (0.0, 0, 0.0, 0.0)
    } else {
        let dual_gram = InnerProductSpace::new({
            let inv = reg.model.y.solve(&Mat::identity(ny, ny));
            (&inv + inv.transpose()) * 0.5
        })
        .expect("inverse of a Gram is a Gram");
        let on = gram_orthonormalize(&dual_gram, &range);
        let image = &phi_map * &on;
        let containment = containment_residual(&image, &sigma, policy);
        let r = rank(&image, policy);
        let coords = sigma.transpose() * &image;
        let sv = singular_values(&coords);
        let min = if sv.len() < range_dim { 0.0 } else { sv.last().copied().unwrap_or(0.0) };
        (containment, r, min, sv.first().copied().unwrap_or(0.0))
    };
    RangeCharacterization {
        range_dim,
        first_residual: first.residual(),
        first_dims_equal: first.dim_a == first.dim_b,
        iterated_residual: iterated.residual(),
        iterated_dims_equal: iterated.dim_a == iterated.dim_b,
        quotient_containment,
        quotient_dim: sigma.ncols(),
        quotient_rank,
        quotient_min_sv,
        quotient_max_sv,
    }
}

/// `phi = T L x + T d V x = xi - D zeta` for the trace of a harmonic extension `x`.
#[derive(Debug, Clone)]
pub struct TraceDecomposition {
    pub xi: Vector,
    pub zeta: Vector,
    pub residual: f64,
}

/// Decomposes a trace-range functional of `Y` through the regular
/// decomposition. `op_zy` maps trace functionals of `Z` to those of `Y`
/// (`D^t_{k-1}` for the dual regular side, `D^n_k` for the primal one).
pub fn decompose_trace(
    reg: &RegularDecomposition,
    ts_y: &TraceSystem,
    ts_z: &TraceSystem,
    op_zy: &Mat,
    phi: &Vector,
    tol: f64,
) -> Result<TraceDecomposition, crate::trace::TraceError> {
    // The trace acting on Y: Y = D_k carries T^t, Y = Dt_k carries T^n.
    let side = match reg.side() {
        Side::Dual => Side::Primal,
        Side::Primal => Side::Dual,
    };
    let x = ts_y.min_norm_extension(side, phi, tol)?;
    let xi = ts_y.trace_matrix(side) * (&reg.lift * &x);
    let zeta = ts_z.trace_matrix(side) * (&reg.pot * &x);
    let recon = &xi - op_zy * &zeta;
    let scale = ts_y.target(side).dual_norm(phi);
    let err = ts_y.target(side).dual_norm(&(recon - phi));
    Ok(TraceDecomposition { xi, zeta, residual: relative(err, scale) })
}

/// Everything computed for one side of one level.
#[derive(Debug, Clone)]
pub struct RegularLevel {
    pub decomposition: RegularDecomposition,
    pub extension: SurfaceExtension,
    pub quotients: RegularQuotients,
    pub dual_char: DualCharacterization,
    pub range_char: RangeCharacterization,
}

/// Trace systems and surface operators needed around one side of one level.
struct Neighbourhood {
    ts_y: TraceSystem,
    ts_z: TraceSystem,
    ops: SurfaceOps,
}

impl Neighbourhood {
    /// Surface operator on functionals `Y' -> Z'`.
    fn op(&self, side: Side) -> &Mat {
        match side {
            Side::Primal => &self.ops.dt_op,
            Side::Dual => &self.ops.dn_op,
        }
    }

    /// Quotient surface operator, trace space of `Z` into that of `Y`.
    fn sop(&self, side: Side) -> &Mat {
        match side {
            Side::Primal => &self.ops.sn,
            Side::Dual => &self.ops.st,
        }
    }

    /// Surface operator carrying trace functionals of `Z` into those of `Y`.
    fn op_zy(&self, side: Side) -> &Mat {
        match side {
            Side::Primal => &self.ops.dn_op,
            Side::Dual => &self.ops.dt_op,
        }
    }
}

fn neighbourhood(pair: &ComplexPair, side: Side, k: i32, traces: &[TraceSystem], policy: &RankPolicy) -> Neighbourhood {
    let fetch = |level: i32| {
        traces
            .iter()
            .find(|t| t.k == level)
            .cloned()
            .unwrap_or_else(|| TraceSystem::assemble(pair, level, policy))
    };
    let ts_y = fetch(k);
    match side {
        Side::Primal => {
            let ts_z = fetch(k + 1);
            let ops = SurfaceOps::build(pair, &ts_y, &ts_z);
            Neighbourhood { ts_y, ts_z, ops }
        }
        Side::Dual => {
            let ts_z = fetch(k - 1);
            let ops = SurfaceOps::build(pair, &ts_z, &ts_y);
            Neighbourhood { ts_y, ts_z, ops }
        }
    }
}

impl RegularLevel {
    pub fn analyse(
        pair: &ComplexPair,
        side: Side,
        k: i32,
        spec: &RegularSpec,
        traces: &[TraceSystem],
        tol: &Tolerances,
        seed: u64,
        exec: Execution,
    ) -> Result<Self, RegularError> {
        let policy = tol.rank_policy();
        let decomposition = RegularDecomposition::build(pair, side, k, spec, &policy)?;
        let nb = neighbourhood(pair, side, k, traces, &policy);
        let extension = SurfaceExtension::build(&decomposition, nb.op(side), &policy);
        let quotients = RegularQuotients::build(&decomposition, &nb.ts_y, &nb.ts_z, nb.op(side), nb.sop(side), tol);
        let dual_char = dual_characterization(&decomposition, &extension, &policy, seed, exec);
        let range_char = range_characterization(&decomposition, &extension, &quotients, &nb.ts_y, &policy);
        Ok(Self { decomposition, extension, quotients, dual_char, range_char })
    }
}

fn side_suffix(side: Side) -> &'static str {
    match side {
        Side::Primal => "primal",
        Side::Dual => "dual",
    }
}

/// Sampled decomposition of trace functionals through the regular
/// decomposition on the side whose domain carries the trace.
fn trace_decomposition_residual(
    pair: &ComplexPair,
    reg: &RegularDecomposition,
    traces: &[TraceSystem],
    tol: &Tolerances,
    seed: u64,
) -> Result<f64, crate::trace::TraceError> {
    let policy = tol.rank_policy();
    let k = reg.k();
    let nb = neighbourhood(pair, reg.side(), k, traces, &policy);
    // The trace of Y: T^t for the dual regular side, T^n for the primal one.
    let trace_side = match reg.side() {
        Side::Dual => Side::Primal,
        Side::Primal => Side::Dual,
    };
    let op_zy = nb.op_zy(reg.side());
    let n = nb.ts_y.space(trace_side).dim();
    if n == 0 || nb.ts_y.rank == 0 {
        return Ok(0.0);
    }
    let stream = sampling::stream_id(&format!("trace-decomposition-{}", side_suffix(reg.side())), k);
    let xs = sampling::gaussian_block(n, 16, seed, stream, 0);
    let t = nb.ts_y.trace_matrix(trace_side);
    let mut worst: f64 = 0.0;
    for c in 0..xs.ncols() {
        let phi = &t * xs.column(c);
        let dec = decompose_trace(reg, &nb.ts_y, &nb.ts_z, op_zy, &phi, tol.extension)?;
        worst = worst.max(dec.residual);
    }
    Ok(worst)
}

/// Checks of the regular-decomposition machinery on every level and side.
pub fn regular_checks(
    pair: &ComplexPair,
    spec: &RegularSpec,
    traces: &[TraceSystem],
    tol: &Tolerances,
    seed: u64,
    exec: Execution,
) -> Vec<Check> {
    let mut out = Vec::new();
    let ks: Vec<i32> = pair.indices().collect();
    let jobs: Vec<(Side, i32)> = [Side::Primal, Side::Dual].iter().flat_map(|&s| ks.iter().map(move |&k| (s, k))).collect();
    let results = exec.map_slice(&jobs, |&(side, k)| {
        let t = Instant::now();
        let analysed = RegularLevel::analyse(pair, side, k, spec, traces, tol, seed, Execution::Sequential);
        (side, k, analysed, t)
    });
    for (side, k, analysed, t) in results {
        let sfx = side_suffix(side);
        let lv = Some(k);
        let lvl = match analysed {
            Ok(l) => l,
            Err(e) => {
                out.push(
                    Check::verdict(&format!("regular-decomposition-{sfx}"), lv, "regular-decomposition", false, 1.0)
                        .with_detail(e.to_string())
                        .timed(t),
                );
                continue;
            }
        };
        let dec = &lvl.decomposition;
        out.push(
            Check::bound(&format!("regular-decomposition-{sfx}"), lv, "regular-decomposition", dec.residual, tol.identity)
                .with_detail(format!("coverage rank {} of {}", dec.coverage_rank, dec.model.y.dim()))
                .timed(t),
        );
        out.push(Check::bound(
            &format!("regular-ranges-{sfx}"),
            lv,
            "regular-decomposition",
            dec.lift_range_residual.max(dec.pot_range_residual),
            tol.identity,
        ));
        out.push(Check::info(&format!("regular-stability-{sfx}"), lv, "regular-decomposition", dec.stability));

        let ext = &lvl.extension;
        out.push(Check::bound(
            &format!("extension-consistency-{sfx}"),
            lv,
            "surface-extension",
            ext.consistency.max(ext.solve_residual),
            tol.identity,
        ));
        out.push(
            Check::bound(&format!("extension-continuity-{sfx}"), lv, "surface-extension", ext.continuity, 1.0 + tol.norm_slack)
                .with_detail(format!("graph space dense: {}", ext.graph_dense)),
        );

        let dc = &lvl.dual_char;
        out.push(Check::verdict(
            &format!("dual-characterization-{sfx}"),
            lv,
            "dual-space-characterization",
            dc.injective && dc.dims_equal && dc.set_residual <= tol.identity,
            dc.set_residual,
        ));
        let slack = 1e-10 * dc.exact_max.max(1.0);
        let within = dc.sampled_min >= dc.exact_min - slack && dc.sampled_max <= dc.exact_max + slack;
        out.push(
            Check::verdict(&format!("dual-characterization-constants-{sfx}"), lv, "dual-space-characterization", within, dc.sampled_max)
                .with_detail(format!(
                    "sampled [{:.6e}, {:.6e}] within exact [{:.6e}, {:.6e}]",
                    dc.sampled_min, dc.sampled_max, dc.exact_min, dc.exact_max
                )),
        );

        let rq = &lvl.quotients;
        out.push(Check::bound(
            &format!("hat-operator-consistency-{sfx}"),
            lv,
            "regular-quotient",
            rq.shat_consistency.max(rq.dhat_consistency),
            tol.identity,
        ));
        let rc = &lvl.range_char;
        let pre = format!(
            "spanning precondition {} (residual {:.3e}), next level {}",
            rq.spanning_a, rq.spanning_residual, rq.spanning_b
        );
        if rq.spanning_a {
            out.push(
                Check::verdict(
                    &format!("range-characterization-{sfx}"),
                    lv,
                    "trace-range-characterization",
                    rc.first_holds(tol.identity),
                    rc.first_residual,
                )
                .with_detail(pre.clone()),
            );
            out.push(Check::verdict(
                &format!("range-characterization-iterated-{sfx}"),
                lv,
                "trace-range-characterization",
                rc.iterated_holds(tol.identity),
                rc.iterated_residual,
            ));
            out.push(
                Check::verdict(
                    &format!("quotient-characterization-{sfx}"),
                    lv,
                    "trace-range-quotient",
                    rc.quotient_bijective(tol.identity),
                    rc.quotient_containment,
                )
                .with_detail(format!(
                    "dim range {}, dim model {}, rank {}, singular values [{:.6e}, {:.6e}]",
                    rc.range_dim, rc.quotient_dim, rc.quotient_rank, rc.quotient_min_sv, rc.quotient_max_sv
                )),
            );
        } else {
            out.push(
                Check::info(&format!("range-characterization-{sfx}"), lv, "trace-range-characterization", rc.first_residual)
                    .with_detail(format!("spanning failure, characterization not applicable: {pre}")),
            );
        }
        match trace_decomposition_residual(pair, dec, traces, tol, seed) {
            Ok(r) => out.push(Check::bound(&format!("trace-decomposition-{sfx}"), lv, "trace-space-decomposition", r, tol.extension)),
            Err(e) => out.push(
                Check::verdict(&format!("trace-decomposition-{sfx}"), lv, "trace-space-decomposition", false, 1.0)
                    .with_detail(e.to_string()),
            ),
        }
    }
    out.push(Check::info("compactness", None, "trace-compactness", 1.0).with_detail(
        "finite-dimensional spaces: every inclusion is compact, the compactness conclusions hold trivially",
    ));
    out
}
