//! Finite-dimensional complex pairs: spaces `W_k`, domain models `D_k` and
//! `Dt_k` carried by graph Grams, inclusions into `W`, the operators `A_k`
//! and `At_k`, and the pairings `b_k`.

pub mod io;

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::config::Tolerances;
use crate::exec::Execution;
use crate::linalg::{
    max_abs, pseudo_inverse, rank, relative_residual, InnerProductSpace, LinalgError, Mat,
    Vector,
};
use crate::report::Check;
use crate::sampling;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplexError {
    #[error("level {k}: field {field}: {msg}")]
    Structure { k: i32, field: String, msg: String },
    #[error("level {k}: Gram of {space}: {source}")]
    Gram {
        k: i32,
        space: &'static str,
        #[source]
        source: LinalgError,
    },
    #[error("level {k}: image is not in the next domain model (residual {residual:e} > {tol:e})")]
    NotInDomain { k: i32, residual: f64, tol: f64 },
    #[error("level {0} is outside the complex")]
    OutOfRange(i32),
}

/// One level of a complex pair.
///
/// Shapes: `inj_d: W_k x D_k`, `inj_dt: W_{k+1} x Dt_k`, `a: W_{k+1} x D_k`,
/// `at: W_k x Dt_k`. Optional lifts express `A_k` in `D_{k+1}` and `At_k` in
/// `Dt_{k-1}` coordinates.
#[derive(Debug, Clone)]
pub struct ComplexLevel {
    pub k: i32,
    pub w: Arc<InnerProductSpace>,
    pub d: Arc<InnerProductSpace>,
    pub dt: Arc<InnerProductSpace>,
    pub inj_d: Mat,
    pub inj_dt: Mat,
    pub a: Mat,
    pub at: Mat,
    pub a_lift: Option<Mat>,
    pub at_lift: Option<Mat>,
    /// Indices of `D_k` basis functions carrying no boundary degrees of freedom.
    pub interior_d: Option<Vec<usize>>,
    pub interior_dt: Option<Vec<usize>>,
}

impl ComplexLevel {
    /// Level whose domain-model Grams are the graph Grams of the given data.
    #[allow(clippy::too_many_arguments)]
    pub fn with_graph_grams(
        k: i32,
        w: Arc<InnerProductSpace>,
        w_next: &InnerProductSpace,
        inj_d: Mat,
        inj_dt: Mat,
        a: Mat,
        at: Mat,
    ) -> Result<Self, ComplexError> {
        let gd = graph_gram(&inj_d, w.gram(), &a, w_next.gram());
        let gdt = graph_gram(&inj_dt, w_next.gram(), &at, w.gram());
        let d = InnerProductSpace::new(gd)
            .map_err(|source| ComplexError::Gram { k, space: "D", source })?;
        let dt = InnerProductSpace::new(gdt)
            .map_err(|source| ComplexError::Gram { k, space: "Dt", source })?;
        Ok(Self {
            k,
            w,
            d: Arc::new(d),
            dt: Arc::new(dt),
            inj_d,
            inj_dt,
            a,
            at,
            a_lift: None,
            at_lift: None,
            interior_d: None,
            interior_dt: None,
        })
    }
}

/// `inj^T G_0 inj + op^T G_1 op`, symmetrised.
pub fn graph_gram(inj: &Mat, g0: &Mat, op: &Mat, g1: &Mat) -> Mat {
    let m = inj.transpose() * (g0 * inj) + op.transpose() * (g1 * op);
    (&m + m.transpose()) * 0.5
}

/// Lifted operators and their consistency residuals.
#[derive(Debug, Clone)]
pub struct Lifts {
    /// `A_k` in `D_{k+1}` coordinates.
    pub a: Mat,
    pub a_residual: f64,
    pub a_supplied: bool,
    /// `At_k` in `Dt_{k-1}` coordinates.
    pub at: Mat,
    pub at_residual: f64,
    pub at_supplied: bool,
}

#[derive(Debug, Clone)]
pub struct ComplexPair {
    pub label: String,
    pub meta: serde_json::Map<String, serde_json::Value>,
    levels: Vec<ComplexLevel>,
    lifts: Vec<Lifts>,
    zero: Arc<InnerProductSpace>,
}

impl ComplexPair {
    pub fn new(
        label: impl Into<String>,
        levels: Vec<ComplexLevel>,
        meta: serde_json::Map<String, serde_json::Value>,
    ) -> Result<Self, ComplexError> {
        let mut pair = Self {
            label: label.into(),
            meta,
            levels,
            lifts: vec![],
            zero: Arc::new(InnerProductSpace::euclidean(0)),
        };
        pair.check_structure()?;
        pair.lifts = (0..pair.levels.len()).map(|i| pair.compute_lifts(i)).collect();
        Ok(pair)
    }

    /// The complex with every space zero at levels `k_min..=k_max`.
    pub fn zero(k_min: i32, k_max: i32) -> Self {
        let z = Arc::new(InnerProductSpace::euclidean(0));
        let levels = (k_min..=k_max)
            .map(|k| ComplexLevel {
                k,
                w: z.clone(),
                d: z.clone(),
                dt: z.clone(),
                inj_d: Mat::zeros(0, 0),
                inj_dt: Mat::zeros(0, 0),
                a: Mat::zeros(0, 0),
                at: Mat::zeros(0, 0),
                a_lift: None,
                at_lift: None,
                interior_d: None,
                interior_dt: None,
            })
            .collect();
        Self::new("zero", levels, Default::default()).expect("zero complex is consistent")
    }

    pub fn levels(&self) -> &[ComplexLevel] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<ComplexLevel> {
        self.levels
    }

    pub fn k_min(&self) -> i32 {
        self.levels.first().map_or(0, |l| l.k)
    }

    pub fn k_max(&self) -> i32 {
        self.levels.last().map_or(-1, |l| l.k)
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i32> {
        self.k_min()..=self.k_max()
    }

    fn idx(&self, k: i32) -> Option<usize> {
        if self.levels.is_empty() || k < self.k_min() || k > self.k_max() {
            None
        } else {
            Some((k - self.k_min()) as usize)
        }
    }

    pub fn level(&self, k: i32) -> Result<&ComplexLevel, ComplexError> {
        self.idx(k).map(|i| &self.levels[i]).ok_or(ComplexError::OutOfRange(k))
    }

    pub fn lifts(&self, k: i32) -> Result<&Lifts, ComplexError> {
        self.idx(k).map(|i| &self.lifts[i]).ok_or(ComplexError::OutOfRange(k))
    }

    /// `W_k`, zero outside the range.
    pub fn w(&self, k: i32) -> &Arc<InnerProductSpace> {
        self.idx(k).map_or(&self.zero, |i| &self.levels[i].w)
    }

    pub fn d(&self, k: i32) -> &Arc<InnerProductSpace> {
        self.idx(k).map_or(&self.zero, |i| &self.levels[i].d)
    }

    pub fn dt(&self, k: i32) -> &Arc<InnerProductSpace> {
        self.idx(k).map_or(&self.zero, |i| &self.levels[i].dt)
    }

    /// `A_k` lifted into `D_{k+1}`; zero matrices outside the range.
    pub fn a_lift(&self, k: i32) -> Mat {
        match self.idx(k) {
            Some(i) => self.lifts[i].a.clone(),
            None => Mat::zeros(self.d(k + 1).dim(), self.d(k).dim()),
        }
    }

    /// `At_k` lifted into `Dt_{k-1}`; zero matrices outside the range.
    pub fn at_lift(&self, k: i32) -> Mat {
        match self.idx(k) {
            Some(i) => self.lifts[i].at.clone(),
            None => Mat::zeros(self.dt(k - 1).dim(), self.dt(k).dim()),
        }
    }

    /// Pairing matrix `B_k = A^T G_{W_{k+1}} inj_Dt - inj_D^T G_{W_k} At`.
    pub fn pairing(&self, k: i32) -> Mat {
        let Some(i) = self.idx(k) else {
            return Mat::zeros(self.d(k).dim(), self.dt(k).dim());
        };
        let l = &self.levels[i];
        let w_next = self.w(k + 1);
        let first = if w_next.dim() == 0 {
            Mat::zeros(l.d.dim(), l.dt.dim())
        } else {
            l.a.transpose() * (w_next.gram() * &l.inj_dt)
        };
        let second = if l.w.dim() == 0 {
            Mat::zeros(l.d.dim(), l.dt.dim())
        } else {
            l.inj_d.transpose() * (l.w.gram() * &l.at)
        };
        first - second
    }

    /// Coordinates of `A_k x` in `D_{k+1}`.
    pub fn range_lift(&self, k: i32, x: &Vector, tol: f64) -> Result<Vector, ComplexError> {
        let l = self.level(k)?;
        if x.len() != l.d.dim() {
            return Err(ComplexError::Structure {
                k,
                field: "x".into(),
                msg: format!("length {} != dim D {}", x.len(), l.d.dim()),
            });
        }
        let c = self.a_lift(k) * x;
        let ax = &l.a * x;
        let inj_next = self.inj_d(k + 1);
        let back = if inj_next.ncols() == 0 { Vector::zeros(ax.len()) } else { inj_next * &c };
        let scale = ax.norm();
        let residual = if scale == 0.0 { (&back - &ax).norm() } else { (&back - &ax).norm() / scale };
        if residual > tol {
            return Err(ComplexError::NotInDomain { k, residual, tol });
        }
        Ok(c)
    }

    /// `inj_D` of level `k`, or a `dim W_k x 0` matrix outside the range.
    pub fn inj_d(&self, k: i32) -> Mat {
        match self.idx(k) {
            Some(i) => self.levels[i].inj_d.clone(),
            None => Mat::zeros(self.w(k).dim(), 0),
        }
    }

    /// `inj_Dt` of level `k`, or a `dim W_{k+1} x 0` matrix outside the range.
    pub fn inj_dt(&self, k: i32) -> Mat {
        match self.idx(k) {
            Some(i) => self.levels[i].inj_dt.clone(),
            None => Mat::zeros(self.w(k + 1).dim(), 0),
        }
    }

    fn check_structure(&self) -> Result<(), ComplexError> {
        for (i, l) in self.levels.iter().enumerate() {
            let k = l.k;
            if i > 0 && k != self.levels[i - 1].k + 1 {
                return Err(ComplexError::Structure {
                    k,
                    field: "k".into(),
                    msg: "levels are not contiguous".into(),
                });
            }
            let (w, d, dt) = (l.w.dim(), l.d.dim(), l.dt.dim());
            let wn = self.levels.get(i + 1).map_or(0, |n| n.w.dim());
            let shape = |field: &str, m: &Mat, r: usize, c: usize| {
                if m.nrows() == r && m.ncols() == c {
                    Ok(())
                } else {
                    Err(ComplexError::Structure {
                        k,
                        field: field.into(),
                        msg: format!("shape {}x{}, expected {}x{}", m.nrows(), m.ncols(), r, c),
                    })
                }
            };
            shape("inj_D", &l.inj_d, w, d)?;
            shape("inj_Dt", &l.inj_dt, wn, dt)?;
            shape("A", &l.a, wn, d)?;
            shape("At", &l.at, w, dt)?;
            let dn = self.levels.get(i + 1).map_or(0, |n| n.d.dim());
            let dtp = if i > 0 { self.levels[i - 1].dt.dim() } else { 0 };
            if let Some(m) = &l.a_lift {
                shape("A_lift", m, dn, d)?;
            }
            if let Some(m) = &l.at_lift {
                shape("At_lift", m, dtp, dt)?;
            }
            for (field, idx, n) in
                [("interior_D", &l.interior_d, d), ("interior_Dt", &l.interior_dt, dt)]
            {
                if let Some(v) = idx {
                    if v.iter().any(|&j| j >= n) || v.windows(2).any(|p| p[0] >= p[1]) {
                        return Err(ComplexError::Structure {
                            k,
                            field: field.into(),
                            msg: "indices must be strictly increasing and in range".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn compute_lifts(&self, i: usize) -> Lifts {
        let l = &self.levels[i];
        let inj_next = self.levels.get(i + 1).map(|n| n.inj_d.clone());
        let inj_prev = if i > 0 { Some(self.levels[i - 1].inj_dt.clone()) } else { None };
        let policy = crate::linalg::RankPolicy::default();
        let lift = |supplied: &Option<Mat>, inj: Option<Mat>, op: &Mat, rows: usize| {
            let (m, was) = match supplied {
                Some(m) => (m.clone(), true),
                None => match &inj {
                    Some(inj) if inj.ncols() > 0 => (pseudo_inverse(inj, &policy) * op, false),
                    _ => (Mat::zeros(rows, op.ncols()), false),
                },
            };
            let back = match &inj {
                Some(inj) if inj.ncols() > 0 => inj * &m,
                _ => Mat::zeros(op.nrows(), op.ncols()),
            };
            (m, relative_residual(&back, op), was)
        };
        let dn = self.levels.get(i + 1).map_or(0, |n| n.d.dim());
        let dtp = if i > 0 { self.levels[i - 1].dt.dim() } else { 0 };
        let (a, a_residual, a_supplied) = lift(&l.a_lift, inj_next, &l.a, dn);
        let (at, at_residual, at_supplied) = lift(&l.at_lift, inj_prev, &l.at, dtp);
        Lifts { a, a_residual, a_supplied, at, at_residual, at_supplied }
    }

    /// Copy with the given level replaced; lifts are recomputed.
    pub fn with_level(&self, level: ComplexLevel) -> Result<Self, ComplexError> {
        let mut levels = self.levels.clone();
        let i = self.idx(level.k).ok_or(ComplexError::OutOfRange(level.k))?;
        levels[i] = level;
        Self::new(self.label.clone(), levels, self.meta.clone())
    }

    /// True when the instance declares integer incidence lifts.
    pub fn is_integer_instance(&self) -> bool {
        self.meta.get("generator").and_then(|v| v.as_str()) == Some("derham")
    }

    /// Per-level validation checks.
    pub fn validate(&self, tol: &Tolerances, seed: u64, exec: Execution) -> Vec<Check> {
        let per_level = exec.map(self.levels.len(), |i| self.validate_level(i, tol, seed, exec));
        per_level.into_iter().flatten().collect()
    }

    fn validate_level(&self, i: usize, tol: &Tolerances, seed: u64, exec: Execution) -> Vec<Check> {
        let l = &self.levels[i];
        let k = l.k;
        let lv = Some(k);
        let w_next = self.w(k + 1);
        let policy = tol.rank_policy();
        let mut out = Vec::new();

        let t = Instant::now();
        let gd = graph_gram(&l.inj_d, l.w.gram(), &l.a, w_next.gram());
        out.push(
            Check::bound(
                "graph-gram-D",
                lv,
                "graph-gram",
                relative_residual(l.d.gram(), &gd),
                tol.graph_gram,
            )
            .timed(t),
        );
        let t = Instant::now();
        let gdt = graph_gram(&l.inj_dt, w_next.gram(), &l.at, l.w.gram());
        out.push(
            Check::bound(
                "graph-gram-Dt",
                lv,
                "graph-gram",
                relative_residual(l.dt.gram(), &gdt),
                tol.graph_gram,
            )
            .timed(t),
        );

        let t = Instant::now();
        let r = rank(&l.inj_d, &policy);
        out.push(
            Check::verdict("inclusion-rank-D", lv, "injective-inclusion", r == l.d.dim(), (l.d.dim() - r) as f64)
                .with_detail(format!("rank {r} of {}", l.d.dim()))
                .timed(t),
        );
        let t = Instant::now();
        let r = rank(&l.inj_dt, &policy);
        out.push(
            Check::verdict("inclusion-rank-Dt", lv, "injective-inclusion", r == l.dt.dim(), (l.dt.dim() - r) as f64)
                .with_detail(format!("rank {r} of {}", l.dt.dim()))
                .timed(t),
        );

        let lifts = &self.lifts[i];
        out.push(Check::bound("lift-D", lv, "range-in-next-domain", lifts.a_residual, tol.lift));
        out.push(Check::bound("lift-Dt", lv, "range-in-next-domain", lifts.at_residual, tol.lift));

        let t = Instant::now();
        let next = self.a_lift(k + 1);
        let res = composition_residual(&next, &lifts.a);
        let gate = if self.is_integer_instance() { 0.0 } else { tol.exact };
        out.push(Check::bound("complex-property", lv, "complex-property", res, gate).timed(t));
        let t = Instant::now();
        let prev = self.at_lift(k - 1);
        let res = composition_residual(&prev, &lifts.at);
        out.push(Check::bound("dual-complex-property", lv, "complex-property", res, gate).timed(t));

        let t = Instant::now();
        let b = self.pairing(k);
        let (violations, worst) = pairing_bound_samples(&b, &l.d, &l.dt, tol, seed, k, exec);
        out.push(
            Check::verdict("pairing-bound", lv, "trace-continuity", violations == 0, worst)
                .with_detail(format!("{violations} violations in {} samples", tol.samples))
                .timed(t),
        );
        out
    }
}

/// `||second * first||_F / (||second||_F ||first||_F)`, zero for empty products.
pub fn composition_residual(second: &Mat, first: &Mat) -> f64 {
    if second.nrows() == 0 || first.ncols() == 0 || second.ncols() == 0 {
        return 0.0;
    }
    let scale = second.norm() * first.norm();
    if scale == 0.0 {
        return 0.0;
    }
    let p = second * first;
    if max_abs(&p) == 0.0 {
        0.0
    } else {
        p.norm() / scale
    }
}

/// Counts samples with `|x^T B y| > (1 + slack) ||x||_D ||y||_Dt`; returns the
/// count and the largest observed ratio.
pub fn pairing_bound_samples(
    b: &Mat,
    d: &InnerProductSpace,
    dt: &InnerProductSpace,
    tol: &Tolerances,
    seed: u64,
    k: i32,
    exec: Execution,
) -> (usize, f64) {
    let (nd, nt) = (d.dim(), dt.dim());
    if nd == 0 || nt == 0 {
        return (0, 0.0);
    }
    let stream = sampling::stream_id("pairing-bound", k);
    let sizes = sampling::blocks(tol.samples);
    let slack = tol.norm_slack;
    let per_block = exec.map(sizes.len(), |bi| {
        let x = sampling::gaussian_block(nd, sizes[bi], seed, stream, 2 * bi as u64);
        let y = sampling::gaussian_block(nt, sizes[bi], seed, stream, 2 * bi as u64 + 1);
        let by = b * &y;
        let nx = d.norms(&x);
        let ny = dt.norms(&y);
        let mut viol = 0usize;
        let mut worst = 0.0f64;
        for j in 0..sizes[bi] {
            let v = x.column(j).dot(&by.column(j)).abs();
            let bound = nx[j] * ny[j];
            let ratio = if bound > 0.0 { v / bound } else { 0.0 };
            worst = worst.max(ratio);
            if v > (1.0 + slack) * bound {
                viol += 1;
            }
        }
        (viol, worst)
    });
    per_block.into_iter().fold((0, 0.0), |(a, w), (v, x)| (a + v, w.max(x)))
}
