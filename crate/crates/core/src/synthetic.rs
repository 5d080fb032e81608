//! Synthetic complex pairs built from cochain complexes with an invariant
//! interior subcomplex.
//!
//! Given `d_k : Y_k -> Y_{k+1}` with `d_{k+1} d_k = 0` and coordinate subspaces
//! `I_k` with `d_k I_k in I_{k+1}`, the pair takes `D_k = Y_k`, `A_k = d_k`,
//! `Dt_k = Y_{k+1}` and `At_k` the adjoint of the truncation `P d P`. The
//! pairing is then `b(x, y) = ((d - P d P) x, y)`, which vanishes on `I_k`.

use std::sync::Arc;

use nalgebra::linalg::QR;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::complex::{ComplexError, ComplexLevel, ComplexPair};
use crate::derham::FeecSpaces;
use crate::linalg::{InnerProductSpace, Mat};
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticOptions {
    /// Number of spaces `Y_0 .. Y_{L-1}`.
    pub levels: usize,
    /// Upper bound for the interior and the boundary block of each space.
    pub max_block: usize,
    /// Upper bound for extra `W` directions outside the domain models.
    pub max_extra: usize,
    /// Mix interior and boundary coordinates by the change of basis; the
    /// interior index sets are then dropped.
    pub general_basis: bool,
    /// Truncate nothing: `At` is the full adjoint and the pairing vanishes.
    pub full_boundary: bool,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self { levels: 3, max_block: 6, max_extra: 2, general_basis: true, full_boundary: false }
    }
}

/// Cochain complex with Grams and interior coordinate sets.
#[derive(Debug, Clone)]
pub struct Cochain {
    pub grams: Vec<Mat>,
    /// `d[k] : Y_k -> Y_{k+1}`, one fewer than spaces.
    pub d: Vec<Mat>,
    pub interior: Vec<Vec<usize>>,
}

impl Cochain {
    pub fn dims(&self) -> Vec<usize> {
        self.grams.iter().map(Mat::nrows).collect()
    }

    /// `P d P` with `P` the coordinate projector onto the interior sets.
    pub fn truncated(&self) -> Vec<Mat> {
        self.d
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let mut t = Mat::zeros(d.nrows(), d.ncols());
                for &r in &self.interior[k + 1] {
                    for &c in &self.interior[k] {
                        t[(r, c)] = d[(r, c)];
                    }
                }
                t
            })
            .collect()
    }

    /// Largest `|d_{k+1} d_k|` entry.
    pub fn square_residual(&self) -> f64 {
        self.d.windows(2).map(|w| crate::linalg::max_abs(&(&w[1] * &w[0]))).fold(0.0, f64::max)
    }

    /// Largest entry of `d_k` mapping interior coordinates outside the interior.
    pub fn invariance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, d) in self.d.iter().enumerate() {
            let inner: std::collections::BTreeSet<usize> = self.interior[k + 1].iter().copied().collect();
            for &c in &self.interior[k] {
                for r in (0..d.nrows()).filter(|r| !inner.contains(r)) {
                    worst = worst.max(d[(r, c)].abs());
                }
            }
        }
        worst
    }

    /// The de Rham cochain complex of the conforming element spaces with
    /// mass Grams and interior degrees of freedom.
    pub fn from_feec(feec: &FeecSpaces) -> Self {
        Self {
            grams: vec![feec.m_p1.clone(), feec.m_n0.clone(), feec.m_rt0.clone(), feec.m_p0.clone()],
            d: vec![feec.g.to_dense(), feec.c.to_dense(), feec.dv.to_dense()],
            interior: vec![
                feec.interior_vertices.clone(),
                feec.interior_edges.clone(),
                feec.interior_faces.clone(),
                (0..feec.dims[3]).collect(),
            ],
        }
    }

    /// Every coordinate interior, so that the truncation is the complex itself.
    pub fn with_full_interior(mut self) -> Self {
        self.interior = self.dims().iter().map(|&n| (0..n).collect()).collect();
        self
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    QR::new(gaussian(rng, n, n)).q()
}

/// `Q diag(s) Q^T` with `s` in `[0.5, 2]`.
fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let q = random_orthogonal(rng, n);
    let s = Mat::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.gen_range(0.5..2.0)));
    let m = &q * s * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// `Q diag(s)` with `|s|` in `[0.5, 2]`; condition number at most 4.
fn random_invertible(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let q = random_orthogonal(rng, n);
    let s = nalgebra::DVector::from_fn(n, |_, _| {
        let v: f64 = rng.gen_range(0.5..2.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    q * Mat::from_diagonal(&s)
}

fn invert(m: &Mat) -> Mat {
    m.clone().try_inverse().expect("well-conditioned by construction")
}

/// Random exact complex on spaces of the given dimensions.
fn random_complex(rng: &mut ChaCha8Rng, dims: &[usize]) -> Vec<Mat> {
    let n = dims.len();
    let mut ranks = vec![0usize; n.saturating_sub(1)];
    let mut prev = 0;
    for k in 0..ranks.len() {
        let cap = (dims[k] - prev).min(dims[k + 1]);
        ranks[k] = rng.gen_range(0..=cap);
        prev = ranks[k];
    }
    let bases: Vec<Mat> = dims.iter().map(|&m| random_invertible(rng, m)).collect();
    (0..ranks.len())
        .map(|k| {
            // Normal form: coordinates [r_{k-1}, r_{k-1} + r_k) of Y_k onto [0, r_k) of Y_{k+1}.
            let offset = if k == 0 { 0 } else { ranks[k - 1] };
            let mut e = Mat::zeros(dims[k + 1], dims[k]);
            for i in 0..ranks[k] {
                e[(i, offset + i)] = 1.0;
            }
            &bases[k + 1] * e * invert(&bases[k])
        })
        .collect()
}

/// Random cochain complex `d = [[a, a h - h c], [0, c]]` on `Y_k = I_k + B_k`.
pub fn random_cochain(seed: u64, opts: &SyntheticOptions) -> Cochain {
    let mut rng = sampling::rng(seed, sampling::stream_id("synthetic-cochain", 0), 0);
    let levels = opts.levels.max(1);
    let blocks = opts.max_block.max(1);
    let ni: Vec<usize> = (0..levels).map(|_| rng.gen_range(0..=blocks)).collect();
    let nb: Vec<usize> = (0..levels).map(|_| rng.gen_range(1..=blocks)).collect();
    let a = random_complex(&mut rng, &ni);
    let c = random_complex(&mut rng, &nb);
    let h: Vec<Mat> = (0..levels).map(|k| gaussian(&mut rng, ni[k], nb[k]) * 0.5).collect();
    let d = (0..levels - 1)
        .map(|k| {
            let off = &a[k] * &h[k] - &h[k + 1] * &c[k];
            let mut m = Mat::zeros(ni[k + 1] + nb[k + 1], ni[k] + nb[k]);
            m.view_mut((0, 0), a[k].shape()).copy_from(&a[k]);
            m.view_mut((0, ni[k]), off.shape()).copy_from(&off);
            m.view_mut((ni[k + 1], ni[k]), c[k].shape()).copy_from(&c[k]);
            m
        })
        .collect();
    let grams = (0..levels).map(|k| random_spd(&mut rng, ni[k] + nb[k])).collect();
    let interior = ni.iter().map(|&i| (0..i).collect()).collect();
    Cochain { grams, d, interior }
}

/// Changes of basis and extra `W` directions applied when building a pair.
#[derive(Debug, Clone)]
struct Dressing {
    /// `Y_k` coordinates in terms of new `D_k` coordinates.
    s: Vec<Mat>,
    /// `Y_{k+1}` coordinates in terms of new `Dt_k` coordinates.
    t: Vec<Mat>,
    extra: Vec<usize>,
    interior_kept: bool,
}

impl Dressing {
    fn identity(dims: &[usize]) -> Self {
        Self {
            s: dims.iter().map(|&n| Mat::identity(n, n)).collect(),
            t: dims.iter().skip(1).map(|&n| Mat::identity(n, n)).collect(),
            extra: vec![0; dims.len()],
            interior_kept: true,
        }
    }

    fn random(rng: &mut ChaCha8Rng, c: &Cochain, opts: &SyntheticOptions) -> Self {
        let dims = c.dims();
        let block_preserving = |rng: &mut ChaCha8Rng, k: usize| {
            let n = dims[k];
            let inner = &c.interior[k];
            let outer: Vec<usize> = (0..n).filter(|i| !inner.contains(i)).collect();
            let mut m = Mat::zeros(n, n);
            for set in [inner.as_slice(), outer.as_slice()] {
                let b = random_invertible(rng, set.len());
                for (i, &r) in set.iter().enumerate() {
                    for (j, &col) in set.iter().enumerate() {
                        m[(r, col)] = b[(i, j)];
                    }
                }
            }
            m
        };
        let s = (0..dims.len())
            .map(|k| if opts.general_basis { random_invertible(rng, dims[k]) } else { block_preserving(rng, k) })
            .collect();
        let t = dims.iter().skip(1).map(|&n| random_invertible(rng, n)).collect();
        let extra = dims.iter().map(|_| rng.gen_range(0..=opts.max_extra)).collect();
        Self { s, t, extra, interior_kept: !opts.general_basis }
    }
}

fn embed(n: usize, extra: usize, m: &Mat) -> Mat {
    let mut out = Mat::zeros(n + extra, m.ncols());
    out.view_mut((0, 0), m.shape()).copy_from(m);
    out
}

/// `W` Gram on `Y + E`: the `Y` block is the cochain Gram, coupled to the
/// extra directions by a small symmetric block keeping it positive definite.
fn w_gram(rng: Option<&mut ChaCha8Rng>, g: &Mat, extra: usize) -> Mat {
    let n = g.nrows();
    let mut out = Mat::zeros(n + extra, n + extra);
    out.view_mut((0, 0), (n, n)).copy_from(g);
    if extra == 0 {
        return out;
    }
    let Some(rng) = rng else {
        out.view_mut((n, n), (extra, extra)).fill_with_identity();
        return out;
    };
    // Schur complement E - C^T G^{-1} C stays >= 0.5 I for |G^{-1/2} C| <= 1/2.
    let lam_min = g.clone().symmetric_eigen().eigenvalues.min();
    let mut cpl = gaussian(rng, n, extra);
    let scale = 0.5 * lam_min.sqrt() / cpl.norm().max(1.0);
    cpl *= scale;
    out.view_mut((0, n), (n, extra)).copy_from(&cpl);
    out.view_mut((n, 0), (extra, n)).copy_from(&cpl.transpose());
    let e = Mat::identity(extra, extra) * 0.75;
    out.view_mut((n, n), (extra, extra)).copy_from(&e);
    out
}

fn build_pair(c: &Cochain, label: &str, dress: &Dressing, mut rng: Option<&mut ChaCha8Rng>) -> Result<ComplexPair, ComplexError> {
    let dims = c.dims();
    let l = dims.len();
    let trunc = c.truncated();
    let ws: Vec<Arc<InnerProductSpace>> = (0..l)
        .map(|k| {
            let g = w_gram(rng.as_deref_mut(), &c.grams[k], dress.extra[k]);
            InnerProductSpace::new(g).map(Arc::new).map_err(|source| ComplexError::Gram { k: k as i32, space: "W", source })
        })
        .collect::<Result<_, _>>()?;
    let zero = Arc::new(InnerProductSpace::euclidean(0));
    let mut levels = Vec::with_capacity(l + 1);

    // Level -1: only Dt_{-1} = Y_0 is nonzero.
    let w0 = &ws[0];
    let t0 = &dress.s[0];
    let mut bottom = ComplexLevel::with_graph_grams(
        -1,
        zero.clone(),
        w0,
        Mat::zeros(0, 0),
        embed(dims[0], dress.extra[0], t0),
        Mat::zeros(w0.dim(), 0),
        Mat::zeros(0, dims[0]),
    )?;
    bottom.interior_d = Some(vec![]);
    levels.push(bottom);

    for k in 0..l {
        let wk = ws[k].clone();
        let yk = dims[k];
        let s = &dress.s[k];
        let inj_d = embed(yk, dress.extra[k], s);
        let (w_next, inj_dt, a, at) = if k + 1 < l {
            let t = &dress.t[k];
            let gy = &c.grams[k];
            let gy1 = &c.grams[k + 1];
            // Adjoint of the truncation in the cochain Grams: G_k^{-1} P d P^T G_{k+1}.
            let adj = gy.clone().cholesky().expect("SPD").solve(&(trunc[k].transpose() * gy1));
            (
                ws[k + 1].clone(),
                embed(dims[k + 1], dress.extra[k + 1], t),
                embed(dims[k + 1], dress.extra[k + 1], &(&c.d[k] * s)),
                embed(yk, dress.extra[k], &(adj * t)),
            )
        } else {
            (zero.clone(), Mat::zeros(0, 0), Mat::zeros(0, yk), Mat::zeros(wk.dim(), 0))
        };
        let mut level = ComplexLevel::with_graph_grams(k as i32, wk, &w_next, inj_d, inj_dt, a, at)?;
        if dress.interior_kept {
            level.interior_d = Some(c.interior[k].clone());
        }
        levels.push(level);
    }
    let mut meta = serde_json::Map::new();
    meta.insert("generator".into(), "synthetic".into());
    meta.insert("dims".into(), serde_json::json!(dims));
    ComplexPair::new(label, levels, meta)
}

/// The pair of a cochain complex in its own coordinates.
pub fn cochain_pair(c: &Cochain, label: &str) -> Result<ComplexPair, ComplexError> {
    build_pair(c, label, &Dressing::identity(&c.dims()), None)
}

/// Seeded random pair with random Grams, bases and extra `W` directions.
pub fn random_pair(seed: u64, opts: &SyntheticOptions) -> ComplexPair {
    let mut c = random_cochain(seed, opts);
    if opts.full_boundary {
        c = c.with_full_interior();
    }
    let mut rng = sampling::rng(seed, sampling::stream_id("synthetic-dressing", 0), 0);
    let dress = Dressing::random(&mut rng, &c, opts);
    let label = format!("synthetic-{seed}");
    build_pair(&c, &label, &dress, Some(&mut rng)).expect("synthetic data is consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, RankPolicy};

    #[test]
    fn cochain_is_a_complex_with_invariant_interior() {
        for seed in 0..20 {
            let c = random_cochain(seed, &SyntheticOptions::default());
            assert!(c.square_residual() < 1e-12, "seed {seed}: {}", c.square_residual());
            assert_eq!(c.invariance_residual(), 0.0);
        }
    }

    #[test]
    fn full_boundary_pairing_vanishes() {
        let opts = SyntheticOptions { full_boundary: true, ..Default::default() };
        let pair = random_pair(3, &opts);
        for k in pair.indices() {
            let b = pair.pairing(k);
            let scale = pair.d(k).gram().norm().max(1.0) * pair.dt(k).gram().norm().max(1.0);
            assert!(max_abs(&b) <= 1e-12 * scale, "level {k}: {}", max_abs(&b));
        }
    }

    #[test]
    fn interior_lies_in_the_trace_kernel() {
        let opts = SyntheticOptions { general_basis: false, ..Default::default() };
        let pair = random_pair(11, &opts);
        for k in pair.indices() {
            let l = pair.level(k).unwrap();
            let b = pair.pairing(k);
            for &i in l.interior_d.as_ref().unwrap() {
                let row = b.row(i);
                assert!(row.norm() <= 1e-12 * b.norm().max(1.0), "level {k} row {i}");
            }
        }
    }

    #[test]
    fn random_pairs_are_deterministic() {
        let a = random_pair(5, &SyntheticOptions::default());
        let b = random_pair(5, &SyntheticOptions::default());
        assert_eq!(a.pairing(0), b.pairing(0));
        let policy = RankPolicy::default();
        assert!(crate::linalg::rank(&a.pairing(0), &policy) <= a.d(0).dim());
    }
}
