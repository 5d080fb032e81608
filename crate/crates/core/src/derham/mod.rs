//! Lowest-order finite-element de Rham complex pair on tetrahedral meshes.
//!
//! Spaces: Lagrange `P1`, edge `N0`, face `RT0`, volume `P0` (Whitney forms),
//! with global orientations by ascending vertex index. Every space embeds into
//! broken (element-wise) `P1` fields, scalar for `W_0`, `W_3` and vector for
//! `W_1`, `W_2`; these carry the `L^2` Grams. The pair has levels `-1..=3`:
//!
//! | k  | D    | Dt   | A     | At    |
//! |----|------|------|-------|-------|
//! | -1 | 0    | P0   | 0     | 0     |
//! | 0  | P1   | RT0  | grad  | -div  |
//! | 1  | N0   | N0   | curl  | curl  |
//! | 2  | RT0  | P1   | div   | -grad |
//! | 3  | P0   | 0    | 0     | 0     |

pub mod incidence;
pub mod mesh;

use std::sync::Arc;

use thiserror::Error;

pub use incidence::{smith_invariants, IntMatrix};
pub use mesh::{build_mesh, Domain, MeshError, TetMesh};
use mesh::{det3, LOCAL_EDGES, LOCAL_FACES, OPPOSITE};

use crate::complex::{ComplexError, ComplexLevel, ComplexPair};
use crate::exec::Execution;
use crate::linalg::{InnerProductSpace, Mat};

#[derive(Debug, Error)]
pub enum DerhamError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Complex(#[from] ComplexError),
}

/// How per-tet element matrices are summed into global matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Tet order; bit-reproducible.
    #[default]
    Sequential,
    /// Chunked partial sums combined in chunk order; reproducible to rounding.
    Parallel,
}

/// Geometry of one tet with vertices in ascending global order.
#[derive(Debug, Clone, Copy)]
pub struct TetGeometry {
    pub vertices: [usize; 4],
    pub volume: f64,
    /// Gradients of the barycentric coordinates.
    pub grads: [[f64; 3]; 4],
    /// Sign of the orientation of the sorted vertex frame.
    pub sign: i64,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

impl TetGeometry {
    pub fn new(mesh: &TetMesh, t: usize) -> Self {
        let (s, x) = mesh.sorted_coords(t);
        let e = [1, 2, 3].map(|i| [x[i][0] - x[0][0], x[i][1] - x[0][1], x[i][2] - x[0][2]]);
        let det = det3(e[0], e[1], e[2]);
        // Rows of the inverse Jacobian are the gradients of lambda_1..3.
        let g1 = scale(cross(e[1], e[2]), 1.0 / det);
        let g2 = scale(cross(e[2], e[0]), 1.0 / det);
        let g3 = scale(cross(e[0], e[1]), 1.0 / det);
        let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
        Self { vertices: s, volume: det.abs() / 6.0, grads: [g0, g1, g2, g3], sign: if det > 0.0 { 1 } else { -1 } }
    }

    /// Vector coefficients of local edge `e` against `lambda_0..3`.
    pub fn edge_coeffs(&self, e: usize) -> [[f64; 3]; 4] {
        let [a, b] = LOCAL_EDGES[e];
        let mut c = [[0.0; 3]; 4];
        c[a] = self.grads[b];
        c[b] = scale(self.grads[a], -1.0);
        c
    }

    /// Vector coefficients of local face `f` against `lambda_0..3`.
    pub fn face_coeffs(&self, f: usize) -> [[f64; 3]; 4] {
        let [a, b, cc] = LOCAL_FACES[f];
        let g = &self.grads;
        let mut c = [[0.0; 3]; 4];
        c[a] = scale(cross(g[b], g[cc]), 2.0);
        c[b] = scale(cross(g[cc], g[a]), 2.0);
        c[cc] = scale(cross(g[a], g[b]), 2.0);
        c
    }

    /// `int lambda_i lambda_j`.
    pub fn lambda_mass(&self, i: usize, j: usize) -> f64 {
        self.volume * if i == j { 2.0 } else { 1.0 } / 20.0
    }

    fn vector_inner(&self, u: &[[f64; 3]; 4], v: &[[f64; 3]; 4]) -> f64 {
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                s += self.lambda_mass(i, j) * (u[i][0] * v[j][0] + u[i][1] * v[j][1] + u[i][2] * v[j][2]);
            }
        }
        s
    }
}

/// Per-tet element matrices.
#[derive(Debug, Clone)]
struct Element {
    geo: TetGeometry,
    p1: [[f64; 4]; 4],
    n0: [[f64; 6]; 6],
    rt0: [[f64; 4]; 4],
    n0_rt0: [[f64; 4]; 6],
}

fn element(mesh: &TetMesh, t: usize) -> Element {
    let geo = TetGeometry::new(mesh, t);
    let mut p1 = [[0.0; 4]; 4];
    for (i, row) in p1.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = geo.lambda_mass(i, j);
        }
    }
    let ec: Vec<_> = (0..6).map(|e| geo.edge_coeffs(e)).collect();
    let fc: Vec<_> = (0..4).map(|f| geo.face_coeffs(f)).collect();
    let mut n0 = [[0.0; 6]; 6];
    let mut n0_rt0 = [[0.0; 4]; 6];
    for a in 0..6 {
        for b in 0..6 {
            n0[a][b] = geo.vector_inner(&ec[a], &ec[b]);
        }
        for f in 0..4 {
            n0_rt0[a][f] = geo.vector_inner(&ec[a], &fc[f]);
        }
    }
    let mut rt0 = [[0.0; 4]; 4];
    for f in 0..4 {
        for g in 0..4 {
            rt0[f][g] = geo.vector_inner(&fc[f], &fc[g]);
        }
    }
    Element { geo, p1, n0, rt0, n0_rt0 }
}

#[derive(Debug, Clone)]
pub struct FeecSpaces {
    /// `(V, E, F, T)`.
    pub dims: [usize; 4],
    /// `E x V` discrete gradient.
    pub g: IntMatrix,
    /// `F x E` discrete curl.
    pub c: IntMatrix,
    /// `T x F` discrete divergence.
    pub dv: IntMatrix,
    pub m_p1: Mat,
    pub m_n0: Mat,
    pub m_rt0: Mat,
    pub m_p0: Mat,
    /// `E x F`: `int N0_e . RT0_f`.
    pub m_n0_rt0: Mat,
    /// `V x T`: `int P1_v P0_t`.
    pub m_p1_p0: Mat,
    /// Broken scalar `P1` Gram (`4T x 4T`).
    pub w_scalar: Mat,
    /// Broken vector `P1` Gram (`12T x 12T`).
    pub w_vector: Mat,
    /// Embeddings into broken fields.
    pub inj_p1: Mat,
    pub inj_n0: Mat,
    pub inj_rt0: Mat,
    pub inj_p0: Mat,
    pub interior_vertices: Vec<usize>,
    pub interior_edges: Vec<usize>,
    pub interior_faces: Vec<usize>,
}

/// Integer incidences `G`, `C`, `Dv` of the mesh.
pub fn incidences(mesh: &TetMesh) -> (IntMatrix, IntMatrix, IntMatrix) {
    let [nv, ne, nf, nt] = mesh.counts();
    let g = IntMatrix::from_triplets(
        ne,
        nv,
        mesh.edges.iter().enumerate().flat_map(|(e, &[a, b])| [(e, a, -1), (e, b, 1)]),
    );
    let edge_of = |a: usize, b: usize| mesh.edges.binary_search(&[a, b]).expect("face edge exists");
    let c = IntMatrix::from_triplets(
        nf,
        ne,
        mesh.faces.iter().enumerate().flat_map(|(f, &[a, b, cc])| {
            [(f, edge_of(b, cc), 1), (f, edge_of(a, cc), -1), (f, edge_of(a, b), 1)]
        }),
    );
    let dv = IntMatrix::from_triplets(
        nt,
        nf,
        (0..nt).flat_map(|t| {
            let sign = TetGeometry::new(mesh, t).sign;
            let faces = mesh.tet_faces[t];
            (0..4).map(move |lf| {
                let opp = OPPOSITE[lf] as i64;
                let s = if opp % 2 == 0 { 1 } else { -1 };
                (t, faces[lf], s * sign)
            })
        }),
    );
    (g, c, dv)
}

fn accumulate<F>(elements: &[Element], rows: usize, cols: usize, reduction: Reduction, exec: Execution, add: F) -> Mat
where
    F: Fn(usize, &Element, &mut Mat) + Sync + Send,
{
    match reduction {
        Reduction::Sequential => {
            let mut m = Mat::zeros(rows, cols);
            for (t, el) in elements.iter().enumerate() {
                add(t, el, &mut m);
            }
            m
        }
        Reduction::Parallel => {
            let chunk = elements.len().div_ceil(8).max(1);
            let n_chunks = elements.len().div_ceil(chunk);
            let parts = exec.map(n_chunks, |c| {
                let mut m = Mat::zeros(rows, cols);
                let end = ((c + 1) * chunk).min(elements.len());
                for t in c * chunk..end {
                    add(t, &elements[t], &mut m);
                }
                m
            });
            parts.into_iter().fold(Mat::zeros(rows, cols), |a, b| a + b)
        }
    }
}

/// Assembles spaces, incidences and mass matrices.
pub fn build_feec(mesh: &TetMesh, exec: Execution, reduction: Reduction) -> FeecSpaces {
    let [nv, ne, nf, nt] = mesh.counts();
    let (g, c, dv) = incidences(mesh);
    let elements = exec.map(nt, |t| element(mesh, t));
    let acc = |rows, cols, add: &(dyn Fn(usize, &Element, &mut Mat) + Sync + Send)| {
        accumulate(&elements, rows, cols, reduction, exec, |t, el, m| add(t, el, m))
    };
    let m_p1 = acc(nv, nv, &|_, el, m| {
        for i in 0..4 {
            for j in 0..4 {
                m[(el.geo.vertices[i], el.geo.vertices[j])] += el.p1[i][j];
            }
        }
    });
    let m_n0 = acc(ne, ne, &|t, el, m| {
        let e = mesh.tet_edges[t];
        for a in 0..6 {
            for b in 0..6 {
                m[(e[a], e[b])] += el.n0[a][b];
            }
        }
    });
    let m_rt0 = acc(nf, nf, &|t, el, m| {
        let f = mesh.tet_faces[t];
        for a in 0..4 {
            for b in 0..4 {
                m[(f[a], f[b])] += el.rt0[a][b];
            }
        }
    });
    let m_n0_rt0 = acc(ne, nf, &|t, el, m| {
        let (e, f) = (mesh.tet_edges[t], mesh.tet_faces[t]);
        for a in 0..6 {
            for b in 0..4 {
                m[(e[a], f[b])] += el.n0_rt0[a][b];
            }
        }
    });
    let mut m_p0 = Mat::zeros(nt, nt);
    let mut m_p1_p0 = Mat::zeros(nv, nt);
    for (t, el) in elements.iter().enumerate() {
        m_p0[(t, t)] = 1.0 / el.geo.volume;
        for i in 0..4 {
            m_p1_p0[(el.geo.vertices[i], t)] += 0.25;
        }
    }

    let mut w_scalar = Mat::zeros(4 * nt, 4 * nt);
    let mut w_vector = Mat::zeros(12 * nt, 12 * nt);
    let mut inj_p1 = Mat::zeros(4 * nt, nv);
    let mut inj_p0 = Mat::zeros(4 * nt, nt);
    let mut inj_n0 = Mat::zeros(12 * nt, ne);
    let mut inj_rt0 = Mat::zeros(12 * nt, nf);
    for (t, el) in elements.iter().enumerate() {
        for i in 0..4 {
            for j in 0..4 {
                let mij = el.geo.lambda_mass(i, j);
                w_scalar[(4 * t + i, 4 * t + j)] = mij;
                for d in 0..3 {
                    w_vector[(12 * t + 3 * i + d, 12 * t + 3 * j + d)] = mij;
                }
            }
            inj_p1[(4 * t + i, el.geo.vertices[i])] = 1.0;
            inj_p0[(4 * t + i, t)] = 1.0 / el.geo.volume;
        }
        for le in 0..6 {
            let coeffs = el.geo.edge_coeffs(le);
            let e = mesh.tet_edges[t][le];
            for i in 0..4 {
                for d in 0..3 {
                    inj_n0[(12 * t + 3 * i + d, e)] += coeffs[i][d];
                }
            }
        }
        for lf in 0..4 {
            let coeffs = el.geo.face_coeffs(lf);
            let f = mesh.tet_faces[t][lf];
            for i in 0..4 {
                for d in 0..3 {
                    inj_rt0[(12 * t + 3 * i + d, f)] += coeffs[i][d];
                }
            }
        }
    }
    FeecSpaces {
        dims: [nv, ne, nf, nt],
        g,
        c,
        dv,
        m_p1,
        m_n0,
        m_rt0,
        m_p0,
        m_n0_rt0,
        m_p1_p0,
        w_scalar,
        w_vector,
        inj_p1,
        inj_n0,
        inj_rt0,
        inj_p0,
        interior_vertices: TetMesh::interior(&mesh.boundary_vertices),
        interior_edges: TetMesh::interior(&mesh.boundary_edges),
        interior_faces: TetMesh::interior(&mesh.boundary_faces),
    }
}

fn spd(m: Mat) -> Arc<InnerProductSpace> {
    Arc::new(InnerProductSpace::new(m).expect("finite-element Gram is SPD"))
}

fn sym(m: Mat) -> Mat {
    (&m + m.transpose()) * 0.5
}

/// The de Rham complex pair of the FEEC spaces, levels `-1..=3`.
pub fn build_complex_pair(feec: &FeecSpaces, label: &str, meta: serde_json::Map<String, serde_json::Value>) -> Result<ComplexPair, ComplexError> {
    let [nv, ne, nf, nt] = feec.dims;
    let (g, c, dv) = (feec.g.to_dense(), feec.c.to_dense(), feec.dv.to_dense());
    let zero = Arc::new(InnerProductSpace::euclidean(0));
    let ws = spd(feec.w_scalar.clone());
    let wv = spd(feec.w_vector.clone());
    let (w0, w1, w2, w3) = (ws.clone(), wv.clone(), wv, ws);

    let gram_p1 = spd(sym(&feec.m_p1 + g.transpose() * &feec.m_n0 * &g));
    let gram_n0 = spd(sym(&feec.m_n0 + c.transpose() * &feec.m_rt0 * &c));
    let gram_rt0 = spd(sym(&feec.m_rt0 + dv.transpose() * &feec.m_p0 * &dv));
    let gram_p0 = spd(feec.m_p0.clone());

    let grad = &feec.inj_n0 * &g;
    let curl = &feec.inj_rt0 * &c;
    let div = &feec.inj_p0 * &dv;
    let all = |n: usize| (0..n).collect::<Vec<_>>();

    let levels = vec![
        ComplexLevel {
            k: -1,
            w: zero.clone(),
            d: zero.clone(),
            dt: gram_p0.clone(),
            inj_d: Mat::zeros(0, 0),
            inj_dt: feec.inj_p0.clone(),
            a: Mat::zeros(4 * nt, 0),
            at: Mat::zeros(0, nt),
            a_lift: Some(Mat::zeros(nv, 0)),
            at_lift: Some(Mat::zeros(0, nt)),
            interior_d: Some(vec![]),
            interior_dt: Some(all(nt)),
        },
        ComplexLevel {
            k: 0,
            w: w0,
            d: gram_p1.clone(),
            dt: gram_rt0.clone(),
            inj_d: feec.inj_p1.clone(),
            inj_dt: feec.inj_rt0.clone(),
            a: grad.clone(),
            at: -div.clone(),
            a_lift: Some(g.clone()),
            at_lift: Some(-dv.clone()),
            interior_d: Some(feec.interior_vertices.clone()),
            interior_dt: Some(feec.interior_faces.clone()),
        },
        ComplexLevel {
            k: 1,
            w: w1,
            d: gram_n0.clone(),
            dt: gram_n0,
            inj_d: feec.inj_n0.clone(),
            inj_dt: feec.inj_n0.clone(),
            a: curl.clone(),
            at: curl,
            a_lift: Some(c.clone()),
            at_lift: Some(c),
            interior_d: Some(feec.interior_edges.clone()),
            interior_dt: Some(feec.interior_edges.clone()),
        },
        ComplexLevel {
            k: 2,
            w: w2,
            d: gram_rt0,
            dt: gram_p1,
            inj_d: feec.inj_rt0.clone(),
            inj_dt: feec.inj_p1.clone(),
            a: div,
            at: -grad,
            a_lift: Some(dv),
            at_lift: Some(-g),
            interior_d: Some(feec.interior_faces.clone()),
            interior_dt: Some(feec.interior_vertices.clone()),
        },
        ComplexLevel {
            k: 3,
            w: w3,
            d: gram_p0,
            dt: zero,
            inj_d: feec.inj_p0.clone(),
            inj_dt: Mat::zeros(0, 0),
            a: Mat::zeros(0, nt),
            at: Mat::zeros(4 * nt, 0),
            a_lift: Some(Mat::zeros(0, nt)),
            at_lift: Some(Mat::zeros(nv, 0)),
            interior_d: Some(all(nt)),
            interior_dt: Some(vec![]),
        },
    ];
    let _ = (ne, nf);
    ComplexPair::new(label, levels, meta)
}

/// Builds mesh, spaces and pair for a reference domain.
pub fn build_instance(domain: Domain, n: usize, exec: Execution) -> Result<ComplexPair, DerhamError> {
    let mesh = build_mesh(domain, n)?;
    let feec = build_feec(&mesh, exec, Reduction::Sequential);
    let mut meta = serde_json::Map::new();
    meta.insert("generator".into(), "derham".into());
    meta.insert("domain".into(), domain.name().into());
    meta.insert("n".into(), (n as u64).into());
    meta.insert("counts".into(), serde_json::json!(mesh.counts()));
    meta.insert("tolerances".into(), crate::config::Tolerances::default().to_json());
    Ok(build_complex_pair(&feec, &format!("derham-{}-{n}", domain.name()), meta)?)
}

/// Integer cochain complex of the boundary triangulation.
#[derive(Debug, Clone)]
pub struct BoundaryComplex {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    pub faces: Vec<usize>,
    /// `E_b x V_b`.
    pub d0: IntMatrix,
    /// `F_b x E_b`.
    pub d1: IntMatrix,
}

impl BoundaryComplex {
    /// Betti numbers over the rationals from integer invariant factors.
    pub fn betti(&self) -> [usize; 3] {
        let r0 = smith_invariants(&self.d0).len();
        let r1 = smith_invariants(&self.d1).len();
        [self.vertices.len() - r0, self.edges.len() - r0 - r1, self.faces.len() - r1]
    }

    /// Invariant factors greater than one (torsion).
    pub fn torsion(&self) -> Vec<i128> {
        smith_invariants(&self.d0)
            .into_iter()
            .chain(smith_invariants(&self.d1))
            .filter(|&v| v > 1)
            .collect()
    }
}

pub fn boundary_complex(mesh: &TetMesh) -> Result<BoundaryComplex, MeshError> {
    let (g, c, _) = incidences(mesh);
    let pick = |flags: &[bool]| flags.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect::<Vec<_>>();
    let vertices = pick(&mesh.boundary_vertices);
    let edges = pick(&mesh.boundary_edges);
    let faces = pick(&mesh.boundary_faces);
    let d0 = g.restrict(&edges, &vertices);
    let d1 = c.restrict(&faces, &edges);
    let mut per_edge = vec![0usize; edges.len()];
    for row in &d1.entries {
        for &(e, _) in row {
            per_edge[e] += 1;
        }
    }
    if let Some(i) = per_edge.iter().position(|&n| n != 2) {
        return Err(MeshError::NonManifoldBoundary(mesh.edges[edges[i]]));
    }
    Ok(BoundaryComplex { vertices, edges, faces, d0, d1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incidence_compositions_vanish() {
        let mesh = build_mesh(Domain::Cube, 2).unwrap();
        let (g, c, dv) = incidences(&mesh);
        assert!(c.mul(&g).is_zero());
        assert!(dv.mul(&c).is_zero());
    }

    #[test]
    fn reference_tet_p1_mass() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mesh = TetMesh::new(v, vec![[0, 1, 2, 3]]).unwrap();
        let f = build_feec(&mesh, Execution::Sequential, Reduction::Sequential);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 / 60.0 } else { 1.0 / 120.0 };
                assert!((f.m_p1[(i, j)] - want).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn single_cube_boundary_is_a_sphere() {
        let mesh = build_mesh(Domain::Cube, 1).unwrap();
        let b = boundary_complex(&mesh).unwrap();
        assert!(b.d1.mul(&b.d0).is_zero());
        assert_eq!(b.betti(), [1, 0, 1]);
        assert!(b.torsion().is_empty());
    }
}
