//! Finite-element assembly, meshes and boundary topology against independent
//! oracles: closed-form masses, quadrature, union-find components and exact
//! modular ranks.

use hilbert_traces::derham::{
    boundary_complex, build_feec, build_instance, build_mesh, Domain, Reduction, TetMesh,
};
use hilbert_traces::linalg::Mat;
use hilbert_traces::{Execution, Side, Tolerances, TraceSystem};

fn single_tet(x: [[f64; 3]; 4]) -> TetMesh {
    TetMesh::new(x.to_vec(), vec![[0, 1, 2, 3]]).unwrap()
}

const REFERENCE: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
const SKEWED: [[f64; 3]; 4] = [[0.1, -0.2, 0.3], [1.3, 0.1, 0.0], [0.2, 0.9, -0.1], [0.4, 0.3, 1.7]];

#[test]
fn reference_tet_p1_mass() {
    let feec = build_feec(&single_tet(REFERENCE), Execution::Sequential, Reduction::Sequential);
    for i in 0..4 {
        for j in 0..4 {
            let expect = if i == j { 1.0 / 60.0 } else { 1.0 / 120.0 };
            assert!((feec.m_p1[(i, j)] - expect).abs() < 1e-16, "({i},{j}) {}", feec.m_p1[(i, j)]);
        }
    }
    // The volume form has unit integral, so its mass is 1 / |T|.
    assert!((feec.m_p0[(0, 0)] - 6.0).abs() < 1e-14);
}

/// Integral over the tet by the degree-2 four-point rule.
fn quad2(x: &[[f64; 3]; 4], f: impl Fn([f64; 3]) -> f64) -> f64 {
    let (a, b) = (0.585_410_196_624_968_5, 0.138_196_601_125_010_5);
    let vol = {
        let e = [1, 2, 3].map(|i| [x[i][0] - x[0][0], x[i][1] - x[0][1], x[i][2] - x[0][2]]);
        (e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
            + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]))
            .abs()
            / 6.0
    };
    (0..4)
        .map(|q| {
            let w: [f64; 4] = std::array::from_fn(|i| if i == q { a } else { b });
            let p = std::array::from_fn(|d| (0..4).map(|i| w[i] * x[i][d]).sum());
            f(p)
        })
        .sum::<f64>()
        * vol
        / 4.0
}

/// The unit-flux face field is `(x - x_opp) / (3 |T|)` up to orientation.
fn rt0_oracle(x: &[[f64; 3]; 4], opp: [usize; 4]) -> Mat {
    let vol = quad2(x, |_| 1.0);
    Mat::from_fn(4, 4, |f, g| {
        let (p, q) = (x[opp[f]], x[opp[g]]);
        quad2(x, |y| (0..3).map(|d| (y[d] - p[d]) * (y[d] - q[d])).sum()) / (9.0 * vol * vol)
    })
}

fn check_rt0(x: [[f64; 3]; 4]) {
    let mesh = single_tet(x);
    let feec = build_feec(&mesh, Execution::Sequential, Reduction::Sequential);
    // Global faces are sorted triples; the opposite vertex is the one missing.
    let opp = std::array::from_fn(|f| (0..4).find(|v| !mesh.faces[f].contains(v)).unwrap());
    let verts: [[f64; 3]; 4] = std::array::from_fn(|i| mesh.vertices[i]);
    let oracle = rt0_oracle(&verts, opp);
    let m = &feec.m_rt0;
    // Orientation signs from the first row; the rest must then match exactly.
    let s: Vec<f64> = (0..4).map(|f| if f == 0 { 1.0 } else { (m[(0, f)] / oracle[(0, f)]).signum() }).collect();
    let scale = oracle.amax();
    for f in 0..4 {
        for g in 0..4 {
            let expect = s[f] * s[g] * oracle[(f, g)];
            assert!((m[(f, g)] - expect).abs() <= 1e-14 * scale, "({f},{g}): {} vs {expect}", m[(f, g)]);
        }
    }
}

#[test]
fn rt0_mass_matches_quadrature() {
    check_rt0(REFERENCE);
    check_rt0(SKEWED);
}

#[test]
fn incidences_are_exact_complexes() {
    for (d, n) in [(Domain::Cube, 1), (Domain::Cube, 3), (Domain::Cavity, 3), (Domain::Hole, 3)] {
        let feec = build_feec(&build_mesh(d, n).unwrap(), Execution::Parallel, Reduction::Sequential);
        assert!(feec.c.mul(&feec.g).is_zero());
        assert!(feec.dv.mul(&feec.c).is_zero());
        assert!(feec.g.entries.iter().all(|r| r.len() == 2 && r.iter().all(|e| e.1.abs() == 1)));
        assert!(feec.c.entries.iter().all(|r| r.len() == 3 && r.iter().all(|e| e.1.abs() == 1)));
        assert!(feec.dv.entries.iter().all(|r| r.len() == 4 && r.iter().all(|e| e.1.abs() == 1)));
    }
}

#[test]
fn gradient_of_linear_function_is_edge_difference() {
    let mesh = build_mesh(Domain::Cube, 2).unwrap();
    let feec = build_feec(&mesh, Execution::Sequential, Reduction::Sequential);
    let f = |p: [f64; 3]| 0.3 + 2.0 * p[0] - p[1] + 0.5 * p[2];
    let x = nalgebra::DVector::from_iterator(mesh.vertices.len(), mesh.vertices.iter().map(|&p| f(p)));
    let gx = feec.g.to_dense() * x;
    for (e, [a, b]) in mesh.edges.iter().enumerate() {
        assert!((gx[e] - (f(mesh.vertices[*b]) - f(mesh.vertices[*a]))).abs() < 1e-14);
    }
}

#[test]
fn parallel_reduction_agrees_with_sequential() {
    let mesh = build_mesh(Domain::Cube, 3).unwrap();
    let a = build_feec(&mesh, Execution::Sequential, Reduction::Sequential);
    let b = build_feec(&mesh, Execution::Parallel, Reduction::Parallel);
    let c = build_feec(&mesh, Execution::Parallel, Reduction::Sequential);
    assert_eq!(a.m_n0, c.m_n0);
    assert_eq!(a.m_rt0, c.m_rt0);
    assert!((&a.m_n0 - &b.m_n0).amax() <= 1e-15 * a.m_n0.amax());
    assert!((&a.w_vector - &b.w_vector).amax() <= 1e-15 * a.w_vector.amax());
}

#[test]
fn boundary_green_identities() {
    let mesh = build_mesh(Domain::Cube, 2).unwrap();
    let pair = build_instance(Domain::Cube, 2, Execution::Parallel).unwrap();
    // b_0(1, phi_f) is the flux of phi_f through the boundary.
    let b0 = pair.pairing(0);
    let ones = nalgebra::DVector::from_element(b0.nrows(), 1.0);
    let flux = b0.transpose() * ones;
    for (f, &bdry) in mesh.boundary_faces.iter().enumerate() {
        let expect = if bdry { 1.0 } else { 0.0 };
        assert!((flux[f].abs() - expect).abs() < 1e-12, "face {f}: {}", flux[f]);
    }
    // b_1 pairs a tangential trace with itself to zero.
    let b1 = pair.pairing(1);
    assert!((&b1 + b1.transpose()).amax() <= 1e-13 * b1.amax());
}

#[test]
fn mesh_counts() {
    assert_eq!(build_mesh(Domain::Cube, 1).unwrap().counts(), [8, 19, 18, 6]);
    let m2 = build_mesh(Domain::Cube, 2).unwrap();
    assert_eq!(m2.counts()[0], 27);
    assert_eq!(m2.counts()[3], 48);
    for (d, n) in [(Domain::Cube, 1), (Domain::Cube, 2), (Domain::Cube, 3), (Domain::Cavity, 3), (Domain::Hole, 3), (Domain::Hole, 4)] {
        assert_eq!(build_mesh(d, n).unwrap().euler_characteristic(), d.euler_characteristic(), "{d:?} n={n}");
    }
    assert!(build_mesh(Domain::Cube, 0).is_err());
    assert!(build_mesh(Domain::Cavity, 2).is_err());
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let r = self.find(self.0[i]);
            self.0[i] = r;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        self.0[a] = b;
    }
}

/// Betti numbers of a closed orientable surface from components and Euler
/// characteristic.
fn union_find_betti(mesh: &TetMesh) -> [usize; 3] {
    let mut uf = UnionFind((0..mesh.vertices.len()).collect());
    let faces: Vec<_> = mesh.faces.iter().zip(&mesh.boundary_faces).filter(|(_, &b)| b).map(|(f, _)| *f).collect();
    for f in &faces {
        uf.union(f[0], f[1]);
        uf.union(f[1], f[2]);
    }
    let vb: Vec<usize> = (0..mesh.vertices.len()).filter(|&v| mesh.boundary_vertices[v]).collect();
    let mut roots: Vec<usize> = vb.iter().map(|&v| uf.find(v)).collect();
    roots.sort_unstable();
    roots.dedup();
    let eb = mesh.boundary_edges.iter().filter(|&&b| b).count();
    let chi = vb.len() as i64 - eb as i64 + faces.len() as i64;
    let b0 = roots.len();
    [b0, (2 * b0 as i64 - chi) as usize, b0]
}

#[test]
fn boundary_betti_matches_union_find_oracle() {
    for (d, n) in [(Domain::Cube, 1), (Domain::Cube, 2), (Domain::Cube, 3), (Domain::Cavity, 3), (Domain::Hole, 3)] {
        let mesh = build_mesh(d, n).unwrap();
        let bc = boundary_complex(&mesh).unwrap();
        assert_eq!(bc.betti(), union_find_betti(&mesh), "{d:?} n={n}");
        assert_eq!(bc.betti(), d.boundary_betti(), "{d:?} n={n}");
        assert!(bc.torsion().is_empty());
    }
}

/// Rank modulo a prime by Gaussian elimination.
fn rank_mod_p(rows: &[Vec<u64>], p: u64) -> usize {
    let mut a: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|v| v % p).collect()).collect();
    let cols = a.first().map_or(0, Vec::len);
    let pow = |mut b: u64, mut e: u64| {
        let mut r = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                r = (r as u128 * b as u128 % p as u128) as u64;
            }
            b = (b as u128 * b as u128 % p as u128) as u64;
            e >>= 1;
        }
        r
    };
    let mut rank = 0;
    for c in 0..cols {
        let Some(piv) = (rank..a.len()).find(|&r| a[r][c] != 0) else { continue };
        a.swap(rank, piv);
        let inv = pow(a[rank][c], p - 2);
        for r in 0..a.len() {
            if r != rank && a[r][c] != 0 {
                let f = (a[r][c] as u128 * inv as u128 % p as u128) as u64;
                for j in c..cols {
                    let sub = (f as u128 * a[rank][j] as u128 % p as u128) as u64;
                    a[r][j] = (a[r][j] + p - sub) % p;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Rank of the boundary face-vertex incidence, over the rationals.
fn face_vertex_rank(mesh: &TetMesh) -> usize {
    let vb: Vec<usize> = (0..mesh.vertices.len()).filter(|&v| mesh.boundary_vertices[v]).collect();
    let rows: Vec<Vec<u64>> = mesh
        .faces
        .iter()
        .zip(&mesh.boundary_faces)
        .filter(|(_, &b)| b)
        .map(|(f, _)| vb.iter().map(|v| u64::from(f.contains(v))).collect())
        .collect();
    // Rank over Q is the largest rank over the prime fields.
    [2_147_483_647, 1_000_000_007].iter().map(|&p| rank_mod_p(&rows, p)).max().unwrap()
}

#[test]
fn interior_dofs_lie_in_trace_kernels_with_predicted_excess() {
    let policy = Tolerances::default().rank_policy();
    for (d, n) in [(Domain::Cube, 1), (Domain::Cube, 2), (Domain::Cavity, 3), (Domain::Hole, 3)] {
        let mesh = build_mesh(d, n).unwrap();
        let pair = build_instance(d, n, Execution::Parallel).unwrap();
        let r = face_vertex_rank(&mesh);
        let vb = mesh.boundary_vertices.iter().filter(|&&b| b).count();
        let fb = mesh.boundary_faces.iter().filter(|&&b| b).count();
        for (k, primal, dual) in [(0, vb - r, fb - r), (2, fb - r, vb - r)] {
            let ts = TraceSystem::assemble(&pair, k, &policy);
            let l = pair.level(k).unwrap();
            // B is a difference of assembled volume terms, so interior rows
            // cancel to roundoff of the entries.
            let b = pair.pairing(k);
            let gate = 1e-14 * b.amax();
            for &i in l.interior_d.as_ref().unwrap() {
                assert!(b.row(i).amax() <= gate);
            }
            for &j in l.interior_dt.as_ref().unwrap() {
                assert!(b.column(j).amax() <= gate);
            }
            let excess_p = ts.kernel(Side::Primal).ncols() - l.interior_d.as_ref().unwrap().len();
            let excess_d = ts.kernel(Side::Dual).ncols() - l.interior_dt.as_ref().unwrap().len();
            assert_eq!((excess_p, excess_d), (primal, dual), "{d:?} n={n} k={k}");
        }
    }
}
