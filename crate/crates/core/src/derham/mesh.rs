//! Tetrahedral meshes of reference domains built from Kuhn subdivisions of a
//! uniform hexahedral grid on the unit cube.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid subdivision count {n} for {domain}: {reason}")]
    InvalidN { domain: &'static str, n: usize, reason: &'static str },
    #[error("tet {0} is degenerate (zero volume)")]
    Degenerate(usize),
    #[error("tet {tet} references vertex {vertex} outside 0..{count}")]
    VertexIndex { tet: usize, vertex: usize, count: usize },
    #[error("face {0:?} is shared by more than two tets")]
    NonManifold([usize; 3]),
    #[error("boundary edge {0:?} is not shared by exactly two boundary faces")]
    NonManifoldBoundary([usize; 2]),
    #[error("unknown domain {0}")]
    UnknownDomain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// The unit cube.
    Cube,
    /// The unit cube with its central cells removed.
    Cavity,
    /// The unit cube with a central column of cells removed.
    Hole,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Cube => "cube",
            Domain::Cavity => "cavity",
            Domain::Hole => "hole",
        }
    }

    /// Euler characteristic of the solid.
    pub fn euler_characteristic(self) -> i64 {
        match self {
            Domain::Cube => 1,
            Domain::Cavity => 2,
            Domain::Hole => 0,
        }
    }

    /// Betti numbers of the boundary surface.
    pub fn boundary_betti(self) -> [usize; 3] {
        match self {
            Domain::Cube => [1, 0, 1],
            Domain::Cavity => [2, 0, 2],
            Domain::Hole => [1, 2, 1],
        }
    }
}

impl FromStr for Domain {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cube" => Ok(Domain::Cube),
            "cavity" | "cube_with_cavity" => Ok(Domain::Cavity),
            "hole" | "torus" => Ok(Domain::Hole),
            other => Err(MeshError::UnknownDomain(other.into())),
        }
    }
}

/// Minimal interchange form `{vertices, tets}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshJson {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
}

#[derive(Debug, Clone)]
pub struct TetMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Positively oriented vertex quadruples.
    pub tets: Vec<[usize; 4]>,
    /// Sorted vertex pairs in lexicographic order.
    pub edges: Vec<[usize; 2]>,
    /// Sorted vertex triples in lexicographic order.
    pub faces: Vec<[usize; 3]>,
    /// Per tet, edges of its sorted vertices in the order (01,02,03,12,13,23).
    pub tet_edges: Vec<[usize; 6]>,
    /// Per tet, faces of its sorted vertices opposite to local vertex 3,2,1,0,
    /// i.e. in the order (012,013,023,123).
    pub tet_faces: Vec<[usize; 4]>,
    pub boundary_vertices: Vec<bool>,
    pub boundary_edges: Vec<bool>,
    pub boundary_faces: Vec<bool>,
}

/// Local edges of a sorted tet as local index pairs.
pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
/// Local faces of a sorted tet as local index triples.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
/// Local vertex opposite to each local face.
pub const OPPOSITE: [usize; 4] = [3, 2, 1, 0];

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn det3(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
}

impl TetMesh {
    pub fn new(vertices: Vec<[f64; 3]>, tets: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let mut oriented = Vec::with_capacity(tets.len());
        for (t, tet) in tets.iter().enumerate() {
            if let Some(&v) = tet.iter().find(|&&v| v >= nv) {
                return Err(MeshError::VertexIndex { tet: t, vertex: v, count: nv });
            }
            let x = tet.map(|v| vertices[v]);
            let det = det3(sub(x[1], x[0]), sub(x[2], x[0]), sub(x[3], x[0]));
            let scale = [sub(x[1], x[0]), sub(x[2], x[0]), sub(x[3], x[0])]
                .iter()
                .map(|e| (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt())
                .product::<f64>();
            if !(det.abs() > 1e-12 * scale) {
                return Err(MeshError::Degenerate(t));
            }
            oriented.push(if det > 0.0 { *tet } else { [tet[0], tet[1], tet[3], tet[2]] });
        }
        let mut edge_map: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        let mut face_count: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        for tet in &oriented {
            let s = sorted(*tet);
            for e in LOCAL_EDGES {
                edge_map.insert([s[e[0]], s[e[1]]], 0);
            }
            for f in LOCAL_FACES {
                *face_count.entry([s[f[0]], s[f[1]], s[f[2]]]).or_insert(0) += 1;
            }
        }
        for (i, v) in edge_map.values_mut().enumerate() {
            *v = i;
        }
        if let Some((f, _)) = face_count.iter().find(|(_, &c)| c > 2) {
            return Err(MeshError::NonManifold(*f));
        }
        let faces: Vec<[usize; 3]> = face_count.keys().copied().collect();
        let face_index: BTreeMap<[usize; 3], usize> = faces.iter().enumerate().map(|(i, f)| (*f, i)).collect();
        let edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        let mut tet_edges = Vec::with_capacity(oriented.len());
        let mut tet_faces = Vec::with_capacity(oriented.len());
        for tet in &oriented {
            let s = sorted(*tet);
            tet_edges.push(LOCAL_EDGES.map(|e| edge_map[&[s[e[0]], s[e[1]]]]));
            tet_faces.push(LOCAL_FACES.map(|f| face_index[&[s[f[0]], s[f[1]], s[f[2]]]]));
        }
        let boundary_faces: Vec<bool> = faces.iter().map(|f| face_count[f] == 1).collect();
        let mut boundary_vertices = vec![false; nv];
        let mut boundary_edges = vec![false; edges.len()];
        for (f, face) in faces.iter().enumerate() {
            if boundary_faces[f] {
                for &v in face {
                    boundary_vertices[v] = true;
                }
                for e in [[face[0], face[1]], [face[0], face[2]], [face[1], face[2]]] {
                    boundary_edges[edge_map[&e]] = true;
                }
            }
        }
        Ok(Self {
            vertices,
            tets: oriented,
            edges,
            faces,
            tet_edges,
            tet_faces,
            boundary_vertices,
            boundary_edges,
            boundary_faces,
        })
    }

    pub fn from_json(m: MeshJson) -> Result<Self, MeshError> {
        Self::new(m.vertices, m.tets)
    }

    pub fn to_json(&self) -> MeshJson {
        MeshJson { vertices: self.vertices.clone(), tets: self.tets.clone() }
    }

    pub fn counts(&self) -> [usize; 4] {
        [self.vertices.len(), self.edges.len(), self.faces.len(), self.tets.len()]
    }

    pub fn euler_characteristic(&self) -> i64 {
        let [v, e, f, t] = self.counts();
        v as i64 - e as i64 + f as i64 - t as i64
    }

    /// Vertex coordinates of tet `t` in ascending global index order.
    pub fn sorted_coords(&self, t: usize) -> ([usize; 4], [[f64; 3]; 4]) {
        let s = sorted(self.tets[t]);
        (s, s.map(|v| self.vertices[v]))
    }

    pub fn interior(flags: &[bool]) -> Vec<usize> {
        flags.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i).collect()
    }
}

pub fn sorted(mut t: [usize; 4]) -> [usize; 4] {
    t.sort_unstable();
    t
}

/// Kuhn mesh of the chosen domain with `n` cells per axis.
pub fn build_mesh(domain: Domain, n: usize) -> Result<TetMesh, MeshError> {
    let name = domain.name();
    if n == 0 {
        return Err(MeshError::InvalidN { domain: name, n, reason: "n must be at least 1" });
    }
    if domain != Domain::Cube && n < 3 {
        return Err(MeshError::InvalidN { domain: name, n, reason: "removing inner cells needs n >= 3" });
    }
    let lo = (n - 1) / 2;
    let hi = n - lo;
    let inner = |c: usize| c >= lo && c < hi;
    let removed = |i: usize, j: usize, k: usize| match domain {
        Domain::Cube => false,
        Domain::Cavity => inner(i) && inner(j) && inner(k),
        Domain::Hole => inner(i) && inner(j),
    };
    let m = n + 1;
    let grid = |i: usize, j: usize, k: usize| (i * m + j) * m + k;
    let perms: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut raw_tets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if removed(i, j, k) {
                    continue;
                }
                for p in perms {
                    let mut c = [i, j, k];
                    let mut tet = [grid(c[0], c[1], c[2]); 4];
                    for (s, &axis) in p.iter().enumerate() {
                        c[axis] += 1;
                        tet[s + 1] = grid(c[0], c[1], c[2]);
                    }
                    raw_tets.push(tet);
                }
            }
        }
    }
    let mut used = vec![false; m * m * m];
    for t in &raw_tets {
        for &v in t {
            used[v] = true;
        }
    }
    let mut renumber = vec![usize::MAX; m * m * m];
    let mut vertices = Vec::new();
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let g = grid(i, j, k);
                if used[g] {
                    renumber[g] = vertices.len();
                    vertices.push([i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64]);
                }
            }
        }
    }
    let tets = raw_tets.into_iter().map(|t| t.map(|v| renumber[v])).collect();
    TetMesh::new(vertices, tets)
}
