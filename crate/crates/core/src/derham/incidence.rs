//! Sparse integer matrices and the Smith normal form over the integers.

use crate::linalg::Mat;

/// Row-compressed integer matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Vec<(usize, i64)>>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![Vec::new(); rows] }
    }

    /// Sums duplicate triplets and drops zeros.
    pub fn from_triplets(rows: usize, cols: usize, triplets: impl IntoIterator<Item = (usize, usize, i64)>) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
            m.entries[r].push((c, v));
        }
        for row in &mut m.entries {
            row.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(usize, i64)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|e| e.1 != 0);
            *row = merged;
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.entries[r].iter().find(|e| e.0 == c).map_or(0, |e| e.1)
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.cols,
            self.rows,
            self.entries.iter().enumerate().flat_map(|(r, row)| row.iter().map(move |&(c, v)| (c, r, v))),
        )
    }

    /// Exact product `self * rhs`.
    pub fn mul(&self, rhs: &IntMatrix) -> IntMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions");
        let mut trip = Vec::new();
        for (r, row) in self.entries.iter().enumerate() {
            for &(k, a) in row {
                for &(c, b) in &rhs.entries[k] {
                    trip.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.rows, rhs.cols, trip)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(Vec::is_empty)
    }

    pub fn scaled(&self, s: i64) -> Self {
        let mut m = self.clone();
        for row in &mut m.entries {
            for e in row.iter_mut() {
                e.1 *= s;
            }
        }
        m
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for (r, row) in self.entries.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] = v as f64;
            }
        }
        m
    }

    /// Submatrix on the given rows and columns, in the given order.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_pos = vec![usize::MAX; self.cols];
        for (i, &c) in cols.iter().enumerate() {
            col_pos[c] = i;
        }
        let trip = rows.iter().enumerate().flat_map(|(ri, &r)| {
            let col_pos = &col_pos;
            self.entries[r]
                .iter()
                .filter(move |e| col_pos[e.0] != usize::MAX)
                .map(move |&(c, v)| (ri, col_pos[c], v))
        });
        Self::from_triplets(rows.len(), cols.len(), trip.collect::<Vec<_>>())
    }
}

/// Nonzero invariant factors of an integer matrix (Smith normal form diagonal).
pub fn smith_invariants(m: &IntMatrix) -> Vec<i128> {
    let (rows, cols) = (m.rows, m.cols);
    let mut a = vec![vec![0i128; cols]; rows];
    for (r, row) in m.entries.iter().enumerate() {
        for &(c, v) in row {
            a[r][c] = v as i128;
        }
    }
    let mut diag = Vec::new();
    let mut t = 0;
    while t < rows.min(cols) {
        // Pivot: smallest nonzero magnitude in the trailing block.
        let mut best: Option<(usize, usize)> = None;
        for (i, row) in a.iter().enumerate().skip(t) {
            for (j, &v) in row.iter().enumerate().skip(t) {
                if v != 0 && best.map_or(true, |(bi, bj)| v.abs() < a[bi][bj].abs()) {
                    best = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = best else { break };
        a.swap(t, pi);
        for row in a.iter_mut() {
            row.swap(t, pj);
        }
        loop {
            let p = a[t][t];
            let mut clean = true;
            for i in t + 1..rows {
                let q = a[i][t] / p;
                if q != 0 {
                    for j in t..cols {
                        a[i][j] -= q * a[t][j];
                    }
                }
                if a[i][t] != 0 {
                    clean = false;
                }
            }
            for j in t + 1..cols {
                let q = a[t][j] / p;
                if q != 0 {
                    for row in a.iter_mut().skip(t) {
                        row[j] -= q * row[t];
                    }
                }
                if a[t][j] != 0 {
                    clean = false;
                }
            }
            if clean {
                // Divisibility of the trailing block by the pivot.
                let bad = (t + 1..rows)
                    .flat_map(|i| (t + 1..cols).map(move |j| (i, j)))
                    .find(|&(i, j)| a[i][j] % p != 0);
                match bad {
                    None => break,
                    Some((i, _)) => {
                        for j in t..cols {
                            a[t][j] += a[i][j];
                        }
                        continue;
                    }
                }
            }
            // Move the smallest remaining entry of row/column t to the pivot.
            let mut best = (t, t);
            for i in t..rows {
                if a[i][t] != 0 && a[i][t].abs() < a[best.0][best.1].abs() {
                    best = (i, t);
                }
            }
            for j in t..cols {
                if a[t][j] != 0 && a[t][j].abs() < a[best.0][best.1].abs() {
                    best = (t, j);
                }
            }
            a.swap(t, best.0);
            for row in a.iter_mut() {
                row.swap(t, best.1);
            }
        }
        diag.push(a[t][t].abs());
        t += 1;
    }
    diag
}
