//! Envelope (profile) Cholesky factorization under reverse Cuthill-McKee
//! ordering. Mesh operators have small profiles after RCM, so this is both
//! simple and fast for the sizes handled here.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::CsrMatrix;

pub struct EnvelopeCholesky {
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of row `i`'s stored entries; row i holds columns first[i]..=i.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factor `A + diag(shift)` for a symmetric matrix `A`.
    pub fn factor(a: &CsrMatrix, shift: &[f64]) -> Result<Self> {
        let n = a.n_rows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            let (cols, _) = a.row(old);
            for &c in cols {
                first[new] = first[new].min(inv[c]);
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut values = vec![0.0; start[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let col = inv[c];
                if col <= new {
                    values[start[new] + col - first[new]] += v;
                }
            }
            values[start[new] + new - first[new]] += shift[old];
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = start[j];
                let mut s = values[row_i + j - fi];
                for k in k0..j {
                    s -= values[row_i + k - fi] * values[row_j + k - fj];
                }
                values[row_i + j - fi] = s / values[row_j + j - fj];
            }
            let mut d = values[row_i + i - fi];
            for k in fi..i {
                let l = values[row_i + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite(perm[i]));
            }
            values[row_i + i - fi] = d.sqrt();
        }
        Ok(Self {
            perm,
            first,
            start,
            values,
        })
    }

    pub fn profile_size(&self) -> usize {
        self.values.len()
    }

    /// Solve `(A + shift) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.perm.len();
        work.clear();
        work.extend(self.perm.iter().map(|&old| b[old]));
        let y = work.as_mut_slice();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for (k, l) in (fi..i).zip(row) {
                s -= l * y[k];
            }
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in (fi..i).zip(row) {
                y[k] -= l * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }
}

/// Reverse Cuthill-McKee ordering of the sparsity graph, component by component.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .expect("unvisited vertex remains");
        let root = pseudo_peripheral(a, seed, &degree);
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_unstable_by_key(|&u| (degree[u], u));
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// George-Liu style search for a vertex of near-maximal eccentricity.
fn pseudo_peripheral(a: &CsrMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut root = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let (levels, last) = bfs_levels(a, root);
        let far = last
            .iter()
            .copied()
            .min_by_key(|&u| (degree[u], u))
            .unwrap_or(root);
        if levels <= ecc {
            break;
        }
        ecc = levels;
        root = far;
    }
    root
}

fn bfs_levels(a: &CsrMatrix, root: usize) -> (usize, Vec<usize>) {
    let n = a.n_rows();
    let mut dist = vec![usize::MAX; n];
    dist[root] = 0;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in a.row(v).0 {
                if dist[u] == usize::MAX {
                    dist[u] = depth + 1;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}
