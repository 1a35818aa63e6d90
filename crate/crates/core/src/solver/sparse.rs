//! Symmetric envelope (skyline) Cholesky with reverse Cuthill-McKee
//! ordering.

use std::collections::VecDeque;

/// Reverse Cuthill-McKee ordering of an undirected graph. Returns `perm`
/// with `perm[new] = old`.
pub(crate) fn rcm_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    let mut level = vec![usize::MAX; n];

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, &degree, seed, &mut level);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        let mut nbrs = Vec::new();
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            nbrs.dedup();
            for &w in &nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Breadth-first levels from `root`; returns the last level's nodes.
fn bfs_levels(adj: &[Vec<usize>], root: usize, level: &mut [usize]) -> (usize, Vec<usize>) {
    let mut touched = vec![root];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut depth = 0;
    while let Some(v) = queue.pop_front() {
        depth = depth.max(level[v]);
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                touched.push(w);
                queue.push_back(w);
            }
        }
    }
    let last: Vec<usize> = touched
        .iter()
        .copied()
        .filter(|&v| level[v] == depth)
        .collect();
    for v in touched {
        level[v] = usize::MAX;
    }
    (depth, last)
}

fn pseudo_peripheral(
    adj: &[Vec<usize>],
    degree: &[usize],
    seed: usize,
    level: &mut [usize],
) -> usize {
    let mut root = seed;
    let (mut depth, mut last) = bfs_levels(adj, root, level);
    for _ in 0..8 {
        let Some(&cand) = last.iter().min_by_key(|&&v| (degree[v], v)) else {
            break;
        };
        let (d, l) = bfs_levels(adj, cand, level);
        if d <= depth {
            break;
        }
        root = cand;
        depth = d;
        last = l;
    }
    root
}

/// Lower triangle of a symmetric matrix stored row by row from the first
/// structurally nonzero column to the diagonal. Factored in place.
pub(crate) struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Envelope {
    /// `first[i] <= i` is the first stored column of row `i`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self {
            first,
            start,
            vals: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Storage position of `(i, j)` with `first[i] <= j <= i`.
    #[inline]
    pub fn pos(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.start[i] + j - self.first[i]
    }

    /// Adds `v` at the symmetric position of `(i, j)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        let p = self.pos(a, b);
        self.vals[p] += v;
    }

    pub fn clear(&mut self) {
        self.vals.fill(0.0);
    }

    /// In-place `L Lᵀ` factorization. Fails with the row of the first
    /// pivot that is not safely positive.
    pub fn factor(&mut self) -> Result<(), usize> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let row_i = &self.vals[si + k0 - fi..si + j - fi];
                let row_j = &self.vals[sj + k0 - fj..sj + j - fj];
                let s: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                let ljj = self.vals[sj + j - fj];
                let p = si + j - fi;
                self.vals[p] = (self.vals[p] - s) / ljj;
            }
            let row = &self.vals[si..si + i - fi];
            let s: f64 = row.iter().map(|a| a * a).sum();
            let p = si + i - fi;
            let a = self.vals[p];
            let d = a - s;
            if !(d.is_finite() && d > 1e-13 * a.abs().max(1e-300)) {
                return Err(i);
            }
            self.vals[p] = d.sqrt();
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` in place after [`Envelope::factor`].
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &self.vals[si..si + i - fi];
            let s: f64 = row.iter().zip(&b[fi..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.vals[si + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            b[i] /= self.vals[si + i - fi];
            let xi = b[i];
            for (k, l) in (fi..i).zip(&self.vals[si..si + i - fi]) {
                b[k] -= l * xi;
            }
        }
    }
}

/// Solves the small dense system `a x = b` (row-major `a`) by Gaussian
/// elimination with partial pivoting. Returns false if singular.
pub(crate) fn dense_solve(a: &mut [f64], b: &mut [f64]) -> bool {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
            .unwrap_or(col);
        if a[piv * n + col] == 0.0 || !a[piv * n + col].is_finite() {
            return false;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * b[k];
        }
        b[row] = s / a[row * n + row];
    }
    true
}
