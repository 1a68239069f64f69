//! Sparse symmetric matrices and an LDLᵀ Cholesky factorization.
//!
//! Everything the model needs from a sparse solver lives here: assembling
//! symmetric matrices from triplets, factorizing them with an optional
//! fill-reducing permutation, solving linear systems, computing
//! log-determinants, drawing correlated Gaussians (`Q = LDLᵀ` gives
//! `u = Pᵀ L⁻ᵀ D^{-1/2} z` with covariance `Q⁻¹`), and reading off diagonal
//! entries of the inverse for standard errors.
//!
//! The factorization follows the classic up-looking LDLᵀ scheme driven by the
//! elimination tree: a symbolic pass computes per-column fill counts by
//! walking etree paths, and the numeric pass performs one sparse triangular
//! solve per column. No pivoting is done — the matrices here are positive
//! definite by construction (prior precision plus a positive semidefinite
//! likelihood curvature term), and a non-positive pivot is reported as an
//! error so callers can fall back to jitter.

use crate::error::{Error, Result};

/// Symmetric sparse matrix stored as the upper triangle in compressed sparse
/// column form. Row indices within each column are strictly ascending and the
/// diagonal entry is always present (explicitly zero if never assembled),
/// which is what the factorization's scatter pass expects.
#[derive(Debug, Clone)]
pub struct SparseSymmetric {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Assemble from triplets. Entries may be given in either triangle (or
    /// both); duplicates are summed. Only the upper triangle is stored.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut upper: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len() + n);
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::Dimension {
                    context: "sparse triplet index",
                    expected: n,
                    got: i.max(j),
                });
            }
            if !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite matrix entry at ({i}, {j})"
                )));
            }
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            upper.push((r, c, v));
        }
        // Guarantee a structural diagonal.
        for d in 0..n {
            upper.push((d, d, 0.0));
        }
        upper.sort_unstable_by_key(|&(r, c, _)| (c, r));

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(upper.len());
        let mut values = Vec::with_capacity(upper.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in upper {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_ptr[c + 1] += 1;
                row_idx.push(r);
                values.push(v);
                last = Some((r, c));
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (upper triangle, including the diagonal).
    pub fn nnz_upper(&self) -> usize {
        self.row_idx.len()
    }

    /// Iterate stored upper-triangle entries as `(row, col, value)`.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    /// y = A x, using the symmetry to touch each stored entry once.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "mul_vec dimension");
        let mut y = vec![0.0; self.n];
        for (r, c, v) in self.iter_upper() {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    /// xᵀ A x.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n, "quadratic_form dimension");
        let mut acc = 0.0;
        for (r, c, v) in self.iter_upper() {
            if r == c {
                acc += v * x[r] * x[r];
            } else {
                acc += 2.0 * v * x[r] * x[c];
            }
        }
        acc
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (r, c, v) in self.iter_upper() {
            if r == c {
                d[r] = v;
            }
        }
        d
    }

    /// Dense copy (row-major), intended for small matrices in tests and
    /// examples.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (r, c, v) in self.iter_upper() {
            m[r][c] += v;
            if r != c {
                m[c][r] += v;
            }
        }
        m
    }

    /// Adjacency lists of the off-diagonal pattern (used by the ordering).
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (r, c, _) in self.iter_upper() {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Fill-reducing orderings for the factorization. `Natural` keeps the input
/// order (useful for permutation-invariance checks); `ReverseCuthillMcKee`
/// narrows the bandwidth of grid-structured problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOrdering {
    Natural,
    ReverseCuthillMcKee,
}

/// Reverse Cuthill-McKee ordering of the pattern's graph. Returns `perm`
/// mapping new index -> old index. Components are seeded from minimum-degree
/// vertices; within a BFS level, children are visited in ascending degree.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();

    // Process vertices grouped by degree so each component starts from a
    // low-degree (pseudo-peripheral) vertex.
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut children: Vec<usize> =
                adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            children.sort_by_key(|&w| (degree[w], w));
            for w in children {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// LDLᵀ factorization of a permuted symmetric positive definite matrix:
/// `P A Pᵀ = L D Lᵀ` with unit lower-triangular `L` and positive diagonal `D`.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// inv_perm[old] = new
    inv_perm: Vec<usize>,
    // L stored strictly lower triangular in CSC; unit diagonal implicit.
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl SparseCholesky {
    /// Factor `a` with the requested ordering. Fails with
    /// [`Error::NotPositiveDefinite`] on a non-positive or non-finite pivot.
    pub fn factor(a: &SparseSymmetric, ordering: FillOrdering) -> Result<Self> {
        let n = a.n;
        let perm: Vec<usize> = match ordering {
            FillOrdering::Natural => (0..n).collect(),
            FillOrdering::ReverseCuthillMcKee => reverse_cuthill_mckee(&a.adjacency()),
        };
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        // Permuted upper triangle B[r, c] = A[perm[r], perm[c]] in CSC form.
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz_upper());
        for (r_old, c_old, v) in a.iter_upper() {
            let (mut r, mut c) = (inv_perm[r_old], inv_perm[c_old]);
            if r > c {
                std::mem::swap(&mut r, &mut c);
            }
            entries.push((r, c, v));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut bp = vec![0usize; n + 1];
        let mut bi = Vec::with_capacity(entries.len());
        let mut bx = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            bp[c + 1] += 1;
            bi.push(r);
            bx.push(v);
        }
        for c in 0..n {
            bp[c + 1] += bp[c];
        }

        // Symbolic pass: elimination tree and column counts. For each column
        // k, every entry B(i,k) contributes fill along the etree path from i
        // up to k; Flag marks nodes already attributed to column k.
        let none = usize::MAX;
        let mut parent = vec![none; n];
        let mut flag = vec![none; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in bp[k]..bp[k + 1] {
                let mut i = bi[p];
                while i < k && flag[i] != k {
                    if parent[i] == none {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz_l = lp[n];

        // Numeric pass: for each column k, gather the sparse row pattern in
        // topological (etree) order, then do the triangular solve
        // L(0:k-1, 0:k-1) y = B(0:k-1, k) and scale by D.
        let mut li = vec![0usize; nnz_l];
        let mut lx = vec![0.0f64; nnz_l];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut fill = vec![0usize; n]; // entries placed so far per column
        for f in flag.iter_mut() {
            *f = none;
        }
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            y[k] = 0.0;
            for p in bp[k]..bp[k + 1] {
                let i0 = bi[p];
                debug_assert!(i0 <= k);
                y[i0] += bx[p];
                let mut len = 0usize;
                let mut i = i0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for t in top..n {
                let i = pattern[t];
                let yi = y[i];
                y[i] = 0.0;
                let p2 = lp[i] + fill[i];
                for p in lp[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                li[p2] = k;
                lx[p2] = l_ki;
                fill[i] += 1;
            }
            if !(d[k] > 0.0) || !d[k].is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "pivot {k} of {n} is {}",
                    d[k]
                )));
            }
        }

        Ok(Self {
            n,
            perm,
            inv_perm,
            lp,
            li,
            lx,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The permutation in use, mapping new index -> old index.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// log det A = Σ log dᵢ (L has unit diagonal; the permutation has
    /// determinant ±1 and A is SPD, so the sign is +).
    pub fn log_det(&self) -> f64 {
        self.d.iter().map(|&di| di.ln()).sum()
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension");
        // w = P b
        let mut w: Vec<f64> = (0..self.n).map(|i| b[self.perm[i]]).collect();
        self.lsolve(&mut w);
        for i in 0..self.n {
            w[i] /= self.d[i];
        }
        self.ltsolve(&mut w);
        // x = Pᵀ w
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = w[i];
        }
        x
    }

    /// In-place forward solve L w = w (unit diagonal).
    fn lsolve(&self, w: &mut [f64]) {
        for j in 0..self.n {
            let wj = w[j];
            if wj != 0.0 {
                for p in self.lp[j]..self.lp[j + 1] {
                    w[self.li[p]] -= self.lx[p] * wj;
                }
            }
        }
    }

    /// In-place backward solve Lᵀ w = w (unit diagonal).
    fn ltsolve(&self, w: &mut [f64]) {
        for j in (0..self.n).rev() {
            let mut wj = w[j];
            for p in self.lp[j]..self.lp[j + 1] {
                wj -= self.lx[p] * w[self.li[p]];
            }
            w[j] = wj;
        }
    }

    /// Transform a standard-normal vector `z` into a draw with covariance
    /// A⁻¹: returns `u = Pᵀ L⁻ᵀ D^{-1/2} z`, so that
    /// Cov(u) = Pᵀ (L D Lᵀ)⁻¹ P = A⁻¹.
    pub fn sample_transform(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n, "sample_transform dimension");
        let mut w: Vec<f64> = (0..self.n).map(|i| z[i] / self.d[i].sqrt()).collect();
        self.ltsolve(&mut w);
        let mut u = vec![0.0; self.n];
        for i in 0..self.n {
            u[self.perm[i]] = w[i];
        }
        u
    }

    /// Diagonal of A⁻¹. Uses (A⁻¹)ⱼⱼ = ‖D^{-1/2} L⁻¹ e_q‖² with q the
    /// permuted position of j: one sparse forward solve per coordinate.
    pub fn diag_inverse(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        let mut w = vec![0.0; self.n];
        for j in 0..self.n {
            let q = self.inv_perm[j];
            for wi in w.iter_mut() {
                *wi = 0.0;
            }
            w[q] = 1.0;
            // Forward solve can start at row q: everything above is zero.
            for col in q..self.n {
                let wc = w[col];
                if wc != 0.0 {
                    for p in self.lp[col]..self.lp[col + 1] {
                        w[self.li[p]] -= self.lx[p] * wc;
                    }
                }
            }
            let mut acc = 0.0;
            for i in q..self.n {
                acc += w[i] * w[i] / self.d[i];
            }
            out[j] = acc;
        }
        out
    }
}
