//! Minimal sparse symmetric toolkit for the normal equations: CSC upper
//! storage, reverse Cuthill–McKee ordering, and an up-looking LDLᵀ
//! factorization (elimination-tree driven, no supernodes). Problem sizes are
//! proportional to face counts, and the normal-equation patterns are
//! mesh-local, so bandwidth reduction plus a simplicial factor is plenty.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("non-positive pivot at column {col} (value {value:.3e})")]
    NotPositiveDefinite { col: usize, value: f64 },
}

/// Symmetric matrix stored as its upper triangle (diagonal included) in
/// compressed sparse column order; within each column, row indices ascend.
#[derive(Debug, Clone)]
pub struct SymCscUpper {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SymCscUpper {
    /// Build the pattern from unordered (row, col) pairs of the upper
    /// triangle; duplicates collapse. Every diagonal entry is always present
    /// so damping can be added later.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut entries: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (i, j) in pairs {
            debug_assert!(i <= j && j < n);
            entries.push((j, i)); // sort by column, then row
        }
        entries.sort_unstable();
        entries.dedup();
        let mut col_ptr = vec![0usize; n + 1];
        for &(j, _) in &entries {
            col_ptr[j + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        let row_idx = entries.iter().map(|&(_, i)| i).collect();
        Self {
            n,
            col_ptr,
            row_idx,
            values: vec![0.0; entries.len()],
        }
    }

    pub fn zero_values(&mut self) {
        self.values.fill(0.0);
    }

    /// Slot of entry (row, col), row ≤ col; the pattern must contain it.
    pub fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(row <= col);
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        lo + self.row_idx[lo..hi]
            .binary_search(&row)
            .expect("entry missing from symbolic pattern")
    }

    /// Slots of the n diagonal entries.
    pub fn diagonal_slots(&self) -> Vec<usize> {
        (0..self.n).map(|j| self.slot(j, j)).collect()
    }

    /// y = A x with the symmetric matrix implied by the stored upper half.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert!(x.len() == self.n && y.len() == self.n);
        y.fill(0.0);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
    }

    /// Dense symmetric mirror, for oracles and small problems.
    #[cfg(test)]
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                m[(i, j)] = self.values[p];
                m[(j, i)] = self.values[p];
            }
        }
        m
    }
}

/// LDLᵀ factor with unit lower-triangular L stored by columns.
pub struct LdlFactor {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<f64>,
}

/// Reusable workspace so repeated factorizations of the same pattern do not
/// allocate.
pub struct LdlSymbolic {
    parent: Vec<i64>,
    col_counts: Vec<usize>,
    flag: Vec<usize>,
    pattern: Vec<usize>,
    stack: Vec<usize>,
    y: Vec<f64>,
    fill: Vec<usize>,
}

impl LdlSymbolic {
    /// Elimination tree and column counts of L for the given pattern.
    pub fn analyze(a: &SymCscUpper) -> Self {
        let n = a.n;
        let mut parent = vec![-1i64; n];
        let mut col_counts = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            flag[k] = k;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let mut i = a.row_idx[p];
                while flag[i] != k {
                    if parent[i] == -1 {
                        parent[i] = k as i64;
                    }
                    col_counts[i] += 1;
                    flag[i] = k;
                    i = parent[i] as usize;
                }
            }
        }
        Self {
            parent,
            col_counts,
            flag: vec![usize::MAX; n],
            pattern: vec![0; n],
            stack: vec![0; n],
            y: vec![0.0; n],
            fill: vec![0; n],
        }
    }

    /// Numeric factorization; fails on a non-positive or non-finite pivot
    /// (the caller responds by increasing damping).
    pub fn factor(&mut self, a: &SymCscUpper) -> Result<LdlFactor, FactorError> {
        let n = a.n;
        let mut col_ptr = vec![0usize; n + 1];
        for i in 0..n {
            col_ptr[i + 1] = col_ptr[i] + self.col_counts[i];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0f64; nnz];
        let mut diag = vec![0.0f64; n];
        self.fill.fill(0);

        for k in 0..n {
            let mut top = n;
            self.flag[k] = k;
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                let entry_row = a.row_idx[p];
                self.y[entry_row] += a.values[p];
                let mut i = entry_row;
                let mut len = 0;
                while self.flag[i] != k {
                    self.pattern[len] = i;
                    len += 1;
                    self.flag[i] = k;
                    i = self.parent[i] as usize;
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    self.stack[top] = self.pattern[len];
                }
            }
            let mut dk = self.y[k];
            self.y[k] = 0.0;
            for s in top..n {
                let i = self.stack[s];
                let yi = self.y[i];
                self.y[i] = 0.0;
                let p2 = col_ptr[i] + self.fill[i];
                for p in col_ptr[i]..p2 {
                    self.y[row_idx[p]] -= values[p] * yi;
                }
                let l_ki = yi / diag[i];
                dk -= l_ki * yi;
                row_idx[p2] = k;
                values[p2] = l_ki;
                self.fill[i] += 1;
            }
            if !(dk > 0.0) || !dk.is_finite() {
                // Leave the workspace clean for the next attempt.
                self.y.fill(0.0);
                return Err(FactorError::NotPositiveDefinite { col: k, value: dk });
            }
            diag[k] = dk;
        }
        Ok(LdlFactor {
            n,
            col_ptr,
            row_idx,
            values,
            diag,
        })
    }
}

impl LdlFactor {
    /// Solve (L D Lᵀ) x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let bi = b[i];
            for p in self.col_ptr[i]..self.col_ptr[i + 1] {
                b[self.row_idx[p]] -= self.values[p] * bi;
            }
        }
        for i in 0..self.n {
            b[i] /= self.diag[i];
        }
        for i in (0..self.n).rev() {
            let mut bi = b[i];
            for p in self.col_ptr[i]..self.col_ptr[i + 1] {
                bi -= self.values[p] * b[self.row_idx[p]];
            }
            b[i] = bi;
        }
    }
}

/// Reverse Cuthill–McKee ordering of an undirected graph given as neighbor
/// lists; returns `perm` with `perm[new] = old`. Deterministic: ties break by
/// vertex index, components are visited in index order.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree = |v: usize| adj[v].len();
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];

    let bfs_layers = |start: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| {
        let from = order.len();
        order.push(start);
        visited[start] = true;
        let mut head = from;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_unstable_by_key(|&w| (degree(w), w));
            for w in nbrs {
                if !visited[w] {
                    visited[w] = true;
                    order.push(w);
                }
            }
        }
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start: BFS to the farthest vertex twice.
        let mut start = seed;
        for _ in 0..2 {
            let mut probe_visited = visited.clone();
            let mut probe_order = Vec::new();
            bfs_layers(start, &mut probe_visited, &mut probe_order);
            let last = *probe_order.last().unwrap();
            if last == start {
                break;
            }
            start = last;
        }
        bfs_layers(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}
