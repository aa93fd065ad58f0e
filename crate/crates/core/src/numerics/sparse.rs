//! Sparse symmetric storage and an up-looking LDLᵀ factorization.
//!
//! The factorization follows the classic elimination-tree formulation: a
//! symbolic pass computes the tree and per-column nonzero counts once for a
//! given pattern and pivot order, and numeric passes reuse it for any set of
//! values on that pattern. No pivoting is performed, so the input must be
//! symmetric positive definite (or, for complex values, a small imaginary
//! perturbation of one).

use std::sync::Arc;

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Sparsity pattern of a symmetric matrix, stored with both triangles in
/// compressed-column form and sorted row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SymPattern {
    /// Builds a pattern from `(row, col)` coordinates. Both `(i, j)` and
    /// `(j, i)` are inserted; duplicates are merged.
    pub fn from_coords(n: usize, coords: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, j) in coords {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("entry ({i}, {j}) outside {n}x{n} pattern")));
            }
            cols[j].push(i);
            if i != j {
                cols[i].push(j);
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut c in cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(&c);
            col_ptr.push(row_idx.len());
        }
        Ok(Self { n, col_ptr, row_idx })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Position of entry `(i, j)` in the value array, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.col_ptr[j];
        let hi = self.col_ptr[j + 1];
        self.row_idx[lo..hi].binary_search(&i).ok().map(|p| lo + p)
    }
}

/// A symmetric matrix: shared pattern plus one value per stored entry.
#[derive(Debug, Clone)]
pub struct SparseSym<T> {
    pattern: Arc<SymPattern>,
    values: Vec<T>,
}

impl<T: Scalar> SparseSym<T> {
    pub fn new(pattern: Arc<SymPattern>, values: Vec<T>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Dimension(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, values })
    }

    pub fn zeros(pattern: Arc<SymPattern>) -> Self {
        let values = vec![T::zero(); pattern.nnz()];
        Self { pattern, values }
    }

    /// Diagonal matrix with its own diagonal-only pattern.
    pub fn diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let pattern = Arc::new(SymPattern {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
        });
        Self {
            pattern,
            values: diag.to_vec(),
        }
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.pattern.position(i, j).map_or(T::zero(), |p| self.values[p])
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut y = vec![T::zero(); n];
        for j in 0..n {
            let xj = x[j];
            for p in self.pattern.col_ptr[j]..self.pattern.col_ptr[j + 1] {
                y[self.pattern.row_idx[p]] += self.values[p] * xj;
            }
        }
        y
    }

    /// Dense row-major copy, for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        let mut d = vec![vec![T::zero(); n]; n];
        for j in 0..n {
            for p in self.pattern.col_ptr[j]..self.pattern.col_ptr[j + 1] {
                d[self.pattern.row_idx[p]][j] = self.values[p];
            }
        }
        d
    }
}

/// Reusable sparsity analysis: pivot order, elimination tree and the column
/// layout of the factor.
#[derive(Debug)]
pub struct Symbolic {
    pattern: Arc<SymPattern>,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    parent: Vec<Option<usize>>,
    l_ptr: Vec<usize>,
}

impl Symbolic {
    /// Analyses `pattern` under the pivot order `perm` (`perm[k]` is the
    /// original index eliminated at step `k`); `None` means natural order.
    pub fn analyze(pattern: Arc<SymPattern>, perm: Option<&[usize]>) -> Result<Self> {
        let n = pattern.n;
        let perm: Vec<usize> = match perm {
            Some(p) => {
                if p.len() != n {
                    return Err(Error::Dimension(format!(
                        "ordering has {} entries, matrix has {n}",
                        p.len()
                    )));
                }
                p.to_vec()
            }
            None => (0..n).collect(),
        };
        let mut inv_perm = vec![usize::MAX; n];
        for (k, &i) in perm.iter().enumerate() {
            if i >= n || inv_perm[i] != usize::MAX {
                return Err(Error::Argument("ordering is not a permutation".into()));
            }
            inv_perm[i] = k;
        }

        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let kk = perm[k];
            for p in pattern.col_ptr[kk]..pattern.col_ptr[kk + 1] {
                let mut i = inv_perm[pattern.row_idx[p]];
                if i < k {
                    while flag[i] != k {
                        if parent[i].is_none() {
                            parent[i] = Some(k);
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i].expect("set above");
                    }
                }
            }
        }
        let mut l_ptr = Vec::with_capacity(n + 1);
        l_ptr.push(0);
        for k in 0..n {
            l_ptr.push(l_ptr[k] + lnz[k]);
        }
        Ok(Self {
            pattern,
            perm,
            inv_perm,
            parent,
            l_ptr,
        })
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    /// Number of strictly-lower nonzeros in the factor.
    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.dim()]
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }
}

/// Numeric LDLᵀ factor bound to a shared [`Symbolic`] analysis.
#[derive(Debug, Clone)]
pub struct SpdFactorization<T> {
    symbolic: Arc<Symbolic>,
    l_idx: Vec<usize>,
    l_val: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> SpdFactorization<T> {
    /// Numeric factorization of `a` reusing `symbolic`. The pattern of `a`
    /// must be the one the analysis was built for.
    pub fn numeric(symbolic: Arc<Symbolic>, a: &SparseSym<T>) -> Result<Self> {
        let n = symbolic.dim();
        let mut f = Self {
            l_idx: vec![0; symbolic.factor_nnz()],
            l_val: vec![T::zero(); symbolic.factor_nnz()],
            d: vec![T::zero(); n],
            symbolic,
        };
        f.refactor(a)?;
        Ok(f)
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Pivots of the factor in elimination order.
    pub fn pivots(&self) -> &[T] {
        &self.d
    }

    /// Recomputes the numeric factor in place for new values on the same
    /// pattern; the symbolic analysis is not repeated.
    pub fn refactor(&mut self, a: &SparseSym<T>) -> Result<()> {
        let sym = &*self.symbolic;
        if !Arc::ptr_eq(&sym.pattern, &a.pattern) && *sym.pattern != *a.pattern {
            return Err(Error::Dimension(
                "matrix pattern differs from the analysed pattern".into(),
            ));
        }
        let n = sym.dim();
        let pat = &*sym.pattern;
        let mut y = vec![T::zero(); n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        let mut stack = vec![0usize; n];

        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            let kk = sym.perm[k];
            for p in pat.col_ptr[kk]..pat.col_ptr[kk + 1] {
                let mut i = sym.inv_perm[pat.row_idx[p]];
                if i <= k {
                    y[i] += a.values[p];
                    let mut len = 0;
                    while flag[i] != k {
                        stack[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = sym.parent[i].expect("reach path stays below k");
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        stack[top] = stack[len];
                    }
                }
            }
            let mut dk = y[k];
            y[k] = T::zero();
            for &i in &stack[top..n] {
                let yi = y[i];
                y[i] = T::zero();
                let start = sym.l_ptr[i];
                let end = start + lnz[i];
                for p in start..end {
                    let r = self.l_idx[p];
                    y[r] -= self.l_val[p] * yi;
                }
                let lki = yi / self.d[i];
                dk -= lki * yi;
                self.l_idx[end] = k;
                self.l_val[end] = lki;
                lnz[i] += 1;
            }
            if !(dk.re() > 0.0) || !dk.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: kk,
                    value: dk.re(),
                });
            }
            self.d[k] = dk;
        }
        Ok(())
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let sym = &*self.symbolic;
        let n = sym.dim();
        if rhs.len() != n {
            return Err(Error::Dimension(format!(
                "right-hand side has length {}, system has {n}",
                rhs.len()
            )));
        }
        let mut x: Vec<T> = sym.perm.iter().map(|&i| rhs[i]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in sym.l_ptr[j]..sym.l_ptr[j + 1] {
                x[self.l_idx[p]] -= self.l_val[p] * xj;
            }
        }
        for j in 0..n {
            x[j] = x[j] / self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in sym.l_ptr[j]..sym.l_ptr[j + 1] {
                xj -= self.l_val[p] * x[self.l_idx[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![T::zero(); n];
        for (k, &i) in sym.perm.iter().enumerate() {
            out[i] = x[k];
        }
        Ok(out)
    }
}

/// Symbolic analysis plus numeric factorization in one call.
pub fn spd_factor<T: Scalar>(a: &SparseSym<T>, ordering: Option<&[usize]>) -> Result<SpdFactorization<T>> {
    let symbolic = Arc::new(Symbolic::analyze(a.pattern.clone(), ordering)?);
    SpdFactorization::numeric(symbolic, a)
}

pub fn spd_solve<T: Scalar>(f: &SpdFactorization<T>, rhs: &[T]) -> Result<Vec<T>> {
    f.solve(rhs)
}

/// Numeric-only refactorization reusing the symbolic analysis of `f`.
pub fn spd_refactor<T: Scalar>(f: &mut SpdFactorization<T>, a: &SparseSym<T>) -> Result<()> {
    f.refactor(a)
}
