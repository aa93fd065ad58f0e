//! Sampling and smoothing operators on the vectorized matricized variable,
//! and the sparse normal system the constrained subproblems solve.
//!
//! Vectors here are `vec(W)` in column-major order, matching
//! `DMatrix::as_slice`.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{IndexMap, ReceiverGrid, SamplingMask};
use crate::numerics::{Scalar, SparseSym, SpdFactorization, SymPattern, Symbolic};

/// Selects observed entries of a matrix in increasing linear-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingOperator {
    rows: usize,
    cols: usize,
    observed: Vec<usize>,
    is_observed: Vec<bool>,
}

impl SamplingOperator {
    /// From per-entry flags in column-major matrix order.
    pub fn from_flags(rows: usize, cols: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} flags for a {rows}x{cols} matrix",
                flags.len()
            )));
        }
        let observed: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        if observed.is_empty() {
            return Err(Error::Argument("sampling operator observes no entries".into()));
        }
        Ok(Self {
            rows,
            cols,
            observed,
            is_observed: flags,
        })
    }

    pub fn new(map: &IndexMap, mask: &SamplingMask) -> Result<Self> {
        let (rows, cols) = map.shape();
        Self::from_flags(rows, cols, map.matricize_mask(mask)?)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn count(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_indices(&self) -> &[usize] {
        &self.observed
    }

    pub fn is_observed(&self, linear: usize) -> bool {
        self.is_observed[linear]
    }

    pub fn flags(&self) -> &[bool] {
        &self.is_observed
    }

    /// `A x` for a vectorized matrix.
    pub fn apply_vec<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} for sampling on {} entries",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.observed.iter().map(|&i| x[i]).collect())
    }

    /// `Aᵀ y`: scatter into an otherwise zero vector.
    pub fn adjoint_vec<T: Scalar>(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.count() {
            return Err(Error::Dimension(format!(
                "{} values for {} observed entries",
                y.len(),
                self.count()
            )));
        }
        let mut out = vec![T::zero(); self.dim()];
        for (&i, &v) in self.observed.iter().zip(y) {
            out[i] = v;
        }
        Ok(out)
    }
}

pub fn apply_sampling(op: &SamplingOperator, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.shape() != op.shape() {
        return Err(Error::Dimension(format!(
            "matrix {:?} does not match sampling shape {:?}",
            x.shape(),
            op.shape()
        )));
    }
    op.apply_vec(x.as_slice())
}

pub fn apply_sampling_adjoint(op: &SamplingOperator, y: &[f64]) -> Result<DMatrix<f64>> {
    let v = op.adjoint_vec(y)?;
    Ok(DMatrix::from_vec(op.rows, op.cols, v))
}

/// Five-point Laplacian with degree-adjusted (Neumann) boundary rows, acting
/// independently on each source's receiver grid. Stored as CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    /// Position (within the row) of the stencil centre.
    centre: Vec<usize>,
    row_sum: Vec<f64>,
}

impl SmoothingOperator {
    /// No stencil rows at all; `‖ℒw‖ = 0` for every `w`.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            centre: Vec::new(),
            row_sum: Vec::new(),
        }
    }

    /// Stencil for an `nx × ny × ns` tensor; `index(p, q, s)` gives the
    /// vector position of each gridpoint. Rows are emitted in vector order.
    pub(crate) fn stencil(
        nx: usize,
        ny: usize,
        ns: usize,
        dim: usize,
        index: impl Fn(usize, usize, usize) -> usize,
    ) -> Self {
        let mut rows: Vec<(usize, Vec<(usize, f64)>)> = Vec::with_capacity(nx * ny * ns);
        for s in 0..ns {
            for q in 0..ny {
                for p in 0..nx {
                    let mut entries = Vec::with_capacity(5);
                    let mut deg = 0.0;
                    let neighbours = [
                        (p > 0).then(|| (p - 1, q)),
                        (p + 1 < nx).then_some((p + 1, q)),
                        (q > 0).then(|| (p, q - 1)),
                        (q + 1 < ny).then_some((p, q + 1)),
                    ];
                    for (pp, qq) in neighbours.into_iter().flatten() {
                        entries.push((index(pp, qq, s), 1.0));
                        deg += 1.0;
                    }
                    let centre = index(p, q, s);
                    entries.push((centre, -deg));
                    entries.sort_by_key(|e| e.0);
                    rows.push((centre, entries));
                }
            }
        }
        rows.sort_by_key(|r| r.0);
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut centre_pos = Vec::with_capacity(rows.len());
        let mut row_sum = Vec::with_capacity(rows.len());
        for (centre, entries) in rows {
            centre_pos.push(entries.iter().position(|e| e.0 == centre).expect("centre present"));
            row_sum.push(entries.iter().map(|e| e.1).sum());
            for (c, v) in entries {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            dim,
            row_ptr,
            col_idx,
            values,
            centre: centre_pos,
            row_sum,
        }
    }

    /// Number of variables the operator acts on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stencil rows.
    pub fn edge_count(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    /// `ℒ w`, evaluated as differences against the stencil centre so that
    /// constant fields map to exactly zero.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.dim, "smoothing operator dimension");
        (0..self.edge_count())
            .map(|r| {
                let start = self.row_ptr[r];
                let wc = w[self.col_idx[start + self.centre[r]]];
                let off: f64 = self
                    .row(r)
                    .enumerate()
                    .filter(|&(k, _)| k != self.centre[r])
                    .map(|(_, (c, v))| v * (w[c] - wc))
                    .sum();
                off + self.row_sum[r] * wc
            })
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.edge_count(), "smoothing operator rows");
        let mut out = vec![0.0; self.dim];
        for (r, &yr) in y.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
        out
    }

    /// `ℒᵀℒ w` without forming the product.
    pub fn apply_gram(&self, w: &[f64]) -> Vec<f64> {
        self.apply_transpose(&self.apply(w))
    }

    /// `‖ℒ w‖²`.
    pub fn energy(&self, w: &[f64]) -> f64 {
        self.apply(w).iter().map(|v| v * v).sum()
    }

    /// Coordinates of `ℒᵀℒ` (with duplicates) and their contributions.
    fn gram_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for r in 0..self.edge_count() {
            for (a, va) in self.row(r) {
                for (b, vb) in self.row(r) {
                    out.push((a, b, va * vb));
                }
            }
        }
        out
    }
}

pub fn build_laplacian(grid: &ReceiverGrid, map: &IndexMap) -> Result<SmoothingOperator> {
    let (nx, ny, ns) = map.tensor_shape();
    if (nx, ny) != (grid.nx, grid.ny) {
        return Err(Error::Dimension(format!(
            "index map built for a {nx}x{ny} grid, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    Ok(SmoothingOperator::stencil(nx, ny, ns, map.len(), |p, q, s| {
        map.matrix_index(p + nx * (q + ny * s))
    }))
}

/// Pivot order for the normal matrix: geometric nested dissection on each
/// source's receiver grid with two-line separators (the reach of the
/// squared five-point stencil), sources one after another.
pub fn nested_dissection_order(map: &IndexMap) -> Vec<usize> {
    let (nx, ny, ns) = map.tensor_shape();
    let mut local = Vec::with_capacity(nx * ny);
    dissect(0, nx, 0, ny, &mut local);
    let mut order = Vec::with_capacity(map.len());
    for s in 0..ns {
        for &(p, q) in &local {
            order.push(map.matrix_index(p + nx * (q + ny * s)));
        }
    }
    order
}

fn dissect(p0: usize, p1: usize, q0: usize, q1: usize, out: &mut Vec<(usize, usize)>) {
    let (lp, lq) = (p1 - p0, q1 - q0);
    if lp * lq <= 16 || lp.max(lq) < 5 {
        for q in q0..q1 {
            for p in p0..p1 {
                out.push((p, q));
            }
        }
        return;
    }
    if lp >= lq {
        let mid = p0 + lp / 2 - 1;
        dissect(p0, mid, q0, q1, out);
        dissect(mid + 2, p1, q0, q1, out);
        for q in q0..q1 {
            for p in mid..mid + 2 {
                out.push((p, q));
            }
        }
    } else {
        let mid = q0 + lq / 2 - 1;
        dissect(p0, p1, q0, mid, out);
        dissect(p0, p1, mid + 2, q1, out);
        for q in mid..mid + 2 {
            for p in p0..p1 {
                out.push((p, q));
            }
        }
    }
}

/// λ- and ρ-independent part of the normal matrix: the pattern of
/// `ℒᵀℒ + I`, the values of `ℒᵀℒ` on it, and the symbolic factorization.
#[derive(Debug)]
pub struct NormalStructure {
    pattern: Arc<SymPattern>,
    gram: Vec<f64>,
    diag_pos: Vec<usize>,
    observed_diag_pos: Vec<usize>,
    symbolic: Arc<Symbolic>,
}

impl NormalStructure {
    pub fn new(smoother: &SmoothingOperator, sampler: &SamplingOperator, ordering: Option<&[usize]>) -> Result<Self> {
        let n = sampler.dim();
        if smoother.dim() != n {
            return Err(Error::Dimension(format!(
                "smoother acts on {} entries, sampler on {n}",
                smoother.dim()
            )));
        }
        let triplets = smoother.gram_triplets();
        let coords = triplets.iter().map(|&(a, b, _)| (a, b)).chain((0..n).map(|i| (i, i)));
        let pattern = Arc::new(SymPattern::from_coords(n, coords)?);
        let mut gram = vec![0.0; pattern.nnz()];
        for (a, b, v) in triplets {
            gram[pattern.position(a, b).expect("inserted")] += v;
        }
        let diag_pos: Vec<usize> = (0..n)
            .map(|i| pattern.position(i, i).expect("diagonal inserted"))
            .collect();
        let observed_diag_pos = sampler.observed_indices().iter().map(|&i| diag_pos[i]).collect();
        let symbolic = Arc::new(Symbolic::analyze(pattern.clone(), ordering)?);
        Ok(Self {
            pattern,
            gram,
            diag_pos,
            observed_diag_pos,
            symbolic,
        })
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }
}

/// `M(λ) = (1/γ)ℒᵀℒ + ρI + λAᵀA` on a shared [`NormalStructure`].
#[derive(Debug, Clone)]
pub struct NormalSystem {
    structure: Arc<NormalStructure>,
    gamma: f64,
    rho: f64,
    lambda: f64,
}

impl NormalSystem {
    pub fn new(structure: Arc<NormalStructure>, gamma: f64, rho: f64, lambda: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Argument(format!("gamma must be positive, got {gamma}")));
        }
        if !(rho > 0.0) {
            return Err(Error::Argument(format!("rho must be positive, got {rho}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self {
            structure,
            gamma,
            rho,
            lambda,
        })
    }

    pub fn structure(&self) -> &Arc<NormalStructure> {
        &self.structure
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.structure.clone(), self.gamma, self.rho, lambda)
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.structure.clone(), self.gamma, rho, self.lambda)
    }

    fn assemble<T: Scalar>(&self, lambda: T) -> SparseSym<T> {
        let s = &*self.structure;
        let inv_gamma = 1.0 / self.gamma;
        let mut values: Vec<T> = s.gram.iter().map(|&g| T::from_real(inv_gamma * g)).collect();
        for &p in &s.diag_pos {
            values[p] += T::from_real(self.rho);
        }
        for &p in &s.observed_diag_pos {
            values[p] += lambda;
        }
        SparseSym::new(s.pattern.clone(), values).expect("pattern sized values")
    }

    pub fn matrix(&self) -> SparseSym<f64> {
        self.assemble(self.lambda)
    }

    /// The matrix at a complex multiplier, for complex-step derivatives.
    pub fn matrix_complex(&self, lambda: Complex64) -> SparseSym<Complex64> {
        self.assemble(lambda)
    }

    pub fn factor(&self) -> Result<SpdFactorization<f64>> {
        SpdFactorization::numeric(self.structure.symbolic.clone(), &self.matrix())
    }

    pub fn factor_complex(&self, lambda: Complex64) -> Result<SpdFactorization<Complex64>> {
        SpdFactorization::numeric(self.structure.symbolic.clone(), &self.matrix_complex(lambda))
    }
}

/// Builds the normal system from scratch (natural pivot order).
pub fn build_normal_system(
    smoother: &SmoothingOperator,
    sampler: &SamplingOperator,
    gamma: f64,
    rho: f64,
    lambda: f64,
) -> Result<NormalSystem> {
    if !(gamma > 0.0) || !(rho > 0.0) {
        return Err(Error::Argument(format!(
            "gamma and rho must be positive, got {gamma} and {rho}"
        )));
    }
    let structure = Arc::new(NormalStructure::new(smoother, sampler, None)?);
    NormalSystem::new(structure, gamma, rho, lambda)
}

/// Power-iteration estimate of the largest eigenvalue of a symmetric PSD map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration from a fixed positive pseudo-random vector (constants
/// can lie in the kernel); returns the Rayleigh quotient once its relative
/// change drops below `tol`.
pub fn spectral_norm(apply: impl Fn(&[f64]) -> Vec<f64>, n: usize, iters: usize, tol: f64) -> SpectralEstimate {
    let mut rng = crate::numerics::Rng::new(0x9e37_79b9);
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5)).collect();
    let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm0);
    let mut estimate = 0.0;
    for it in 1..=iters {
        let w = apply(&v);
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let done = it > 1 && (rq - estimate).abs() <= tol * rq.abs();
        estimate = rq;
        if done {
            return SpectralEstimate {
                value: estimate,
                iterations: it,
                converged: true,
            };
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    SpectralEstimate {
        value: estimate,
        iterations: iters,
        converged: false,
    }
}

/// Everything a solver needs about one completion problem's geometry: the
/// sampling operator, the per-source Laplacian and the pivot order, with the
/// normal-matrix structure built on first use.
#[derive(Debug)]
pub struct Operators {
    sampler: SamplingOperator,
    smoother: SmoothingOperator,
    ordering: Option<Vec<usize>>,
    normal: OnceLock<Arc<NormalStructure>>,
}

impl Operators {
    pub fn new(grid: &ReceiverGrid, map: &IndexMap, mask: &SamplingMask) -> Result<Self> {
        mask.require_nonempty()?;
        let sampler = SamplingOperator::new(map, mask)?;
        let smoother = build_laplacian(grid, map)?;
        Ok(Self {
            sampler,
            smoother,
            ordering: Some(nested_dissection_order(map)),
            normal: OnceLock::new(),
        })
    }

    pub fn from_parts(
        sampler: SamplingOperator,
        smoother: SmoothingOperator,
        ordering: Option<Vec<usize>>,
    ) -> Result<Self> {
        if smoother.dim() != sampler.dim() {
            return Err(Error::Dimension("smoother and sampler sizes differ".into()));
        }
        Ok(Self {
            sampler,
            smoother,
            ordering,
            normal: OnceLock::new(),
        })
    }

    /// Same sampling, no smoothing rows.
    pub fn without_smoothing(&self) -> Self {
        Self {
            sampler: self.sampler.clone(),
            smoother: SmoothingOperator::empty(self.sampler.dim()),
            ordering: None,
            normal: OnceLock::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.sampler.shape()
    }

    pub fn sampler(&self) -> &SamplingOperator {
        &self.sampler
    }

    pub fn smoother(&self) -> &SmoothingOperator {
        &self.smoother
    }

    pub fn normal_structure(&self) -> Result<Arc<NormalStructure>> {
        if let Some(s) = self.normal.get() {
            return Ok(s.clone());
        }
        let s = Arc::new(NormalStructure::new(
            &self.smoother,
            &self.sampler,
            self.ordering.as_deref(),
        )?);
        Ok(self.normal.get_or_init(|| s).clone())
    }
}
