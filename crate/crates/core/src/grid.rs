//! Receiver grids, residual tensors, sampling masks and the two matricizations.
//!
//! Tensors are stored flat with index `p + nx·(q + ny·s)` (receiver x fastest,
//! then receiver y, then source), all indices zero-based. Matrices are
//! `nalgebra` column-major, so the linear index of `(i, j)` is `i + rows·j`.
//!
//! Within a receiver grid, row direction is `R_x` and column direction is
//! `R_y`: the ReceiverBySource layout vectorizes `(p, q)` column-major, and the
//! BlockTessellated layout places `p` down the rows and `q` across the
//! columns of each block.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverGrid {
    pub nx: usize,
    pub ny: usize,
    /// Kilometers between neighbouring gridpoints.
    pub spacing: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl ReceiverGrid {
    pub fn new(nx: usize, ny: usize, spacing: f64, origin_x: f64, origin_y: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Argument(format!(
                "receiver grid must be at least 2x2, got {nx}x{ny}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Argument(format!("grid spacing must be positive, got {spacing}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::Argument("grid origin must be finite".into()));
        }
        Ok(Self {
            nx,
            ny,
            spacing,
            origin_x,
            origin_y,
        })
    }

    /// 20×20 stations at 5 km spacing covering 70–165 km on both axes.
    pub fn standard() -> Self {
        Self {
            nx: 20,
            ny: 20,
            spacing: 5.0,
            origin_x: 70.0,
            origin_y: 70.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Kilometer coordinates of gridpoint `(p, q)` (zero-based).
    pub fn coords(&self, p: usize, q: usize) -> (f64, f64) {
        (
            self.origin_x + p as f64 * self.spacing,
            self.origin_y + q as f64 * self.spacing,
        )
    }
}

/// Sources with per-source energy and the energy-descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    coords: Vec<(f64, f64)>,
    energy: Vec<f64>,
    order: Vec<usize>,
}

impl SourceSet {
    /// Sources at the given coordinates, zero energy, identity order.
    pub fn new(coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Argument("source set must not be empty".into()));
        }
        if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Argument("source coordinates must be finite".into()));
        }
        let n = coords.len();
        Ok(Self {
            coords,
            energy: vec![0.0; n],
            order: (0..n).collect(),
        })
    }

    /// Builds the set from energies, deriving the order.
    pub fn with_energy(coords: Vec<(f64, f64)>, energy: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(coords)?;
        if energy.len() != s.coords.len() {
            return Err(Error::Dimension(format!(
                "{} energies for {} sources",
                energy.len(),
                s.coords.len()
            )));
        }
        if energy.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Argument("source energies must be nonnegative".into()));
        }
        s.order = energy_order(&energy);
        s.energy = energy;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    /// `order[t]` is the source at energy rank `t` (zero-based).
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// Descending by energy, ties by ascending source index.
fn energy_order(energy: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..energy.len()).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTensor {
    grid: ReceiverGrid,
    sources: SourceSet,
    values: Vec<f64>,
}

impl ResidualTensor {
    pub fn new(grid: ReceiverGrid, sources: SourceSet, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * sources.len();
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "tensor has {} values, grid x sources needs {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("tensor entries must be finite".into()));
        }
        Ok(Self { grid, sources, values })
    }

    pub fn zeros(grid: ReceiverGrid, sources: SourceSet) -> Self {
        let n = grid.len() * sources.len();
        Self {
            grid,
            sources,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &ReceiverGrid {
        &self.grid
    }

    pub fn sources(&self) -> &SourceSet {
        &self.sources
    }

    pub fn with_sources(mut self, sources: SourceSet) -> Result<Self> {
        if sources.len() != self.sources.len() {
            return Err(Error::Dimension("source count changed".into()));
        }
        self.sources = sources;
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.grid.nx, self.grid.ny, self.sources.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, p: usize, q: usize, s: usize) -> usize {
        p + self.grid.nx * (q + self.grid.ny * s)
    }

    pub fn get(&self, p: usize, q: usize, s: usize) -> f64 {
        self.values[self.index(p, q, s)]
    }

    pub fn set(&mut self, p: usize, q: usize, s: usize, v: f64) {
        let i = self.index(p, q, s);
        self.values[i] = v;
    }
}

/// Observed-entry flags over the tensor, same flat layout as [`ResidualTensor`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    shape: (usize, usize, usize),
    flags: Vec<bool>,
    count: usize,
}

impl SamplingMask {
    pub fn new(shape: (usize, usize, usize), flags: Vec<bool>) -> Result<Self> {
        if flags.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::Dimension(format!(
                "mask has {} flags for shape {shape:?}",
                flags.len()
            )));
        }
        let count = flags.iter().filter(|&&f| f).count();
        Ok(Self { shape, flags, count })
    }

    pub fn full(shape: (usize, usize, usize)) -> Self {
        let n = shape.0 * shape.1 * shape.2;
        Self {
            shape,
            flags: vec![true; n],
            count: n,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, p: usize, q: usize, s: usize) -> bool {
        self.flags[p + self.shape.0 * (q + self.shape.1 * s)]
    }

    /// Rejects masks that cannot feed a solver.
    pub fn require_nonempty(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Argument("sampling mask observes no entries".into()));
        }
        Ok(())
    }

    fn check_shape(&self, tensor: &ResidualTensor) -> Result<()> {
        if self.shape != tensor.shape() {
            return Err(Error::Dimension(format!(
                "mask shape {:?} does not match tensor shape {:?}",
                self.shape,
                tensor.shape()
            )));
        }
        Ok(())
    }
}

/// Per-source L1 energy of the observed entries and the resulting order.
pub fn compute_source_energy(tensor: &ResidualTensor, mask: &SamplingMask) -> Result<SourceSet> {
    mask.check_shape(tensor)?;
    let (nx, ny, ns) = tensor.shape();
    let per = nx * ny;
    let energy: Vec<f64> = (0..ns)
        .map(|s| {
            (s * per..(s + 1) * per)
                .filter(|&i| mask.flags[i])
                .map(|i| tensor.values[i].abs())
                .sum()
        })
        .collect();
    SourceSet::with_energy(tensor.sources.coords.clone(), energy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `(nx·ny) × n_s`: one vectorized receiver grid per column.
    ReceiverBySource,
    /// `(nx·n_bx) × (ny·n_by)`: receiver grids tiled as blocks.
    BlockTessellated { n_bx: usize, n_by: usize },
}

impl Layout {
    /// The most square block tiling for `n_s` sources (`n_bx ≤ n_by`).
    pub fn square_blocks(n_s: usize) -> Self {
        let mut n_bx = (n_s as f64).sqrt().floor() as usize;
        while n_bx > 1 && n_s % n_bx != 0 {
            n_bx -= 1;
        }
        let n_bx = n_bx.max(1);
        Layout::BlockTessellated { n_bx, n_by: n_s / n_bx }
    }
}

/// Bijection between tensor positions and matrix positions for one layout
/// and source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    layout: Layout,
    nx: usize,
    ny: usize,
    ns: usize,
    rows: usize,
    cols: usize,
    order: Vec<usize>,
    tensor_to_matrix: Vec<usize>,
    matrix_to_tensor: Vec<usize>,
}

impl IndexMap {
    pub fn new(grid: &ReceiverGrid, order: &[usize], layout: Layout) -> Result<Self> {
        let ns = order.len();
        check_permutation(order)?;
        let (nx, ny) = (grid.nx, grid.ny);
        let (rows, cols) = match layout {
            Layout::ReceiverBySource => (nx * ny, ns),
            Layout::BlockTessellated { n_bx, n_by } => {
                if n_bx * n_by != ns || n_bx == 0 {
                    return Err(Error::Argument(format!(
                        "block layout {n_bx}x{n_by} does not hold {ns} sources"
                    )));
                }
                (nx * n_bx, ny * n_by)
            }
        };
        let total = nx * ny * ns;
        let mut tensor_to_matrix = vec![0; total];
        let mut matrix_to_tensor = vec![0; total];
        for (t, &s) in order.iter().enumerate() {
            for q in 0..ny {
                for p in 0..nx {
                    let (i, j) = match layout {
                        Layout::ReceiverBySource => (p + nx * q, t),
                        Layout::BlockTessellated { n_bx, .. } => {
                            let (bi, bj) = (t % n_bx, t / n_bx);
                            (bi * nx + p, bj * ny + q)
                        }
                    };
                    let ti = p + nx * (q + ny * s);
                    let mi = i + rows * j;
                    tensor_to_matrix[ti] = mi;
                    matrix_to_tensor[mi] = ti;
                }
            }
        }
        Ok(Self {
            layout,
            nx,
            ny,
            ns,
            rows,
            cols,
            order: order.to_vec(),
            tensor_to_matrix,
            matrix_to_tensor,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn tensor_shape(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.ns)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.tensor_to_matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor_to_matrix.is_empty()
    }

    /// Matrix `(i, j)` of tensor entry `(p, q, s)`.
    pub fn to_matrix(&self, p: usize, q: usize, s: usize) -> (usize, usize) {
        let mi = self.tensor_to_matrix[p + self.nx * (q + self.ny * s)];
        (mi % self.rows, mi / self.rows)
    }

    /// Tensor `(p, q, s)` of matrix entry `(i, j)`.
    pub fn to_tensor(&self, i: usize, j: usize) -> (usize, usize, usize) {
        let ti = self.matrix_to_tensor[i + self.rows * j];
        let per = self.nx * self.ny;
        (ti % self.nx, (ti % per) / self.nx, ti / per)
    }

    /// Linear matrix index of a linear tensor index.
    pub fn matrix_index(&self, tensor_index: usize) -> usize {
        self.tensor_to_matrix[tensor_index]
    }

    /// Linear tensor index of a linear matrix index.
    pub fn tensor_index(&self, matrix_index: usize) -> usize {
        self.matrix_to_tensor[matrix_index]
    }

    /// Places flat tensor data into the matrix layout.
    pub fn scatter(&self, tensor_values: &[f64]) -> Result<DMatrix<f64>> {
        if tensor_values.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} tensor values for a map of {} entries",
                tensor_values.len(),
                self.len()
            )));
        }
        let mut m = DMatrix::zeros(self.rows, self.cols);
        let data = m.as_mut_slice();
        for (ti, &mi) in self.tensor_to_matrix.iter().enumerate() {
            data[mi] = tensor_values[ti];
        }
        Ok(m)
    }

    /// Reads the matrix back into flat tensor order.
    pub fn gather(&self, matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
        if matrix.shape() != (self.rows, self.cols) {
            return Err(Error::Dimension(format!(
                "matrix shape {:?} does not match layout {:?}",
                matrix.shape(),
                (self.rows, self.cols)
            )));
        }
        let data = matrix.as_slice();
        Ok(self.tensor_to_matrix.iter().map(|&mi| data[mi]).collect())
    }

    /// Mask flags in matrix linear order.
    pub fn matricize_mask(&self, mask: &SamplingMask) -> Result<Vec<bool>> {
        if mask.shape() != (self.nx, self.ny, self.ns) {
            return Err(Error::Dimension(format!(
                "mask shape {:?} does not match map shape {:?}",
                mask.shape(),
                (self.nx, self.ny, self.ns)
            )));
        }
        let mut out = vec![false; self.len()];
        for (ti, &mi) in self.tensor_to_matrix.iter().enumerate() {
            out[mi] = mask.flags[ti];
        }
        Ok(out)
    }
}

fn check_permutation(order: &[usize]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &s in order {
        if s >= order.len() || seen[s] {
            return Err(Error::Argument(format!("source order {order:?} is not a permutation")));
        }
        seen[s] = true;
    }
    Ok(())
}

/// A tensor flattened into one of the two layouts, carrying what is needed to
/// invert it.
#[derive(Debug, Clone)]
pub struct MatricizedView {
    grid: ReceiverGrid,
    sources: SourceSet,
    map: Arc<IndexMap>,
    matrix: DMatrix<f64>,
}

impl MatricizedView {
    pub fn from_matrix(template: &MatricizedView, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.shape() != template.matrix.shape() {
            return Err(Error::Dimension("matrix shape does not match view".into()));
        }
        Ok(Self {
            matrix,
            ..template.clone()
        })
    }

    pub fn layout(&self) -> Layout {
        self.map.layout
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.matrix
    }

    pub fn index_map(&self) -> &Arc<IndexMap> {
        &self.map
    }

    pub fn grid(&self) -> &ReceiverGrid {
        &self.grid
    }

    pub fn sources(&self) -> &SourceSet {
        &self.sources
    }

    /// For block layouts, `layout[i][j]` is the energy rank whose grid sits in
    /// block `(i, j)`.
    pub fn source_layout(&self) -> Option<Vec<Vec<usize>>> {
        match self.map.layout {
            Layout::ReceiverBySource => None,
            Layout::BlockTessellated { n_bx, n_by } => {
                Some((0..n_bx).map(|i| (0..n_by).map(|j| i + n_bx * j).collect()).collect())
            }
        }
    }
}

fn matricize(tensor: &ResidualTensor, order: &[usize], layout: Layout) -> Result<MatricizedView> {
    if order.len() != tensor.sources.len() {
        return Err(Error::Argument(format!(
            "order has {} entries for {} sources",
            order.len(),
            tensor.sources.len()
        )));
    }
    let map = IndexMap::new(&tensor.grid, order, layout)?;
    let matrix = map.scatter(&tensor.values)?;
    Ok(MatricizedView {
        grid: tensor.grid.clone(),
        sources: tensor.sources.clone(),
        map: Arc::new(map),
        matrix,
    })
}

/// Column `t` holds the column-major receiver grid of the source at rank `t`.
pub fn matricize_receiver_by_source(tensor: &ResidualTensor, order: &[usize]) -> Result<MatricizedView> {
    matricize(tensor, order, Layout::ReceiverBySource)
}

/// Receiver grids tiled into an `n_bx × n_by` block layout, filled down the
/// first block column first.
pub fn matricize_block(tensor: &ResidualTensor, order: &[usize], n_bx: usize, n_by: usize) -> Result<MatricizedView> {
    matricize(tensor, order, Layout::BlockTessellated { n_bx, n_by })
}

pub fn matricize_with(tensor: &ResidualTensor, order: &[usize], layout: Layout) -> Result<MatricizedView> {
    matricize(tensor, order, layout)
}

pub fn dematricize(view: &MatricizedView) -> Result<ResidualTensor> {
    let values = view.map.gather(&view.matrix)?;
    ResidualTensor::new(view.grid.clone(), view.sources.clone(), values)
}
