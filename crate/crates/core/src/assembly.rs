//! Q1 finite element assembly on tensor grids.
//!
//! Three discrete objects are built here: the full ε-scaled stiffness
//! system for the perturbed problem, the banded slice operator for the
//! limit/cascade problems over ω₂, and the per-slice load vectors that
//! drive the expansion hierarchy.
//!
//! Conventions: multilinear elements, tensor-product Gauss quadrature with
//! two points per axis, coefficients evaluated at the quadrature points.
//! Cascade sources split by block: X₂-divergences are integrated by parts
//! onto the slice test functions, X₁-divergences are formed strongly from
//! central differences of nodal fluxes. Nodal fields vanish outside the
//! interior node set and fluxes vanish on the lateral boundary, so every
//! difference stencil closes with zero ghost values.

use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::coeffs::{scaled_block_weight, BlockCoefficientField};
use crate::expr::{EvalError, ScalarExpr};
use crate::grid::TensorGrid;
use crate::linalg::{BandedFactor, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssembleError {
    #[error(
        "grid is {grid_dim}-dimensional with split {grid_split}, coefficients are \
         {field_dim}-dimensional with split {field_split}"
    )]
    DomainMismatch {
        grid_dim: usize,
        grid_split: usize,
        field_dim: usize,
        field_split: usize,
    },
    #[error("coefficient or source evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
    #[error("slice assembly requires A22 to depend only on X2")]
    A22DependsOnX1,
    #[error("nodal fields live on different grids")]
    GridMismatch,
    #[error("cascade order {k} needs the term two levels back")]
    MissingPrev2 { k: usize },
    #[error("epsilon must lie in (0, 1], got {0}")]
    BadEpsilon(f64),
}

/// Sparse symmetric-capable matrix in compressed sparse row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        let cols = &self.col_idx[r.clone()];
        let k = cols.binary_search(&j).expect("entry outside stencil pattern");
        self.values[r.start + k] += v;
    }

    /// y = M x
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest relative asymmetry |M_ij - M_ji| / max(|M_ij|, 1).
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let other = self.get(*c, i);
                worst = worst.max((v - other).abs() / v.abs().max(1.0));
            }
        }
        worst
    }
}

/// Full stiffness system over the interior nodes.
#[derive(Debug, Clone)]
pub struct SparseSymSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub symmetric: bool,
    grid: Arc<TensorGrid>,
}

impl SparseSymSystem {
    pub fn grid(&self) -> &Arc<TensorGrid> {
        &self.grid
    }
}

/// Symmetric-band-width matrix stored by diagonals; used for the slice
/// stiffness and mass operators.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    half_bw: usize,
    /// data[(i - j + p) * n + j] = A[i][j] for |i - j| <= p.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, half_bw: usize) -> Self {
        BandedMatrix {
            n,
            half_bw,
            data: vec![0.0; (2 * half_bw + 1) * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        (i + self.half_bw - j) * self.n + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.half_bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i.abs_diff(j) <= self.half_bw);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.half_bw);
            let hi = (i + self.half_bw).min(self.n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.data[self.slot(i, j)] * x[j];
            }
            y[i] = acc;
        }
    }
}

/// Banded operator of one X₂-slice. When A22 depends only on X₂ the same
/// matrix serves every slice, so the factorization is computed once and
/// cached behind a `OnceLock`.
#[derive(Debug)]
pub struct SliceSystem {
    pub matrix: BandedMatrix,
    pub(crate) factor: OnceLock<Result<BandedFactor, LinalgError>>,
}

impl SliceSystem {
    pub fn new(matrix: BandedMatrix) -> Self {
        SliceSystem {
            matrix,
            factor: OnceLock::new(),
        }
    }
}

/// Real values on the interior nodes of a grid; boundary values are
/// implicitly zero. Represents the Q1 interpolant of a discrete H¹₀
/// function.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    grid: Arc<TensorGrid>,
    values: Vec<f64>,
}

impl NodalField {
    pub fn zeros(grid: Arc<TensorGrid>) -> Self {
        let n = grid.interior_count();
        NodalField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(grid: Arc<TensorGrid>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.interior_count());
        NodalField { grid, values }
    }

    /// Interpolant: evaluates `f` at every interior node.
    pub fn from_point_fn(grid: Arc<TensorGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.interior_count());
        let mut point = vec![0.0; grid.dim()];
        for multi in grid.iter_interior() {
            grid.coord_into(&multi, &mut point);
            values.push(f(&point));
        }
        NodalField { grid, values }
    }

    pub fn grid(&self) -> &Arc<TensorGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_grid(&self, other: &NodalField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &NodalField) {
        assert!(self.same_grid(other), "nodal fields on different grids");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// Mass-lumped discrete L² norm: sqrt(Πh_i · Σ v²).
    pub fn discrete_l2(&self) -> f64 {
        let cell: f64 = self.grid.spacing().iter().product();
        (cell * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

// ---------------------------------------------------------------------------
// Q1 reference data shared by every assembly routine.

pub(crate) struct QuadPoint {
    pub weight: f64,
    /// Fractional position in the cell, per axis, in (0, 1).
    pub frac: Vec<f64>,
    /// shape[a]: value of basis a at this point.
    pub shape: Vec<f64>,
    /// grad[a * dims + i]: physical derivative of basis a along axis i.
    pub grad: Vec<f64>,
}

pub(crate) struct Q1Ref {
    pub ncorners: usize,
    /// corner_offsets[a]: δ ∈ {0,1}^dims, lexicographic.
    pub corner_offsets: Vec<Vec<usize>>,
    pub points: Vec<QuadPoint>,
}

impl Q1Ref {
    pub(crate) fn new(h: &[f64]) -> Self {
        let dims = h.len();
        let ncorners = 1 << dims;
        let corner_offsets: Vec<Vec<usize>> = (0..ncorners)
            .map(|a| (0..dims).map(|i| (a >> (dims - 1 - i)) & 1).collect())
            .collect();
        // Two-point Gauss on (0,1): 1/2 ± 1/(2√3), weights 1/2.
        let g = 0.5 / 3.0f64.sqrt();
        let nodes = [0.5 - g, 0.5 + g];
        let nqp = 1usize << dims;
        let mut points = Vec::with_capacity(nqp);
        for qp in 0..nqp {
            let frac: Vec<f64> = (0..dims)
                .map(|i| nodes[(qp >> (dims - 1 - i)) & 1])
                .collect();
            let weight: f64 = h.iter().map(|hi| hi / 2.0).product();
            let mut shape = Vec::with_capacity(ncorners);
            let mut grad = Vec::with_capacity(ncorners * dims);
            for delta in &corner_offsets {
                let mut s = 1.0;
                for i in 0..dims {
                    s *= if delta[i] == 0 { 1.0 - frac[i] } else { frac[i] };
                }
                shape.push(s);
                for i in 0..dims {
                    let mut gviv = if delta[i] == 0 { -1.0 } else { 1.0 } / h[i];
                    for l in 0..dims {
                        if l != i {
                            gviv *= if delta[l] == 0 { 1.0 - frac[l] } else { frac[l] };
                        }
                    }
                    grad.push(gviv);
                }
            }
            points.push(QuadPoint {
                weight,
                frac,
                shape,
                grad,
            });
        }
        Q1Ref {
            ncorners,
            corner_offsets,
            points,
        }
    }
}

fn check_domains(
    field: &BlockCoefficientField,
    grid: &TensorGrid,
) -> Result<(), AssembleError> {
    if field.dim() != grid.dim() || field.split() != grid.split() {
        return Err(AssembleError::DomainMismatch {
            grid_dim: grid.dim(),
            grid_split: grid.split(),
            field_dim: field.dim(),
            field_split: field.split(),
        });
    }
    Ok(())
}

fn eval_at(
    expr: &ScalarExpr,
    point: &[f64],
) -> Result<f64, AssembleError> {
    expr.eval(point).map_err(|source| AssembleError::Eval {
        point: point.to_vec(),
        source,
    })
}

/// CSR pattern of the Q1 stencil: each interior node couples to its
/// interior neighbors within offset ±1 per axis.
fn build_pattern(grid: &TensorGrid) -> CsrMatrix {
    let dim = grid.dim();
    let n = grid.interior_count();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0usize);
    let mut neighbor = vec![0usize; dim];
    for multi in grid.iter_interior() {
        let noffsets = 3usize.pow(dim as u32);
        for code in 0..noffsets {
            let mut c = code;
            let mut ok = true;
            for i in (0..dim).rev() {
                let off = (c % 3) as isize - 1;
                c /= 3;
                let m = multi[i] as isize + off;
                if m < 1 || m >= grid.subdivisions()[i] as isize {
                    ok = false;
                    break;
                }
                neighbor[i] = m as usize;
            }
            if ok {
                col_idx.push(grid.interior_index(&neighbor).unwrap());
            }
        }
        debug_assert!(
            col_idx[*row_ptr.last().unwrap()..].windows(2).all(|w| w[0] < w[1]),
            "stencil columns must be sorted"
        );
        row_ptr.push(col_idx.len());
    }
    let nnz = col_idx.len();
    CsrMatrix {
        n,
        row_ptr,
        col_idx,
        values: vec![0.0; nnz],
    }
}

/// Assembles the ε-scaled stiffness matrix and the load of `f`.
pub fn assemble_perturbed(
    field: &BlockCoefficientField,
    eps: f64,
    grid: &Arc<TensorGrid>,
    f: &ScalarExpr,
) -> Result<SparseSymSystem, AssembleError> {
    assemble_perturbed_fn(field, eps, grid, &|x| f.eval(x))
}

/// Same as [`assemble_perturbed`] with the source given as a callable, so
/// oracle mode sets can drive the load directly.
pub fn assemble_perturbed_fn(
    field: &BlockCoefficientField,
    eps: f64,
    grid: &Arc<TensorGrid>,
    f: &dyn Fn(&[f64]) -> Result<f64, EvalError>,
) -> Result<SparseSymSystem, AssembleError> {
    check_domains(field, grid)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(AssembleError::BadEpsilon(eps));
    }
    let dim = grid.dim();
    let q = field.split();
    let q1 = Q1Ref::new(grid.spacing());
    let mut matrix = build_pattern(grid);
    let mut rhs = vec![0.0; grid.interior_count()];

    // Entries that are syntactically zero never contribute.
    let active: Vec<(usize, usize)> = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .filter(|&(i, j)| !field.entry(i, j).is_const_zero())
        .collect();
    let weights: Vec<f64> = active
        .iter()
        .map(|&(i, j)| scaled_block_weight(i + 1, j + 1, q, eps))
        .collect();

    let nc = q1.ncorners;
    let mut kloc = vec![0.0; nc * nc];
    let mut floc = vec![0.0; nc];
    let mut point = vec![0.0; dim];
    let mut corner_multi = vec![0usize; dim];
    let mut corner_rows: Vec<Option<usize>> = vec![None; nc];

    for cell in grid.iter_cells() {
        kloc.fill(0.0);
        floc.fill(0.0);
        for qp in &q1.points {
            for i in 0..dim {
                point[i] = grid.domain().lower()[i]
                    + (cell[i] as f64 + qp.frac[i]) * grid.spacing()[i];
            }
            for (t, &(i, j)) in active.iter().enumerate() {
                let a = eval_at(field.entry(i, j), &point)?;
                let w = weights[t] * a;
                for ca in 0..nc {
                    let ga = qp.grad[ca * dim + i];
                    if ga == 0.0 {
                        continue;
                    }
                    for cb in 0..nc {
                        kloc[ca * nc + cb] += qp.weight * w * ga * qp.grad[cb * dim + j];
                    }
                }
            }
            let fv = f(&point).map_err(|source| AssembleError::Eval {
                point: point.clone(),
                source,
            })?;
            for ca in 0..nc {
                floc[ca] += qp.weight * fv * qp.shape[ca];
            }
        }
        for ca in 0..nc {
            for i in 0..dim {
                corner_multi[i] = cell[i] + q1.corner_offsets[ca][i];
            }
            corner_rows[ca] = grid.interior_index(&corner_multi);
        }
        for ca in 0..nc {
            let Some(row) = corner_rows[ca] else { continue };
            rhs[row] += floc[ca];
            for cb in 0..nc {
                if let Some(col) = corner_rows[cb] {
                    matrix.add(row, col, kloc[ca * nc + cb]);
                }
            }
        }
    }

    let symmetric = field.is_symmetric();
    if symmetric {
        // Kill quadrature round-off asymmetry so the stored matrix is
        // exactly symmetric.
        for i in 0..matrix.n {
            let r = matrix.row_ptr[i]..matrix.row_ptr[i + 1];
            for k in r {
                let j = matrix.col_idx[k];
                if j > i {
                    let other = matrix.get(j, i);
                    let avg = 0.5 * (matrix.values[k] + other);
                    matrix.values[k] = avg;
                    let rj = matrix.row_ptr[j]..matrix.row_ptr[j + 1];
                    let pos = matrix.col_idx[rj.clone()].binary_search(&i).unwrap();
                    matrix.values[rj.start + pos] = avg;
                }
            }
        }
    }

    Ok(SparseSymSystem {
        matrix,
        rhs,
        symmetric,
        grid: Arc::clone(grid),
    })
}

// ---------------------------------------------------------------------------
// Slice geometry and operators.

/// The X₂ sub-grid a slice problem lives on.
pub(crate) struct SliceGeom {
    pub dims: usize,
    pub subs: Vec<usize>,
    pub h: Vec<f64>,
    pub lower: Vec<f64>,
    /// Strides of the slice-local interior numbering (matches the global
    /// ordering restricted to one slice).
    pub strides: Vec<usize>,
    pub interior: usize,
}

impl SliceGeom {
    pub(crate) fn from_grid(grid: &TensorGrid) -> Self {
        let q = grid.split();
        let dims = grid.dim() - q;
        let subs: Vec<usize> = grid.subdivisions()[q..].to_vec();
        let h: Vec<f64> = grid.spacing()[q..].to_vec();
        let lower: Vec<f64> = grid.domain().lower()[q..].to_vec();
        let mut strides = vec![1usize; dims];
        for i in (0..dims - 1).rev() {
            strides[i] = strides[i + 1] * (subs[i + 1] - 1);
        }
        let interior = subs.iter().map(|n| n - 1).product();
        SliceGeom {
            dims,
            subs,
            h,
            lower,
            strides,
            interior,
        }
    }

    fn interior_index(&self, multi: &[usize]) -> Option<usize> {
        let mut idx = 0;
        for i in 0..self.dims {
            if multi[i] < 1 || multi[i] >= self.subs[i] {
                return None;
            }
            idx += (multi[i] - 1) * self.strides[i];
        }
        Some(idx)
    }

    pub(crate) fn half_bandwidth(&self) -> usize {
        self.strides.iter().sum()
    }

    fn cells(&self) -> crate::grid::MultiIndexIter {
        // Reuse the grid iterator machinery through a throwaway borrow.
        cells_iter(&self.subs)
    }
}

fn cells_iter(subs: &[usize]) -> crate::grid::MultiIndexIter {
    // MultiIndexIter construction is private to grid; route through a tiny
    // shim grid-free constructor.
    crate::grid::MultiIndexIter::cells_over(subs)
}

/// Midpoint of ω₁, used to pin the X₁ coordinates when evaluating A22
/// entries (legal because slice assembly requires A22 independent of X₁).
fn x1_midpoint(grid: &TensorGrid) -> Vec<f64> {
    (0..grid.split())
        .map(|i| 0.5 * (grid.domain().lower()[i] + grid.domain().upper()[i]))
        .collect()
}

/// Assembles the (N−q)-dimensional Q1 stiffness matrix of the A22 block,
/// shared by every X₁ slice.
pub fn assemble_slice(
    field: &BlockCoefficientField,
    grid: &TensorGrid,
) -> Result<SliceSystem, AssembleError> {
    check_domains(field, grid)?;
    if !field.a22_x2_only() {
        return Err(AssembleError::A22DependsOnX1);
    }
    let q = grid.split();
    let geom = SliceGeom::from_grid(grid);
    let q1 = Q1Ref::new(&geom.h);
    let mut matrix = BandedMatrix::zeros(geom.interior, geom.half_bandwidth());

    let active: Vec<(usize, usize)> = (0..geom.dims)
        .flat_map(|i| (0..geom.dims).map(move |j| (i, j)))
        .filter(|&(i, j)| !field.entry(q + i, q + j).is_const_zero())
        .collect();

    let nc = q1.ncorners;
    let mut kloc = vec![0.0; nc * nc];
    let mut point = vec![0.0; grid.dim()];
    point[..q].copy_from_slice(&x1_midpoint(grid));
    let mut corner_multi = vec![0usize; geom.dims];
    let mut corner_rows: Vec<Option<usize>> = vec![None; nc];

    for cell in geom.cells() {
        kloc.fill(0.0);
        for qp in &q1.points {
            for i in 0..geom.dims {
                point[q + i] = geom.lower[i] + (cell[i] as f64 + qp.frac[i]) * geom.h[i];
            }
            for &(i, j) in &active {
                let a = eval_at(field.entry(q + i, q + j), &point)?;
                for ca in 0..nc {
                    let ga = qp.grad[ca * geom.dims + i];
                    if ga == 0.0 {
                        continue;
                    }
                    for cb in 0..nc {
                        kloc[ca * nc + cb] +=
                            qp.weight * a * ga * qp.grad[cb * geom.dims + j];
                    }
                }
            }
        }
        for ca in 0..nc {
            for i in 0..geom.dims {
                corner_multi[i] = cell[i] + q1.corner_offsets[ca][i];
            }
            corner_rows[ca] = geom.interior_index(&corner_multi);
        }
        for ca in 0..nc {
            let Some(row) = corner_rows[ca] else { continue };
            for cb in 0..nc {
                if let Some(col) = corner_rows[cb] {
                    matrix.add(row, col, kloc[ca * nc + cb]);
                }
            }
        }
    }

    // Symmetrize when the A22 block is syntactically symmetric.
    let sym = (0..geom.dims).all(|i| {
        (i + 1..geom.dims).all(|j| field.entry(q + i, q + j) == field.entry(q + j, q + i))
    });
    if sym {
        for i in 0..matrix.n() {
            for j in i + 1..=(i + matrix.half_bandwidth()).min(matrix.n() - 1) {
                let avg = 0.5 * (matrix.get(i, j) + matrix.get(j, i));
                matrix.set(i, j, avg);
                matrix.set(j, i, avg);
            }
        }
    }

    Ok(SliceSystem::new(matrix))
}

/// Load vector of `f` restricted to the slice at `x1_multi`, integrated
/// against the slice basis functions.
pub fn slice_load_fn(
    grid: &TensorGrid,
    x1_multi: &[usize],
    f: &dyn Fn(&[f64]) -> Result<f64, EvalError>,
) -> Result<Vec<f64>, AssembleError> {
    let q = grid.split();
    let geom = SliceGeom::from_grid(grid);
    let q1 = Q1Ref::new(&geom.h);
    let mut load = vec![0.0; geom.interior];
    let mut point = vec![0.0; grid.dim()];
    for i in 0..q {
        point[i] = grid.domain().lower()[i] + x1_multi[i] as f64 * grid.spacing()[i];
    }
    let mut corner_multi = vec![0usize; geom.dims];
    for cell in geom.cells() {
        for qp in &q1.points {
            for i in 0..geom.dims {
                point[q + i] = geom.lower[i] + (cell[i] as f64 + qp.frac[i]) * geom.h[i];
            }
            let fv = f(&point).map_err(|source| AssembleError::Eval {
                point: point.clone(),
                source,
            })?;
            for ca in 0..q1.ncorners {
                for i in 0..geom.dims {
                    corner_multi[i] = cell[i] + q1.corner_offsets[ca][i];
                }
                if let Some(row) = geom.interior_index(&corner_multi) {
                    load[row] += qp.weight * fv * qp.shape[ca];
                }
            }
        }
    }
    Ok(load)
}

// ---------------------------------------------------------------------------
// Cascade right-hand sides.

/// Per-slice load vectors for the order-`k` cascade equation.
///
/// The X₂-divergence source is tested weakly (slice test functions vanish
/// on ∂ω₂); the X₁-divergence sources are formed strongly from nodal
/// fluxes — coefficient × difference gradient, then a central-difference
/// divergence, then quadrature of the resulting nodal source against the
/// slice basis. Gradients are central at interior nodes; on boundary nodes
/// the normal component uses the second-order one-sided stencil with the
/// vanishing boundary value, which reproduces the zero flux of regular
/// data to O(h²) and stays bounded for data that is merely H¹₀.
pub fn cascade_rhs(
    k: usize,
    u_prev: &NodalField,
    u_prev2: Option<&NodalField>,
    field: &BlockCoefficientField,
    grid: &Arc<TensorGrid>,
) -> Result<Vec<Vec<f64>>, AssembleError> {
    check_domains(field, grid)?;
    assert!(k >= 1, "cascade sources start at order 1");
    if k >= 2 && u_prev2.is_none() {
        return Err(AssembleError::MissingPrev2 { k });
    }
    if !(Arc::ptr_eq(u_prev.grid(), grid) || **u_prev.grid() == **grid) {
        return Err(AssembleError::GridMismatch);
    }
    if let Some(u2) = u_prev2 {
        if !u2.same_grid(u_prev) {
            return Err(AssembleError::GridMismatch);
        }
    }

    let dim = grid.dim();
    let q = grid.split();

    // Active coefficient entries per source family.
    let a12: Vec<(usize, usize)> = (0..q)
        .flat_map(|i| (q..dim).map(move |j| (i, j)))
        .filter(|&(i, j)| !field.entry(i, j).is_const_zero())
        .collect();
    let a21: Vec<(usize, usize)> = (q..dim)
        .flat_map(|j| (0..q).map(move |i| (j, i)))
        .filter(|&(j, i)| !field.entry(j, i).is_const_zero())
        .collect();
    let a11: Vec<(usize, usize)> = (0..q)
        .flat_map(|i| (0..q).map(move |j| (i, j)))
        .filter(|&(i, j)| !field.entry(i, j).is_const_zero())
        .collect();
    let use_a11 = k >= 2 && !a11.is_empty();

    let geom = SliceGeom::from_grid(grid);
    let q1 = Q1Ref::new(&geom.h);
    let nslices = grid.x1_interior_count();
    let closed: usize = geom.subs.iter().map(|n| n + 1).product();
    let mut closed_strides = vec![1usize; geom.dims];
    for i in (0..geom.dims - 1).rev() {
        closed_strides[i] = closed_strides[i + 1] * (geom.subs[i + 1] + 1);
    }

    if a12.is_empty() && a21.is_empty() && !use_a11 {
        return Ok(vec![vec![0.0; geom.interior]; nslices]);
    }

    let cg = ClosedGrid::new(grid);

    // Difference gradients of the previous terms on the closed node set.
    let mut d_prev_x2: Vec<Option<Vec<f64>>> = vec![None; dim];
    for &(_, j) in &a12 {
        if d_prev_x2[j].is_none() {
            d_prev_x2[j] = Some(cg.derivative(u_prev, j));
        }
    }
    let mut d_prev2_x1: Vec<Option<Vec<f64>>> = vec![None; q];
    if use_a11 {
        let u2 = u_prev2.unwrap();
        for &(_, j) in &a11 {
            if d_prev2_x1[j].is_none() {
                d_prev2_x1[j] = Some(cg.derivative(u2, j));
            }
        }
    }

    let mut point = vec![0.0; dim];
    let mut multi = vec![0usize; dim];
    let mut flux: Vec<Option<Vec<f64>>> = vec![None; q];
    for i in 0..q {
        let has_a12 = a12.iter().any(|&(fi, _)| fi == i);
        let has_a11 = use_a11 && a11.iter().any(|&(fi, _)| fi == i);
        if !has_a12 && !has_a11 {
            continue;
        }
        let mut fi = vec![0.0; cg.total];
        for (idx, m) in closed_multi_iter(grid.subdivisions()).enumerate() {
            grid.coord_into(&m, &mut point);
            let mut acc = 0.0;
            for &(row, j) in &a12 {
                if row == i {
                    let d = d_prev_x2[j].as_ref().unwrap()[idx];
                    if d != 0.0 {
                        acc += eval_at(field.entry(row, j), &point)? * d;
                    }
                }
            }
            if use_a11 {
                for &(row, j) in &a11 {
                    if row == i {
                        let d = d_prev2_x1[j].as_ref().unwrap()[idx];
                        if d != 0.0 {
                            acc += eval_at(field.entry(row, j), &point)? * d;
                        }
                    }
                }
            }
            fi[idx] = acc;
        }
        flux[i] = Some(fi);
    }

    // Strong source on the slab (interior X₁ × closed X₂): central
    // X₁-divergence of the fluxes.
    let mut source = vec![0.0; nslices * closed];
    for i in 0..q {
        let Some(fi) = &flux[i] else { continue };
        let h2 = 2.0 * grid.spacing()[i];
        for (p_lex, p) in grid.iter_x1_interior().enumerate() {
            multi[..q].copy_from_slice(&p);
            multi[q..].fill(0);
            multi[i] = p[i] + 1;
            let up_base = cg.index(&multi);
            multi[i] = p[i] - 1;
            let down_base = cg.index(&multi);
            for local in 0..closed {
                source[p_lex * closed + local] +=
                    (fi[up_base + local] - fi[down_base + local]) / h2;
            }
        }
    }

    // Weak A21 ingredient: ∇_{X₁}u_prev (zero on ∂ω₂, where the tangential
    // derivatives genuinely vanish).
    let mut w_x1: Vec<Option<Vec<f64>>> = vec![None; q];
    for &(_, i) in &a21 {
        if w_x1[i].is_none() {
            w_x1[i] = Some(cg.derivative(u_prev, i));
        }
    }

    // Per-slice loads: quadrature of the closed source interpolant against
    // the slice basis, minus the weak A21 term.
    let mut loads = Vec::with_capacity(nslices);
    let mut slice_load = vec![0.0; geom.interior];
    let mut corner_multi = vec![0usize; geom.dims];
    let mut corner_local = vec![0usize; q1.ncorners];

    for (p_lex, p) in grid.iter_x1_interior().enumerate() {
        slice_load.fill(0.0);
        let s_closed = &source[p_lex * closed..(p_lex + 1) * closed];
        multi[..q].copy_from_slice(&p);
        multi[q..].fill(0);
        let cg_base = cg.index(&multi);
        for i in 0..q {
            point[i] = grid.domain().lower()[i] + p[i] as f64 * grid.spacing()[i];
        }
        for cell in geom.cells() {
            for (ca, offsets) in q1.corner_offsets.iter().enumerate() {
                let mut local = 0;
                for i in 0..geom.dims {
                    local += (cell[i] + offsets[i]) * closed_strides[i];
                }
                corner_local[ca] = local;
            }
            for qp in &q1.points {
                let mut s_qp = 0.0;
                for ca in 0..q1.ncorners {
                    s_qp += qp.shape[ca] * s_closed[corner_local[ca]];
                }
                let mut weak = [0.0f64; 8];
                if !a21.is_empty() {
                    for i in 0..geom.dims {
                        point[q + i] =
                            geom.lower[i] + (cell[i] as f64 + qp.frac[i]) * geom.h[i];
                    }
                    for &(jrow, icol) in &a21 {
                        let a = eval_at(field.entry(jrow, icol), &point)?;
                        let w = w_x1[icol].as_ref().unwrap();
                        let mut wv = 0.0;
                        for ca in 0..q1.ncorners {
                            wv += qp.shape[ca] * w[cg_base + corner_local[ca]];
                        }
                        let jl = jrow - q;
                        for (ca, wk) in weak.iter_mut().enumerate().take(q1.ncorners) {
                            *wk += a * wv * qp.grad[ca * geom.dims + jl];
                        }
                    }
                }
                for ca in 0..q1.ncorners {
                    for i in 0..geom.dims {
                        corner_multi[i] = cell[i] + q1.corner_offsets[ca][i];
                    }
                    if let Some(row) = geom.interior_index(&corner_multi) {
                        slice_load[row] += qp.weight * (s_qp * qp.shape[ca] - weak[ca]);
                    }
                }
            }
        }
        loads.push(slice_load.clone());
    }

    Ok(loads)
}

/// Index helper over the closed node set (all grid nodes, boundary
/// included) with difference gradients of interior nodal fields.
struct ClosedGrid<'a> {
    grid: &'a TensorGrid,
    strides: Vec<usize>,
    total: usize,
}

impl<'a> ClosedGrid<'a> {
    fn new(grid: &'a TensorGrid) -> Self {
        let dim = grid.dim();
        let mut strides = vec![1usize; dim];
        for i in (0..dim - 1).rev() {
            strides[i] = strides[i + 1] * (grid.subdivisions()[i + 1] + 1);
        }
        let total = strides[0] * (grid.subdivisions()[0] + 1);
        ClosedGrid {
            grid,
            strides,
            total,
        }
    }

    fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(&m, &s)| m * s).sum()
    }

    fn value(&self, multi: &[usize], u: &NodalField) -> f64 {
        match self.grid.interior_index(multi) {
            Some(g) => u.values()[g],
            None => 0.0,
        }
    }

    /// ∂u/∂x_axis at every closed node: central differences inside, the
    /// second-order one-sided stencil (with the vanishing boundary value)
    /// on the axis boundary. Tangential derivatives on a boundary face come
    /// out exactly zero because every stencil value lies on that face.
    fn derivative(&self, u: &NodalField, axis: usize) -> Vec<f64> {
        let n_axis = self.grid.subdivisions()[axis];
        let h = self.grid.spacing()[axis];
        let mut out = vec![0.0; self.total];
        let mut probe = vec![0usize; self.grid.dim()];
        for (idx, m) in closed_multi_iter(self.grid.subdivisions()).enumerate() {
            probe.copy_from_slice(&m);
            let d = if m[axis] == 0 {
                probe[axis] = 1;
                let u1 = self.value(&probe, u);
                probe[axis] = 2;
                let u2 = self.value(&probe, u);
                (4.0 * u1 - u2) / (2.0 * h)
            } else if m[axis] == n_axis {
                probe[axis] = n_axis - 1;
                let u1 = self.value(&probe, u);
                probe[axis] = n_axis - 2;
                let u2 = self.value(&probe, u);
                (u2 - 4.0 * u1) / (2.0 * h)
            } else {
                probe[axis] = m[axis] + 1;
                let up = self.value(&probe, u);
                probe[axis] = m[axis] - 1;
                let down = self.value(&probe, u);
                (up - down) / (2.0 * h)
            };
            out[idx] = d;
        }
        out
    }
}

fn closed_multi_iter(subs: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = subs.iter().map(|n| n + 1).product();
    let dims = subs.len();
    (0..total).map(move |mut code| {
        let mut multi = vec![0usize; dims];
        for i in (0..dims).rev() {
            multi[i] = code % (subs[i] + 1);
            code /= subs[i] + 1;
        }
        multi
    })
}
