//! Product domains and uniform tensor grids.
//!
//! The domain is a box `Ω = ω₁ × ω₂` with a coordinate split `q | N−q`:
//! axes `1..q` form the perturbed directions `X₁`, axes `q+1..N` the
//! unperturbed directions `X₂`. Grids are uniform per axis, nodes carry a
//! homogeneous Dirichlet condition on the boundary, and interior nodes are
//! numbered lexicographically with the last axis fastest. That ordering
//! makes every X₂-slice (fixed interior X₁ multi-index) a contiguous range
//! of global indices.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("lower has {0} coordinates, upper has {1}")]
    DimensionMismatch(usize, usize),
    #[error("only 2- and 3-dimensional domains are supported, got N={0}")]
    UnsupportedDimension(usize),
    #[error("axis {axis}: lower bound {lower} is not below upper bound {upper}")]
    EmptyExtent { axis: usize, lower: f64, upper: f64 },
    #[error("split must satisfy 1 <= q < N, got q={split} with N={dim}")]
    BadSplit { split: usize, dim: usize },
    #[error("subdivisions length {got} does not match domain dimension {dim}")]
    SubdivisionsLen { got: usize, dim: usize },
    #[error("axis {axis}: need at least 2 subdivisions, got {got}")]
    TooFewSubdivisions { axis: usize, got: usize },
    #[error("multi-index {0:?} is not an interior X1 multi-index")]
    NotInteriorX1(Vec<usize>),
}

/// Axis-aligned box with a dimension split.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    split: usize,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, split: usize) -> Result<Self, GridError> {
        if lower.len() != upper.len() {
            return Err(GridError::DimensionMismatch(lower.len(), upper.len()));
        }
        let dim = lower.len();
        if !(2..=3).contains(&dim) {
            return Err(GridError::UnsupportedDimension(dim));
        }
        for i in 0..dim {
            if !(lower[i] < upper[i]) {
                return Err(GridError::EmptyExtent {
                    axis: i + 1,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        if split == 0 || split >= dim {
            return Err(GridError::BadSplit { split, dim });
        }
        Ok(BoxDomain { lower, upper, split })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// The split q: axes `0..q` are X₁, axes `q..N` are X₂ (zero-based).
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }
}

/// Uniform tensor grid over a [`BoxDomain`].
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    domain: BoxDomain,
    subdivisions: Vec<usize>,
    spacing: Vec<f64>,
    /// Strides of the interior lexicographic numbering (last axis = 1).
    strides: Vec<usize>,
    interior: usize,
    x1_interior: usize,
    x2_interior: usize,
}

impl TensorGrid {
    pub fn build(domain: BoxDomain, subdivisions: Vec<usize>) -> Result<Self, GridError> {
        let dim = domain.dim();
        if subdivisions.len() != dim {
            return Err(GridError::SubdivisionsLen {
                got: subdivisions.len(),
                dim,
            });
        }
        for (i, &n) in subdivisions.iter().enumerate() {
            if n < 2 {
                return Err(GridError::TooFewSubdivisions { axis: i + 1, got: n });
            }
        }
        let spacing = (0..dim)
            .map(|i| domain.extent(i) / subdivisions[i] as f64)
            .collect::<Vec<_>>();
        let mut strides = vec![1usize; dim];
        for i in (0..dim - 1).rev() {
            strides[i] = strides[i + 1] * (subdivisions[i + 1] - 1);
        }
        let interior: usize = subdivisions.iter().map(|n| n - 1).product();
        let q = domain.split();
        let x1_interior: usize = subdivisions[..q].iter().map(|n| n - 1).product();
        let x2_interior: usize = subdivisions[q..].iter().map(|n| n - 1).product();
        Ok(TensorGrid {
            domain,
            subdivisions,
            spacing,
            strides,
            interior,
            x1_interior,
            x2_interior,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn split(&self) -> usize {
        self.domain.split()
    }

    pub fn subdivisions(&self) -> &[usize] {
        &self.subdivisions
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn interior_count(&self) -> usize {
        self.interior
    }

    /// Number of interior X₁ multi-indices (= number of slices).
    pub fn x1_interior_count(&self) -> usize {
        self.x1_interior
    }

    /// Number of interior nodes in one X₂-slice.
    pub fn x2_interior_count(&self) -> usize {
        self.x2_interior
    }

    /// Coordinates of the node with closed multi-index `multi`
    /// (components in `0..=n_i`).
    pub fn node_coord(&self, multi: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coord_into(multi, &mut out);
        out
    }

    pub fn coord_into(&self, multi: &[usize], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = self.domain.lower[i] + multi[i] as f64 * self.spacing[i];
        }
    }

    pub fn is_interior(&self, multi: &[usize]) -> bool {
        multi
            .iter()
            .zip(&self.subdivisions)
            .all(|(&m, &n)| m >= 1 && m < n)
    }

    /// Global interior index of an interior multi-index; `None` for
    /// boundary or out-of-range indices.
    pub fn interior_index(&self, multi: &[usize]) -> Option<usize> {
        if !self.is_interior(multi) {
            return None;
        }
        Some(
            multi
                .iter()
                .zip(&self.strides)
                .map(|(&m, &s)| (m - 1) * s)
                .sum(),
        )
    }

    /// Inverse of [`interior_index`](Self::interior_index).
    pub fn interior_multi(&self, mut idx: usize) -> Vec<usize> {
        debug_assert!(idx < self.interior);
        let mut multi = vec![0usize; self.dim()];
        for i in 0..self.dim() {
            multi[i] = idx / self.strides[i] + 1;
            idx %= self.strides[i];
        }
        multi
    }

    /// Global indices of the X₂-slice at the interior X₁ multi-index
    /// `x1_multi` (length q), ordered X₂-lexicographically. The range is
    /// contiguous by construction of the numbering.
    pub fn slice_nodes(&self, x1_multi: &[usize]) -> Result<std::ops::Range<usize>, GridError> {
        let q = self.split();
        if x1_multi.len() != q
            || !x1_multi
                .iter()
                .zip(&self.subdivisions[..q])
                .all(|(&m, &n)| m >= 1 && m < n)
        {
            return Err(GridError::NotInteriorX1(x1_multi.to_vec()));
        }
        let base: usize = x1_multi
            .iter()
            .zip(&self.strides[..q])
            .map(|(&m, &s)| (m - 1) * s)
            .sum();
        Ok(base..base + self.x2_interior)
    }

    /// Lexicographic position of an interior X₁ multi-index among all
    /// slices, so `slice_nodes` starts at `x1_lex_index * x2_interior_count`.
    pub fn x1_lex_index(&self, x1_multi: &[usize]) -> Option<usize> {
        let q = self.split();
        let mut idx = 0usize;
        for i in 0..q {
            let m = x1_multi[i];
            if m < 1 || m >= self.subdivisions[i] {
                return None;
            }
            idx = idx * (self.subdivisions[i] - 1) + (m - 1);
        }
        Some(idx)
    }

    /// Interior X₁ multi-indices in lexicographic order.
    pub fn iter_x1_interior(&self) -> MultiIndexIter {
        MultiIndexIter::interior(&self.subdivisions[..self.split()])
    }

    /// Interior multi-indices of the full grid in lexicographic order.
    pub fn iter_interior(&self) -> MultiIndexIter {
        MultiIndexIter::interior(&self.subdivisions)
    }

    /// Cell multi-indices (components in `0..n_i`) in lexicographic order.
    pub fn iter_cells(&self) -> MultiIndexIter {
        MultiIndexIter::cells(&self.subdivisions)
    }
}

/// Lexicographic iterator over multi-indices, either interior node indices
/// (`1..n_i`) or cell indices (`0..n_i`).
pub struct MultiIndexIter {
    lo: usize,
    hi: Vec<usize>, // exclusive
    current: Vec<usize>,
    done: bool,
}

impl MultiIndexIter {
    pub(crate) fn cells_over(subdivisions: &[usize]) -> Self {
        Self::cells(subdivisions)
    }

    fn interior(subdivisions: &[usize]) -> Self {
        let hi = subdivisions.to_vec();
        let done = hi.iter().any(|&n| n <= 1) || hi.is_empty();
        MultiIndexIter {
            lo: 1,
            current: vec![1; subdivisions.len()],
            hi,
            done,
        }
    }

    fn cells(subdivisions: &[usize]) -> Self {
        let hi = subdivisions.to_vec();
        let done = hi.iter().any(|&n| n == 0) || hi.is_empty();
        MultiIndexIter {
            lo: 0,
            current: vec![0; subdivisions.len()],
            hi,
            done,
        }
    }
}

impl Iterator for MultiIndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let item = self.current.clone();
        // Increment with the last axis fastest.
        let mut axis = self.current.len();
        loop {
            if axis == 0 {
                self.done = true;
                break;
            }
            axis -= 1;
            self.current[axis] += 1;
            if self.current[axis] < self.hi[axis] {
                break;
            }
            self.current[axis] = self.lo;
        }
        Some(item)
    }
}
