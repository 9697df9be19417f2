//! The expansion hierarchy: solve u₀, u₁, …, u_d slice by slice.
//!
//! Order zero is the limit problem `-div_{X₂}(A22 ∇_{X₂}u₀) = f`, a family
//! of problems over ω₂ parameterized by the interior X₁ nodes. Higher
//! orders reuse the same banded factorization with sources built from the
//! previous one or two terms. With diagonal blocks the odd orders vanish
//! identically, so the diagonal branch skips those solves and zero-fills
//! the terms instead of injecting solver noise into the next level.

use std::sync::Arc;

use thiserror::Error;

use crate::assembly::{
    assemble_slice, cascade_rhs, slice_load_fn, AssembleError, NodalField,
};
use crate::coeffs::BlockCoefficientField;
use crate::expr::{EvalError, ScalarExpr};
use crate::grid::TensorGrid;
use crate::linalg::{solve_banded, LinalgError};

/// Orders beyond this drown in compounded difference noise at desk-scale
/// grids.
pub const MAX_ORDER: usize = 6;

#[derive(Debug, Error, Clone)]
pub enum CascadeError {
    #[error("expansion order {d} exceeds the supported maximum {max}")]
    OrderTooLarge { d: usize, max: usize },
    #[error("diagonal branch requested but the coefficient blocks are not diagonal")]
    BranchMismatch,
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Solve(#[from] LinalgError),
}

/// Which specialization of the hierarchy to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchChoice {
    /// Diagonal when the coefficient field has diagonal blocks.
    Auto,
    Diagonal,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeBranch {
    Diagonal,
    General,
}

impl CascadeBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            CascadeBranch::Diagonal => "diagonal",
            CascadeBranch::General => "general",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeTermStats {
    /// True for odd orders the diagonal branch zero-fills.
    pub skipped: bool,
    /// Number of slice solves behind this term.
    pub slices: usize,
}

/// The computed expansion terms u₀..u_d.
#[derive(Debug, Clone)]
pub struct CascadeResult {
    pub order: usize,
    pub branch: CascadeBranch,
    pub terms: Vec<NodalField>,
    pub stats: Vec<CascadeTermStats>,
}

impl CascadeResult {
    /// Partial sum Σ ε^k u_k as a nodal field.
    pub fn partial_sum(&self, eps: f64) -> NodalField {
        let mut acc = self.terms[0].clone();
        let mut weight = 1.0;
        for term in &self.terms[1..] {
            weight *= eps;
            acc.axpy(weight, term);
        }
        acc
    }
}

fn resolve_branch(
    choice: BranchChoice,
    field: &BlockCoefficientField,
) -> Result<CascadeBranch, CascadeError> {
    match choice {
        BranchChoice::General => Ok(CascadeBranch::General),
        BranchChoice::Diagonal => {
            if field.diagonal_blocks() {
                Ok(CascadeBranch::Diagonal)
            } else {
                Err(CascadeError::BranchMismatch)
            }
        }
        BranchChoice::Auto => Ok(if field.diagonal_blocks() {
            CascadeBranch::Diagonal
        } else {
            CascadeBranch::General
        }),
    }
}

/// Solves the limit problem slice by slice; the result is u₀.
pub fn solve_limit(
    field: &BlockCoefficientField,
    f: &ScalarExpr,
    grid: &Arc<TensorGrid>,
) -> Result<NodalField, CascadeError> {
    solve_limit_fn(field, &|x| f.eval(x), grid)
}

pub fn solve_limit_fn(
    field: &BlockCoefficientField,
    f: &dyn Fn(&[f64]) -> Result<f64, EvalError>,
    grid: &Arc<TensorGrid>,
) -> Result<NodalField, CascadeError> {
    let slice = assemble_slice(field, grid)?;
    let mut u0 = NodalField::zeros(Arc::clone(grid));
    for p in grid.iter_x1_interior() {
        let load = slice_load_fn(grid, &p, f)?;
        let sol = solve_banded(&slice, &load)?;
        let range = grid.slice_nodes(&p).expect("interior slice");
        u0.values_mut()[range].copy_from_slice(&sol);
    }
    Ok(u0)
}

/// Runs the full hierarchy up to order `d`.
pub fn solve_cascade(
    field: &BlockCoefficientField,
    f: &ScalarExpr,
    grid: &Arc<TensorGrid>,
    d: usize,
    choice: BranchChoice,
) -> Result<CascadeResult, CascadeError> {
    solve_cascade_fn(field, &|x| f.eval(x), grid, d, choice)
}

pub fn solve_cascade_fn(
    field: &BlockCoefficientField,
    f: &dyn Fn(&[f64]) -> Result<f64, EvalError>,
    grid: &Arc<TensorGrid>,
    d: usize,
    choice: BranchChoice,
) -> Result<CascadeResult, CascadeError> {
    if d > MAX_ORDER {
        return Err(CascadeError::OrderTooLarge { d, max: MAX_ORDER });
    }
    let branch = resolve_branch(choice, field)?;
    let slice = assemble_slice(field, grid)?;
    let nslices = grid.x1_interior_count();

    let mut terms = Vec::with_capacity(d + 1);
    let mut stats = Vec::with_capacity(d + 1);

    let mut u0 = NodalField::zeros(Arc::clone(grid));
    for p in grid.iter_x1_interior() {
        let load = slice_load_fn(grid, &p, f)?;
        let sol = solve_banded(&slice, &load)?;
        let range = grid.slice_nodes(&p).expect("interior slice");
        u0.values_mut()[range].copy_from_slice(&sol);
    }
    terms.push(u0);
    stats.push(CascadeTermStats {
        skipped: false,
        slices: nslices,
    });

    for k in 1..=d {
        if branch == CascadeBranch::Diagonal && k % 2 == 1 {
            terms.push(NodalField::zeros(Arc::clone(grid)));
            stats.push(CascadeTermStats {
                skipped: true,
                slices: 0,
            });
            continue;
        }
        let prev2 = if k >= 2 { Some(&terms[k - 2]) } else { None };
        let loads = cascade_rhs(k, &terms[k - 1], prev2, field, grid)?;
        let mut uk = NodalField::zeros(Arc::clone(grid));
        for (p, load) in grid.iter_x1_interior().zip(&loads) {
            let sol = solve_banded(&slice, load)?;
            let range = grid.slice_nodes(&p).expect("interior slice");
            uk.values_mut()[range].copy_from_slice(&sol);
        }
        terms.push(uk);
        stats.push(CascadeTermStats {
            skipped: false,
            slices: nslices,
        });
    }

    Ok(CascadeResult {
        order: d,
        branch,
        terms,
        stats,
    })
}
