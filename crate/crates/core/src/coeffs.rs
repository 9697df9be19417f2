//! The block coefficient field `A = [[A11, A12], [A21, A22]]` and its
//! structural hypotheses.
//!
//! The perturbed operator scales the blocks as `[[ε²A11, εA12], [εA21, A22]]`.
//! Structural flags (diagonal blocks, A22 depending only on X₂) are detected
//! syntactically from the parsed entries; ellipticity is user-declared and
//! falsified by sampling rather than verified exactly.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{EvalError, ScalarExpr};
use crate::grid::TensorGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("expected {expected} entries for an {n}x{n} coefficient matrix, got {got}")]
    WrongEntryCount { expected: usize, n: usize, got: usize },
    #[error("entry ({i},{j}) was parsed against {got} variables, expected {expected}")]
    EntryDimension { i: usize, j: usize, got: usize, expected: usize },
    #[error("ellipticity constant must be positive, got {0}")]
    BadLambda(f64),
    #[error("split must satisfy 1 <= q < N, got q={split} with N={dim}")]
    BadSplit { split: usize, dim: usize },
}

/// Weight applied to the entry `a_ij` (one-based indices) of the scaled
/// matrix: `ε²` inside the X₁ block, `ε` on the coupling blocks, `1` on A₂₂.
pub fn scaled_block_weight(i: usize, j: usize, q: usize, eps: f64) -> f64 {
    debug_assert!(eps > 0.0 && eps <= 1.0, "eps must lie in (0, 1]");
    match (i <= q, j <= q) {
        (true, true) => eps * eps,
        (false, false) => 1.0,
        _ => eps,
    }
}

/// The matrix field `A` as `N²` expression entries (row-major) plus the
/// split and the declared ellipticity constant.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCoefficientField {
    dim: usize,
    split: usize,
    entries: Vec<ScalarExpr>,
    lambda: f64,
    diagonal_blocks: bool,
    a22_x2_only: bool,
}

impl BlockCoefficientField {
    pub fn new(
        entries: Vec<ScalarExpr>,
        split: usize,
        lambda: f64,
    ) -> Result<Self, CoeffError> {
        let dim = entries.first().map_or(0, |e| e.nvars());
        if entries.len() != dim * dim {
            return Err(CoeffError::WrongEntryCount {
                expected: dim * dim,
                n: dim,
                got: entries.len(),
            });
        }
        for (k, e) in entries.iter().enumerate() {
            if e.nvars() != dim {
                return Err(CoeffError::EntryDimension {
                    i: k / dim + 1,
                    j: k % dim + 1,
                    got: e.nvars(),
                    expected: dim,
                });
            }
        }
        if split == 0 || split >= dim {
            return Err(CoeffError::BadSplit { split, dim });
        }
        if !(lambda > 0.0) {
            return Err(CoeffError::BadLambda(lambda));
        }

        let idx = |i: usize, j: usize| i * dim + j;
        let mut diagonal_blocks = true;
        for i in 0..dim {
            for j in 0..dim {
                let off_block = (i < split) != (j < split);
                if off_block && !entries[idx(i, j)].is_const_zero() {
                    diagonal_blocks = false;
                }
            }
        }
        let mut a22_x2_only = true;
        for i in split..dim {
            for j in split..dim {
                let mask = entries[idx(i, j)].referenced_vars();
                if mask[..split].iter().any(|&used| used) {
                    a22_x2_only = false;
                }
            }
        }

        Ok(BlockCoefficientField {
            dim,
            split,
            entries,
            lambda,
            diagonal_blocks,
            a22_x2_only,
        })
    }

    /// Identity matrix field in `dim` variables, declared λ = 1.
    pub fn identity(dim: usize, split: usize) -> Self {
        let entries = (0..dim * dim)
            .map(|k| {
                let text = if k / dim == k % dim { "1" } else { "0" };
                ScalarExpr::parse(text, dim).expect("constant entry")
            })
            .collect();
        BlockCoefficientField::new(entries, split, 1.0).expect("identity field")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `A12 = A21 = 0` syntactically.
    pub fn diagonal_blocks(&self) -> bool {
        self.diagonal_blocks
    }

    /// No A22 entry references an X₁ variable.
    pub fn a22_x2_only(&self) -> bool {
        self.a22_x2_only
    }

    /// Entry `a_ij` with zero-based indices.
    pub fn entry(&self, i: usize, j: usize) -> &ScalarExpr {
        &self.entries[i * self.dim + j]
    }

    /// Syntactic symmetry `a_ij == a_ji` of the parsed trees.
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                if self.entry(i, j) != self.entry(j, i) {
                    return false;
                }
            }
        }
        true
    }

    /// Evaluates the full matrix at `point` into `out` (row-major, len N²).
    pub fn eval_matrix(&self, point: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (k, e) in self.entries.iter().enumerate() {
            out[k] = e.eval(point)?;
        }
        Ok(())
    }
}

/// One hypothesis line of a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    pub witness: Option<String>,
}

/// Result of checking the structural hypotheses on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
    pub diagonal_blocks: bool,
    pub a22_x2_only: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "{:24} {}", c.name, if c.passed { "pass" } else { "FAIL" })?;
            if let Some(w) = &c.witness {
                write!(f, "  ({w})")?;
            }
            writeln!(f)?;
        }
        writeln!(
            f,
            "flags: diagonal_blocks={} a22_x2_only={}",
            self.diagonal_blocks, self.a22_x2_only
        )
    }
}

const ELLIPTICITY_SAMPLES: usize = 64;

/// Checks boundedness, sampled ellipticity and the A22 structure over all
/// grid nodes. Pure: the sampling directions come from a fixed seed, so the
/// same inputs always produce the same report.
pub fn validate(field: &BlockCoefficientField, grid: &TensorGrid) -> ValidationReport {
    let dim = field.dim();
    let mut checks = Vec::new();

    // A22 structure is syntactic; find a witness entry if it fails.
    let mut a22_witness = None;
    for i in field.split()..dim {
        for j in field.split()..dim {
            let mask = field.entry(i, j).referenced_vars();
            if let Some(v) = mask[..field.split()].iter().position(|&used| used) {
                a22_witness = Some(format!(
                    "a{}{} references x{}",
                    i + 1,
                    j + 1,
                    v + 1
                ));
            }
        }
    }
    checks.push(HypothesisCheck {
        name: "a22 depends only on X2",
        passed: a22_witness.is_none(),
        witness: a22_witness,
    });

    // Unit direction sample, reused at every node.
    let mut rng = ChaCha8Rng::seed_from_u64(0x414e49_53);
    let directions: Vec<Vec<f64>> = (0..ELLIPTICITY_SAMPLES)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 {
                break v.iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let mut bounded_witness: Option<String> = None;
    let mut elliptic_witness: Option<String> = None;
    let mut matrix = vec![0.0; dim * dim];
    let mut point = vec![0.0; dim];

    let mut closed = MultiClosed::new(grid.subdivisions());
    while let Some(multi) = closed.next() {
        grid.coord_into(multi, &mut point);
        match field.eval_matrix(&point, &mut matrix) {
            Err(e) => {
                if bounded_witness.is_none() {
                    bounded_witness = Some(format!("at {point:?}: {e}"));
                }
                continue;
            }
            Ok(()) => {
                if let Some(k) = matrix.iter().position(|v| !v.is_finite()) {
                    if bounded_witness.is_none() {
                        bounded_witness = Some(format!(
                            "a{}{} not finite at {point:?}",
                            k / dim + 1,
                            k % dim + 1
                        ));
                    }
                    continue;
                }
            }
        }
        if elliptic_witness.is_none() {
            for xi in &directions {
                let mut quad = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        quad += matrix[i * dim + j] * xi[i] * xi[j];
                    }
                }
                // |xi| = 1, small slack for the equality case A = λI.
                if quad < field.lambda() - 1e-12 * (1.0 + quad.abs()) {
                    elliptic_witness = Some(format!(
                        "A(x)ξ·ξ = {quad:.6e} < λ = {} at x = {point:?}, ξ = {xi:?}",
                        field.lambda()
                    ));
                    break;
                }
            }
        }
    }

    checks.push(HypothesisCheck {
        name: "entries bounded on nodes",
        passed: bounded_witness.is_none(),
        witness: bounded_witness,
    });
    checks.push(HypothesisCheck {
        name: "sampled ellipticity",
        passed: elliptic_witness.is_none(),
        witness: elliptic_witness,
    });

    ValidationReport {
        checks,
        diagonal_blocks: field.diagonal_blocks(),
        a22_x2_only: field.a22_x2_only(),
    }
}

/// In-place lexicographic walk over closed multi-indices `0..=n_i`.
struct MultiClosed {
    hi: Vec<usize>, // inclusive
    current: Vec<usize>,
    started: bool,
    done: bool,
}

impl MultiClosed {
    fn new(subdivisions: &[usize]) -> Self {
        MultiClosed {
            hi: subdivisions.to_vec(),
            current: vec![0; subdivisions.len()],
            started: false,
            done: false,
        }
    }

    fn next(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.current);
        }
        let mut axis = self.current.len();
        loop {
            if axis == 0 {
                self.done = true;
                return None;
            }
            axis -= 1;
            self.current[axis] += 1;
            if self.current[axis] <= self.hi[axis] {
                break;
            }
            self.current[axis] = 0;
        }
        Some(&self.current)
    }
}
