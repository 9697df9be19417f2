//! Exact separable reference solutions for constant diagonal coefficients.
//!
//! On a box, products of sines are eigenfunctions of every constant
//! diagonal operator, so the perturbed solution, all expansion terms and
//! all residual seminorms have closed forms. These serve as the
//! independent oracle that the finite element pipeline is measured
//! against.
//!
//! Frequencies are `m π / L` per axis, which reduces to the mode index
//! itself on `(0, π)^N`; other boxes are handled by that affine rescaling
//! and Parseval factors `Π L_i / 2`.

use std::sync::Arc;

use thiserror::Error;

use crate::analysis::Block;
use crate::assembly::NodalField;
use crate::grid::{BoxDomain, TensorGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("mode indices must be at least 1 componentwise")]
    ZeroModeIndex,
    #[error("duplicate mode (m1={m1:?}, m2={m2:?})")]
    DuplicateMode { m1: Vec<usize>, m2: Vec<usize> },
    #[error("mode has {got_m1}+{got_m2} indices, domain needs {q}+{rest}")]
    DimensionMismatch {
        got_m1: usize,
        got_m2: usize,
        q: usize,
        rest: usize,
    },
    #[error("coefficient must be finite")]
    BadCoefficient,
}

/// One sine mode: indices over the X₁ axes, indices over the X₂ axes, and
/// an amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct SineMode {
    pub m1: Vec<usize>,
    pub m2: Vec<usize>,
    pub coeff: f64,
}

/// A finite sine expansion with pairwise distinct modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SineModeSet {
    modes: Vec<SineMode>,
}

impl SineModeSet {
    pub fn new(modes: Vec<SineMode>) -> Result<Self, OracleError> {
        for m in &modes {
            if m.m1.iter().chain(&m.m2).any(|&k| k == 0) {
                return Err(OracleError::ZeroModeIndex);
            }
            if !m.coeff.is_finite() {
                return Err(OracleError::BadCoefficient);
            }
        }
        for (a, ma) in modes.iter().enumerate() {
            for mb in modes.iter().skip(a + 1) {
                if ma.m1 == mb.m1 && ma.m2 == mb.m2 {
                    return Err(OracleError::DuplicateMode {
                        m1: ma.m1.clone(),
                        m2: ma.m2.clone(),
                    });
                }
            }
        }
        Ok(SineModeSet { modes })
    }

    /// The fundamental mode `Π sin` with amplitude 1 on a domain with the
    /// given split.
    pub fn fundamental(dim: usize, split: usize) -> Self {
        SineModeSet {
            modes: vec![SineMode {
                m1: vec![1; split],
                m2: vec![1; dim - split],
                coeff: 1.0,
            }],
        }
    }

    pub fn modes(&self) -> &[SineMode] {
        &self.modes
    }

    /// Point evaluation of the expansion on `domain`.
    pub fn eval(&self, domain: &BoxDomain, point: &[f64]) -> f64 {
        let q = domain.split();
        let mut acc = 0.0;
        for mode in &self.modes {
            let mut term = mode.coeff;
            for (i, &m) in mode.m1.iter().enumerate() {
                term *= (frequency(domain, i, m) * (point[i] - domain.lower()[i])).sin();
            }
            for (j, &m) in mode.m2.iter().enumerate() {
                let axis = q + j;
                term *= (frequency(domain, axis, m) * (point[axis] - domain.lower()[axis])).sin();
            }
            acc += term;
        }
        acc
    }

    /// Interpolant on the interior nodes of `grid`.
    pub fn interpolate(&self, grid: &Arc<TensorGrid>) -> NodalField {
        let domain = grid.domain().clone();
        NodalField::from_point_fn(Arc::clone(grid), |x| self.eval(&domain, x))
    }
}

fn frequency(domain: &BoxDomain, axis: usize, m: usize) -> f64 {
    m as f64 * std::f64::consts::PI / domain.extent(axis)
}

/// Symbol weights μ = Σ a_i μ_i² over X₁ and ν = Σ a_j ν_j² over X₂ for one
/// mode under constant diagonal coefficients `diag` (length N).
fn mode_symbols(mode: &SineMode, diag: &[f64], domain: &BoxDomain) -> (f64, f64) {
    let q = domain.split();
    let mu: f64 = mode
        .m1
        .iter()
        .enumerate()
        .map(|(i, &m)| diag[i] * frequency(domain, i, m).powi(2))
        .sum();
    let nu: f64 = mode
        .m2
        .iter()
        .enumerate()
        .map(|(j, &m)| diag[q + j] * frequency(domain, q + j, m).powi(2))
        .sum();
    (mu, nu)
}

fn check_modes(
    modes: &SineModeSet,
    diag: &[f64],
    domain: &BoxDomain,
) -> Result<(), OracleError> {
    let q = domain.split();
    assert_eq!(diag.len(), domain.dim(), "diagonal length must match N");
    for m in modes.modes() {
        if m.m1.len() != q || m.m2.len() != domain.dim() - q {
            return Err(OracleError::DimensionMismatch {
                got_m1: m.m1.len(),
                got_m2: m.m2.len(),
                q,
                rest: domain.dim() - q,
            });
        }
    }
    Ok(())
}

/// Exact perturbed solution: each coefficient divides by the symbol
/// `ε²μ + ν`.
pub fn oracle_perturbed(
    modes: &SineModeSet,
    diag: &[f64],
    eps: f64,
    domain: &BoxDomain,
) -> Result<SineModeSet, OracleError> {
    check_modes(modes, diag, domain)?;
    let out = modes
        .modes()
        .iter()
        .map(|m| {
            let (mu, nu) = mode_symbols(m, diag, domain);
            SineMode {
                m1: m.m1.clone(),
                m2: m.m2.clone(),
                coeff: m.coeff / (eps * eps * mu + nu),
            }
        })
        .collect();
    Ok(SineModeSet { modes: out })
}

/// Exact expansion terms u₀..u_d: odd orders vanish, even orders follow the
/// geometric pattern `c (−μ)^k / ν^{k+1}`.
pub fn oracle_cascade(
    modes: &SineModeSet,
    diag: &[f64],
    d: usize,
    domain: &BoxDomain,
) -> Result<Vec<SineModeSet>, OracleError> {
    check_modes(modes, diag, domain)?;
    let mut terms = Vec::with_capacity(d + 1);
    for k in 0..=d {
        if k % 2 == 1 {
            terms.push(SineModeSet { modes: Vec::new() });
            continue;
        }
        let half = k / 2;
        let out = modes
            .modes()
            .iter()
            .map(|m| {
                let (mu, nu) = mode_symbols(m, diag, domain);
                let mut coeff = m.coeff / nu;
                for _ in 0..half {
                    coeff *= -mu / nu;
                }
                SineMode {
                    m1: m.m1.clone(),
                    m2: m.m2.clone(),
                    coeff,
                }
            })
            .collect();
        terms.push(SineModeSet { modes: out });
    }
    Ok(terms)
}

/// Residual coefficient of one mode after subtracting the expansion through
/// even order `d`: the geometric tail `c (−ε²μ)^{d/2+1} / (ν^{d/2+1}(ε²μ+ν))`.
pub fn residual_coefficient(coeff: f64, mu: f64, nu: f64, eps: f64, d: usize) -> f64 {
    assert!(d % 2 == 0, "residual closed form needs an even order");
    let mut tail = coeff / (eps * eps * mu + nu);
    for _ in 0..(d / 2 + 1) {
        tail *= -(eps * eps) * mu / nu;
    }
    tail
}

/// Exact block-gradient seminorm of the expansion residual by Parseval.
pub fn oracle_residual_seminorm(
    modes: &SineModeSet,
    diag: &[f64],
    eps: f64,
    d: usize,
    block: Block,
    domain: &BoxDomain,
) -> Result<f64, OracleError> {
    check_modes(modes, diag, domain)?;
    assert!(d % 2 == 0, "residual closed form needs an even order");
    let q = domain.split();
    let parseval: f64 = (0..domain.dim()).map(|i| domain.extent(i) / 2.0).product();
    let mut acc = 0.0;
    for m in modes.modes() {
        let (mu, nu) = mode_symbols(m, diag, domain);
        let r = residual_coefficient(m.coeff, mu, nu, eps, d);
        let weight: f64 = match block {
            Block::X1 => m
                .m1
                .iter()
                .enumerate()
                .map(|(i, &k)| frequency(domain, i, k).powi(2))
                .sum(),
            Block::X2 => m
                .m2
                .iter()
                .enumerate()
                .map(|(j, &k)| frequency(domain, q + j, k).powi(2))
                .sum(),
        };
        acc += r * r * weight;
    }
    Ok((parseval * acc).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pi_domain() -> BoxDomain {
        BoxDomain::new(vec![0.0, 0.0], vec![PI, PI], 1).unwrap()
    }

    fn single(m1: usize, m2: usize, c: f64) -> SineModeSet {
        SineModeSet::new(vec![SineMode {
            m1: vec![m1],
            m2: vec![m2],
            coeff: c,
        }])
        .unwrap()
    }

    #[test]
    fn perturbed_fundamental_mode() {
        // ε = 0.5, A = I: coefficient 1/(1 + 0.25) = 0.8.
        let out = oracle_perturbed(&single(1, 1, 1.0), &[1.0, 1.0], 0.5, &pi_domain())
            .unwrap();
        assert!((out.modes()[0].coeff - 0.8).abs() < 1e-15);
    }

    #[test]
    fn perturbed_higher_mode() {
        // ε = 1, mode (1,2): 1/(1 + 4) = 0.2.
        let out = oracle_perturbed(&single(1, 2, 1.0), &[1.0, 1.0], 1.0, &pi_domain())
            .unwrap();
        assert!((out.modes()[0].coeff - 0.2).abs() < 1e-15);
    }

    #[test]
    fn perturbed_zero_amplitude() {
        let out = oracle_perturbed(&single(3, 4, 0.0), &[2.0, 1.0], 0.3, &pi_domain())
            .unwrap();
        assert_eq!(out.modes()[0].coeff, 0.0);
    }

    #[test]
    fn cascade_alternating_signs() {
        // Fundamental mode, A = I: u_{2k} has coefficient (-1)^k, odd zero.
        let terms = oracle_cascade(&single(1, 1, 1.0), &[1.0, 1.0], 4, &pi_domain())
            .unwrap();
        assert_eq!(terms.len(), 5);
        for (k, t) in terms.iter().enumerate() {
            if k % 2 == 1 {
                assert!(t.modes().is_empty());
            } else {
                let want = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
                assert!((t.modes()[0].coeff - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cascade_mode_one_two() {
        // Mode (1,2), A = I, second order: -μ/ν² = -1/16.
        let terms = oracle_cascade(&single(1, 2, 1.0), &[1.0, 1.0], 2, &pi_domain())
            .unwrap();
        assert!((terms[2].modes()[0].coeff + 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn cascade_zero_order_only() {
        let terms = oracle_cascade(&single(1, 2, 1.0), &[1.0, 1.0], 0, &pi_domain())
            .unwrap();
        assert_eq!(terms.len(), 1);
        assert!((terms[0].modes()[0].coeff - 0.25).abs() < 1e-15);
    }

    #[test]
    fn residual_seminorm_examples() {
        let dom = pi_domain();
        let ones = [1.0, 1.0];
        // d = 2, ε = 0.5: coefficient ε⁴/(1+ε²) = 0.05, X₂ seminorm
        // 0.05·π/2.
        let s = oracle_residual_seminorm(&single(1, 1, 1.0), &ones, 0.5, 2, Block::X2, &dom)
            .unwrap();
        assert!((s - 0.05 * PI / 2.0).abs() < 1e-14, "{s}");
        // ε → 0 limit vanishes.
        let s0 =
            oracle_residual_seminorm(&single(1, 1, 1.0), &ones, 1e-8, 2, Block::X2, &dom)
                .unwrap();
        assert!(s0 < 1e-14);
        // d = 0, ε = 1: residual coefficient 1/2 − 1 = −0.5.
        let s1 = oracle_residual_seminorm(&single(1, 1, 1.0), &ones, 1.0, 0, Block::X2, &dom)
            .unwrap();
        assert!((s1 - 0.5 * PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn residual_identity_against_partial_sums() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let mu: f64 = rng.gen_range(0.5..4.0);
            let nu: f64 = rng.gen_range(0.5..4.0);
            let eps: f64 = rng.gen_range(0.01..1.0);
            let d = 2 * rng.gen_range(0..4usize);
            let pert = 1.0 / (eps * eps * mu + nu);
            let mut partial = 0.0;
            let mut scale = pert.abs();
            for k in 0..=(d / 2) {
                let mut c = 1.0 / nu;
                for _ in 0..k {
                    c *= -mu / nu;
                }
                let term = eps.powi(2 * k as i32) * c;
                partial += term;
                scale = scale.max(term.abs());
            }
            let closed = residual_coefficient(1.0, mu, nu, eps, d);
            let lhs = pert - partial;
            assert!(
                (lhs - closed).abs() <= 1e-14 * scale.max(1e-30),
                "mu={mu} nu={nu} eps={eps} d={d}: {lhs} vs {closed}"
            );
        }
    }

    #[test]
    fn rescaled_box_frequencies() {
        // On (0,1)², the fundamental mode has frequencies π, so the
        // perturbed coefficient divides by π²(1 + ε²).
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], 1).unwrap();
        let out =
            oracle_perturbed(&single(1, 1, 1.0), &[1.0, 1.0], 0.5, &dom).unwrap();
        let want = 1.0 / (PI * PI * 1.25);
        assert!((out.modes()[0].coeff - want).abs() < 1e-15);
        // Point evaluation keeps the sine profile.
        let v = out.eval(&dom, &[0.5, 0.5]);
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_mode_sets() {
        assert!(matches!(
            SineModeSet::new(vec![SineMode {
                m1: vec![0],
                m2: vec![1],
                coeff: 1.0
            }]),
            Err(OracleError::ZeroModeIndex)
        ));
        assert!(matches!(
            SineModeSet::new(vec![
                SineMode {
                    m1: vec![1],
                    m2: vec![1],
                    coeff: 1.0
                },
                SineMode {
                    m1: vec![1],
                    m2: vec![1],
                    coeff: 2.0
                },
            ]),
            Err(OracleError::DuplicateMode { .. })
        ));
    }
}
