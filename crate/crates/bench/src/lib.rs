//! Shared problem setups for the pipeline benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use anisoexp::coeffs::BlockCoefficientField;
use anisoexp::expr::ScalarExpr;
use anisoexp::grid::{BoxDomain, TensorGrid};

/// Square grid on (0, π)² with split 1.
pub fn square_grid(n: usize) -> Arc<TensorGrid> {
    let domain = BoxDomain::new(vec![0.0, 0.0], vec![PI, PI], 1).unwrap();
    Arc::new(TensorGrid::build(domain, vec![n, n]).unwrap())
}

/// Variable diagonal coefficients typical of the rate experiments.
pub fn diagonal_field() -> BlockCoefficientField {
    let entries = ["1+0.5*sin(x1)", "0", "0", "1"]
        .iter()
        .map(|t| ScalarExpr::parse(t, 2).unwrap())
        .collect();
    BlockCoefficientField::new(entries, 1, 0.4).unwrap()
}

/// Coupled symmetric coefficients for the general branch.
pub fn coupled_field() -> BlockCoefficientField {
    let entries = ["1", "0.3", "0.3", "1"]
        .iter()
        .map(|t| ScalarExpr::parse(t, 2).unwrap())
        .collect();
    BlockCoefficientField::new(entries, 1, 0.6).unwrap()
}

pub fn source() -> ScalarExpr {
    ScalarExpr::parse("sin(x1)^2*sin(x2)", 2).unwrap()
}
