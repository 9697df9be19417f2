//! Parsing and evaluation of scalar coefficient expressions.
//!
//! Coefficient entries and source data are written as infix expressions in
//! the variables `x1..xN`, e.g. `1 + 0.5*sin(x1)` or `x1^2*(pi - x1)`.
//! The vocabulary is fixed: `+ - * / ^` (integer exponents), `sin`, `cos`,
//! `exp`, numeric literals and the constant `pi`. Whitespace is
//! insignificant. Parsed expressions are immutable and safe to share across
//! threads.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("unknown variable {name}: expression has {nvars} variables")]
    VarOutOfRange { name: String, nvars: usize },
    #[error("expression dimension must be at least 2, got {0}")]
    BadDimension(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("point has {got} coordinates, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Expression tree. Variables are stored zero-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(usize),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, i32),
    Sin(Box<Ast>),
    Cos(Box<Ast>),
    Exp(Box<Ast>),
}

/// A parsed analytic expression in `nvars` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarExpr {
    ast: Ast,
    nvars: usize,
}

impl ScalarExpr {
    /// Parses `text` against the variables `x1..x{nvars}`.
    pub fn parse(text: &str, nvars: usize) -> Result<Self, ExprError> {
        if nvars < 2 {
            return Err(ExprError::BadDimension(nvars));
        }
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
            nvars,
        };
        let ast = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(ExprError::Syntax {
                pos: p.pos,
                msg: format!("unexpected `{}`", p.rest_snippet()),
            });
        }
        Ok(ScalarExpr { ast, nvars })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    /// True when the expression is syntactically the constant zero.
    pub fn is_const_zero(&self) -> bool {
        matches!(self.ast, Ast::Const(c) if c == 0.0)
    }

    /// True when the expression is a bare numeric literal.
    pub fn is_const(&self) -> bool {
        matches!(self.ast, Ast::Const(_))
    }

    pub fn const_value(&self) -> Option<f64> {
        match self.ast {
            Ast::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Mask of variables referenced anywhere in the tree.
    pub fn referenced_vars(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nvars];
        fn walk(ast: &Ast, mask: &mut [bool]) {
            match ast {
                Ast::Const(_) => {}
                Ast::Var(i) => mask[*i] = true,
                Ast::Neg(a) | Ast::Sin(a) | Ast::Cos(a) | Ast::Exp(a) => walk(a, mask),
                Ast::Pow(a, _) => walk(a, mask),
                Ast::Add(a, b) | Ast::Sub(a, b) | Ast::Mul(a, b) | Ast::Div(a, b) => {
                    walk(a, mask);
                    walk(b, mask);
                }
            }
        }
        walk(&self.ast, &mut mask);
        mask
    }

    /// Evaluates at `point`; deterministic, same point gives bit-identical
    /// values. A zero divisor is an error rather than a NaN.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        if point.len() != self.nvars {
            return Err(EvalError::DimensionMismatch {
                expected: self.nvars,
                got: point.len(),
            });
        }
        eval_ast(&self.ast, point)
    }
}

fn eval_ast(ast: &Ast, point: &[f64]) -> Result<f64, EvalError> {
    Ok(match ast {
        Ast::Const(c) => *c,
        Ast::Var(i) => point[*i],
        Ast::Neg(a) => -eval_ast(a, point)?,
        Ast::Add(a, b) => eval_ast(a, point)? + eval_ast(b, point)?,
        Ast::Sub(a, b) => eval_ast(a, point)? - eval_ast(b, point)?,
        Ast::Mul(a, b) => eval_ast(a, point)? * eval_ast(b, point)?,
        Ast::Div(a, b) => {
            let d = eval_ast(b, point)?;
            if d == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            eval_ast(a, point)? / d
        }
        Ast::Pow(a, e) => {
            let base = eval_ast(a, point)?;
            let mut r = 1.0;
            for _ in 0..e.unsigned_abs() {
                r *= base;
            }
            if *e < 0 {
                if r == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                r = 1.0 / r;
            }
            r
        }
        Ast::Sin(a) => eval_ast(a, point)?.sin(),
        Ast::Cos(a) => eval_ast(a, point)?.cos(),
        Ast::Exp(a) => eval_ast(a, point)?.exp(),
    })
}

// Printing uses the same precedence levels the parser assigns, so that
// `parse(print(ast))` reproduces the tree exactly. Negative literals print
// like unary minus and are folded back by the parser.
fn prec(ast: &Ast) -> u8 {
    match ast {
        Ast::Add(..) | Ast::Sub(..) => 1,
        Ast::Mul(..) | Ast::Div(..) => 2,
        Ast::Neg(..) => 3,
        Ast::Const(c) if *c < 0.0 => 3,
        Ast::Pow(..) => 4,
        _ => 5,
    }
}

fn write_ast(f: &mut fmt::Formatter<'_>, ast: &Ast, min: u8) -> fmt::Result {
    let p = prec(ast);
    if p < min {
        write!(f, "(")?;
        write_ast(f, ast, 0)?;
        return write!(f, ")");
    }
    match ast {
        Ast::Const(c) => write!(f, "{c}"),
        Ast::Var(i) => write!(f, "x{}", i + 1),
        Ast::Neg(a) => {
            write!(f, "-")?;
            write_ast(f, a, 3)
        }
        Ast::Add(a, b) => {
            write_ast(f, a, 1)?;
            write!(f, "+")?;
            write_ast(f, b, 2)
        }
        Ast::Sub(a, b) => {
            write_ast(f, a, 1)?;
            write!(f, "-")?;
            write_ast(f, b, 2)
        }
        Ast::Mul(a, b) => {
            write_ast(f, a, 2)?;
            write!(f, "*")?;
            write_ast(f, b, 3)
        }
        Ast::Div(a, b) => {
            write_ast(f, a, 2)?;
            write!(f, "/")?;
            write_ast(f, b, 3)
        }
        Ast::Pow(a, e) => {
            write_ast(f, a, 5)?;
            write!(f, "^{e}")
        }
        Ast::Sin(a) => {
            write!(f, "sin(")?;
            write_ast(f, a, 0)?;
            write!(f, ")")
        }
        Ast::Cos(a) => {
            write!(f, "cos(")?;
            write_ast(f, a, 0)?;
            write!(f, ")")
        }
        Ast::Exp(a) => {
            write!(f, "exp(")?;
            write_ast(f, a, 0)?;
            write!(f, ")")
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_ast(f, &self.ast, 0)
    }
}

// Recursive descent over:
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := '-' factor | power
//   power  := atom ('^' int)*
//   atom   := number | 'pi' | var | func '(' expr ')' | '(' expr ')'
struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nvars: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn rest_snippet(&self) -> String {
        let rest = &self.src[self.pos..];
        let take = rest.len().min(8);
        String::from_utf8_lossy(&rest[..take]).into_owned()
    }

    fn expr(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Ast::Add(lhs.into(), self.term()?.into());
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Ast::Sub(lhs.into(), self.term()?.into());
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Ast::Mul(lhs.into(), self.factor()?.into());
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Ast::Div(lhs.into(), self.factor()?.into());
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Ast, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            // Fold a negated literal into the constant so the tree has one
            // normal form for negative numbers.
            return Ok(match self.factor()? {
                Ast::Const(c) => Ast::Const(-c),
                other => Ast::Neg(other.into()),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ExprError> {
        let mut base = self.atom()?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            base = Ast::Pow(base.into(), self.int_exponent()?);
        }
        Ok(base)
    }

    fn int_exponent(&mut self) -> Result<i32, ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(ExprError::Syntax {
                pos: self.pos,
                msg: "expected integer exponent after `^`".into(),
            });
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<i32>().map_err(|_| ExprError::Syntax {
            pos: start,
            msg: format!("exponent `{text}` out of range"),
        })
    }

    fn atom(&mut self) -> Result<Ast, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Syntax {
                        pos: self.pos,
                        msg: "expected `)`".into(),
                    });
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(ExprError::Syntax {
                pos: self.pos,
                msg: format!("unexpected `{}`", c as char),
            }),
            None => Err(ExprError::Syntax {
                pos: self.pos,
                msg: "unexpected end of input".into(),
            }),
        }
    }

    fn number(&mut self) -> Result<Ast, ExprError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            while self
                .src
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_digit())
            {
                self.pos += 1;
            }
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self
                .src
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_digit())
            {
                while self
                    .src
                    .get(self.pos)
                    .is_some_and(|c| c.is_ascii_digit())
                {
                    self.pos += 1;
                }
            } else {
                // `e` belonged to something else (there are no identifiers
                // starting mid-number, so treat as malformed).
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Ast::Const)
            .map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })
    }

    fn identifier(&mut self) -> Result<Ast, ExprError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "pi" => Ok(Ast::Const(std::f64::consts::PI)),
            "sin" | "cos" | "exp" => {
                if self.peek() != Some(b'(') {
                    return Err(ExprError::Syntax {
                        pos: self.pos,
                        msg: format!("expected `(` after `{name}`"),
                    });
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Syntax {
                        pos: self.pos,
                        msg: "expected `)`".into(),
                    });
                }
                self.pos += 1;
                Ok(match name {
                    "sin" => Ast::Sin(arg.into()),
                    "cos" => Ast::Cos(arg.into()),
                    _ => Ast::Exp(arg.into()),
                })
            }
            _ => {
                if let Some(rest) = name.strip_prefix('x') {
                    if !rest.is_empty() && rest.bytes().all(|c| c.is_ascii_digit()) {
                        let idx: usize =
                            rest.parse().map_err(|_| ExprError::VarOutOfRange {
                                name: name.into(),
                                nvars: self.nvars,
                            })?;
                        if idx == 0 || idx > self.nvars {
                            return Err(ExprError::VarOutOfRange {
                                name: name.into(),
                                nvars: self.nvars,
                            });
                        }
                        return Ok(Ast::Var(idx - 1));
                    }
                }
                Err(ExprError::UnknownIdentifier {
                    name: name.into(),
                    pos: start,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn parse2(text: &str) -> ScalarExpr {
        ScalarExpr::parse(text, 2).unwrap()
    }

    #[test]
    fn parses_product_of_sines() {
        let e = parse2("sin(x1)*sin(x2)");
        match e.ast() {
            Ast::Mul(a, b) => {
                assert!(matches!(**a, Ast::Sin(_)));
                assert!(matches!(**b, Ast::Sin(_)));
            }
            other => panic!("expected product of sines, got {other:?}"),
        }
    }

    #[test]
    fn parses_constant_one() {
        assert_eq!(parse2("1").ast(), &Ast::Const(1.0));
    }

    #[test]
    fn rejects_variable_beyond_dimension() {
        let err = ScalarExpr::parse("x3", 2).unwrap_err();
        assert!(err.to_string().contains("unknown variable x3"), "{err}");
    }

    #[test]
    fn rejects_unknown_identifier() {
        let err = ScalarExpr::parse("tan(x1)", 2).unwrap_err();
        assert!(matches!(err, ExprError::UnknownIdentifier { ref name, .. } if name == "tan"));
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = ScalarExpr::parse("x1 + ", 2).unwrap_err();
        assert!(matches!(err, ExprError::Syntax { pos: 5, .. }), "{err:?}");
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(matches!(
            ScalarExpr::parse("x1", 1),
            Err(ExprError::BadDimension(1))
        ));
    }

    #[test]
    fn evaluates_sines_at_right_angle() {
        let e = parse2("sin(x1)*sin(x2)");
        let v = e.eval(&[PI / 2.0, PI / 2.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn evaluates_constant_anywhere() {
        let e = parse2("1");
        assert_eq!(e.eval(&[3.0, -7.5]).unwrap(), 1.0);
    }

    #[test]
    fn evaluates_polynomial_example() {
        // x1^2*(pi - x1) at x1 = 1 is pi - 1.
        let e = parse2("x1^2*(pi-x1)");
        let v = e.eval(&[1.0, 0.0]).unwrap();
        assert!((v - (PI - 1.0)).abs() < 1e-15);
        assert!((v - 2.1416).abs() < 1e-4);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = parse2("1/x1");
        assert_eq!(e.eval(&[0.0, 1.0]), Err(EvalError::DivisionByZero));
        assert!(e.eval(&[2.0, 1.0]).is_ok());
    }

    #[test]
    fn negative_exponent_by_reciprocal() {
        let e = parse2("x1^-2");
        assert!((e.eval(&[2.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(e.eval(&[0.0, 0.0]), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn point_dimension_checked() {
        let e = parse2("x1");
        assert!(matches!(
            e.eval(&[1.0]),
            Err(EvalError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn referenced_vars_mask() {
        let e = ScalarExpr::parse("sin(x3)*2", 3).unwrap();
        assert_eq!(e.referenced_vars(), vec![false, false, true]);
    }

    #[test]
    fn unary_minus_binds_tighter_than_product() {
        // -x1^2 is -(x1^2); (-x1)^2 needs parens.
        let e = parse2("-x1^2");
        assert!((e.eval(&[3.0, 0.0]).unwrap() + 9.0).abs() < 1e-15);
        let e = parse2("(-x1)^2");
        assert!((e.eval(&[3.0, 0.0]).unwrap() - 9.0).abs() < 1e-15);
    }

    /// Independent interpreter: hand-written closures per table entry.
    #[test]
    fn eval_matches_independent_interpreter() {
        type Oracle = fn(&[f64]) -> f64;
        let table: Vec<(&str, Oracle)> = vec![
            ("sin(x1)*sin(x2)", |p| p[0].sin() * p[1].sin()),
            ("1+0.5*sin(x1)", |p| 1.0 + 0.5 * p[0].sin()),
            ("x1^2*(pi-x1)", |p| p[0] * p[0] * (PI - p[0])),
            ("cos(x1*x2)", |p| (p[0] * p[1]).cos()),
            ("exp(-x1)*sin(2*x2)", |p| (-p[0]).exp() * (2.0 * p[1]).sin()),
            ("x1/(1+x2^2)", |p| p[0] / (1.0 + p[1] * p[1])),
            ("2-x1-x2", |p| 2.0 - p[0] - p[1]),
            ("x1*(pi-x1)*sin(x2)", |p| p[0] * (PI - p[0]) * p[1].sin()),
            ("sin(x1)^2*sin(x2)", |p| {
                p[0].sin() * p[0].sin() * p[1].sin()
            }),
            ("0.25*x1^3-x2/4", |p| {
                0.25 * p[0] * p[0] * p[0] - p[1] / 4.0
            }),
        ];
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (text, oracle) in table {
            let e = parse2(text);
            for _ in 0..100 {
                let p = [rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0)];
                let got = e.eval(&p).unwrap();
                let want = oracle(&p);
                assert!(
                    (got - want).abs() <= 1e-14 * want.abs().max(1.0),
                    "{text} at {p:?}: {got} vs {want}"
                );
            }
        }
    }

    fn arb_ast(nvars: usize) -> impl Strategy<Value = Ast> {
        let leaf = prop_oneof![
            (0..nvars).prop_map(Ast::Var),
            (-100i64..100).prop_map(|c| Ast::Const(c as f64 / 8.0)),
            prop::num::f64::NORMAL.prop_map(|c| Ast::Const(c % 1.0e6)),
        ];
        leaf.prop_recursive(5, 48, 2, move |inner| {
            prop_oneof![
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Add(a.into(), b.into())),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Sub(a.into(), b.into())),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Mul(a.into(), b.into())),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Ast::Div(a.into(), b.into())),
                // The parser folds negated literals, so the generator must
                // produce the same normal form.
                inner.clone().prop_map(|a| match a {
                    Ast::Const(c) => Ast::Const(-c),
                    other => Ast::Neg(other.into()),
                }),
                (inner.clone(), -6i32..=6).prop_map(|(a, e)| Ast::Pow(a.into(), e)),
                inner.clone().prop_map(|a| Ast::Sin(a.into())),
                inner.clone().prop_map(|a| Ast::Cos(a.into())),
                inner.prop_map(|a| Ast::Exp(a.into())),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(ast in arb_ast(3)) {
            let e = ScalarExpr { ast, nvars: 3 };
            let text = e.to_string();
            let back = ScalarExpr::parse(&text, 3).unwrap();
            prop_assert_eq!(e, back);
        }
    }
}
