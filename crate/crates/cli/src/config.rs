//! Experiment configuration: a sectioned `key = value` text format.
//!
//! Sections are `[domain]`, `[grid]`, `[coefficients]`, `[data]`,
//! `[expansion]`, `[sweep]`, `[solver]`, `[output]` and `[oracle]`. Lists
//! are comma separated, expression strings go in double quotes, `#` starts
//! a comment line. Unknown sections or keys are errors so typos cannot
//! silently change an experiment. Every emitted report embeds the resolved
//! configuration as `#` comment lines in exactly this format, so archived
//! results reparse to the experiment that produced them.

use std::path::Path;
use std::sync::Arc;

use anisoexp::analysis::format_float;
use anisoexp::cascade::BranchChoice;
use anisoexp::coeffs::{validate, BlockCoefficientField, ValidationReport};
use anisoexp::expr::ScalarExpr;
use anisoexp::grid::{BoxDomain, TensorGrid};
use anisoexp::oracle::{SineMode, SineModeSet};

use crate::CliError;

pub const DEFAULT_EPS: [f64; 3] = [0.5, 0.25, 0.125];
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;
pub const DEFAULT_SLOPE_TOL: f64 = 0.25;

/// Fully resolved experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub split: usize,
    pub subdivisions: Vec<usize>,
    /// N² coefficient expressions, row-major.
    pub coeff_exprs: Vec<String>,
    pub lambda: f64,
    pub f_expr: String,
    pub d: usize,
    pub branch: BranchChoice,
    pub eps: Vec<f64>,
    pub slope_tol_x2: f64,
    pub slope_tol_x1: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub out_dir: String,
    /// Oracle mode list `m1.. : coeff ; ...` with N indices per mode.
    pub oracle_modes: String,
}

/// Built experiment objects shared by every command.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: Arc<TensorGrid>,
    pub field: BlockCoefficientField,
    pub f: ScalarExpr,
    pub validation: ValidationReport,
}

/// Loads, resolves and validates a configuration file. Validation failures
/// from the coefficient hypotheses are surfaced here.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    let cfg = ExperimentConfig::parse(&text)?;
    cfg.build()?;
    Ok(cfg)
}

fn cfg_err(section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("[{section}] {key}: {msg}"))
}

fn parse_f64(section: &str, key: &str, v: &str) -> Result<f64, CliError> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(section, key, format!("malformed number `{}`", v.trim())))
}

fn parse_usize(section: &str, key: &str, v: &str) -> Result<usize, CliError> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(section, key, format!("malformed integer `{}`", v.trim())))
}

fn parse_f64_list(section: &str, key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|t| parse_f64(section, key, t)).collect()
}

fn parse_usize_list(section: &str, key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',').map(|t| parse_usize(section, key, t)).collect()
}

fn parse_quoted(section: &str, key: &str, v: &str) -> Result<String, CliError> {
    let t = v.trim();
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
        Ok(t[1..t.len() - 1].to_string())
    } else {
        Err(cfg_err(
            section,
            key,
            "expression strings must be double-quoted",
        ))
    }
}

fn parse_word(v: &str) -> String {
    let t = v.trim();
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
        t[1..t.len() - 1].to_string()
    } else {
        t.to_string()
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut section = String::new();
        let mut lower: Option<Vec<f64>> = None;
        let mut upper: Option<Vec<f64>> = None;
        let mut split: Option<usize> = None;
        let mut subdivisions: Option<Vec<usize>> = None;
        let mut coeff: Vec<(usize, usize, String)> = Vec::new();
        let mut lambda = DEFAULT_LAMBDA;
        let mut f_expr: Option<String> = None;
        let mut d = 0usize;
        let mut branch = BranchChoice::Auto;
        let mut eps: Vec<f64> = DEFAULT_EPS.to_vec();
        let mut slope_tol_x2 = DEFAULT_SLOPE_TOL;
        let mut slope_tol_x1 = DEFAULT_SLOPE_TOL;
        let mut solver_tol = DEFAULT_SOLVER_TOL;
        let mut solver_max_iter = DEFAULT_MAX_ITER;
        let mut out_dir = "out".to_string();
        let mut oracle_modes: Option<String> = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        CliError::Config(format!("line {}: malformed section header", lineno + 1))
                    })?
                    .trim();
                match name {
                    "domain" | "grid" | "coefficients" | "data" | "expansion" | "sweep"
                    | "solver" | "output" | "oracle" => section = name.to_string(),
                    other => {
                        return Err(CliError::Config(format!(
                            "line {}: unknown section [{other}]",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            match (section.as_str(), key) {
                ("domain", "lower") => lower = Some(parse_f64_list("domain", key, value)?),
                ("domain", "upper") => upper = Some(parse_f64_list("domain", key, value)?),
                ("domain", "split") => split = Some(parse_usize("domain", key, value)?),
                ("grid", "subdivisions") => {
                    subdivisions = Some(parse_usize_list("grid", key, value)?)
                }
                ("coefficients", "lambda") => {
                    lambda = parse_f64("coefficients", key, value)?
                }
                ("coefficients", k) => {
                    let idx = parse_coeff_key(k).ok_or_else(|| {
                        cfg_err("coefficients", k, "unknown key (expected aIJ or lambda)")
                    })?;
                    coeff.push((idx.0, idx.1, parse_quoted("coefficients", k, value)?));
                }
                ("data", "f") => f_expr = Some(parse_quoted("data", key, value)?),
                ("expansion", "d") => d = parse_usize("expansion", key, value)?,
                ("expansion", "branch") => {
                    branch = match parse_word(value).as_str() {
                        "auto" => BranchChoice::Auto,
                        "diagonal" => BranchChoice::Diagonal,
                        "general" => BranchChoice::General,
                        other => {
                            return Err(cfg_err(
                                "expansion",
                                key,
                                format!("unknown branch `{other}`"),
                            ))
                        }
                    }
                }
                ("sweep", "eps") => eps = parse_f64_list("sweep", key, value)?,
                ("sweep", "slope_tol_x2") => {
                    slope_tol_x2 = parse_f64("sweep", key, value)?
                }
                ("sweep", "slope_tol_x1") => {
                    slope_tol_x1 = parse_f64("sweep", key, value)?
                }
                ("solver", "tol") => solver_tol = parse_f64("solver", key, value)?,
                ("solver", "max_iter") => {
                    solver_max_iter = parse_usize("solver", key, value)?
                }
                ("output", "dir") => out_dir = parse_word(value),
                ("oracle", "modes") => oracle_modes = Some(parse_word(value)),
                ("", k) => {
                    return Err(CliError::Config(format!(
                        "line {}: key `{k}` before any [section]",
                        lineno + 1
                    )))
                }
                (s, k) => return Err(cfg_err(s, k, "unknown key")),
            }
        }

        let lower = lower.ok_or_else(|| cfg_err("domain", "lower", "missing required key"))?;
        let upper = upper.ok_or_else(|| cfg_err("domain", "upper", "missing required key"))?;
        let split = split.ok_or_else(|| cfg_err("domain", "split", "missing required key"))?;
        let subdivisions = subdivisions
            .ok_or_else(|| cfg_err("grid", "subdivisions", "missing required key"))?;
        let f_expr = f_expr.ok_or_else(|| cfg_err("data", "f", "missing required key"))?;

        let dim = lower.len();
        if !(2..=3).contains(&dim) {
            return Err(cfg_err(
                "domain",
                "lower",
                format!("only 2- and 3-dimensional domains are supported, got N={dim}"),
            ));
        }

        // Resolve the coefficient matrix: identity unless overridden.
        let mut coeff_exprs: Vec<String> = (0..dim * dim)
            .map(|k| if k / dim == k % dim { "1" } else { "0" }.to_string())
            .collect();
        for (i, j, text) in coeff {
            if i > dim || j > dim || i == 0 || j == 0 {
                return Err(cfg_err(
                    "coefficients",
                    &format!("a{i}{j}"),
                    format!("indices out of range for N={dim}"),
                ));
            }
            coeff_exprs[(i - 1) * dim + (j - 1)] = text;
        }

        for &e in &eps {
            if !(e > 0.0 && e <= 1.0) {
                return Err(cfg_err("sweep", "eps", format!("eps out of (0,1]: {e}")));
            }
        }
        eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eps.dedup();
        if !(lambda > 0.0) {
            return Err(cfg_err("coefficients", "lambda", "must be positive"));
        }
        if !(solver_tol > 0.0 && solver_tol < 1.0) {
            return Err(cfg_err("solver", "tol", "must lie in (0, 1)"));
        }
        if d > anisoexp::cascade::MAX_ORDER {
            return Err(cfg_err(
                "expansion",
                "d",
                format!("order {d} exceeds the maximum {}", anisoexp::cascade::MAX_ORDER),
            ));
        }

        let oracle_modes = oracle_modes.unwrap_or_else(|| {
            let ones = vec!["1"; dim].join(" ");
            format!("{ones} : 1")
        });

        Ok(ExperimentConfig {
            lower,
            upper,
            split,
            subdivisions,
            coeff_exprs,
            lambda,
            f_expr,
            d,
            branch,
            eps,
            slope_tol_x2,
            slope_tol_x1,
            solver_tol,
            solver_max_iter,
            out_dir,
            oracle_modes,
        })
    }

    /// Builds the grid, coefficient field and data expression, and runs the
    /// hypothesis checks. A failed check is an error.
    pub fn build(&self) -> Result<Experiment, CliError> {
        let dim = self.lower.len();
        let domain = BoxDomain::new(self.lower.clone(), self.upper.clone(), self.split)
            .map_err(|e| CliError::Config(format!("[domain] {e}")))?;
        let grid = Arc::new(
            TensorGrid::build(domain, self.subdivisions.clone())
                .map_err(|e| CliError::Config(format!("[grid] {e}")))?,
        );
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let text = &self.coeff_exprs[i * dim + j];
                entries.push(ScalarExpr::parse(text, dim).map_err(|e| {
                    cfg_err("coefficients", &format!("a{}{}", i + 1, j + 1), e)
                })?);
            }
        }
        let field = BlockCoefficientField::new(entries, self.split, self.lambda)
            .map_err(|e| CliError::Config(format!("[coefficients] {e}")))?;
        let f = ScalarExpr::parse(&self.f_expr, dim).map_err(|e| cfg_err("data", "f", e))?;

        let validation = validate(&field, &grid);
        if !validation.passed() {
            return Err(CliError::Validation(validation.to_string()));
        }
        Ok(Experiment {
            config: self.clone(),
            grid,
            field,
            f,
            validation,
        })
    }

    /// Oracle mode set parsed from the resolved `oracle_modes` string.
    pub fn oracle_mode_set(&self) -> Result<SineModeSet, CliError> {
        let dim = self.lower.len();
        let q = self.split;
        let mut modes = Vec::new();
        for part in self.oracle_modes.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (idx_part, coeff_part) = part.split_once(':').ok_or_else(|| {
                cfg_err("oracle", "modes", format!("missing `:` in mode `{part}`"))
            })?;
            let indices: Vec<usize> = idx_part
                .split_whitespace()
                .map(|t| parse_usize("oracle", "modes", t))
                .collect::<Result<_, _>>()?;
            if indices.len() != dim {
                return Err(cfg_err(
                    "oracle",
                    "modes",
                    format!("mode `{part}` needs {dim} indices"),
                ));
            }
            let coeff = parse_f64("oracle", "modes", coeff_part)?;
            modes.push(SineMode {
                m1: indices[..q].to_vec(),
                m2: indices[q..].to_vec(),
                coeff,
            });
        }
        SineModeSet::new(modes).map_err(|e| cfg_err("oracle", "modes", e))
    }

    /// Canonical text form of the resolved configuration; reparsing these
    /// lines reproduces the configuration exactly.
    pub fn resolved_lines(&self) -> Vec<String> {
        let dim = self.lower.len();
        let floats = |v: &[f64]| -> String {
            v.iter().map(|x| format_float(*x)).collect::<Vec<_>>().join(", ")
        };
        let ints = |v: &[usize]| -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
        };
        let mut lines = vec![
            "[domain]".to_string(),
            format!("lower = {}", floats(&self.lower)),
            format!("upper = {}", floats(&self.upper)),
            format!("split = {}", self.split),
            "[grid]".to_string(),
            format!("subdivisions = {}", ints(&self.subdivisions)),
            "[coefficients]".to_string(),
        ];
        for i in 0..dim {
            for j in 0..dim {
                lines.push(format!(
                    "a{}{} = \"{}\"",
                    i + 1,
                    j + 1,
                    self.coeff_exprs[i * dim + j]
                ));
            }
        }
        lines.push(format!("lambda = {}", format_float(self.lambda)));
        lines.push("[data]".to_string());
        lines.push(format!("f = \"{}\"", self.f_expr));
        lines.push("[expansion]".to_string());
        lines.push(format!("d = {}", self.d));
        lines.push(format!(
            "branch = {}",
            match self.branch {
                BranchChoice::Auto => "auto",
                BranchChoice::Diagonal => "diagonal",
                BranchChoice::General => "general",
            }
        ));
        lines.push("[sweep]".to_string());
        lines.push(format!("eps = {}", floats(&self.eps)));
        lines.push(format!("slope_tol_x2 = {}", format_float(self.slope_tol_x2)));
        lines.push(format!("slope_tol_x1 = {}", format_float(self.slope_tol_x1)));
        lines.push("[solver]".to_string());
        lines.push(format!("tol = {}", format_float(self.solver_tol)));
        lines.push(format!("max_iter = {}", self.solver_max_iter));
        lines.push("[output]".to_string());
        lines.push(format!("dir = \"{}\"", self.out_dir));
        lines.push("[oracle]".to_string());
        lines.push(format!("modes = \"{}\"", self.oracle_modes));
        lines
    }
}

fn parse_coeff_key(key: &str) -> Option<(usize, usize)> {
    let rest = key.strip_prefix('a')?;
    let bytes = rest.as_bytes();
    if bytes.len() != 2 || !bytes[0].is_ascii_digit() || !bytes[1].is_ascii_digit() {
        return None;
    }
    Some(((bytes[0] - b'0') as usize, (bytes[1] - b'0') as usize))
}
