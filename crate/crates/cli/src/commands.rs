//! The four experiment commands: solve, cascade, sweep, oracle-check.
//!
//! Every command writes CSV artifacts under the output directory with the
//! resolved configuration embedded as comment lines, and prints a short
//! summary. Identical configurations produce byte-identical files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anisoexp::analysis::{
    fit_rate, format_float, run_sweep, SweepParams, Verdict,
};
use anisoexp::assembly::{assemble_perturbed, assemble_perturbed_fn, NodalField};
use anisoexp::cascade::solve_cascade;
use anisoexp::grid::TensorGrid;
use anisoexp::linalg::solve_spd;
use anisoexp::oracle::oracle_perturbed;

use crate::config::Experiment;
use crate::CliError;

/// Files written and the verdict, when the command has one.
pub struct CmdOutput {
    pub files: Vec<PathBuf>,
    pub verdict: Option<Verdict>,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

/// Nodal dump: one row per grid node (boundary included, value zero
/// there), coordinates then value.
fn nodal_csv(field: &NodalField, comments: &[String]) -> String {
    let grid = field.grid();
    let dim = grid.dim();
    let mut out = String::new();
    for line in comments {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for i in 0..dim {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("x{}", i + 1));
    }
    out.push_str(",value\n");
    let mut multi = vec![0usize; dim];
    let mut coord = vec![0.0; dim];
    loop {
        grid.coord_into(&multi, &mut coord);
        let value = grid
            .interior_index(&multi)
            .map_or(0.0, |g| field.values()[g]);
        for (i, c) in coord.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format_float(*c));
        }
        out.push(',');
        out.push_str(&format_float(value));
        out.push('\n');
        // Advance the closed multi-index, last axis fastest.
        let mut axis = dim;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            multi[axis] += 1;
            if multi[axis] <= grid.subdivisions()[axis] {
                break;
            }
            multi[axis] = 0;
        }
    }
}

fn map_solver_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Solver(e.to_string())
}

/// Solve the perturbed problem at the first ε of the sweep list and dump
/// the solution.
pub fn cmd_solve(exp: &Experiment, out_dir: &Path) -> Result<CmdOutput, CliError> {
    let eps = exp.config.eps[0];
    let sys = assemble_perturbed(&exp.field, eps, &exp.grid, &exp.f).map_err(map_solver_err)?;
    let (u, stats) = solve_spd(&sys, exp.config.solver_tol, exp.config.solver_max_iter)
        .map_err(map_solver_err)?;
    println!(
        "solved eps = {eps}: {} unknowns, {} iterations, residual {:.3e}",
        sys.matrix.n(),
        stats.iterations,
        stats.relative_residual
    );
    let mut comments = exp.config.resolved_lines();
    comments.push(format!("solve eps = {}", format_float(eps)));
    let path = out_dir.join("solution.csv");
    write_file(&path, &nodal_csv(&u, &comments))?;
    println!("wrote {}", path.display());
    Ok(CmdOutput {
        files: vec![path],
        verdict: None,
    })
}

/// Run the expansion hierarchy and dump each term.
pub fn cmd_cascade(exp: &Experiment, out_dir: &Path) -> Result<CmdOutput, CliError> {
    let result = solve_cascade(
        &exp.field,
        &exp.f,
        &exp.grid,
        exp.config.d,
        exp.config.branch,
    )
    .map_err(map_solver_err)?;
    println!(
        "cascade order {} on the {} branch",
        result.order,
        result.branch.as_str()
    );
    let comments = exp.config.resolved_lines();
    let mut files = Vec::new();
    for (k, term) in result.terms.iter().enumerate() {
        let path = out_dir.join(format!("u{k}.csv"));
        write_file(&path, &nodal_csv(term, &comments))?;
        println!(
            "  u{k}: max |u| = {:.6e}{}  -> {}",
            term.max_abs(),
            if result.stats[k].skipped {
                " (odd term, skipped)"
            } else {
                ""
            },
            path.display()
        );
        files.push(path);
    }
    Ok(CmdOutput {
        files,
        verdict: None,
    })
}

/// ε-sweep with rate verdict; the report goes to `report.csv`.
pub fn cmd_sweep(exp: &Experiment, out_dir: &Path) -> Result<CmdOutput, CliError> {
    let params = SweepParams {
        d: exp.config.d,
        branch: exp.config.branch,
        eps: exp.config.eps.clone(),
        solver_tol: exp.config.solver_tol,
        solver_max_iter: exp.config.solver_max_iter,
        slope_tol_x2: exp.config.slope_tol_x2,
        slope_tol_x1: exp.config.slope_tol_x1,
        h_floor_check: true,
    };
    let report = run_sweep(&exp.field, &exp.f, &exp.grid, &params).map_err(|e| match e {
        anisoexp::analysis::AnalysisError::ZeroResiduals => {
            CliError::Config(e.to_string())
        }
        anisoexp::analysis::AnalysisError::BadEpsList => CliError::Config(e.to_string()),
        other => CliError::Solver(other.to_string()),
    })?;

    println!("{:>12} {:>24} {:>24}", "eps", "seminormX2", "seminormX1");
    for i in 0..report.eps.len() {
        println!(
            "{:>12.6} {:>24.16e} {:>24.16e}",
            report.eps[i], report.semi_x2[i], report.semi_x1[i]
        );
    }
    println!(
        "slopes: X2 {:.3} (theory {:.1}, tol {:.2}), X1 {:.3} (theory {:.1}, tol {:.2})",
        report.slope_x2,
        report.theory_x2,
        report.slope_tol_x2,
        report.slope_x1,
        report.theory_x1,
        report.slope_tol_x1
    );
    if let Some(est) = report.h_floor_estimate {
        println!(
            "h-floor estimate {:.3e}{}",
            est,
            if report.h_floor_reached {
                " (reached: residuals sit on the discretization floor)"
            } else {
                ""
            }
        );
    }
    println!("verdict: {}", report.verdict.as_str());

    let path = out_dir.join("report.csv");
    write_file(&path, &report.to_csv(&exp.config.resolved_lines()))?;
    println!("wrote {}", path.display());
    if report.verdict == Verdict::Fail {
        return Err(CliError::Verdict);
    }
    Ok(CmdOutput {
        files: vec![path],
        verdict: Some(report.verdict),
    })
}

/// Compare the finite element solution against the exact oracle over a
/// refinement ladder n, 2n, 4n; the fitted error slope must reach the Q1
/// order.
pub fn cmd_oracle_check(exp: &Experiment, out_dir: &Path) -> Result<CmdOutput, CliError> {
    let dim = exp.grid.dim();
    for i in 0..dim {
        for j in 0..dim {
            let e = exp.field.entry(i, j);
            let ok = if i == j {
                e.is_const()
            } else {
                e.is_const_zero()
            };
            if !ok {
                return Err(CliError::Config(
                    "oracle-check requires constant diagonal coefficients".to_string(),
                ));
            }
        }
    }
    let diag: Vec<f64> = (0..dim)
        .map(|i| exp.field.entry(i, i).const_value().unwrap())
        .collect();
    let modes = exp.config.oracle_mode_set()?;
    let eps = exp.config.eps[0];
    let domain = exp.grid.domain().clone();
    let exact = oracle_perturbed(&modes, &diag, eps, &domain)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut rows = Vec::new();
    println!("{:>8} {:>24} {:>10}", "n", "rel_l2_error", "rate");
    for level in 0..3 {
        let subs: Vec<usize> = exp
            .config
            .subdivisions
            .iter()
            .map(|n| n << level)
            .collect();
        let grid = Arc::new(
            TensorGrid::build(domain.clone(), subs.clone())
                .map_err(|e| CliError::Config(e.to_string()))?,
        );
        let f = |x: &[f64]| Ok(modes.eval(&domain, x));
        let sys =
            assemble_perturbed_fn(&exp.field, eps, &grid, &f).map_err(map_solver_err)?;
        let (u, _) = solve_spd(&sys, exp.config.solver_tol, exp.config.solver_max_iter)
            .map_err(map_solver_err)?;
        let reference = exact.interpolate(&grid);
        let mut diff = u.clone();
        diff.axpy(-1.0, &reference);
        let rel = diff.discrete_l2() / reference.discrete_l2();
        let h = 1.0 / subs[0] as f64;
        let rate = rows
            .last()
            .map(|&(hp, ep): &(f64, f64)| ((ep as f64).ln() - rel.ln()) / (hp.ln() - h.ln()))
            .unwrap_or(f64::NAN);
        println!("{:>8} {:>24.16e} {:>10.3}", subs[0], rel, rate);
        rows.push((h, rel));
    }
    let slope = fit_rate(&rows).map_err(|e| CliError::Solver(e.to_string()))?;
    let verdict = if slope >= 1.8 { Verdict::Pass } else { Verdict::Fail };
    println!("error slope {slope:.3} (floor 1.8), verdict: {}", verdict.as_str());

    let mut csv = String::new();
    for line in exp.config.resolved_lines() {
        csv.push_str("# ");
        csv.push_str(&line);
        csv.push('\n');
    }
    csv.push_str("n,rel_l2_error\n");
    for (i, (_, rel)) in rows.iter().enumerate() {
        csv.push_str(&format!(
            "{},{}\n",
            exp.config.subdivisions[0] << i,
            format_float(*rel)
        ));
    }
    csv.push_str(&format!("slope,{}\n", format_float(slope)));
    csv.push_str(&format!("verdict,{}\n", verdict.as_str()));
    let path = out_dir.join("oracle_check.csv");
    write_file(&path, &csv)?;
    println!("wrote {}", path.display());
    if verdict == Verdict::Fail {
        return Err(CliError::Verdict);
    }
    Ok(CmdOutput {
        files: vec![path],
        verdict: Some(verdict),
    })
}
