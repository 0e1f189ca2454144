use std::path::Path;

use plaplab::estimates::FieldBundle;
use plaplab::io::{write_scalar_snapshot, ProblemFile, SolutionMetadata};
use plaplab::solver::{relative_l2_error, solve, ENERGY_SLACK};
use plaplab::suite::{self, calibrate_lower_bound_constant, lower_bound_report, observed_orders, RadialRun, TOLERANCE_SAFETY};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SolveConfig;
use crate::error::{io_err, Result};
use crate::run::{Outcome, RunDir};

pub const COMMAND: &str = "solve";
pub const REPORT_JSON: &str = "solve.json";
pub const REPORT_CSV: &str = "solve.csv";

/// One solve of the radial benchmark with its pointwise Hessian check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRow {
    pub config_hash: String,
    pub p: f64,
    pub eps: f64,
    pub cells: usize,
    pub h: f64,
    pub outer_iters: usize,
    pub accelerated_steps: usize,
    pub inner_iters: usize,
    pub final_update: f64,
    pub final_energy: f64,
    pub relative_l2_error: f64,
    pub max_energy_increase: f64,
    pub energy_monotone: bool,
    pub lb_tol: f64,
    pub lb_min_residual: f64,
    pub lb_max_abs_residual: f64,
    pub lb_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub p: f64,
    pub eps: f64,
    pub cells: Vec<usize>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
    pub slope: f64,
    /// Every successive order is at least 1.
    pub ok: bool,
}

/// Discrete energies along the `eps` ladder; the minimum energy grows with `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsLadder {
    pub p: f64,
    pub cells: usize,
    pub eps: Vec<f64>,
    pub energies: Vec<f64>,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub config_hash: String,
    /// `tol(h) = lb_constant * h` for the pointwise Hessian check.
    pub lb_constant: f64,
    pub lb_safety: f64,
    pub runs: Vec<SolveRow>,
    pub convergence: Vec<Convergence>,
    pub eps_ladder: Vec<EpsLadder>,
}

/// Runs in `(p, eps, cells)` order, computed in parallel.
pub fn radial_runs(cfg: &SolveConfig) -> Vec<((f64, f64, usize), plaplab::Result<RadialRun>)> {
    let keys: Vec<(f64, f64, usize)> = cfg
        .ps
        .iter()
        .flat_map(|&p| cfg.eps.iter().flat_map(move |&e| cfg.grids.iter().map(move |&n| (p, e, n))))
        .collect();
    let runs: Vec<_> = keys.par_iter().map(|&(p, e, n)| suite::run_radial(p, n, e, &cfg.solver)).collect();
    keys.into_iter().zip(runs).collect()
}

fn row(config_hash: &str, run: &RadialRun, eps: f64, lb_constant: f64) -> Result<SolveRow> {
    let fields = FieldBundle::from_scalar(run.report.u.clone(), run.p, eps)?;
    let lb = lower_bound_report(&fields, lb_constant)?;
    Ok(SolveRow {
        config_hash: config_hash.to_string(),
        p: run.p,
        eps,
        cells: run.cells,
        h: run.h,
        outer_iters: run.report.outer_iters,
        accelerated_steps: run.report.accelerated_steps,
        inner_iters: run.report.inner_iters,
        final_update: run.report.final_update,
        final_energy: run.report.final_energy,
        relative_l2_error: run.relative_l2_error,
        max_energy_increase: run.max_energy_increase,
        energy_monotone: run.energy_monotone(),
        lb_tol: lb.tolerance,
        lb_min_residual: lb.min_residual,
        lb_max_abs_residual: lb.max_abs_residual,
        lb_ok: lb.min_residual >= -lb.tolerance && lb.max_abs_residual <= lb.tolerance,
    })
}

fn convergence(rows: &[SolveRow], p: f64, eps: f64) -> Option<Convergence> {
    let mut sel: Vec<&SolveRow> = rows.iter().filter(|r| r.p == p && r.eps == eps).collect();
    sel.sort_by_key(|r| r.cells);
    sel.dedup_by_key(|r| r.cells);
    if sel.len() < 2 {
        return None;
    }
    let errors: Vec<f64> = sel.iter().map(|r| r.relative_l2_error).collect();
    let hs: Vec<f64> = sel.iter().map(|r| r.h).collect();
    let orders = observed_orders(&errors);
    Some(Convergence {
        p,
        eps,
        cells: sel.iter().map(|r| r.cells).collect(),
        ok: orders.iter().all(|&o| o >= 1.0),
        slope: suite::loglog_slope(&hs, &errors),
        errors,
        orders,
    })
}

fn eps_ladder(rows: &[SolveRow], p: f64, cells: usize) -> Option<EpsLadder> {
    let mut sel: Vec<&SolveRow> = rows.iter().filter(|r| r.p == p && r.cells == cells).collect();
    sel.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    sel.dedup_by(|a, b| a.eps == b.eps);
    if sel.len() < 2 {
        return None;
    }
    let energies: Vec<f64> = sel.iter().map(|r| r.final_energy).collect();
    Some(EpsLadder {
        p,
        cells,
        eps: sel.iter().map(|r| r.eps).collect(),
        monotone: energies.windows(2).all(|w| w[1] >= w[0] - ENERGY_SLACK * w[0].abs().max(1.0)),
        energies,
    })
}

fn snapshot_name(p: f64, eps: f64, cells: usize) -> String {
    format!("u_p{p}_eps{eps:e}_n{cells}.csv")
}

pub fn execute(cfg: &SolveConfig, out: &Path) -> Result<(Option<SolveReport>, Outcome)> {
    let mut run = RunDir::create(out, COMMAND, cfg)?;
    if let Some(path) = &cfg.problem {
        solve_problem_file(cfg, path, &mut run)?;
        return Ok((None, run.finish()?));
    }
    let hash = run.config_hash().to_string();
    let mut lb_constant: f64 = 0.0;
    for &eps in &cfg.eps {
        lb_constant = lb_constant.max(calibrate_lower_bound_constant(&cfg.ps, &cfg.grids, eps)?);
    }
    let mut rows = Vec::new();
    for ((p, eps, n), res) in radial_runs(cfg) {
        let task = format!("solve p={p} eps={eps:e} n={n}");
        let r = match res {
            Ok(r) => r,
            Err(e) => {
                run.task_error(task, e);
                continue;
            }
        };
        let row = row(&hash, &r, eps, lb_constant)?;
        run.task(
            task,
            row.energy_monotone && row.lb_ok,
            format!(
                "{} outer iterations, energy increase {:e}, Hessian bound residual {:e} (tol {:e})",
                row.outer_iters, row.max_energy_increase, row.lb_min_residual, row.lb_tol
            ),
        );
        if cfg.snapshots {
            run.write_with(&snapshot_name(p, eps, n), |w| write_scalar_snapshot(w, &r.report.u, "u"))?;
        }
        rows.push(row);
    }
    let mut conv = Vec::new();
    let mut ladders = Vec::new();
    for &p in &cfg.ps {
        for &eps in &cfg.eps {
            conv.extend(convergence(&rows, p, eps));
        }
        for &n in &cfg.grids {
            ladders.extend(eps_ladder(&rows, p, n));
        }
    }
    for c in &conv {
        run.task(
            format!("convergence p={} eps={:e}", c.p, c.eps),
            c.ok,
            format!("orders {:?}, slope {:.3}", c.orders, c.slope),
        );
    }
    for l in &ladders {
        run.task(format!("eps ladder p={} n={}", l.p, l.cells), l.monotone, format!("energies {:?}", l.energies));
    }
    let report = SolveReport {
        config_hash: hash,
        lb_constant,
        lb_safety: TOLERANCE_SAFETY,
        runs: rows,
        convergence: conv,
        eps_ladder: ladders,
    };
    run.write_csv(REPORT_CSV, &report.runs)?;
    run.write_json(REPORT_JSON, &report)?;
    let outcome = run.finish()?;
    Ok((Some(report), outcome))
}

#[derive(Serialize)]
struct ProblemSolution<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    metadata: SolutionMetadata,
}

fn solve_problem_file(cfg: &SolveConfig, path: &Path, run: &mut RunDir) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let pf = ProblemFile::from_json(&text)?;
    let problem = pf.problem()?;
    let solver = pf.solver.unwrap_or(cfg.solver);
    let report = match solve(&problem, &solver) {
        Ok(r) => r,
        Err(e) => {
            run.task_error("solve problem file", e);
            return Ok(());
        }
    };
    let err = pf.exact_solution().map(|sol| relative_l2_error(&report.u, |x| sol.value(&x).unwrap_or(f64::NAN)));
    let metadata = SolutionMetadata::new(&problem, &report, err);
    let monotone = suite::max_energy_increase(&report.energy_history) <= ENERGY_SLACK;
    run.task(
        "solve problem file",
        monotone,
        format!("{} outer iterations, final update {:e}", report.outer_iters, report.final_update),
    );
    run.write_with("u.csv", |w| write_scalar_snapshot(w, &report.u, "u"))?;
    let hash = run.config_hash().to_string();
    run.write_json(
        "solution.json",
        &ProblemSolution {
            config_hash: &hash,
            metadata,
        },
    )
}
