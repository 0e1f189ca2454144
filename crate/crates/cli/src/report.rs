use std::cmp::Ordering;
use std::path::Path;

use plaplab::estimates::{threshold_sharp, threshold_two_sided};
use plaplab::suite::{loglog_slope, relative_change};
use serde::{Deserialize, Serialize};

use crate::config::ReportConfig;
use crate::error::{CliError, Result};
use crate::estimates::{EstimateRow, ESTIMATES_CSV};
use crate::run::{Outcome, RunDir, RunManifest, MANIFEST};
use crate::solve::{SolveRow, REPORT_CSV as SOLVE_CSV};

pub const COMMAND: &str = "report";
pub const STABILITY_CSV: &str = "stability.csv";
pub const THRESHOLDS_CSV: &str = "thresholds.csv";
pub const SUMMARY_JSON: &str = "summary.json";

pub const THRESHOLD_DIMS: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];
pub const THRESHOLD_PS: [f64; 9] = [1.1, 1.25, 1.5, 1.75, 2.0, 3.0, 4.0, 6.0, 10.0];

/// Empirical constant of one estimate at two successive resolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub estimate: String,
    pub p: f64,
    pub s: f64,
    pub eps: f64,
    pub ball_x: f64,
    pub ball_y: f64,
    pub ball_r: f64,
    pub h_coarse: f64,
    pub h_fine: f64,
    pub c_coarse: Option<f64>,
    pub c_fine: Option<f64>,
    pub relative_change: Option<f64>,
    /// `None` when either constant is missing or the row is diagnostic.
    pub stable: Option<bool>,
    /// The pair at the two finest resolutions; only these carry the verdict.
    pub finest_pair: bool,
    pub diagnostic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub n: usize,
    pub p: f64,
    pub threshold_sharp: f64,
    pub threshold_two_sided: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub p: f64,
    pub eps: f64,
    pub cells: Vec<usize>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub command: String,
    pub config_hash: String,
    pub failed_tasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config_hash: String,
    pub inputs: Vec<InputSummary>,
    pub stability_tol: f64,
    pub stability_checked: usize,
    pub stability_failures: usize,
    pub convergence: Vec<ConvergenceSummary>,
    pub thresholds: Vec<ThresholdRow>,
}

fn cmp_f(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

fn key_cmp(a: &EstimateRow, b: &EstimateRow) -> Ordering {
    a.estimate
        .cmp(&b.estimate)
        .then(cmp_f(a.p, b.p))
        .then(cmp_f(a.s, b.s))
        .then(cmp_f(a.eps, b.eps))
        .then(cmp_f(a.ball_x, b.ball_x))
        .then(cmp_f(a.ball_y, b.ball_y))
        .then(cmp_f(a.ball_r, b.ball_r))
}

/// Joins rows of the same estimate, parameters and ball across
/// resolutions, coarse to fine.
pub fn stability_rows(mut rows: Vec<EstimateRow>, tol: f64) -> Vec<StabilityRow> {
    rows.sort_by(|a, b| key_cmp(a, b).then(cmp_f(b.h, a.h)));
    rows.dedup_by(|a, b| key_cmp(a, b) == Ordering::Equal && a.h == b.h);
    let mut out = Vec::new();
    for group in rows.chunk_by(|a, b| key_cmp(a, b) == Ordering::Equal) {
        for (i, w) in group.windows(2).enumerate() {
            let (c, f) = (&w[0], &w[1]);
            let diagnostic = c.diagnostic || f.diagnostic;
            let change = match (c.empirical_c, f.empirical_c) {
                (Some(a), Some(b)) => Some(relative_change(a, b)),
                _ => None,
            };
            out.push(StabilityRow {
                estimate: c.estimate.clone(),
                p: c.p,
                s: c.s,
                eps: c.eps,
                ball_x: c.ball_x,
                ball_y: c.ball_y,
                ball_r: c.ball_r,
                h_coarse: c.h,
                h_fine: f.h,
                c_coarse: c.empirical_c,
                c_fine: f.empirical_c,
                relative_change: change,
                stable: if diagnostic { None } else { change.map(|d| d <= tol) },
                finest_pair: i + 2 == group.len(),
                diagnostic,
            });
        }
    }
    out
}

pub fn threshold_rows() -> Vec<ThresholdRow> {
    THRESHOLD_DIMS
        .iter()
        .flat_map(|&n| {
            THRESHOLD_PS.iter().map(move |&p| {
                let (a, b) = (threshold_sharp(n, p), threshold_two_sided(n, p));
                ThresholdRow {
                    n,
                    p,
                    threshold_sharp: a,
                    threshold_two_sided: b,
                    gap: b - a,
                }
            })
        })
        .collect()
}

fn convergence(mut rows: Vec<SolveRow>) -> Vec<ConvergenceSummary> {
    rows.sort_by(|a, b| cmp_f(a.p, b.p).then(cmp_f(a.eps, b.eps)).then(a.cells.cmp(&b.cells)));
    rows.dedup_by(|a, b| a.p == b.p && a.eps == b.eps && a.cells == b.cells);
    rows.chunk_by(|a, b| a.p == b.p && a.eps == b.eps)
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let hs: Vec<f64> = g.iter().map(|r| r.h).collect();
            let errors: Vec<f64> = g.iter().map(|r| r.relative_l2_error).collect();
            ConvergenceSummary {
                p: g[0].p,
                eps: g[0].eps,
                cells: g.iter().map(|r| r.cells).collect(),
                slope: loglog_slope(&hs, &errors),
                errors,
            }
        })
        .collect()
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn execute(cfg: &ReportConfig, out: &Path) -> Result<(ReportSummary, Outcome)> {
    let mut inputs = Vec::new();
    let mut est_rows = Vec::new();
    let mut solve_rows = Vec::new();
    for dir in &cfg.inputs {
        if !dir.join(MANIFEST).is_file() {
            return Err(CliError::MissingInput(format!("{} has no {MANIFEST}", dir.display())));
        }
        let m = RunManifest::read(dir)?;
        let (est, sol) = (dir.join(ESTIMATES_CSV), dir.join(SOLVE_CSV));
        if est.is_file() {
            est_rows.extend(read_csv::<EstimateRow>(&est)?);
        }
        if sol.is_file() {
            solve_rows.extend(read_csv::<SolveRow>(&sol)?);
        }
        inputs.push(InputSummary {
            command: m.command,
            config_hash: m.config_hash,
            failed_tasks: m.tasks.iter().filter(|t| t.state != crate::run::TaskState::Pass).count(),
        });
    }
    if est_rows.is_empty() && solve_rows.is_empty() {
        return Err(CliError::MissingInput("no estimate or solve tables in the inputs".to_string()));
    }

    let mut run = RunDir::create(out, COMMAND, cfg)?;
    let stability = stability_rows(est_rows, cfg.stability_tol);
    let verdicts: Vec<&StabilityRow> = stability.iter().filter(|r| r.finest_pair && r.stable.is_some()).collect();
    let failures: Vec<&&StabilityRow> = verdicts.iter().filter(|r| r.stable == Some(false)).collect();
    let summary = ReportSummary {
        config_hash: run.config_hash().to_string(),
        inputs,
        stability_tol: cfg.stability_tol,
        stability_checked: verdicts.len(),
        stability_failures: failures.len(),
        convergence: convergence(solve_rows),
        thresholds: threshold_rows(),
    };
    if !stability.is_empty() {
        run.task(
            "refinement stability",
            failures.is_empty(),
            match failures.first() {
                None => format!("{} constants within {}", verdicts.len(), cfg.stability_tol),
                Some(r) => format!(
                    "{} of {} constants move more than {}; first: {} p={} s={} ({:?})",
                    failures.len(),
                    verdicts.len(),
                    cfg.stability_tol,
                    r.estimate,
                    r.p,
                    r.s,
                    r.relative_change
                ),
            },
        );
    }
    for c in &summary.convergence {
        run.task(format!("convergence p={} eps={:e}", c.p, c.eps), c.slope >= 1.0, format!("log-log slope {:.3}", c.slope));
    }
    run.write_csv(STABILITY_CSV, &stability)?;
    run.write_csv(THRESHOLDS_CSV, &summary.thresholds)?;
    run.write_json(SUMMARY_JSON, &summary)?;
    let outcome = run.finish()?;
    Ok((summary, outcome))
}
