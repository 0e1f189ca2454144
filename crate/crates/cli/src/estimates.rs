use std::path::Path;

use plaplab::estimates::{
    build_cutoff, caccioppoli_basic, caccioppoli_weighted, change_of_scale_check, gradient_comparability_sweep, hessian_energy_bound, main_energy_ratio, oscillation_ratio,
    threshold_sharp, vs_comparability, Ball, Cutoff, FieldBundle, RatioReport, RatioStatus,
};
use plaplab::field::v_s_field;
use plaplab::sampling::stream_rng;
use plaplab::suite::{self, RadialRun, SWEEP_OUTER_RADII};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EstimatesConfig;
use crate::error::Result;
use crate::run::{Outcome, RunDir};

pub const COMMAND: &str = "estimates";
pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const ESTIMATES_JSONL: &str = "estimates.jsonl";
pub const SWEEP_CSV: &str = "comparability_sweep.csv";
pub const CHANGE_OF_SCALE_CSV: &str = "change_of_scale.csv";
pub const VS_CSV: &str = "vs_comparability.csv";
pub const SUMMARY_JSON: &str = "estimates.json";

pub const ESTIMATE_IDS: [&str; 5] = ["caccioppoli_basic", "caccioppoli_weighted", "hessian_energy_bound", "main_energy_ratio", "oscillation_ratio"];

/// Inner and outer scale of the change-of-scale check, in units of the ball radius.
pub const CHANGE_OF_SCALE_M: (f64, f64) = (2.0, 3.0);
pub const CHANGE_OF_SCALE_KAPPAS: [f64; 3] = [2.0, 2.5, 3.0];
/// Allowed excess over 9 in the change-of-scale ratio.
pub const CHANGE_OF_SCALE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub config_hash: String,
    pub estimate: String,
    pub p: f64,
    pub s: f64,
    pub eps: f64,
    pub cells: usize,
    pub h: f64,
    pub ball_x: f64,
    pub ball_y: f64,
    pub ball_r: f64,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub empirical_c: Option<f64>,
    /// `finite`, `trivial`, `violation` or `error`.
    pub status: String,
    /// `s` at or below the threshold, or outside the estimate's stated range.
    pub diagnostic: bool,
    pub cancellation: Option<f64>,
    pub message: String,
}

impl EstimateRow {
    /// Rows outside the claimed range never fail the run.
    pub fn contract_ok(&self) -> bool {
        self.diagnostic || self.status == "finite" || self.status == "trivial"
    }

    pub fn ball(&self) -> Ball {
        Ball {
            center: [self.ball_x, self.ball_y],
            r: self.ball_r,
        }
    }
}

#[derive(Serialize)]
struct Params {
    p: f64,
    s: f64,
    cells: usize,
    ball: Ball,
}

#[derive(Serialize)]
struct Verdicts<'a> {
    status: &'a str,
    diagnostic: bool,
    cancellation: Option<f64>,
    message: &'a str,
}

#[derive(Serialize)]
struct Record<'a> {
    config_hash: &'a str,
    estimate_id: &'a str,
    params: Params,
    lhs: Option<f64>,
    rhs: Option<f64>,
    #[serde(rename = "empirical_C")]
    empirical_c: Option<f64>,
    h: f64,
    eps: f64,
    verdicts: Verdicts<'a>,
}

impl<'a> From<&'a EstimateRow> for Record<'a> {
    fn from(r: &'a EstimateRow) -> Self {
        Record {
            config_hash: &r.config_hash,
            estimate_id: &r.estimate,
            params: Params {
                p: r.p,
                s: r.s,
                cells: r.cells,
                ball: r.ball(),
            },
            lhs: r.lhs,
            rhs: r.rhs,
            empirical_c: r.empirical_c,
            h: r.h,
            eps: r.eps,
            verdicts: Verdicts {
                status: &r.status,
                diagnostic: r.diagnostic,
                cancellation: r.cancellation,
                message: &r.message,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_hash: String,
    pub p: f64,
    pub s: f64,
    pub eps: f64,
    pub cells: usize,
    pub m: f64,
    pub balls: usize,
    pub nondegenerate: usize,
    pub worst_ratio: Option<f64>,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub p: f64,
    pub s: f64,
    pub eps: f64,
    pub cells: usize,
    pub sigma: f64,
    pub first_success: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeOfScaleRow {
    pub config_hash: String,
    pub p: f64,
    pub s: f64,
    pub cells: usize,
    pub ball_x: f64,
    pub ball_y: f64,
    pub ball_r: f64,
    pub kappa: f64,
    pub hypothesis_holds: Option<bool>,
    pub ratio: Option<f64>,
    pub ok: bool,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VsRow {
    pub config_hash: String,
    pub p: f64,
    pub s: f64,
    pub c1_hat: Option<f64>,
    pub c2_hat: Option<f64>,
    pub samples_used: usize,
    pub ok: bool,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatesReport {
    pub config_hash: String,
    pub rows: Vec<EstimateRow>,
    pub sweeps: Vec<SweepSummary>,
    pub sweep_rows: Vec<SweepRow>,
    pub change_of_scale: Vec<ChangeOfScaleRow>,
    pub vs: Vec<VsRow>,
    pub solve_errors: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    estimate_rows: usize,
    violations: usize,
    errors: usize,
    diagnostic_rows: usize,
    sweeps: &'a [SweepSummary],
    solve_errors: &'a [String],
}

fn evaluate(id: &str, fields: &FieldBundle, s: f64, eta: f64, ball: Ball, cutoff: &Cutoff) -> plaplab::Result<(RatioReport, Option<f64>)> {
    match id {
        "caccioppoli_basic" => Ok((caccioppoli_basic(fields, cutoff, None)?, None)),
        "caccioppoli_weighted" => {
            let w = caccioppoli_weighted(fields, s, eta, cutoff)?;
            Ok((w.ratio, Some(w.cancellation)))
        }
        "hessian_energy_bound" => Ok((hessian_energy_bound(fields, s, cutoff)?, None)),
        "main_energy_ratio" => Ok((main_energy_ratio(fields, s, cutoff)?, None)),
        "oscillation_ratio" => Ok((oscillation_ratio(fields, s, ball, None)?, None)),
        _ => unreachable!("unknown estimate {id}"),
    }
}

fn status_name(s: RatioStatus) -> &'static str {
    match s {
        RatioStatus::Finite => "finite",
        RatioStatus::Trivial => "trivial",
        RatioStatus::Violation => "violation",
    }
}

/// One row per estimate, for every `(s, ball)`; failed evaluations become
/// `error` rows so the table always covers the full parameter product.
fn estimate_rows(hash: &str, run: &RadialRun, fields: &FieldBundle, s: f64, ball: Ball, eta: f64) -> Vec<EstimateRow> {
    let below = s <= threshold_sharp(2, run.p);
    let cutoff = build_cutoff(fields.grid(), ball);
    ESTIMATE_IDS
        .iter()
        .map(|&id| {
            let mut row = EstimateRow {
                config_hash: hash.to_string(),
                estimate: id.to_string(),
                p: run.p,
                s,
                eps: fields.eps,
                cells: run.cells,
                h: run.h,
                ball_x: ball.center[0],
                ball_y: ball.center[1],
                ball_r: ball.r,
                lhs: None,
                rhs: None,
                empirical_c: None,
                status: "error".to_string(),
                diagnostic: below,
                cancellation: None,
                message: String::new(),
            };
            let res = cutoff.as_ref().map_err(|e| e.to_string()).and_then(|c| evaluate(id, fields, s, eta, ball, c).map_err(|e| e.to_string()));
            match res {
                Ok((rep, cancellation)) => {
                    row.lhs = Some(rep.lhs);
                    row.rhs = Some(rep.rhs);
                    row.empirical_c = rep.empirical_c;
                    row.status = status_name(rep.status).to_string();
                    row.diagnostic |= rep.diagnostic;
                    row.cancellation = cancellation;
                }
                Err(e) => row.message = e,
            }
            if below {
                row.message = if row.message.is_empty() {
                    "s at or below the threshold".to_string()
                } else {
                    format!("s at or below the threshold; {}", row.message)
                };
            }
            row
        })
        .collect()
}

fn change_of_scale_rows(hash: &str, run: &RadialRun, fields: &FieldBundle, s: f64, ball: Ball) -> Vec<ChangeOfScaleRow> {
    let (m, big_m) = CHANGE_OF_SCALE_M;
    let v = (run.p + s > 0.0).then(|| v_s_field(&fields.du, run.p, s, 0.0));
    CHANGE_OF_SCALE_KAPPAS
        .iter()
        .map(|&kappa| {
            let mut row = ChangeOfScaleRow {
                config_hash: hash.to_string(),
                p: run.p,
                s,
                cells: run.cells,
                ball_x: ball.center[0],
                ball_y: ball.center[1],
                ball_r: ball.r,
                kappa,
                hypothesis_holds: None,
                ratio: None,
                ok: true,
                message: String::new(),
            };
            let Some(v) = &v else {
                row.message = "p + s <= 0".to_string();
                return row;
            };
            match change_of_scale_check(v, ball.center, ball.r, m, big_m, kappa) {
                Ok(rep) => {
                    row.hypothesis_holds = Some(rep.hypothesis_holds);
                    row.ratio = rep.ratio;
                    row.ok = rep.ratio.is_none_or(|r| r <= 9.0 + CHANGE_OF_SCALE_TOL);
                }
                Err(e) => row.message = e.to_string(),
            }
            row
        })
        .collect()
}

fn vs_row(hash: &str, seed: u64, index: u64, p: f64, s: f64, samples: usize) -> VsRow {
    let mut rng = stream_rng(seed, (1 << 48) | index);
    let mut row = VsRow {
        config_hash: hash.to_string(),
        p,
        s,
        c1_hat: None,
        c2_hat: None,
        samples_used: 0,
        ok: false,
        message: String::new(),
    };
    match vs_comparability(p, s, samples, &mut rng) {
        Ok(c) => {
            row.c1_hat = Some(c.c1_hat);
            row.c2_hat = Some(c.c2_hat);
            row.samples_used = c.samples_used;
            let bounded = 0.0 < c.c1_hat && c.c1_hat <= c.c2_hat && c.c2_hat.is_finite();
            let identity = !(p == 2.0 && s == 0.0) || (c.c1_hat == 1.0 && c.c2_hat == 1.0);
            row.ok = bounded && identity;
        }
        Err(e) => {
            row.ok = p + s <= 0.0;
            row.message = e.to_string();
        }
    }
    row
}

pub fn compute(cfg: &EstimatesConfig, hash: &str) -> Result<EstimatesReport> {
    let finest = *cfg.grids.iter().max().expect("grids are non-empty");
    let keys: Vec<(f64, f64, usize)> = cfg
        .ps
        .iter()
        .flat_map(|&p| cfg.eps.iter().flat_map(move |&e| cfg.grids.iter().map(move |&n| (p, e, n))))
        .collect();
    let runs: Vec<plaplab::Result<RadialRun>> = keys.par_iter().map(|&(p, e, n)| suite::run_radial(p, n, e, &cfg.solver)).collect();

    let mut solve_errors = Vec::new();
    let mut jobs = Vec::new();
    for (&(p, eps, n), run) in keys.iter().zip(runs) {
        match run.and_then(|r| FieldBundle::from_scalar(r.report.u.clone(), p, eps).map(|f| (r, f))) {
            Ok(pair) => jobs.push(pair),
            Err(e) => solve_errors.push(format!("p={p} eps={eps:e} n={n}: {e}")),
        }
    }
    type JobOutput = (Vec<EstimateRow>, Vec<ChangeOfScaleRow>, Option<(SweepSummary, Vec<SweepRow>)>);
    let outputs: Vec<Vec<JobOutput>> = jobs
        .par_iter()
        .map(|(run, fields)| {
            cfg.s_values(run.p)
                .into_iter()
                .map(|s| {
                    let mut rows = Vec::new();
                    let mut cos = Vec::new();
                    for &ball in &cfg.balls {
                        rows.extend(estimate_rows(hash, run, fields, s, ball, cfg.eta));
                        cos.extend(change_of_scale_rows(hash, run, fields, s, ball));
                    }
                    let sweep = (run.cells == finest && s > threshold_sharp(2, run.p)).then(|| sweep(hash, cfg, run, fields, s));
                    (rows, cos, sweep)
                })
                .collect()
        })
        .collect();

    let mut report = EstimatesReport {
        config_hash: hash.to_string(),
        rows: Vec::new(),
        sweeps: Vec::new(),
        sweep_rows: Vec::new(),
        change_of_scale: Vec::new(),
        vs: Vec::new(),
        solve_errors,
    };
    for (rows, cos, sweep) in outputs.into_iter().flatten() {
        report.rows.extend(rows);
        report.change_of_scale.extend(cos);
        if let Some((summary, rows)) = sweep {
            report.sweeps.push(summary);
            report.sweep_rows.extend(rows);
        }
    }
    let pairs: Vec<(f64, f64)> = cfg.ps.iter().flat_map(|&p| cfg.s_values(p).into_iter().map(move |s| (p, s))).collect();
    report.vs = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(p, s))| vs_row(hash, cfg.seed, i as u64, p, s, cfg.comparability_samples))
        .collect();
    Ok(report)
}

fn sweep(hash: &str, cfg: &EstimatesConfig, run: &RadialRun, fields: &FieldBundle, s: f64) -> (SweepSummary, Vec<SweepRow>) {
    let mut summary = SweepSummary {
        p: run.p,
        s,
        eps: fields.eps,
        cells: run.cells,
        sigma: cfg.sigma,
        first_success: None,
        error: None,
    };
    match gradient_comparability_sweep(fields, s, &suite::sweep_centers(), &SWEEP_OUTER_RADII, cfg.sigma, &cfg.ms) {
        Ok(sw) => {
            summary.first_success = sw.first_success;
            let rows = sw
                .levels
                .iter()
                .map(|l| SweepRow {
                    config_hash: hash.to_string(),
                    p: run.p,
                    s,
                    eps: fields.eps,
                    cells: run.cells,
                    m: l.m,
                    balls: l.reports.len(),
                    nondegenerate: l.nondegenerate,
                    worst_ratio: l.worst_ratio,
                    success: l.success,
                })
                .collect();
            (summary, rows)
        }
        Err(e) => {
            summary.error = Some(e.to_string());
            (summary, Vec::new())
        }
    }
}

pub fn execute(cfg: &EstimatesConfig, out: &Path) -> Result<(EstimatesReport, Outcome)> {
    let mut run = RunDir::create(out, COMMAND, cfg)?;
    let report = compute(cfg, run.config_hash())?;

    for e in &report.solve_errors {
        run.task_error("solve", e);
    }
    let bad: Vec<&EstimateRow> = report.rows.iter().filter(|r| !r.contract_ok()).collect();
    run.task(
        "integral estimates",
        bad.is_empty(),
        match bad.first() {
            None => format!("{} rows, all finite or trivial where claimed", report.rows.len()),
            Some(r) => format!("{} failing rows, first: {} p={} s={} n={} ({}) {}", bad.len(), r.estimate, r.p, r.s, r.cells, r.status, r.message),
        },
    );
    let cos_bad = report.change_of_scale.iter().filter(|r| !r.ok).count();
    let cos_held = report.change_of_scale.iter().filter(|r| r.hypothesis_holds == Some(true)).count();
    run.task("change of scale", cos_bad == 0, format!("{cos_held} checks with the hypothesis, {cos_bad} above 9"));
    for sw in &report.sweeps {
        run.task(
            format!("gradient comparability p={} s={} n={}", sw.p, sw.s, sw.cells),
            sw.first_success.is_some(),
            match (&sw.error, sw.first_success) {
                (Some(e), _) => e.clone(),
                (None, Some(m)) => format!("sigma {} reached at M = {m}", sw.sigma),
                (None, None) => format!("no M in the sweep reaches sigma {}", sw.sigma),
            },
        );
    }
    for v in &report.vs {
        run.task(
            format!("V_s comparability p={} s={}", v.p, v.s),
            v.ok,
            format!("c1 {:?}, c2 {:?} over {} samples {}", v.c1_hat, v.c2_hat, v.samples_used, v.message),
        );
    }

    run.write_csv(ESTIMATES_CSV, &report.rows)?;
    let records: Vec<Record> = report.rows.iter().map(Record::from).collect();
    run.write_jsonl(ESTIMATES_JSONL, &records)?;
    run.write_csv(SWEEP_CSV, &report.sweep_rows)?;
    run.write_csv(CHANGE_OF_SCALE_CSV, &report.change_of_scale)?;
    run.write_csv(VS_CSV, &report.vs)?;
    let hash = report.config_hash.clone();
    run.write_json(
        SUMMARY_JSON,
        &Summary {
            config_hash: &hash,
            estimate_rows: report.rows.len(),
            violations: report.rows.iter().filter(|r| r.status == "violation").count(),
            errors: report.rows.iter().filter(|r| r.status == "error").count(),
            diagnostic_rows: report.rows.iter().filter(|r| r.diagnostic).count(),
            sweeps: &report.sweeps,
            solve_errors: &report.solve_errors,
        },
    )?;
    let outcome = run.finish()?;
    Ok((report, outcome))
}
