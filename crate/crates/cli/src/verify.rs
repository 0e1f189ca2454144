use std::path::Path;

use plaplab::suite::{inequality_chunk, InequalityStats, EQUALITY_TOL, RESIDUAL_TOL};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::VerifyConfig;
use crate::error::Result;
use crate::run::{Outcome, RunDir};

pub const COMMAND: &str = "verify-inequalities";
pub const REPORT_JSON: &str = "inequalities.json";
pub const REPORT_CSV: &str = "inequalities.csv";

/// Relative improvement of the sharp bound over the two-sided one that
/// counts as a strict-improvement witness.
pub const WITNESS_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub n: usize,
    pub improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub config_hash: String,
    pub seed: u64,
    pub samples_per_dim: u64,
    pub residual_tol: f64,
    pub equality_tol: f64,
    pub witness_threshold: f64,
    pub dims: Vec<InequalityStats>,
    /// Largest improvement over the dimensions `n >= 3`.
    pub witness: Option<Witness>,
}

impl InequalityReport {
    pub fn witness_found(&self) -> bool {
        self.witness.is_some_and(|w| w.improvement > WITNESS_THRESHOLD)
    }
}

#[derive(Serialize)]
struct Row<'a> {
    config_hash: &'a str,
    n: usize,
    samples: u64,
    violations: u64,
    two_sided_violations: u64,
    gap_violations: u64,
    equality_violations: u64,
    min_residual: f64,
    max_abs_residual: f64,
    min_two_sided_residual: f64,
    max_improvement: f64,
}

/// Work units are `(n, chunk)` pairs with fixed sizes and RNG streams, and
/// the per-dimension merge is exact, so the statistics do not depend on the
/// number of threads.
pub fn compute(cfg: &VerifyConfig, config_hash: &str) -> Result<InequalityReport> {
    let chunks = cfg.samples.div_ceil(cfg.chunk);
    let units: Vec<(usize, u64)> = cfg.dims.iter().flat_map(|&n| (0..chunks).map(move |c| (n, c))).collect();
    let parts = units
        .par_iter()
        .map(|&(n, c)| {
            let count = cfg.chunk.min(cfg.samples - c * cfg.chunk);
            inequality_chunk(cfg.seed, n, c, count)
        })
        .collect::<plaplab::Result<Vec<_>>>()?;
    let mut dims: Vec<InequalityStats> = cfg.dims.iter().map(|&n| InequalityStats::empty(n)).collect();
    for (&(n, _), part) in units.iter().zip(&parts) {
        let slot = cfg.dims.iter().position(|&d| d == n).expect("unit dimension is configured");
        dims[slot].merge(part);
    }
    let witness = dims
        .iter()
        .filter(|d| d.n >= 3 && d.samples > 0)
        .map(|d| Witness {
            n: d.n,
            improvement: d.max_improvement,
        })
        .reduce(|a, b| if b.improvement > a.improvement { b } else { a });
    Ok(InequalityReport {
        config_hash: config_hash.to_string(),
        seed: cfg.seed,
        samples_per_dim: cfg.samples,
        residual_tol: RESIDUAL_TOL,
        equality_tol: EQUALITY_TOL,
        witness_threshold: WITNESS_THRESHOLD,
        dims,
        witness,
    })
}

pub fn execute(cfg: &VerifyConfig, out: &Path) -> Result<(InequalityReport, Outcome)> {
    let mut run = RunDir::create(out, COMMAND, cfg)?;
    let report = compute(cfg, run.config_hash())?;
    let rows: Vec<Row> = report
        .dims
        .iter()
        .map(|d| Row {
            config_hash: &report.config_hash,
            n: d.n,
            samples: d.samples,
            violations: d.violations,
            two_sided_violations: d.two_sided_violations,
            gap_violations: d.gap_violations,
            equality_violations: d.equality_violations,
            min_residual: d.min_residual,
            max_abs_residual: d.max_abs_residual,
            min_two_sided_residual: d.min_two_sided_residual,
            max_improvement: d.max_improvement,
        })
        .collect();
    run.write_json(REPORT_JSON, &report)?;
    run.write_csv(REPORT_CSV, &rows)?;
    for d in &report.dims {
        run.task(
            format!("inequalities n={}", d.n),
            d.passes(),
            format!(
                "{} violations, {} two-sided, {} gap, {} equality; min residual {:e}",
                d.violations, d.two_sided_violations, d.gap_violations, d.equality_violations, d.min_residual
            ),
        );
    }
    if let Some(w) = report.witness {
        run.task(
            "strict improvement witness",
            report.witness_found(),
            format!("best improvement {:.4} at n={} (needs > {WITNESS_THRESHOLD})", w.improvement, w.n),
        );
    }
    let outcome = run.finish()?;
    Ok((report, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(chunk: u64) -> VerifyConfig {
        VerifyConfig {
            seed: 11,
            dims: vec![2, 4],
            samples: 3000,
            chunk,
        }
    }

    #[test]
    fn thread_count_does_not_change_the_report() {
        let one = crate::run::with_jobs(Some(1), || compute(&cfg(700), "h")).unwrap().unwrap();
        let four = crate::run::with_jobs(Some(4), || compute(&cfg(700), "h")).unwrap().unwrap();
        assert_eq!(one, four);
        assert_eq!(one.dims[0].samples, 3000);
        assert!(one.dims.iter().all(|d| d.passes()));
    }
}
