use std::path::{Path, PathBuf};

use plaplab::estimates::{Ball, DEFAULT_ETA};
use plaplab::solver::SolverConfig;
use plaplab::suite::{self, SUITE_EPS, SUITE_PS, SWEEP_MS, SWEEP_SIGMA};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, io_err, Result};

/// Contents of a `--config` file. Every field is optional; commands fill in
/// their own defaults and ignore fields they do not use.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    /// Dimensions sampled by `verify-inequalities`.
    pub dims: Option<Vec<usize>>,
    /// Samples per dimension.
    pub samples: Option<u64>,
    /// Samples per parallel work unit.
    pub chunk: Option<u64>,
    pub ps: Option<Vec<f64>>,
    pub s: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    /// Cells per side of the benchmark annulus.
    pub grids: Option<Vec<usize>>,
    /// Problem file solved by `solve` instead of the radial suite.
    pub problem: Option<PathBuf>,
    pub balls: Option<Vec<Ball>>,
    pub ms: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub eta: Option<f64>,
    pub comparability_samples: Option<usize>,
    pub solver: Option<SolverConfig>,
    pub snapshots: Option<bool>,
    /// Output directories joined by `report`.
    pub inputs: Option<Vec<PathBuf>>,
    /// Largest relative change of an empirical constant under `h -> h/2`.
    pub stability_tol: Option<f64>,
}

/// Scalar and list overrides taken from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub ps: Option<Vec<f64>>,
    pub s: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub ms: Option<Vec<f64>>,
    pub samples: Option<u64>,
    pub dims: Option<Vec<usize>>,
    pub inputs: Option<Vec<PathBuf>>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        fn set<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        set(&mut self.seed, &o.seed);
        set(&mut self.ps, &o.ps);
        set(&mut self.s, &o.s);
        set(&mut self.eps, &o.eps);
        set(&mut self.ms, &o.ms);
        set(&mut self.samples, &o.samples);
        set(&mut self.dims, &o.dims);
        set(&mut self.inputs, &o.inputs);
        if let Some(n) = o.grid {
            self.grids = Some(vec![n]);
        }
        self
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| config_err("a seed is required (--seed or \"seed\" in the config file)"))
    }
}

fn non_empty<T: Clone>(name: &str, v: &Option<Vec<T>>, default: &[T]) -> Result<Vec<T>> {
    let out = v.clone().unwrap_or_else(|| default.to_vec());
    if out.is_empty() {
        return Err(config_err(format!("`{name}` must not be empty")));
    }
    Ok(out)
}

fn check_ps(ps: &[f64]) -> Result<()> {
    match ps.iter().find(|p| !(**p > 1.0 && p.is_finite())) {
        Some(p) => Err(config_err(format!("every p must be finite and > 1, got {p}"))),
        None => Ok(()),
    }
}

fn check_eps(eps: &[f64]) -> Result<()> {
    match eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        Some(e) => Err(config_err(format!("every eps must be finite and > 0, got {e}"))),
        None => Ok(()),
    }
}

fn check_grids(grids: &[usize]) -> Result<()> {
    match grids.iter().find(|&&n| n < 8) {
        Some(n) => Err(config_err(format!("grids need at least 8 cells per side, got {n}"))),
        None => Ok(()),
    }
}

/// SHA-256 of the command name and its resolved configuration.
pub fn config_hash<T: Serialize>(command: &str, cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(&serde_json::json!({ "command": command, "config": cfg }))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub samples: u64,
    pub chunk: u64,
}

impl VerifyConfig {
    pub fn resolve(c: &ExperimentConfig) -> Result<Self> {
        let dims = non_empty("dims", &c.dims, &[2, 3, 4, 5, 6, 7, 8])?;
        if let Some(n) = dims.iter().find(|&&n| n < 2) {
            return Err(config_err(format!("dimensions must be >= 2, got {n}")));
        }
        let samples = c.samples.unwrap_or(1_000_000);
        let chunk = c.chunk.unwrap_or(50_000);
        if samples == 0 || chunk == 0 {
            return Err(config_err("samples and chunk must be positive"));
        }
        Ok(Self {
            seed: c.seed()?,
            dims,
            samples,
            chunk,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub seed: u64,
    pub ps: Vec<f64>,
    pub eps: Vec<f64>,
    pub grids: Vec<usize>,
    pub problem: Option<PathBuf>,
    pub solver: SolverConfig,
    pub snapshots: bool,
}

impl SolveConfig {
    pub fn resolve(c: &ExperimentConfig) -> Result<Self> {
        let out = Self {
            seed: c.seed()?,
            ps: non_empty("ps", &c.ps, &SUITE_PS)?,
            eps: non_empty("eps", &c.eps, &[SUITE_EPS])?,
            grids: non_empty("grids", &c.grids, &[32, 64, 128])?,
            problem: c.problem.clone(),
            solver: c.solver.unwrap_or_default(),
            snapshots: c.snapshots.unwrap_or(true),
        };
        check_ps(&out.ps)?;
        check_eps(&out.eps)?;
        check_grids(&out.grids)?;
        out.solver.validate()?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatesConfig {
    pub seed: u64,
    pub ps: Vec<f64>,
    /// `None`: `{2-p, 0, p-2}` above the threshold, per `p`.
    pub s: Option<Vec<f64>>,
    pub eps: Vec<f64>,
    pub grids: Vec<usize>,
    pub balls: Vec<Ball>,
    pub ms: Vec<f64>,
    pub sigma: f64,
    pub eta: f64,
    pub comparability_samples: usize,
    pub solver: SolverConfig,
}

impl EstimatesConfig {
    pub fn resolve(c: &ExperimentConfig) -> Result<Self> {
        let out = Self {
            seed: c.seed()?,
            ps: non_empty("ps", &c.ps, &SUITE_PS)?,
            s: match &c.s {
                Some(s) if s.is_empty() => return Err(config_err("`s` must not be empty")),
                s => s.clone(),
            },
            eps: non_empty("eps", &c.eps, &[SUITE_EPS])?,
            grids: non_empty("grids", &c.grids, &[64, 128])?,
            balls: non_empty("balls", &c.balls, &[suite::suite_ball()])?,
            ms: non_empty("ms", &c.ms, &SWEEP_MS)?,
            sigma: c.sigma.unwrap_or(SWEEP_SIGMA),
            eta: c.eta.unwrap_or(DEFAULT_ETA),
            comparability_samples: c.comparability_samples.unwrap_or(1_000_000),
            solver: c.solver.unwrap_or_default(),
        };
        check_ps(&out.ps)?;
        check_eps(&out.eps)?;
        check_grids(&out.grids)?;
        if let Some(m) = out.ms.iter().find(|m| !(**m >= 4.0)) {
            return Err(config_err(format!("every M must be >= 4, got {m}")));
        }
        if !(out.sigma > 0.0 && out.eta > 0.0) {
            return Err(config_err("sigma and eta must be positive"));
        }
        out.solver.validate()?;
        Ok(out)
    }

    pub fn s_values(&self, p: f64) -> Vec<f64> {
        self.s.clone().unwrap_or_else(|| suite::suite_s_values(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub inputs: Vec<PathBuf>,
    pub stability_tol: f64,
}

impl ReportConfig {
    pub fn resolve(c: &ExperimentConfig) -> Result<Self> {
        let inputs = c.inputs.clone().unwrap_or_default();
        if inputs.is_empty() {
            return Err(config_err("report needs at least one input directory (--input DIR)"));
        }
        Ok(Self {
            inputs,
            stability_tol: c.stability_tol.unwrap_or(0.2),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence() {
        let file: ExperimentConfig = serde_json::from_str(r#"{"seed": 1, "ps": [3.0], "grids": [16, 32]}"#).unwrap();
        let o = Overrides {
            seed: Some(9),
            grid: Some(64),
            ..Default::default()
        };
        let c = SolveConfig::resolve(&file.apply(&o)).unwrap();
        assert_eq!((c.seed, c.ps.clone(), c.grids.clone()), (9, vec![3.0], vec![64]));
    }

    #[test]
    fn seed_is_mandatory_and_lists_non_empty() {
        assert!(VerifyConfig::resolve(&ExperimentConfig::default()).is_err());
        let c = ExperimentConfig {
            seed: Some(1),
            dims: Some(vec![]),
            ..Default::default()
        };
        assert!(VerifyConfig::resolve(&c).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seeed": 1}"#).is_err());
    }

    #[test]
    fn hash_depends_on_command_and_config() {
        let c = VerifyConfig {
            seed: 1,
            dims: vec![2],
            samples: 10,
            chunk: 5,
        };
        let h = config_hash("verify-inequalities", &c).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("verify-inequalities", &c.clone()).unwrap());
        assert_ne!(h, config_hash("solve", &c).unwrap());
        assert_ne!(h, config_hash("verify-inequalities", &VerifyConfig { seed: 2, ..c }).unwrap());
    }
}
