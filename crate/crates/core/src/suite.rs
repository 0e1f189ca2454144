//! The standard experiments: sampled inequality checks, the radial solver
//! benchmark, tolerance calibration for the pointwise Hessian bound, and the
//! estimate sweep on solved fields. Shared by the command-line driver, the
//! browser demo and the acceptance tests.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimates::{
    build_cutoff, caccioppoli_basic, caccioppoli_weighted, hessian_energy_bound, main_energy_ratio, oscillation_ratio, threshold_sharp, Ball, FieldBundle,
    RatioReport,
};
use crate::exact::ExactSolution;
use crate::field::{hessian_lower_bound_check, v_s, v_s_inverse, LowerBoundOptions, PointwiseReport, ScalarField};
use crate::grid::Grid;
use crate::sampling::{gaussian_sym_matrix, gaussian_vector, log_uniform, stream_rng};
use crate::solver::{relative_l2_error, solve, DirichletProblem, SolutionReport, SolverConfig, ENERGY_SLACK};
use crate::tensor::{matrix_inequality_residual_from, quad_invariants, sharpness_gap_from, two_sided_residual_from, QuadInvariants};

/// Allowed negative residual, relative to the matching scale.
pub const RESIDUAL_TOL: f64 = 1e-12;
/// Allowed `|residual| / scale` where the matrix inequality is an equality.
pub const EQUALITY_TOL: f64 = 1e-10;

/// `max(1, |e|^2 |A|^2)`: both sharpness-gap bounds estimate `|e|^2 |A|^2`.
pub fn gap_scale(q: &QuadInvariants) -> f64 {
    (q.e2 * q.norm_a2).max(1.0)
}

/// Aggregated results of the sampled inequality checks for one dimension.
/// Merging is order independent, so parallel chunking does not change it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityStats {
    pub n: usize,
    pub samples: u64,
    /// Samples with matrix residual `< -RESIDUAL_TOL * scale`.
    pub violations: u64,
    /// Samples with two-sided residual `< -RESIDUAL_TOL * two_sided_scale`.
    pub two_sided_violations: u64,
    /// Samples whose sharp bound falls below the two-sided one by more than
    /// `RESIDUAL_TOL * gap_scale`.
    pub gap_violations: u64,
    /// `n = 2` samples with `|residual| > EQUALITY_TOL * scale`.
    pub equality_violations: u64,
    pub min_residual: f64,
    pub max_abs_residual: f64,
    pub min_two_sided_residual: f64,
    /// Largest `(sharp - two_sided) / gap_scale`.
    pub max_improvement: f64,
}

impl InequalityStats {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            samples: 0,
            violations: 0,
            two_sided_violations: 0,
            gap_violations: 0,
            equality_violations: 0,
            min_residual: f64::INFINITY,
            max_abs_residual: 0.0,
            min_two_sided_residual: f64::INFINITY,
            max_improvement: f64::NEG_INFINITY,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.samples += other.samples;
        self.violations += other.violations;
        self.two_sided_violations += other.two_sided_violations;
        self.gap_violations += other.gap_violations;
        self.equality_violations += other.equality_violations;
        self.min_residual = self.min_residual.min(other.min_residual);
        self.max_abs_residual = self.max_abs_residual.max(other.max_abs_residual);
        self.min_two_sided_residual = self.min_two_sided_residual.min(other.min_two_sided_residual);
        self.max_improvement = self.max_improvement.max(other.max_improvement);
    }

    fn record(&mut self, q: &QuadInvariants) {
        self.samples += 1;
        let rel = matrix_inequality_residual_from(q) / q.scale();
        self.min_residual = self.min_residual.min(rel);
        self.max_abs_residual = self.max_abs_residual.max(rel.abs());
        if rel < -RESIDUAL_TOL {
            self.violations += 1;
        }
        if q.dim == 2 && rel.abs() > EQUALITY_TOL {
            self.equality_violations += 1;
        }
        let two = two_sided_residual_from(q) / q.two_sided_scale();
        self.min_two_sided_residual = self.min_two_sided_residual.min(two);
        if two < -RESIDUAL_TOL {
            self.two_sided_violations += 1;
        }
        if let Ok(gap) = sharpness_gap_from(q) {
            let imp = gap.improvement() / gap_scale(q);
            self.max_improvement = self.max_improvement.max(imp);
            if imp < -RESIDUAL_TOL {
                self.gap_violations += 1;
            }
        }
    }

    pub fn passes(&self) -> bool {
        self.violations == 0 && self.two_sided_violations == 0 && self.gap_violations == 0 && self.equality_violations == 0
    }
}

/// Stream id of chunk `chunk` for dimension `n`.
pub fn inequality_stream(n: usize, chunk: u64) -> u64 {
    ((n as u64) << 40) | chunk
}

/// Draws `count` pairs `(A, e)` from the chunk's stream. Entries are
/// Gaussian; `A` and `e` are rescaled by independent log-uniform factors
/// over six decades to exercise the homogeneity of the bounds.
pub fn inequality_chunk(seed: u64, n: usize, chunk: u64, count: u64) -> Result<InequalityStats> {
    let mut rng = stream_rng(seed, inequality_stream(n, chunk));
    let mut stats = InequalityStats::empty(n);
    for _ in 0..count {
        let a = gaussian_sym_matrix(&mut rng, n).scaled(log_uniform(&mut rng, 1e-3, 1e3));
        let e = gaussian_vector(&mut rng, n).scaled(log_uniform(&mut rng, 1e-3, 1e3));
        stats.record(&quad_invariants(&a, &e)?);
    }
    Ok(stats)
}

/// Inner and outer radius of the benchmark annulus.
pub const ANNULUS: (f64, f64) = (0.3, 1.0);
/// Regularization used for the benchmark solves.
pub const SUITE_EPS: f64 = 1e-10;
/// Exponents of the radial benchmark.
pub const SUITE_PS: [f64; 4] = [1.5, 2.0, 3.0, 4.0];

/// Radial p-harmonic function centred at the origin: `ρ^{(p-2)/(p-1)}`, or
/// `log ρ` for `p = 2`.
pub fn radial_solution(p: f64) -> ExactSolution {
    ExactSolution::radial(vec![0.0, 0.0], p)
}

pub fn radial_problem(p: f64, cells: usize, eps: f64) -> Result<DirichletProblem> {
    let grid = Arc::new(Grid::centered_annulus(cells, ANNULUS.0, ANNULUS.1)?);
    let sol = radial_solution(p);
    DirichletProblem::with_boundary_fn(grid, p, eps, |x| sol.value(&x).expect("annulus excludes the centre"))
}

#[derive(Clone, Debug)]
pub struct RadialRun {
    pub p: f64,
    pub cells: usize,
    pub h: f64,
    pub relative_l2_error: f64,
    /// Largest `E_{k+1} - E_k` over accepted steps, relative to `max(1, |E_k|)`.
    pub max_energy_increase: f64,
    pub report: SolutionReport,
}

impl RadialRun {
    pub fn energy_monotone(&self) -> bool {
        self.max_energy_increase <= ENERGY_SLACK
    }
}

pub fn max_energy_increase(history: &[f64]) -> f64 {
    history.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(1.0)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn run_radial(p: f64, cells: usize, eps: f64, cfg: &SolverConfig) -> Result<RadialRun> {
    let problem = radial_problem(p, cells, eps)?;
    let report = solve(&problem, cfg)?;
    let sol = radial_solution(p);
    let err = relative_l2_error(&report.u, |x| sol.value(&x).expect("annulus excludes the centre"));
    Ok(RadialRun {
        p,
        cells,
        h: problem.grid().h(),
        relative_l2_error: err,
        max_energy_increase: max_energy_increase(&report.energy_history),
        report,
    })
}

/// `log2(e_k / e_{k+1})` for successive halvings of `h`.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(hs: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Factor between the worst defect seen on exact solutions and the
/// tolerance applied to solved fields.
pub const TOLERANCE_SAFETY: f64 = 10.0;

/// Pointwise check with no tolerance: only the residual statistics matter.
fn raw_lower_bound_report(fields: &FieldBundle) -> Result<PointwiseReport> {
    let opts = LowerBoundOptions {
        tolerance: f64::INFINITY,
        pde_tolerance: f64::INFINITY,
    };
    hessian_lower_bound_check(&fields.du, &fields.d2u, fields.p, fields.eps, opts)
}

/// `C` in `tol(h) = C h` for the pointwise Hessian bound: the largest
/// `max |relative residual| / h` over finite-difference derivatives of the
/// exact radial solutions, times [`TOLERANCE_SAFETY`].
pub fn calibrate_lower_bound_constant(ps: &[f64], cells: &[usize], eps: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &p in ps {
        let sol = radial_solution(p);
        for &n in cells {
            let grid = Arc::new(Grid::centered_annulus(n, ANNULUS.0, ANNULUS.1)?);
            let u = ScalarField::from_fn(grid.clone(), |x| sol.value(&x).expect("annulus excludes the centre"))?;
            let rep = raw_lower_bound_report(&FieldBundle::from_scalar(u, p, eps)?)?;
            worst = worst.max(rep.max_abs_residual / grid.h());
        }
    }
    Ok(TOLERANCE_SAFETY * worst)
}

/// Pointwise Hessian bound on a field with `tol = c_tol * h`.
pub fn lower_bound_report(fields: &FieldBundle, c_tol: f64) -> Result<PointwiseReport> {
    let tol = c_tol * fields.h();
    let opts = LowerBoundOptions {
        tolerance: tol,
        pde_tolerance: tol,
    };
    hessian_lower_bound_check(&fields.du, &fields.d2u, fields.p, fields.eps, opts)
}

/// Ball used for the estimate sweep on the benchmark annulus.
pub fn suite_ball() -> Ball {
    Ball {
        center: [0.65, 0.0],
        r: 0.1,
    }
}

/// `{2-p, 0, p-2}` restricted to `s` above the sharp planar threshold,
/// sorted and without duplicates.
pub fn suite_s_values(p: f64) -> Vec<f64> {
    let mut s: Vec<f64> = [2.0 - p, 0.0, p - 2.0].into_iter().filter(|&s| s > threshold_sharp(2, p)).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// The five ratio estimates of one field on one ball.
pub fn estimate_reports(fields: &FieldBundle, s: f64, ball: Ball, eta: f64) -> Result<Vec<RatioReport>> {
    let cutoff = build_cutoff(fields.grid(), ball)?;
    Ok(vec![
        caccioppoli_basic(fields, &cutoff, None)?,
        caccioppoli_weighted(fields, s, eta, &cutoff)?.ratio,
        hessian_energy_bound(fields, s, &cutoff)?,
        main_energy_ratio(fields, s, &cutoff)?,
        oscillation_ratio(fields, s, ball, None)?,
    ])
}

/// Relative change `|a - b| / |b|` of an empirical constant under refinement.
pub fn relative_change(coarse: f64, fine: f64) -> f64 {
    (fine - coarse).abs() / coarse.abs()
}

/// Ball centres of the comparability sweep: five points on the mid circle.
pub fn sweep_centers() -> Vec<[f64; 2]> {
    [0.0f64, 0.8, 2.0, 3.5, 5.0].iter().map(|a| [0.65 * a.cos(), 0.65 * a.sin()]).collect()
}

pub const SWEEP_OUTER_RADII: [f64; 3] = [0.1, 0.2, 0.3];
pub const SWEEP_MS: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
pub const SWEEP_SIGMA: f64 = 0.25;

/// Largest `|V_s^{-1}(V_s(z)) - z| / |z|` over `samples` draws of `(z, p, s)`
/// with `|z|` log-uniform over `[1e-30, 1e30]`, `p` in `(1, 6)` and
/// `p + s` in `(0.05, 10)`.
pub fn vs_roundtrip_error(seed: u64, samples: usize) -> Result<f64> {
    let mut rng = stream_rng(seed, u64::MAX);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = rng.random_range(1.0 + 1e-9..6.0);
        let s = rng.random_range(0.05 - p..4.0);
        let g = gaussian_vector(&mut rng, 2);
        let m = log_uniform(&mut rng, 1e-30, 1e30) / g.norm();
        let z = [m * g.0[0], m * g.0[1]];
        let back = v_s_inverse(&v_s(&z, p, s), p, s)?;
        let zn = (z[0] * z[0] + z[1] * z[1]).sqrt();
        let err = ((back[0] - z[0]).powi(2) + (back[1] - z[1]).powi(2)).sqrt() / zn;
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_order_independent() {
        let a = inequality_chunk(1, 3, 0, 500).unwrap();
        let b = inequality_chunk(1, 3, 1, 500).unwrap();
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.samples, 1000);
        assert!(ab.passes());
    }

    #[test]
    fn planar_chunk_is_an_equality() {
        let st = inequality_chunk(2, 2, 0, 2000).unwrap();
        assert!(st.max_abs_residual <= EQUALITY_TOL);
        assert!(st.max_improvement.abs() <= 1e-12);
    }

    #[test]
    fn suite_s_values_filter_threshold() {
        assert_eq!(suite_s_values(2.0), vec![0.0]);
        assert_eq!(suite_s_values(3.0), vec![-1.0, 0.0, 1.0]);
        assert_eq!(suite_s_values(1.5), vec![-0.5, 0.0, 0.5]);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let hs = [0.1, 0.05, 0.025];
        let es: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powf(1.7)).collect();
        assert!((loglog_slope(&hs, &es) - 1.7).abs() < 1e-12);
        assert!(observed_orders(&es).iter().all(|o| (o - 1.7).abs() < 1e-12));
    }

    #[test]
    fn roundtrip_small_run() {
        assert!(vs_roundtrip_error(4, 2000).unwrap() < 1e-12);
    }
}
