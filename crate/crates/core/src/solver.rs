//! Damped Picard iteration for the regularized p-Laplace Dirichlet problem
//!
//! ```text
//!   div((|Du|^2 + eps)^{(p-2)/2} Du) = 0  in the interior,   u = g  on the boundary.
//! ```
//!
//! The discretization is the minimizer of the discrete energy
//! `E(u) = sum_T |T| (|Du_T|^2 + eps)^{p/2} / p` over the right triangles
//! obtained by cutting every in-domain cell along its `/` diagonal. On that
//! triangulation the piecewise-linear gradient only involves axis-aligned
//! differences, so each lagged-coefficient step is a weighted five-point
//! system whose edge weight is the average coefficient of the two triangles
//! having the edge as a leg. The Picard direction is then a descent
//! direction for `E`, and damping is chosen by halving until `E` does not
//! increase. Anderson mixing of recent Picard iterates is tried first and
//! kept only when it lowers the energy as well.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;
use crate::grid::Grid;

/// Relative energy slack accepted per Picard step.
pub const ENERGY_SLACK: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct DirichletProblem {
    grid: Arc<Grid>,
    p: f64,
    eps: f64,
    boundary: ScalarField,
}

impl DirichletProblem {
    /// `boundary` supplies the Dirichlet data on boundary nodes; its
    /// interior values are ignored.
    pub fn new(boundary: ScalarField, p: f64, eps: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid(format!("p must be > 1, got {p}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("eps must be > 0, got {eps}")));
        }
        Ok(Self {
            grid: boundary.grid().clone(),
            p,
            eps,
            boundary,
        })
    }

    /// Dirichlet data sampled from `g` on the boundary nodes of `grid`.
    pub fn with_boundary_fn(grid: Arc<Grid>, p: f64, eps: f64, g: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.node_count())
            .map(|k| if grid.kind(k) == crate::grid::NodeKind::Boundary { g(grid.point(k)) } else { 0.0 })
            .collect();
        Self::new(ScalarField::new(grid, values)?, p, eps)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn boundary(&self) -> &ScalarField {
        &self.boundary
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Boundary data with zeros inside.
    Zero,
    /// Discrete harmonic extension of the boundary data.
    HarmonicExtension,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Sup-norm of the undamped Picard correction at which iteration stops.
    pub update_tol: f64,
    /// Initial damping in `(0, 1]`; halved on energy increase.
    pub damping: f64,
    /// Relative residual target of the inner CG solve.
    pub inner_solver_tol: f64,
    pub max_inner_iters: usize,
    pub init: InitialGuess,
    /// Number of past Picard iterates mixed by Anderson acceleration; `0`
    /// gives the plain damped iteration.
    pub acceleration_depth: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 500,
            update_tol: 1e-10,
            damping: 1.0,
            inner_solver_tol: 1e-12,
            max_inner_iters: 20_000,
            init: InitialGuess::HarmonicExtension,
            acceleration_depth: 5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        if !(self.update_tol > 0.0 && self.inner_solver_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolutionReport {
    pub u: ScalarField,
    pub outer_iters: usize,
    pub final_update: f64,
    pub final_energy: f64,
    /// Energy of the initial guess followed by one entry per accepted step.
    pub energy_history: Vec<f64>,
    pub update_history: Vec<f64>,
    pub damping_history: Vec<f64>,
    /// Accepted steps that came from Anderson mixing rather than damping.
    pub accelerated_steps: usize,
    pub inner_iters: usize,
}

/// Triangles of cell `(i, j)`: `lower` has its right angle at `(i+1, j)`,
/// `upper` at `(i, j+1)`.
struct Triangulation<'g> {
    grid: &'g Grid,
    /// per cell: whether all four corners are in the domain
    cell_active: Vec<bool>,
}

impl<'g> Triangulation<'g> {
    fn new(grid: &'g Grid) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let cell_active = (0..nx * ny)
            .map(|c| {
                let (i, j) = (c % nx, c / nx);
                [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|&(a, b)| grid.is_active(grid.index(i + a, j + b)))
            })
            .collect();
        Self { grid, cell_active }
    }

    fn cell(&self, i: usize, j: usize) -> usize {
        j * self.grid.nx() + i
    }

    /// Gradients `(lower, upper)` of the piecewise-linear interpolant in cell `c`.
    fn gradients(&self, u: &[f64], c: usize) -> ([f64; 2], [f64; 2]) {
        let g = self.grid;
        let (i, j) = (c % g.nx(), c / g.nx());
        let h = g.h();
        let u00 = u[g.index(i, j)];
        let u10 = u[g.index(i + 1, j)];
        let u01 = u[g.index(i, j + 1)];
        let u11 = u[g.index(i + 1, j + 1)];
        ([(u10 - u00) / h, (u11 - u10) / h], [(u11 - u01) / h, (u01 - u00) / h])
    }

    /// `(|Du_T|^2 + eps)^{(p-2)/2}` for the lower/upper triangle of every cell.
    fn coefficients(&self, u: &[f64], p: f64, eps: f64) -> Vec<[f64; 2]> {
        (0..self.cell_active.len())
            .map(|c| {
                if !self.cell_active[c] {
                    return [0.0; 2];
                }
                if p == 2.0 {
                    return [1.0; 2];
                }
                let (lo, up) = self.gradients(u, c);
                let f = |g: [f64; 2]| (g[0] * g[0] + g[1] * g[1] + eps).powf(0.5 * (p - 2.0));
                [f(lo), f(up)]
            })
            .collect()
    }

    fn energy(&self, u: &[f64], p: f64, eps: f64) -> f64 {
        let area = 0.5 * self.grid.h() * self.grid.h();
        (0..self.cell_active.len())
            .filter(|&c| self.cell_active[c])
            .map(|c| {
                let (lo, up) = self.gradients(u, c);
                let f = |g: [f64; 2]| (g[0] * g[0] + g[1] * g[1] + eps).powf(0.5 * p) / p;
                area * (f(lo) + f(up))
            })
            .sum()
    }

    /// Edge weights `(east, north)` leaving each node: the east edge of node
    /// `(i, j)` is a leg of the lower triangle of cell `(i, j)` and the upper
    /// triangle of cell `(i, j-1)`; the north edge is a leg of the upper
    /// triangle of cell `(i, j)` and the lower triangle of cell `(i-1, j)`.
    fn edge_weights(&self, coeff: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        (0..g.node_count())
            .map(|k| {
                let (i, j) = g.coords(k);
                let mut w = [0.0; 2];
                if i < nx {
                    let a = if j < ny { coeff[self.cell(i, j)][0] } else { 0.0 };
                    let b = if j > 0 { coeff[self.cell(i, j - 1)][1] } else { 0.0 };
                    w[0] = 0.5 * (a + b);
                }
                if j < ny {
                    let a = if i < nx { coeff[self.cell(i, j)][1] } else { 0.0 };
                    let b = if i > 0 { coeff[self.cell(i - 1, j)][0] } else { 0.0 };
                    w[1] = 0.5 * (a + b);
                }
                w
            })
            .collect()
    }
}

/// Discrete p-energy `sum_T |T| (|Du_T|^2 + eps)^{p/2} / p` (midpoint rule on
/// each half cell, exact for the piecewise-linear interpolant).
pub fn p_energy(u: &ScalarField, p: f64, eps: f64) -> f64 {
    Triangulation::new(u.grid()).energy(u.values(), p, eps)
}

/// Weighted five-point operator restricted to the interior unknowns.
struct WeightedLaplacian<'g> {
    grid: &'g Grid,
    weights: Vec<[f64; 2]>,
    unknowns: Vec<usize>,
    slot: Vec<Option<usize>>,
}

impl<'g> WeightedLaplacian<'g> {
    fn new(grid: &'g Grid, weights: Vec<[f64; 2]>) -> Self {
        let unknowns: Vec<usize> = grid.interior_nodes().collect();
        let mut slot = vec![None; grid.node_count()];
        for (s, &k) in unknowns.iter().enumerate() {
            slot[k] = Some(s);
        }
        Self {
            grid,
            weights,
            unknowns,
            slot,
        }
    }

    /// `(neighbour, weight)` for the four edges at node `k`.
    fn edges(&self, k: usize) -> [(usize, f64); 4] {
        let g = self.grid;
        let e = g.neighbor(k, 1, 0).expect("interior");
        let w = g.neighbor(k, -1, 0).expect("interior");
        let n = g.neighbor(k, 0, 1).expect("interior");
        let s = g.neighbor(k, 0, -1).expect("interior");
        [
            (e, self.weights[k][0]),
            (w, self.weights[w][0]),
            (n, self.weights[k][1]),
            (s, self.weights[s][1]),
        ]
    }

    fn diagonal(&self) -> Vec<f64> {
        self.unknowns.iter().map(|&k| self.edges(k).iter().map(|e| e.1).sum()).collect()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (s, &k) in self.unknowns.iter().enumerate() {
            let mut acc = 0.0;
            for (nb, w) in self.edges(k) {
                let xn = self.slot[nb].map_or(0.0, |t| x[t]);
                acc += w * (x[s] - xn);
            }
            out[s] = acc;
        }
    }

    /// Right-hand side from Dirichlet values on boundary neighbours.
    fn boundary_rhs(&self, u: &[f64]) -> Vec<f64> {
        self.unknowns
            .iter()
            .map(|&k| self.edges(k).iter().filter(|(nb, _)| self.slot[*nb].is_none()).map(|(nb, w)| w * u[*nb]).sum())
            .collect()
    }
}

/// Anderson mixing of fixed-point iterates: given iterates `x_i` and
/// residuals `f_i = G(x_i) - x_i`, proposes `x + f - (dX + dF) gamma` with
/// `gamma` the least-squares fit of the latest residual by residual
/// differences.
struct AndersonMixer {
    depth: usize,
    xs: VecDeque<Vec<f64>>,
    fs: VecDeque<Vec<f64>>,
}

impl AndersonMixer {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: VecDeque::new(),
            fs: VecDeque::new(),
        }
    }

    fn clear(&mut self) {
        self.xs.clear();
        self.fs.clear();
    }

    fn propose(&mut self, x: Vec<f64>, f: Vec<f64>) -> Option<Vec<f64>> {
        if self.depth == 0 {
            return None;
        }
        self.xs.push_back(x);
        self.fs.push_back(f);
        if self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.fs.pop_front();
        }
        let m = self.xs.len() - 1;
        if m == 0 {
            return None;
        }
        let diff = |v: &VecDeque<Vec<f64>>, i: usize| -> Vec<f64> { v[i + 1].iter().zip(&v[i]).map(|(a, b)| a - b).collect() };
        let df: Vec<Vec<f64>> = (0..m).map(|i| diff(&self.fs, i)).collect();
        let dx: Vec<Vec<f64>> = (0..m).map(|i| diff(&self.xs, i)).collect();
        let (xk, fk) = (&self.xs[m], &self.fs[m]);
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                gram[i][j] = dot(&df[i], &df[j]);
            }
            rhs[i] = dot(&df[i], fk);
        }
        let ridge = 1e-12 * (0..m).map(|i| gram[i][i]).fold(0.0, f64::max);
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += ridge;
        }
        let gamma = solve_dense(gram, rhs)?;
        let mut out: Vec<f64> = xk.iter().zip(fk).map(|(a, b)| a + b).collect();
        for i in 0..m {
            for (o, (a, b)) in out.iter_mut().zip(dx[i].iter().zip(&df[i])) {
                *o -= gamma[i] * (a + b);
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

/// Gaussian elimination with partial pivoting for the small mixing systems.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients. Returns the iteration count.
fn pcg(op: &WeightedLaplacian, b: &[f64], x: &mut [f64], tol: f64, max_iters: usize) -> Result<usize> {
    let m = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let diag = op.diagonal();
    let mut r = vec![0.0; m];
    op.apply(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; m];
    for it in 0..max_iters {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(it);
        }
        op.apply(&dir, &mut q);
        let alpha = rz / dot(&dir, &q);
        x.iter_mut().zip(&dir).for_each(|(xi, di)| *xi += alpha * di);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
        z.iter_mut().zip(r.iter().zip(&diag)).for_each(|(zi, (ri, d))| *zi = ri / d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        dir.iter_mut().zip(&z).for_each(|(di, zi)| *di = zi + beta * *di);
    }
    let rnorm = dot(&r, &r).sqrt();
    if rnorm <= tol * bnorm {
        Ok(max_iters)
    } else {
        Err(Error::LinearSolve {
            iters: max_iters,
            residual: rnorm / bnorm,
        })
    }
}

/// Solves the linear problem with the given triangle coefficients and the
/// boundary data already stored in `u`; `u` is overwritten in the interior.
/// The current interior values are the CG starting guess.
fn linear_solve(tri: &Triangulation, coeff: &[[f64; 2]], u: &mut [f64], cfg: &SolverConfig) -> Result<usize> {
    let op = WeightedLaplacian::new(tri.grid, tri.edge_weights(coeff));
    let b = op.boundary_rhs(u);
    let mut x: Vec<f64> = op.unknowns.iter().map(|&k| u[k]).collect();
    let iters = pcg(&op, &b, &mut x, cfg.inner_solver_tol, cfg.max_inner_iters)?;
    for (s, &k) in op.unknowns.iter().enumerate() {
        u[k] = x[s];
    }
    Ok(iters)
}

pub fn solve(problem: &DirichletProblem, cfg: &SolverConfig) -> Result<SolutionReport> {
    cfg.validate()?;
    let grid = problem.grid();
    let tri = Triangulation::new(grid);
    let (p, eps) = (problem.p, problem.eps);

    let mut u: Vec<f64> = (0..grid.node_count())
        .map(|k| if grid.kind(k) == crate::grid::NodeKind::Boundary { problem.boundary.at(k) } else { 0.0 })
        .collect();
    let mut inner_iters = 0;
    let ones = vec![[1.0, 1.0]; grid.nx() * grid.ny()];
    let ones: Vec<[f64; 2]> = ones.iter().zip(&tri.cell_active).map(|(w, a)| if *a { *w } else { [0.0; 2] }).collect();
    if cfg.init == InitialGuess::HarmonicExtension || p == 2.0 {
        let e0 = tri.energy(&u, p, eps);
        inner_iters += linear_solve(&tri, &ones, &mut u, cfg)?;
        if p == 2.0 {
            // the operator does not depend on u: one solve is the answer
            let e1 = tri.energy(&u, p, eps);
            let field = ScalarField::new(grid.clone(), u)?;
            return Ok(SolutionReport {
                u: field,
                outer_iters: 1,
                final_update: 0.0,
                final_energy: e1,
                energy_history: vec![e0, e1],
                update_history: vec![],
                damping_history: vec![1.0],
                accelerated_steps: 0,
                inner_iters,
            });
        }
    }

    let mut energy = tri.energy(&u, p, eps);
    let mut history = vec![energy];
    let mut updates = Vec::new();
    let mut dampings = Vec::new();
    let mut trial = u.clone();
    let interior: Vec<usize> = grid.interior_nodes().collect();
    let mut mixer = AndersonMixer::new(cfg.acceleration_depth);
    let mut accelerated_steps = 0;
    for outer in 1..=cfg.max_outer_iters {
        let coeff = tri.coefficients(&u, p, eps);
        trial.copy_from_slice(&u);
        inner_iters += linear_solve(&tri, &coeff, &mut trial, cfg)?;
        let update = grid.interior_nodes().map(|k| (trial[k] - u[k]).abs()).fold(0.0, f64::max);
        updates.push(update);
        if update < cfg.update_tol {
            let field = ScalarField::new(grid.clone(), u)?;
            return Ok(SolutionReport {
                u: field,
                outer_iters: outer,
                final_update: update,
                final_energy: energy,
                energy_history: history,
                update_history: updates,
                damping_history: dampings,
                accelerated_steps,
                inner_iters,
            });
        }
        let slack = ENERGY_SLACK * energy.abs().max(1.0);
        let mut candidate = u.clone();
        let x: Vec<f64> = interior.iter().map(|&k| u[k]).collect();
        let f: Vec<f64> = interior.iter().map(|&k| trial[k] - u[k]).collect();
        if let Some(mixed) = mixer.propose(x, f) {
            for (&k, v) in interior.iter().zip(&mixed) {
                candidate[k] = *v;
            }
            let e = tri.energy(&candidate, p, eps);
            if e <= energy + slack {
                u.copy_from_slice(&candidate);
                energy = e;
                history.push(e);
                dampings.push(1.0);
                accelerated_steps += 1;
                continue;
            }
            mixer.clear();
        }
        let mut t = cfg.damping;
        let mut accepted = None;
        while t >= 1.0 / 1024.0 {
            for k in grid.interior_nodes() {
                candidate[k] = u[k] + t * (trial[k] - u[k]);
            }
            let e = tri.energy(&candidate, p, eps);
            if e <= energy + slack {
                accepted = Some(e);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(e) => {
                u.copy_from_slice(&candidate);
                energy = e;
                history.push(e);
                dampings.push(t);
            }
            None => {
                return Err(Error::NotConverged {
                    iters: outer,
                    last_update: update,
                    energy_history: history,
                });
            }
        }
    }
    Err(Error::NotConverged {
        iters: cfg.max_outer_iters,
        last_update: updates.last().copied().unwrap_or(f64::INFINITY),
        energy_history: history,
    })
}

/// Relative discrete L2 error `||u - exact|| / ||exact||` over in-domain nodes.
pub fn relative_l2_error(u: &ScalarField, exact: impl Fn([f64; 2]) -> f64) -> f64 {
    let grid = u.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for k in grid.active_nodes() {
        let e = exact(grid.point(k));
        num += (u.at(k) - e).powi(2);
        den += e * e;
    }
    (num / den).sqrt()
}
