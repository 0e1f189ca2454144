//! Integral estimates on grid balls, ball classification and the threshold
//! algebra for the admissible exponent `s`.
//!
//! Integrals use the node rule `h^2 * sum f(x_k)` over lattice nodes with
//! `|x_k - center| < radius`. Estimates involving second derivatives require
//! every such node to be interior, so that the centred stencils apply.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact::ExactSolution;
use crate::field::{self, dvs_at, gradient, hessian, mat2_norm_sq, v_s, ScalarField, Sym2, SymMatrixField, VectorField};
use crate::grid::Grid;
use crate::sampling::log_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: [f64; 2],
    pub r: f64,
}

impl Ball {
    pub fn new(center: [f64; 2], r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || !center.iter().all(|c| c.is_finite()) {
            return Err(invalid(format!("ball needs a finite centre and radius > 0, got {center:?}, {r}")));
        }
        Ok(Self { center, r })
    }

    /// Concentric ball with radius `factor * r`.
    pub fn dilated(&self, factor: f64) -> Self {
        Self {
            center: self.center,
            r: factor * self.r,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Nodes strictly inside the disc, in increasing index order. With
/// `interior` set, every such node must be an interior node; otherwise it
/// must be in the domain. The disc must also lie inside the lattice box.
pub fn ball_nodes(grid: &Grid, center: [f64; 2], radius: f64, interior: bool) -> Result<Vec<usize>> {
    let (lo, hi) = (grid.origin(), grid.extent());
    if center[0] - radius < lo[0] || center[1] - radius < lo[1] || center[0] + radius > hi[0] || center[1] + radius > hi[1] {
        return Err(invalid(format!("ball of radius {radius} at {center:?} leaves the grid")));
    }
    let nodes: Vec<usize> = (0..grid.node_count()).filter(|&k| dist(grid.point(k), center) < radius).collect();
    if nodes.is_empty() {
        return Err(invalid(format!("ball of radius {radius} at {center:?} contains no nodes")));
    }
    let ok = |k: usize| if interior { grid.is_interior(k) } else { grid.is_active(k) };
    if let Some(&k) = nodes.iter().find(|&&k| !ok(k)) {
        return Err(invalid(format!(
            "ball of radius {radius} at {center:?} reaches node {:?} outside the {}",
            grid.coords(k),
            if interior { "interior" } else { "domain" }
        )));
    }
    Ok(nodes)
}

/// `phi = psi(|x - c| / r)` with the quintic smoothstep
/// `psi(t) = 1 - (6 tau^5 - 15 tau^4 + 10 tau^3)`, `tau = t - 1` on `[1, 2]`.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub ball: Ball,
    pub phi: ScalarField,
    pub grad: VectorField,
    /// Nodes of `B_{2r}`, the support of `phi`.
    pub support: Vec<usize>,
}

/// Profile value and derivative on `t = |x - c| / r`.
pub fn smoothstep_profile(t: f64) -> (f64, f64) {
    if t <= 1.0 {
        (1.0, 0.0)
    } else if t >= 2.0 {
        (0.0, 0.0)
    } else {
        let tau = t - 1.0;
        let v = 1.0 - tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
        let d = -30.0 * tau * tau * (tau - 1.0) * (tau - 1.0);
        (v, d)
    }
}

impl Cutoff {
    /// `r * max |Dphi|` over grid nodes.
    pub fn max_gradient_times_r(&self) -> f64 {
        self.support.iter().map(|&k| field::norm_sq(self.grad.at(k)).sqrt()).fold(0.0, f64::max) * self.ball.r
    }
}

pub fn build_cutoff(grid: &Arc<Grid>, ball: Ball) -> Result<Cutoff> {
    let support = ball_nodes(grid, ball.center, 2.0 * ball.r, true)?;
    let mut phi = vec![0.0; grid.node_count()];
    let mut grad = vec![[0.0; 2]; grid.node_count()];
    for &k in &support {
        let x = grid.point(k);
        let d = dist(x, ball.center);
        let (v, dv) = smoothstep_profile(d / ball.r);
        phi[k] = v;
        if dv != 0.0 {
            let f = dv / (ball.r * d);
            grad[k] = [f * (x[0] - ball.center[0]), f * (x[1] - ball.center[1])];
        }
    }
    Ok(Cutoff {
        ball,
        phi: ScalarField::new(grid.clone(), phi)?,
        grad: VectorField::new(grid.clone(), grad)?,
        support,
    })
}

/// Mean of `f` over the nodes of `ball` (every node in the domain).
pub fn integral_average(f: &ScalarField, ball: Ball) -> Result<f64> {
    let nodes = ball_nodes(f.grid(), ball.center, ball.r, false)?;
    Ok(nodes.iter().map(|&k| f.at(k)).sum::<f64>() / nodes.len() as f64)
}

/// A solution together with its finite-difference or exact derivatives.
#[derive(Clone, Debug)]
pub struct FieldBundle {
    pub u: ScalarField,
    pub du: VectorField,
    pub d2u: SymMatrixField,
    pub p: f64,
    pub eps: f64,
}

impl FieldBundle {
    pub fn from_scalar(u: ScalarField, p: f64, eps: f64) -> Result<Self> {
        check_p_eps(p, eps)?;
        let du = gradient(&u);
        let d2u = hessian(&u);
        Ok(Self { u, du, d2u, p, eps })
    }

    /// Samples the closed-form jet on every in-domain node.
    pub fn from_exact(grid: Arc<Grid>, sol: &ExactSolution, p: f64, eps: f64) -> Result<Self> {
        check_p_eps(p, eps)?;
        if sol.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: sol.dim() });
        }
        let n = grid.node_count();
        let (mut u, mut du, mut d2u) = (vec![0.0; n], vec![[0.0; 2]; n], vec![Sym2::default(); n]);
        for k in grid.active_nodes() {
            let jet = sol.eval(&grid.point(k))?;
            u[k] = jet.u;
            du[k] = [jet.du.0[0], jet.du.0[1]];
            d2u[k] = Sym2::new(jet.d2u.get(0, 0), jet.d2u.get(0, 1), jet.d2u.get(1, 1));
        }
        Ok(Self {
            u: ScalarField::new(grid.clone(), u)?,
            du: VectorField::new(grid.clone(), du)?,
            d2u: SymMatrixField::new(grid, d2u)?,
            p,
            eps,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid()
    }

    pub fn h(&self) -> f64 {
        self.grid().h()
    }

    fn cell(&self) -> f64 {
        self.h() * self.h()
    }

    fn check_cutoff(&self, cutoff: &Cutoff) -> Result<()> {
        if !Arc::ptr_eq(cutoff.phi.grid(), self.grid()) && **cutoff.phi.grid() != **self.grid() {
            return Err(invalid("cutoff was built on a different grid"));
        }
        Ok(())
    }
}

fn check_p_eps(p: f64, eps: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid(format!("p must be > 1, got {p}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    Ok(())
}

/// `(|g|^2 + eps)^{exponent/2}`; fails where the base vanishes and the
/// exponent is negative.
fn mu_pow(g: [f64; 2], eps: f64, exponent: f64) -> Result<f64> {
    let m2 = field::norm_sq(g) + eps;
    if m2 == 0.0 {
        return if exponent > 0.0 {
            Ok(0.0)
        } else if exponent == 0.0 {
            Ok(1.0)
        } else {
            Err(invalid("negative power of mu at a critical point with eps = 0"))
        };
    }
    Ok(m2.powf(0.5 * exponent))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioStatus {
    /// `rhs > 0`: `empirical_c = lhs / rhs`.
    Finite,
    /// `lhs <= 0` and `rhs == 0`: the inequality holds with any constant.
    Trivial,
    /// `lhs > 0 == rhs`: no constant can work.
    Violation,
}

/// One evaluation of an estimate `lhs <= C rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub estimate: String,
    pub lhs: f64,
    pub rhs: f64,
    pub status: RatioStatus,
    /// `lhs / rhs` scaled as the estimate prescribes; `None` unless finite.
    pub empirical_c: Option<f64>,
    pub p: f64,
    pub s: Option<f64>,
    pub eps: f64,
    pub h: f64,
    pub ball: Ball,
    /// Evaluated outside the parameter range where the estimate is claimed.
    pub diagnostic: bool,
}

impl RatioReport {
    fn new(estimate: &str, lhs: f64, rhs: f64, scale: f64, fields: &FieldBundle, s: Option<f64>, ball: Ball) -> Self {
        let (status, empirical_c) = if rhs > 0.0 {
            (RatioStatus::Finite, Some(scale * lhs / rhs))
        } else if lhs <= 0.0 {
            (RatioStatus::Trivial, None)
        } else {
            (RatioStatus::Violation, None)
        };
        Self {
            estimate: estimate.to_string(),
            lhs,
            rhs,
            status,
            empirical_c,
            p: fields.p,
            s,
            eps: fields.eps,
            h: fields.h(),
            ball,
            diagnostic: false,
        }
    }
}

/// Minimizer over constant vectors of `sum w_k |Du_k - z|^2`.
fn weighted_mean(values: impl Iterator<Item = ([f64; 2], f64)>) -> [f64; 2] {
    let (mut acc, mut wsum) = ([0.0; 2], 0.0);
    for (v, w) in values {
        acc[0] += w * v[0];
        acc[1] += w * v[1];
        wsum += w;
    }
    if wsum == 0.0 {
        [0.0; 2]
    } else {
        [acc[0] / wsum, acc[1] / wsum]
    }
}

/// `∫ mu^{p-2} |D^2u|^2 phi^2  <=  C ∫ mu^{p-2} |Du - z|^2 |Dphi|^2`.
///
/// With `z = None` the constant vector minimizing the right-hand side is
/// used: the mean of `Du` weighted by `mu^{p-2} |Dphi|^2`.
pub fn caccioppoli_basic(fields: &FieldBundle, cutoff: &Cutoff, z: Option<[f64; 2]>) -> Result<RatioReport> {
    fields.check_cutoff(cutoff)?;
    let (p, eps) = (fields.p, fields.eps);
    let mut weights = Vec::with_capacity(cutoff.support.len());
    for &k in &cutoff.support {
        weights.push(mu_pow(fields.du.at(k), eps, p - 2.0)?);
    }
    let z = z.unwrap_or_else(|| {
        weighted_mean(cutoff.support.iter().zip(&weights).map(|(&k, w)| (fields.du.at(k), w * field::norm_sq(cutoff.grad.at(k)))))
    });
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (&k, w) in cutoff.support.iter().zip(&weights) {
        let phi = cutoff.phi.at(k);
        let g = fields.du.at(k);
        lhs += w * fields.d2u.at(k).norm_sq() * phi * phi;
        rhs += w * field::norm_sq([g[0] - z[0], g[1] - z[1]]) * field::norm_sq(cutoff.grad.at(k));
    }
    let c = fields.cell();
    Ok(RatioReport::new("caccioppoli_basic", c * lhs, c * rhs, 1.0, fields, None, cutoff.ball))
}

/// The three weighted Hessian integrals and the cutoff term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedIntegrals {
    /// `∫ |D^2u|^2 mu^{p-2+s} phi^2`
    pub i1: f64,
    /// `∫ |D^2u Du|^2 mu^{p-4+s} phi^2`
    pub i2: f64,
    /// `∫ (Δ∞u)^2 mu^{p-6+s} phi^2`
    pub i3: f64,
    /// `∫ mu^{p+s} |Dphi|^2`
    pub rhs: f64,
}

pub fn weighted_integrals(fields: &FieldBundle, s: f64, cutoff: &Cutoff) -> Result<WeightedIntegrals> {
    fields.check_cutoff(cutoff)?;
    let (p, eps) = (fields.p, fields.eps);
    let mut out = WeightedIntegrals {
        i1: 0.0,
        i2: 0.0,
        i3: 0.0,
        rhs: 0.0,
    };
    for &k in &cutoff.support {
        let g = fields.du.at(k);
        let h = fields.d2u.at(k);
        let phi2 = cutoff.phi.at(k).powi(2);
        let dphi2 = field::norm_sq(cutoff.grad.at(k));
        let hg = h.mul(g);
        if phi2 > 0.0 {
            out.i1 += h.norm_sq() * mu_pow(g, eps, p - 2.0 + s)? * phi2;
            let hg2 = field::norm_sq(hg);
            if hg2 > 0.0 {
                out.i2 += hg2 * mu_pow(g, eps, p - 4.0 + s)? * phi2;
            }
            let inf = field::dot(g, hg);
            if inf != 0.0 {
                out.i3 += inf * inf * mu_pow(g, eps, p - 6.0 + s)? * phi2;
            }
        }
        if dphi2 > 0.0 {
            out.rhs += mu_pow(g, eps, p + s)? * dphi2;
        }
    }
    let c = fields.cell();
    out.i1 *= c;
    out.i2 *= c;
    out.i3 *= c;
    out.rhs *= c;
    Ok(out)
}

/// Default `eta` for the weighted estimate. At `eta = 1/4` the left side
/// vanishes identically on the radial solution for `p = 3/2, s = -1/2`, so
/// the ratio there would only measure rounding.
pub const DEFAULT_ETA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedCaccioppoliReport {
    pub integrals: WeightedIntegrals,
    pub eta: f64,
    /// `|lhs| / (I1 + |p-2+s-eta| I2 + |s(p-2)-eta| I3)`: small values mean
    /// the left side is a near-cancellation and its ratio is not informative.
    pub cancellation: f64,
    /// `I1 + (p-2+s-eta) I2 + (s(p-2)-eta) I3 <= (C/eta) RHS`, reported with
    /// `empirical_c = eta * lhs / rhs`.
    pub ratio: RatioReport,
}

pub fn caccioppoli_weighted(fields: &FieldBundle, s: f64, eta: f64, cutoff: &Cutoff) -> Result<WeightedCaccioppoliReport> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be > 0, got {eta}")));
    }
    let it = weighted_integrals(fields, s, cutoff)?;
    let p = fields.p;
    let (c2, c3) = (p - 2.0 + s - eta, s * (p - 2.0) - eta);
    let lhs = it.i1 + c2 * it.i2 + c3 * it.i3;
    let mass = it.i1 + c2.abs() * it.i2 + c3.abs() * it.i3;
    Ok(WeightedCaccioppoliReport {
        integrals: it,
        eta,
        cancellation: if mass > 0.0 { lhs.abs() / mass } else { 1.0 },
        ratio: RatioReport::new("caccioppoli_weighted", lhs, it.rhs, eta, fields, Some(s), cutoff.ball),
    })
}

/// `I1 <= C (I2 + RHS)`.
pub fn hessian_energy_bound(fields: &FieldBundle, s: f64, cutoff: &Cutoff) -> Result<RatioReport> {
    let it = weighted_integrals(fields, s, cutoff)?;
    Ok(RatioReport::new("hessian_energy_bound", it.i1, it.i2 + it.rhs, 1.0, fields, Some(s), cutoff.ball))
}

/// `∫ |D(V_s^eps(Du))|^2 phi^2 <= C ∫ mu^{p+s} |Dphi|^2`; flagged diagnostic
/// for `s` at or below the sharp threshold.
pub fn main_energy_ratio(fields: &FieldBundle, s: f64, cutoff: &Cutoff) -> Result<RatioReport> {
    fields.check_cutoff(cutoff)?;
    let (p, eps) = (fields.p, fields.eps);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for &k in &cutoff.support {
        let g = fields.du.at(k);
        let phi2 = cutoff.phi.at(k).powi(2);
        if phi2 > 0.0 {
            let j = dvs_at(g, &fields.d2u.at(k), p, s, eps).ok_or_else(|| invalid("D(V_s) is singular at a node in the ball"))?;
            lhs += mat2_norm_sq(&j) * phi2;
        }
        let dphi2 = field::norm_sq(cutoff.grad.at(k));
        if dphi2 > 0.0 {
            rhs += mu_pow(g, eps, p + s)? * dphi2;
        }
    }
    let c = fields.cell();
    let mut report = RatioReport::new("main_energy_ratio", c * lhs, c * rhs, 1.0, fields, Some(s), cutoff.ball);
    report.diagnostic = s <= threshold_sharp(2, p);
    Ok(report)
}

/// `V_s(Du)` with no regularization at the given nodes.
fn vs_values(fields: &FieldBundle, s: f64, nodes: &[usize]) -> Vec<[f64; 2]> {
    nodes
        .iter()
        .map(|&k| {
            let v = v_s(&fields.du.at(k), fields.p, s);
            [v[0], v[1]]
        })
        .collect()
}

fn mean2(values: &[[f64; 2]]) -> [f64; 2] {
    weighted_mean(values.iter().map(|v| (*v, 1.0)))
}

/// `∫_{B_r} |D(V_s(Du))|^2 <= (C / r^2) ∫_{B_{2r}} |V_s(Du) - z|^2` with the
/// unregularized `V_s`; `z = None` takes the `B_{2r}` average of `V_s(Du)`.
pub fn oscillation_ratio(fields: &FieldBundle, s: f64, ball: Ball, z: Option<[f64; 2]>) -> Result<RatioReport> {
    let grid = fields.grid();
    let outer = ball_nodes(grid, ball.center, 2.0 * ball.r, true)?;
    let p = fields.p;
    let vs = vs_values(fields, s, &outer);
    let z = z.unwrap_or_else(|| mean2(&vs));
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (&k, v) in outer.iter().zip(&vs) {
        rhs += field::norm_sq([v[0] - z[0], v[1] - z[1]]);
        if dist(grid.point(k), ball.center) < ball.r {
            let j = dvs_at(fields.du.at(k), &fields.d2u.at(k), p, s, 0.0)
                .ok_or_else(|| invalid(format!("D(V_s) is singular at node {:?}", grid.coords(k))))?;
            lhs += mat2_norm_sq(&j);
        }
    }
    let c = fields.cell();
    Ok(RatioReport::new("oscillation_ratio", c * lhs, c * rhs / (ball.r * ball.r), 1.0, fields, Some(s), ball))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    Degenerate,
    Nondegenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub ball: Ball,
    pub m: f64,
    /// `∫_{B_{2r}} |V_s(Du)|^2`
    pub value_integral: f64,
    /// `∫_{B_{Mr}} |V_s(Du) - (V_s(Du))_{B_{Mr}}|^2`
    pub oscillation_integral: f64,
    pub verdict: Degeneracy,
}

/// Degenerate when the value integral does not exceed the oscillation integral.
pub fn degeneracy_classify(fields: &FieldBundle, s: f64, ball: Ball, m: f64) -> Result<DegeneracyReport> {
    if m < 4.0 {
        return Err(invalid(format!("M must be >= 4, got {m}")));
    }
    let grid = fields.grid();
    let big = ball_nodes(grid, ball.center, m * ball.r, true)?;
    let vs = vs_values(fields, s, &big);
    let mean = mean2(&vs);
    let mut value = 0.0;
    let mut osc = 0.0;
    for (&k, v) in big.iter().zip(&vs) {
        osc += field::norm_sq([v[0] - mean[0], v[1] - mean[1]]);
        if dist(grid.point(k), ball.center) < 2.0 * ball.r {
            value += field::norm_sq(*v);
        }
    }
    let c = fields.cell();
    let (value, osc) = (c * value, c * osc);
    Ok(DegeneracyReport {
        ball,
        m,
        value_integral: value,
        oscillation_integral: osc,
        verdict: if value <= osc { Degeneracy::Degenerate } else { Degeneracy::Nondegenerate },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeOfScaleReport {
    pub hypothesis_holds: bool,
    /// `⨍_{B_{κr}} |v|^2 / ⨍_{B_{mr}} |v|^2`; `None` when the hypothesis fails.
    pub ratio: Option<f64>,
}

/// Averages over node sets are exact for the discrete measure, so the ratio
/// obeys the bound 9 up to rounding whenever the hypothesis holds.
pub fn change_of_scale_check(v: &VectorField, center: [f64; 2], r: f64, m: f64, big_m: f64, kappa: f64) -> Result<ChangeOfScaleReport> {
    if !(r > 0.0 && m > 0.0 && m < big_m && kappa >= m && kappa <= big_m) {
        return Err(invalid(format!("need r > 0 and 0 < m <= kappa <= M, m < M; got r={r}, m={m}, kappa={kappa}, M={big_m}")));
    }
    let grid = v.grid();
    let big = ball_nodes(grid, center, big_m * r, false)?;
    let vals: Vec<[f64; 2]> = big.iter().map(|&k| v.at(k)).collect();
    let mean = mean2(&vals);
    let osc: f64 = vals.iter().map(|x| field::norm_sq([x[0] - mean[0], x[1] - mean[1]])).sum();
    let (mut small_sum, mut small_n, mut mid_sum, mut mid_n) = (0.0, 0usize, 0.0, 0usize);
    for (&k, x) in big.iter().zip(&vals) {
        let d = dist(grid.point(k), center);
        if d < m * r {
            small_sum += field::norm_sq(*x);
            small_n += 1;
        }
        if d < kappa * r {
            mid_sum += field::norm_sq(*x);
            mid_n += 1;
        }
    }
    if small_n == 0 {
        return Err(invalid("inner ball contains no nodes"));
    }
    if small_sum <= osc {
        return Ok(ChangeOfScaleReport {
            hypothesis_holds: false,
            ratio: None,
        });
    }
    Ok(ChangeOfScaleReport {
        hypothesis_holds: true,
        ratio: Some((mid_sum / mid_n as f64) / (small_sum / small_n as f64)),
    })
}

/// Extremes of `|V_s^eps(z) - V_s^eps(w)|^2 / ((eps + |z|^2 + |w|^2)^{(p-2+s)/2} |z - w|^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparability {
    pub c1_hat: f64,
    pub c2_hat: f64,
    pub samples_used: usize,
}

/// The ratio at one sample; `None` when `z == w`.
pub fn vs_comparability_ratio(z: [f64; 2], w: [f64; 2], p: f64, s: f64, eps: f64) -> Option<f64> {
    let d = [z[0] - w[0], z[1] - w[1]];
    let d2 = field::norm_sq(d);
    if d2 == 0.0 {
        return None;
    }
    let vz = field::v_s_eps(&z, p, s, eps);
    let vw = field::v_s_eps(&w, p, s, eps);
    let num = field::norm_sq([vz[0] - vw[0], vz[1] - vw[1]]);
    let base = eps + field::norm_sq(z) + field::norm_sq(w);
    Some(num / (base.powf(0.5 * (p - 2.0 + s)) * d2))
}

/// Samples `(z, w, eps)`: directions Gaussian, magnitudes log-uniform over
/// six decades, `eps` zero for a quarter of the draws and otherwise
/// log-uniform relative to `|z|^2`. Every eighth draw sets `w = 0`. The ratio
/// is invariant under `(z, w, eps) -> (tz, tw, t^2 eps)`, so the magnitude
/// range only exercises rounding.
pub fn vs_comparability<R: Rng + ?Sized>(p: f64, s: f64, samples: usize, rng: &mut R) -> Result<Comparability> {
    if !(p > 1.0 && p + s > 0.0) {
        return Err(invalid(format!("need p > 1 and p + s > 0, got p={p}, s={s}")));
    }
    let mut out = Comparability {
        c1_hat: f64::INFINITY,
        c2_hat: 0.0,
        samples_used: 0,
    };
    let draw = |rng: &mut R| -> [f64; 2] {
        let g = crate::sampling::gaussian_vector(rng, 2);
        let n = g.norm().max(f64::MIN_POSITIVE);
        let m = log_uniform(rng, 1e-3, 1e3);
        [m * g.0[0] / n, m * g.0[1] / n]
    };
    for i in 0..samples {
        let z = draw(rng);
        let w = if i % 8 == 7 { [0.0; 2] } else { draw(rng) };
        let eps = if i % 4 == 0 { 0.0 } else { field::norm_sq(z) * log_uniform(rng, 1e-6, 1e2) };
        if let Some(r) = vs_comparability_ratio(z, w, p, s, eps) {
            out.c1_hat = out.c1_hat.min(r);
            out.c2_hat = out.c2_hat.max(r);
            out.samples_used += 1;
        }
    }
    if out.samples_used == 0 {
        return Err(invalid("no usable samples"));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientComparabilityReport {
    pub ball: Ball,
    pub m: f64,
    pub degeneracy: DegeneracyReport,
    /// `(⨍_{B_{2r}} |Du|^{p+s})^{1/(p+s)}`
    pub lambda: f64,
    pub x0: Option<[usize; 2]>,
    /// `| |Du(x0)| - lambda |`
    pub x0_residual: f64,
    /// `max_{B_{2r}} |Du - Du(x0)| / lambda`; `None` when `lambda == 0`.
    pub ratio: Option<f64>,
    pub nodes_in_2r: usize,
}

pub fn gradient_comparability_check(fields: &FieldBundle, s: f64, ball: Ball, m: f64) -> Result<GradientComparabilityReport> {
    let p = fields.p;
    if p + s <= 0.0 {
        return Err(invalid(format!("need p + s > 0, got {}", p + s)));
    }
    let degeneracy = degeneracy_classify(fields, s, ball, m)?;
    let grid = fields.grid();
    let nodes = ball_nodes(grid, ball.center, 2.0 * ball.r, true)?;
    let norms: Vec<f64> = nodes.iter().map(|&k| field::norm_sq(fields.du.at(k)).sqrt()).collect();
    let lambda = (norms.iter().map(|g| g.powf(p + s)).sum::<f64>() / nodes.len() as f64).powf(1.0 / (p + s));
    let mut report = GradientComparabilityReport {
        ball,
        m,
        degeneracy,
        lambda,
        x0: None,
        x0_residual: 0.0,
        ratio: None,
        nodes_in_2r: nodes.len(),
    };
    if lambda == 0.0 {
        return Ok(report);
    }
    let (i0, resid) = norms
        .iter()
        .enumerate()
        .map(|(i, g)| (i, (g - lambda).abs()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let g0 = fields.du.at(nodes[i0]);
    let worst = nodes
        .iter()
        .map(|&k| {
            let g = fields.du.at(k);
            field::norm_sq([g[0] - g0[0], g[1] - g0[1]]).sqrt()
        })
        .fold(0.0, f64::max);
    report.x0 = Some(grid.coords(nodes[i0]).into());
    report.x0_residual = resid;
    report.ratio = Some(worst / lambda);
    Ok(report)
}

/// Minimum number of nodes in `B_{2r}` for a ball to take part in a sweep.
pub const MIN_SWEEP_NODES: usize = 5;

/// All balls tested at one value of `M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub m: f64,
    pub reports: Vec<GradientComparabilityReport>,
    pub nondegenerate: usize,
    /// Largest ratio over the non-degenerate balls.
    pub worst_ratio: Option<f64>,
    /// At least one non-degenerate ball, and all of them meet `sigma`.
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparabilitySweep {
    pub sigma: f64,
    pub levels: Vec<SweepLevel>,
    /// Smallest `M` at which every non-degenerate ball meets `sigma`.
    pub first_success: Option<f64>,
}

/// For each `M` the ball family is `B_{R/M}(c)` over the given centres and
/// outer radii `R`, so `B_{Mr} = B_R(c)` always fits. Balls whose `B_{2r}`
/// holds fewer than [`MIN_SWEEP_NODES`] nodes are left out.
pub fn gradient_comparability_sweep(fields: &FieldBundle, s: f64, centers: &[[f64; 2]], outer_radii: &[f64], sigma: f64, ms: &[f64]) -> Result<ComparabilitySweep> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let grid = fields.grid();
    let mut levels = Vec::new();
    for &m in ms {
        let mut reports = Vec::new();
        for &c in centers {
            for &big_r in outer_radii {
                let ball = Ball::new(c, big_r / m)?;
                let resolved = (0..grid.node_count()).filter(|&k| dist(grid.point(k), c) < 2.0 * ball.r).count();
                if resolved < MIN_SWEEP_NODES {
                    continue;
                }
                reports.push(gradient_comparability_check(fields, s, ball, m)?);
            }
        }
        let nondeg: Vec<&GradientComparabilityReport> = reports.iter().filter(|r| r.degeneracy.verdict == Degeneracy::Nondegenerate).collect();
        let worst_ratio = nondeg.iter().map(|r| r.ratio.unwrap_or(0.0)).reduce(f64::max);
        levels.push(SweepLevel {
            m,
            nondegenerate: nondeg.len(),
            success: worst_ratio.is_some_and(|w| w <= sigma),
            worst_ratio,
            reports,
        });
    }
    let first_success = levels.iter().find(|l| l.success).map(|l| l.m);
    Ok(ComparabilitySweep { sigma, levels, first_success })
}

/// Coefficients of the quadratic form `a X^2 + b XY + c Y^2` in the proof of
/// the weighted Hessian bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTriple {
    pub n: usize,
    pub p: f64,
    pub s: f64,
    pub eta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CoefficientTriple {
    /// Minimum of the form over `X + Y = 1`, `X, Y >= 0`.
    pub fn form_min(&self) -> f64 {
        let q = |x: f64| self.a * x * x + self.b * x * (1.0 - x) + self.c * (1.0 - x) * (1.0 - x);
        let mut best = q(0.0).min(q(1.0));
        let curv = self.a - self.b + self.c;
        if curv > 0.0 {
            let x = (2.0 * self.c - self.b) / (2.0 * curv);
            if (0.0..=1.0).contains(&x) {
                best = best.min(q(x));
            }
        }
        best
    }
}

fn check_n_p(n: usize, p: f64) -> Result<()> {
    if n < 2 {
        return Err(invalid(format!("need n >= 2, got {n}")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid(format!("need p > 1, got {p}")));
    }
    Ok(())
}

/// `a = (p-1)(s+1+(p-1)/(n-1)) - 3 eta`, `b = p+s+2(p-1)/(n-1) - 2 eta`,
/// `c = 1 + 1/(n-1)`. `a` is evaluated as `(p-1)(s - threshold) - 3 eta` so
/// its sign at `eta = 0` is that of `s - threshold` exactly.
pub fn coefficient_triple(n: usize, p: f64, s: f64, eta: f64) -> Result<CoefficientTriple> {
    check_n_p(n, p)?;
    if !(eta >= 0.0) {
        return Err(invalid(format!("need eta >= 0, got {eta}")));
    }
    let nm1 = (n - 1) as f64;
    Ok(CoefficientTriple {
        n,
        p,
        s,
        eta,
        a: (p - 1.0) * (s - threshold_sharp(n, p)) - 3.0 * eta,
        b: p + s + 2.0 * (p - 1.0) / nm1 - 2.0 * eta,
        c: 1.0 + 1.0 / nm1,
    })
}

/// `-1 - (p-1)/(n-1)`: the estimates hold for `s` above this value.
pub fn threshold_sharp(n: usize, p: f64) -> f64 {
    -1.0 - (p - 1.0) / (n - 1) as f64
}

/// `2 - min{p + n/(n-1), 3 + (p-1)/(n-1)}`, the two-sided bound's admissible
/// range. The two branches differ by `(p-2)(n-2)/(n-1)`, so this is
/// evaluated as the sharp threshold plus `max(0, (2-p)(n-2)/(n-1))`, which
/// keeps the comparison exact where they coincide.
pub fn threshold_two_sided(n: usize, p: f64) -> f64 {
    let nm1 = (n - 1) as f64;
    threshold_sharp(n, p) + ((2.0 - p) * (n - 2) as f64 / nm1).max(0.0)
}

/// Validated form of both thresholds.
pub fn thresholds(n: usize, p: f64) -> Result<(f64, f64)> {
    check_n_p(n, p)?;
    Ok((threshold_sharp(n, p), threshold_two_sided(n, p)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityRow {
    pub ball: Ball,
    pub q: f64,
    /// `(⨍_{B_r} |D V_s|^q)^{1/q} / (⨍_{B_{2r}} |D V_s|^2)^{1/2}`
    pub ratio: f64,
    /// `q > 2`: reported without a claimed bound.
    pub diagnostic: bool,
}

pub fn higher_integrability_probe(fields: &FieldBundle, s: f64, q_grid: &[f64], balls: &[Ball]) -> Result<Vec<IntegrabilityRow>> {
    if let Some(q) = q_grid.iter().find(|q| !(1.0..=2.5).contains(*q)) {
        return Err(invalid(format!("q must lie in [1, 2.5], got {q}")));
    }
    let grid = fields.grid();
    let mut rows = Vec::new();
    for &ball in balls {
        let outer = ball_nodes(grid, ball.center, 2.0 * ball.r, true)?;
        let mut norms_outer = Vec::with_capacity(outer.len());
        let mut norms_inner = Vec::new();
        for &k in &outer {
            let j = dvs_at(fields.du.at(k), &fields.d2u.at(k), fields.p, s, 0.0)
                .ok_or_else(|| invalid(format!("D(V_s) is singular at node {:?}", grid.coords(k))))?;
            let nrm = mat2_norm_sq(&j).sqrt();
            norms_outer.push(nrm);
            if dist(grid.point(k), ball.center) < ball.r {
                norms_inner.push(nrm);
            }
        }
        let denom = (norms_outer.iter().map(|x| x * x).sum::<f64>() / norms_outer.len() as f64).sqrt();
        for &q in q_grid {
            let num = (norms_inner.iter().map(|x| x.powf(q)).sum::<f64>() / norms_inner.len().max(1) as f64).powf(1.0 / q);
            rows.push(IntegrabilityRow {
                ball,
                q,
                ratio: if denom > 0.0 { num / denom } else { 0.0 },
                diagnostic: q > 2.0,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stream_rng;

    fn square(cells: usize) -> Arc<Grid> {
        Arc::new(Grid::unit_square(cells).unwrap())
    }

    fn linear_bundle(cells: usize, p: f64) -> FieldBundle {
        let u = ScalarField::from_fn(square(cells), |x| 0.5 * x[0] - 0.25 * x[1]).unwrap();
        FieldBundle::from_scalar(u, p, 1e-3).unwrap()
    }

    #[test]
    fn smoothstep_profile_shape() {
        assert_eq!(smoothstep_profile(0.5), (1.0, 0.0));
        assert_eq!(smoothstep_profile(2.5), (0.0, 0.0));
        let (v, d) = smoothstep_profile(1.5);
        assert!((v - 0.5).abs() < 1e-15);
        assert!((d + 1.875).abs() < 1e-15);
    }

    #[test]
    fn cutoff_properties() {
        let grid = square(64);
        let cut = build_cutoff(&grid, Ball::new([0.5, 0.5], 0.2).unwrap()).unwrap();
        for k in grid.active_nodes() {
            let d = dist(grid.point(k), [0.5, 0.5]);
            let phi = cut.phi.at(k);
            assert!((0.0..=1.0).contains(&phi));
            if d <= 0.2 {
                assert_eq!(phi, 1.0);
            }
            if d >= 0.4 {
                assert_eq!(phi, 0.0);
            }
        }
        let m = cut.max_gradient_times_r();
        assert!(m <= 1.875 && m > 1.8, "{m}");
        assert!(build_cutoff(&grid, Ball::new([0.5, 0.5], 0.3).unwrap()).is_err());
    }

    #[test]
    fn averages() {
        let grid = square(128);
        let ball = Ball::new([0.5, 0.5], 0.3).unwrap();
        let c = ScalarField::from_fn(grid.clone(), |_| 2.5).unwrap();
        assert!((integral_average(&c, ball).unwrap() - 2.5).abs() < 1e-14);
        let odd = ScalarField::from_fn(grid.clone(), |x| (x[0] - 0.5).powi(3) + x[1] - 0.5).unwrap();
        assert!(integral_average(&odd, ball).unwrap().abs() < 1e-14);
        let sq = ScalarField::from_fn(grid.clone(), |x| (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).unwrap();
        assert!((integral_average(&sq, ball).unwrap() - 0.045).abs() < 2e-3);
        assert!(integral_average(&sq, Ball::new([0.9, 0.5], 0.3).unwrap()).is_err());
    }

    #[test]
    fn linear_fields_are_trivial() {
        let f = linear_bundle(32, 3.0);
        let cut = build_cutoff(f.grid(), Ball::new([0.5, 0.5], 0.2).unwrap()).unwrap();
        let r = caccioppoli_basic(&f, &cut, Some([0.5, -0.25])).unwrap();
        assert_eq!((r.lhs, r.rhs, r.status), (0.0, 0.0, RatioStatus::Trivial));
        let w = caccioppoli_weighted(&f, 0.0, 0.25, &cut).unwrap();
        assert_eq!((w.integrals.i1, w.integrals.i2, w.integrals.i3), (0.0, 0.0, 0.0));
        assert!(w.integrals.rhs > 0.0);
        assert_eq!(hessian_energy_bound(&f, 0.0, &cut).unwrap().lhs, 0.0);
        let m = main_energy_ratio(&f, 0.0, &cut).unwrap();
        assert_eq!(m.lhs, 0.0);
        assert_eq!(m.empirical_c, Some(0.0));
        let o = oscillation_ratio(&f, 0.0, Ball::new([0.5, 0.5], 0.2).unwrap(), None).unwrap();
        assert_eq!(o.lhs, 0.0);
        let d = degeneracy_classify(&f, 0.0, Ball::new([0.5, 0.5], 0.1).unwrap(), 4.0).unwrap();
        assert_eq!(d.verdict, Degeneracy::Nondegenerate);
        // the mean of identical values is exact only up to rounding
        assert!(d.oscillation_integral <= 1e-20 * d.value_integral);
        let g = gradient_comparability_check(&f, 0.0, Ball::new([0.5, 0.5], 0.1).unwrap(), 4.0).unwrap();
        assert_eq!(g.ratio, Some(0.0));
    }

    #[test]
    fn zero_rhs_with_positive_lhs_is_a_violation() {
        let f = linear_bundle(16, 2.0);
        let r = RatioReport::new("x", 1.0, 0.0, 1.0, &f, None, Ball::new([0.0; 2], 1.0).unwrap());
        assert_eq!(r.status, RatioStatus::Violation);
        assert_eq!(r.empirical_c, None);
    }

    #[test]
    fn default_z_minimizes_basic_rhs() {
        let grid = Arc::new(Grid::centered_annulus(64, 0.3, 1.0).unwrap());
        let f = FieldBundle::from_exact(grid.clone(), &ExactSolution::radial(vec![0.0, 0.0], 4.0), 4.0, 1e-4).unwrap();
        let cut = build_cutoff(&grid, Ball::new([0.6, 0.1], 0.12).unwrap()).unwrap();
        let best = caccioppoli_basic(&f, &cut, None).unwrap();
        let mut rng = stream_rng(3, 0);
        for _ in 0..200 {
            let z = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            assert!(caccioppoli_basic(&f, &cut, Some(z)).unwrap().rhs >= best.rhs * (1.0 - 1e-12));
        }
    }

    #[test]
    fn log_hessian_integrals_have_fixed_ratio() {
        // u = log|x|, p = 2, s = 0, eps = 0: |D^2u|^2 = 2/ρ^4 and |D^2u Du|^2 / |Du|^2 = 1/ρ^4
        let grid = Arc::new(Grid::centered_annulus(64, 0.3, 1.0).unwrap());
        let f = FieldBundle::from_exact(grid.clone(), &ExactSolution::radial(vec![0.0, 0.0], 2.0), 2.0, 0.0).unwrap();
        let cut = build_cutoff(&grid, Ball::new([0.0, 0.62], 0.14).unwrap()).unwrap();
        let it = weighted_integrals(&f, 0.0, &cut).unwrap();
        assert!((it.i1 / it.i2 - 2.0).abs() < 1e-12);
        // Δ∞u = -1/ρ^4 and mu^{-4} = ρ^4, so I3 = I2 as well
        assert!((it.i3 / it.i2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oscillation_ratio_shrinks_for_distant_z() {
        let grid = Arc::new(Grid::centered_annulus(64, 0.3, 1.0).unwrap());
        let f = FieldBundle::from_exact(grid, &ExactSolution::radial(vec![0.0, 0.0], 4.0), 4.0, 0.0).unwrap();
        let ball = Ball::new([0.65, 0.0], 0.1).unwrap();
        let base = oscillation_ratio(&f, 0.0, ball, None).unwrap();
        let mut prev = base.empirical_c.unwrap();
        for t in [0.5, 1.0, 2.0, 4.0] {
            let c = oscillation_ratio(&f, 0.0, ball, Some([t, t])).unwrap().empirical_c.unwrap();
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn change_of_scale_bound() {
        let grid = square(64);
        let v = VectorField::from_fn(grid.clone(), |_| [1.0, -2.0]).unwrap();
        let r = change_of_scale_check(&v, [0.5, 0.5], 0.05, 2.0, 8.0, 5.0).unwrap();
        assert!(r.hypothesis_holds);
        assert!((r.ratio.unwrap() - 1.0).abs() < 1e-14);
        let mut rng = stream_rng(5, 0);
        let mut held = 0;
        for _ in 0..300 {
            let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let v = VectorField::from_fn(grid.clone(), |x| [a[0] + 0.3 * a[1] * (7.0 * x[0]).sin(), a[2] + 0.3 * a[3] * (5.0 * x[1]).cos()]).unwrap();
            let kappa = rng.random_range(2.0..8.0);
            let r = change_of_scale_check(&v, [0.5, 0.5], 0.05, 2.0, 8.0, kappa).unwrap();
            if let Some(ratio) = r.ratio {
                held += 1;
                assert!(ratio <= 9.0 + 1e-12, "{ratio}");
            }
        }
        assert!(held > 50);
    }

    #[test]
    fn comparability_extremes() {
        let mut rng = stream_rng(9, 0);
        let c = vs_comparability(2.0, 0.0, 10_000, &mut rng).unwrap();
        assert_eq!((c.c1_hat, c.c2_hat), (1.0, 1.0));
        let c = vs_comparability(3.0, 0.0, 10_000, &mut rng).unwrap();
        assert!(0.0 < c.c1_hat && c.c1_hat <= c.c2_hat && c.c2_hat.is_finite());
        assert_eq!(vs_comparability_ratio([0.3, -1.2], [0.0; 2], 3.5, 0.7, 0.0).map(|r| (r - 1.0).abs() < 1e-14), Some(true));
        assert!(vs_comparability(1.5, -1.5, 10, &mut rng).is_err());
    }

    #[test]
    fn coefficient_examples() {
        let t = coefficient_triple(2, 2.0, 0.0, 0.0).unwrap();
        assert_eq!((t.a, t.b, t.c), (2.0, 4.0, 2.0));
        assert_eq!(coefficient_triple(3, 2.7, 0.1, 0.0).unwrap().c, 1.5);
        for (n, p) in [(2, 1.5), (3, 2.7), (5, 9.1)] {
            assert_eq!(coefficient_triple(n, p, threshold_sharp(n, p), 0.0).unwrap().a, 0.0);
        }
        assert!(coefficient_triple(1, 2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_sharp(3, 1.5), -1.25);
        assert_eq!(threshold_two_sided(3, 1.5), -1.0);
        for p in [1.2, 1.5, 2.0, 3.7] {
            assert_eq!(threshold_sharp(2, p), threshold_two_sided(2, p));
            assert!((threshold_sharp(2, p) + p).abs() < 1e-15);
        }
        for n in 2..9 {
            assert_eq!(threshold_sharp(n, 2.0), threshold_two_sided(n, 2.0));
        }
    }

    #[test]
    fn integrability_orders_by_power_mean() {
        let grid = Arc::new(Grid::centered_annulus(64, 0.3, 1.0).unwrap());
        let f = FieldBundle::from_exact(grid, &ExactSolution::radial(vec![0.0, 0.0], 3.0), 3.0, 0.0).unwrap();
        let ball = Ball::new([0.0, -0.65], 0.1).unwrap();
        let rows = higher_integrability_probe(&f, 0.0, &[1.0, 1.5, 2.0, 2.2], &[ball]).unwrap();
        for w in rows.windows(2) {
            assert!(w[0].ratio <= w[1].ratio * (1.0 + 1e-12));
        }
        assert!(rows.iter().all(|r| r.ratio.is_finite() && r.ratio > 0.0));
        assert!(higher_integrability_probe(&f, 0.0, &[3.0], &[ball]).is_err());
    }
}
