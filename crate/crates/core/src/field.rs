//! Grid-sampled fields and the finite-difference calculus on them.
//!
//! Values live on interior and boundary nodes; exterior nodes hold zeros and
//! are never read. Interior nodes use centred stencils (their eight lattice
//! neighbours are always in the domain), boundary nodes use second-order
//! one-sided differences where two in-domain nodes are available.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::pointwise;
use crate::tensor::{SymMatrix, Vector};

/// Symmetric 2x2 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn norm_sq(&self) -> f64 {
        self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy
    }

    pub fn mul(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn quad(&self, v: [f64; 2]) -> f64 {
        dot(v, self.mul(v))
    }

    /// `(smallest, largest)` eigenvalue.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - r, m + r)
    }

    pub fn to_matrix(self) -> SymMatrix {
        SymMatrix::from_row_major(2, vec![self.xx, self.xy, self.xy, self.yy]).expect("2x2 symmetric")
    }

    fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}

/// General 2x2 matrix, `m[i][j] = d V_i / d x_j` for Jacobians.
pub type Mat2 = [[f64; 2]; 2];

pub fn mat2_norm_sq(m: &Mat2) -> f64 {
    m.iter().flatten().map(|x| x * x).sum()
}

pub(crate) fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm_sq(a: [f64; 2]) -> f64 {
    dot(a, a)
}

macro_rules! field_type {
    ($name:ident, $value:ty, $finite:expr) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            grid: Arc<Grid>,
            values: Vec<$value>,
        }

        impl $name {
            /// Fails on a length mismatch or a non-finite value at an in-domain node.
            pub fn new(grid: Arc<Grid>, values: Vec<$value>) -> Result<Self> {
                if values.len() != grid.node_count() {
                    return Err(Error::DimensionMismatch {
                        expected: grid.node_count(),
                        got: values.len(),
                    });
                }
                let finite: fn(&$value) -> bool = $finite;
                if let Some(k) = grid.active_nodes().find(|&k| !finite(&values[k])) {
                    return Err(invalid(format!("non-finite value at node {:?}", grid.coords(k))));
                }
                Ok(Self { grid, values })
            }

            pub fn grid(&self) -> &Arc<Grid> {
                &self.grid
            }

            pub fn values(&self) -> &[$value] {
                &self.values
            }

            pub fn at(&self, k: usize) -> $value {
                self.values[k]
            }

            /// Evaluates `f` at every in-domain node.
            pub fn from_fn(grid: Arc<Grid>, f: impl Fn([f64; 2]) -> $value) -> Result<Self> {
                let values = (0..grid.node_count())
                    .map(|k| if grid.is_active(k) { f(grid.point(k)) } else { Default::default() })
                    .collect();
                Self::new(grid, values)
            }

            /// Same data rotated a quarter turn about the centre of the lattice box
            /// (`(x, y) -> (-y, x)`). Requires a square lattice with a mask that is
            /// invariant under the rotation.
            pub fn rotated_quarter_turn(&self) -> Result<Self> {
                let grid = &self.grid;
                if grid.nx() != grid.ny() {
                    return Err(invalid("quarter-turn rotation needs a square lattice"));
                }
                let n = grid.nx();
                let mut values = vec![Default::default(); grid.node_count()];
                for k in 0..grid.node_count() {
                    let (i, j) = grid.coords(k);
                    let src = grid.index(j, n - i);
                    if grid.kind(k) != grid.kind(src) {
                        return Err(invalid("domain mask is not invariant under a quarter turn"));
                    }
                    values[k] = rotate_value(self.values[src]);
                }
                Self::new(grid.clone(), values)
            }
        }
    };
}

trait QuarterTurn {
    fn quarter_turn(self) -> Self;
}

impl QuarterTurn for f64 {
    fn quarter_turn(self) -> Self {
        self
    }
}

impl QuarterTurn for [f64; 2] {
    fn quarter_turn(self) -> Self {
        [-self[1], self[0]]
    }
}

impl QuarterTurn for Sym2 {
    fn quarter_turn(self) -> Self {
        // R H R^T with R = [[0,-1],[1,0]]
        Sym2::new(self.yy, -self.xy, self.xx)
    }
}

impl QuarterTurn for Mat2 {
    fn quarter_turn(self) -> Self {
        let [[a, b], [c, d]] = self;
        [[d, -c], [-b, a]]
    }
}

fn rotate_value<T: QuarterTurn>(v: T) -> T {
    v.quarter_turn()
}

field_type!(ScalarField, f64, |v| v.is_finite());
field_type!(VectorField, [f64; 2], |v| v[0].is_finite() && v[1].is_finite());
field_type!(SymMatrixField, Sym2, |v| v.is_finite());
field_type!(JacobianField, Mat2, |v| v.iter().flatten().all(|x| x.is_finite()));

impl ScalarField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.node_count();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = self.grid.clone();
        let values = (0..grid.node_count())
            .map(|k| if grid.is_active(k) { f(self.values[k]) } else { 0.0 })
            .collect();
        Self::new(grid, values)
    }

    /// Largest `|value|` over interior nodes satisfying `keep`.
    pub fn sup_norm_where(&self, keep: impl Fn([f64; 2]) -> bool) -> f64 {
        self.grid
            .interior_nodes()
            .filter(|&k| keep(self.grid.point(k)))
            .map(|k| self.values[k].abs())
            .fold(0.0, f64::max)
    }

    pub fn interior_sup_norm(&self) -> f64 {
        self.sup_norm_where(|_| true)
    }
}

/// First derivative of nodal data along `axis` (0 = x, 1 = y) at node `k`.
pub fn partial(grid: &Grid, values: &[f64], k: usize, axis: usize) -> f64 {
    let (dx, dy) = if axis == 0 { (1, 0) } else { (0, 1) };
    let h = grid.h();
    let fwd = grid.active_neighbor(k, dx, dy);
    let bwd = grid.active_neighbor(k, -dx, -dy);
    match (bwd, fwd) {
        (Some(b), Some(f)) => (values[f] - values[b]) / (2.0 * h),
        (None, Some(f)) => match grid.active_neighbor(f, dx, dy) {
            Some(f2) => (-3.0 * values[k] + 4.0 * values[f] - values[f2]) / (2.0 * h),
            None => (values[f] - values[k]) / h,
        },
        (Some(b), None) => match grid.active_neighbor(b, -dx, -dy) {
            Some(b2) => (3.0 * values[k] - 4.0 * values[b] + values[b2]) / (2.0 * h),
            None => (values[k] - values[b]) / h,
        },
        (None, None) => 0.0,
    }
}

pub fn gradient(u: &ScalarField) -> VectorField {
    let grid = u.grid();
    let values = (0..grid.node_count())
        .map(|k| {
            if grid.is_active(k) {
                [partial(grid, &u.values, k, 0), partial(grid, &u.values, k, 1)]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    VectorField::new(grid.clone(), values).expect("finite differences of finite data")
}

/// Three-point second differences on the diagonal and the four-point cross
/// stencil off it at interior nodes; differences of the gradient at boundary
/// nodes.
pub fn hessian(u: &ScalarField) -> SymMatrixField {
    let grid = u.grid();
    let du = gradient(u);
    let gx: Vec<f64> = du.values.iter().map(|g| g[0]).collect();
    let gy: Vec<f64> = du.values.iter().map(|g| g[1]).collect();
    let h2 = grid.h() * grid.h();
    let v = &u.values;
    let at = |k: usize, di: isize, dj: isize| v[grid.neighbor(k, di, dj).expect("interior stencil")];
    let values = (0..grid.node_count())
        .map(|k| {
            if grid.is_interior(k) {
                Sym2::new(
                    (at(k, 1, 0) - 2.0 * v[k] + at(k, -1, 0)) / h2,
                    (at(k, 1, 1) - at(k, 1, -1) - at(k, -1, 1) + at(k, -1, -1)) / (4.0 * h2),
                    (at(k, 0, 1) - 2.0 * v[k] + at(k, 0, -1)) / h2,
                )
            } else if grid.is_active(k) {
                Sym2::new(
                    partial(grid, &gx, k, 0),
                    0.5 * (partial(grid, &gx, k, 1) + partial(grid, &gy, k, 0)),
                    partial(grid, &gy, k, 1),
                )
            } else {
                Sym2::default()
            }
        })
        .collect();
    SymMatrixField::new(grid.clone(), values).expect("finite differences of finite data")
}

fn check_same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(invalid("fields live on different grids"))
    }
}

fn pointwise_scalar(grid: &Arc<Grid>, f: impl Fn(usize) -> f64) -> Result<ScalarField> {
    let values = (0..grid.node_count()).map(|k| if grid.is_active(k) { f(k) } else { 0.0 }).collect();
    ScalarField::new(grid.clone(), values)
}

/// `<Du, D^2u Du>`
pub fn infinity_laplacian(du: &VectorField, d2u: &SymMatrixField) -> Result<ScalarField> {
    check_same_grid(du.grid(), d2u.grid())?;
    pointwise_scalar(du.grid(), |k| d2u.values[k].quad(du.values[k]))
}

/// `Δ∞u / |Du|^2`, and `0` where `Du = 0`.
pub fn normalized_infinity_laplacian(du: &VectorField, d2u: &SymMatrixField) -> Result<ScalarField> {
    check_same_grid(du.grid(), d2u.grid())?;
    pointwise_scalar(du.grid(), |k| {
        let g = du.values[k];
        let g2 = norm_sq(g);
        if g2 > 0.0 {
            d2u.values[k].quad(g) / g2
        } else {
            0.0
        }
    })
}

/// `mu = (|Du|^2 + eps)^{1/2}`
pub fn mu_field(du: &VectorField, eps: f64) -> Result<ScalarField> {
    if !(eps >= 0.0) {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    pointwise_scalar(du.grid(), |k| (norm_sq(du.values[k]) + eps).sqrt())
}

/// `A = I + (p-2) Du⊗Du / (|Du|^2 + eps)`
pub fn a_matrix(g: [f64; 2], eps: f64, p: f64) -> Sym2 {
    let mu2 = norm_sq(g) + eps;
    if mu2 == 0.0 {
        return Sym2::IDENTITY;
    }
    let c = (p - 2.0) / mu2;
    Sym2::new(1.0 + c * g[0] * g[0], c * g[0] * g[1], 1.0 + c * g[1] * g[1])
}

pub fn a_matrix_field(du: &VectorField, eps: f64, p: f64) -> Result<SymMatrixField> {
    if eps < 0.0 {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    let grid = du.grid();
    if eps == 0.0 {
        if let Some(k) = grid.active_nodes().find(|&k| norm_sq(du.values[k]) == 0.0) {
            return Err(invalid(format!("A is undefined at critical node {:?} when eps = 0", grid.coords(k))));
        }
    }
    let values = (0..grid.node_count())
        .map(|k| if grid.is_active(k) { a_matrix(du.values[k], eps, p) } else { Sym2::default() })
        .collect();
    SymMatrixField::new(grid.clone(), values)
}

/// `V_s(z) = |z|^{(p-2+s)/2} z`, with `V_s(0) = 0`.
pub fn v_s(z: &[f64], p: f64, s: f64) -> Vec<f64> {
    let r2: f64 = z.iter().map(|x| x * x).sum();
    if r2 == 0.0 {
        return vec![0.0; z.len()];
    }
    let f = r2.sqrt().powf(0.5 * (p - 2.0 + s));
    z.iter().map(|x| f * x).collect()
}

/// `V_s^eps(z) = (|z|^2 + eps)^{(p-2+s)/4} z`; coincides with [`v_s`] at `eps = 0`.
pub fn v_s_eps(z: &[f64], p: f64, s: f64, eps: f64) -> Vec<f64> {
    if eps == 0.0 {
        return v_s(z, p, s);
    }
    let r2: f64 = z.iter().map(|x| x * x).sum();
    let f = (r2 + eps).powf(0.25 * (p - 2.0 + s));
    z.iter().map(|x| f * x).collect()
}

/// Inverse of [`v_s`]; `|V_s(z)| = |z|^{(p+s)/2}` is invertible when `p + s > 0`.
pub fn v_s_inverse(w: &[f64], p: f64, s: f64) -> Result<Vec<f64>> {
    if !(p + s > 0.0) {
        return Err(invalid(format!("V_s is not invertible for p + s = {} <= 0", p + s)));
    }
    let r2: f64 = w.iter().map(|x| x * x).sum();
    if r2 == 0.0 {
        return Ok(vec![0.0; w.len()]);
    }
    let f = r2.sqrt().powf(2.0 / (p + s) - 1.0);
    Ok(w.iter().map(|x| f * x).collect())
}

pub fn v_s_field(du: &VectorField, p: f64, s: f64, eps: f64) -> VectorField {
    let grid = du.grid();
    let values = (0..grid.node_count())
        .map(|k| {
            let v = v_s_eps(&du.values[k], p, s, eps);
            [v[0], v[1]]
        })
        .collect();
    VectorField { grid: grid.clone(), values }
}

/// Chain-rule Jacobian of `V_s^eps(Du)` together with the nodes where it is
/// singular (`eps = 0`, `Du = 0` and a negative exponent).
#[derive(Clone, Debug)]
pub struct DvsField {
    pub jacobian: JacobianField,
    pub singular: Vec<usize>,
}

/// `J = mu^k (D^2u + k Du⊗(D^2u Du)/mu^2)`, `k = (p-2+s)/2`, so that
/// `J[i][j] = d V_i / d x_j`.
pub fn dvs_at(g: [f64; 2], h: &Sym2, p: f64, s: f64, eps: f64) -> Option<Mat2> {
    let k = 0.5 * (p - 2.0 + s);
    let mu2 = norm_sq(g) + eps;
    if mu2 == 0.0 {
        return if k > 0.0 {
            Some([[0.0; 2]; 2])
        } else if k == 0.0 {
            Some([[h.xx, h.xy], [h.xy, h.yy]])
        } else {
            None
        };
    }
    let f = mu2.powf(0.5 * k);
    let hg = h.mul(g);
    let c = k / mu2;
    Some([
        [f * (h.xx + c * g[0] * hg[0]), f * (h.xy + c * g[0] * hg[1])],
        [f * (h.xy + c * g[1] * hg[0]), f * (h.yy + c * g[1] * hg[1])],
    ])
}

pub fn d_v_s_field(du: &VectorField, d2u: &SymMatrixField, p: f64, s: f64, eps: f64) -> Result<DvsField> {
    check_same_grid(du.grid(), d2u.grid())?;
    if eps < 0.0 {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    let grid = du.grid();
    let mut singular = Vec::new();
    let values = (0..grid.node_count())
        .map(|k| {
            if !grid.is_active(k) {
                return [[0.0; 2]; 2];
            }
            match dvs_at(du.values[k], &d2u.values[k], p, s, eps) {
                Some(j) => j,
                None => {
                    singular.push(k);
                    [[0.0; 2]; 2]
                }
            }
        })
        .collect();
    Ok(DvsField {
        jacobian: JacobianField::new(grid.clone(), values)?,
        singular,
    })
}

/// Options for [`hessian_lower_bound_check`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LowerBoundOptions {
    /// Allowed negative residual, relative to `max(1, |D^2u|^2)` per node.
    pub tolerance: f64,
    /// Largest tolerated `|Δu + (p-2)Δ∞u/mu^2| / max(1, |D^2u|)` for the input
    /// to count as a solution.
    pub pde_tolerance: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub checked_nodes: usize,
    /// Smallest relative residual over regular nodes.
    pub min_residual: f64,
    pub argmin: Option<[usize; 2]>,
    /// Largest `|relative residual|` over regular nodes (the equality defect for n = 2).
    pub max_abs_residual: f64,
    /// Regular nodes with relative residual `< -tolerance`.
    pub violation_count: usize,
    pub tolerance: f64,
    /// Nodes with `|Du| < 10 sqrt(eps)`, evaluated with `mu^2` denominators.
    pub near_critical_count: usize,
    pub near_critical_min_residual: f64,
    pub max_pde_residual: f64,
    /// False when the input does not solve the regularized equation to `pde_tolerance`.
    pub verifiable: bool,
}

/// Per-node check of `|D^2u|^2 >= 2|D|Du||^2 + Phi (Δ∞^N u)^2` (n = 2) over
/// interior nodes.
pub fn hessian_lower_bound_check(du: &VectorField, d2u: &SymMatrixField, p: f64, eps: f64, opts: LowerBoundOptions) -> Result<PointwiseReport> {
    check_same_grid(du.grid(), d2u.grid())?;
    let grid = du.grid();
    let mut report = PointwiseReport {
        min_residual: f64::INFINITY,
        near_critical_min_residual: f64::INFINITY,
        tolerance: opts.tolerance,
        ..Default::default()
    };
    let critical = 10.0 * eps.sqrt();
    for k in grid.interior_nodes() {
        let g = du.values[k];
        let h = d2u.values[k];
        let hm = h.to_matrix();
        let gv = Vector::new(g.to_vec());
        let scale = h.norm_sq().max(1.0);
        let pde = pointwise::nondivergence_residual(&hm, &gv, p, eps)?.abs() / h.norm_sq().sqrt().max(1.0);
        report.max_pde_residual = report.max_pde_residual.max(pde);
        report.checked_nodes += 1;
        let gn = norm_sq(g).sqrt();
        if gn < critical {
            let terms = pointwise::lower_bound_terms(&hm, &gv, p, eps, Some(norm_sq(g) + eps))?;
            report.near_critical_count += 1;
            report.near_critical_min_residual = report.near_critical_min_residual.min(terms.residual() / scale);
            continue;
        }
        let rel = pointwise::lower_bound_terms(&hm, &gv, p, eps, None)?.residual() / scale;
        if rel < report.min_residual {
            report.min_residual = rel;
            report.argmin = Some(grid.coords(k).into());
        }
        report.max_abs_residual = report.max_abs_residual.max(rel.abs());
        if rel < -opts.tolerance {
            report.violation_count += 1;
        }
    }
    report.verifiable = report.max_pde_residual <= opts.pde_tolerance;
    Ok(report)
}

/// `Δu + (p-2) Δ∞u / (|Du|^2 + eps)` at interior nodes, zero elsewhere.
pub fn nondivergence_residual(u: &ScalarField, p: f64, eps: f64) -> Result<ScalarField> {
    if eps < 0.0 {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    let du = gradient(u);
    let d2u = hessian(u);
    let grid = u.grid();
    let values = (0..grid.node_count())
        .map(|k| {
            if !grid.is_interior(k) {
                return 0.0;
            }
            let g = du.values[k];
            let h = d2u.values[k];
            let mu2 = norm_sq(g) + eps;
            let second = if mu2 > 0.0 { (p - 2.0) * h.quad(g) / mu2 } else { 0.0 };
            h.trace() + second
        })
        .collect();
    ScalarField::new(grid.clone(), values)
}

/// Flux-divergence form of `div(mu^{p-2} A D(u_{x_k}))` with face-averaged
/// coefficients, at interior nodes.
pub fn linearized_residual(u: &ScalarField, p: f64, eps: f64, axis: usize) -> Result<ScalarField> {
    if axis > 1 {
        return Err(invalid(format!("axis must be 0 or 1, got {axis}")));
    }
    if eps < 0.0 {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    let grid = u.grid();
    let du = gradient(u);
    let comp: Vec<f64> = du.values.iter().map(|g| g[axis]).collect();
    let dcomp: Vec<[f64; 2]> = (0..grid.node_count())
        .map(|k| if grid.is_active(k) { [partial(grid, &comp, k, 0), partial(grid, &comp, k, 1)] } else { [0.0; 2] })
        .collect();
    let coeff: Vec<Sym2> = (0..grid.node_count())
        .map(|k| {
            let g = du.values[k];
            let mu2 = norm_sq(g) + eps;
            if !grid.is_active(k) || mu2 == 0.0 {
                return Sym2::default();
            }
            let a = a_matrix(g, eps, p);
            let w = mu2.powf(0.5 * (p - 2.0));
            Sym2::new(w * a.xx, w * a.xy, w * a.yy)
        })
        .collect();
    let h = grid.h();
    // flux through the face between k and its +axis neighbour nb
    let flux = |k: usize, nb: usize, along: usize| -> f64 {
        let kf = Sym2::new(
            0.5 * (coeff[k].xx + coeff[nb].xx),
            0.5 * (coeff[k].xy + coeff[nb].xy),
            0.5 * (coeff[k].yy + coeff[nb].yy),
        );
        let normal = (comp[nb] - comp[k]) / h;
        let across = 1 - along;
        let tangential = 0.5 * (dcomp[k][across] + dcomp[nb][across]);
        let mut grad = [0.0; 2];
        grad[along] = normal;
        grad[across] = tangential;
        kf.mul(grad)[along]
    };
    let values = (0..grid.node_count())
        .map(|k| {
            if !grid.is_interior(k) {
                return 0.0;
            }
            let e = grid.neighbor(k, 1, 0).expect("interior");
            let w = grid.neighbor(k, -1, 0).expect("interior");
            let n = grid.neighbor(k, 0, 1).expect("interior");
            let s = grid.neighbor(k, 0, -1).expect("interior");
            (flux(k, e, 0) - flux(w, k, 0) + flux(k, n, 1) - flux(s, k, 1)) / h
        })
        .collect();
    ScalarField::new(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(cells: usize) -> Arc<Grid> {
        Arc::new(Grid::unit_square(cells).unwrap())
    }

    #[test]
    fn gradient_exact_on_linear_and_quadratic() {
        let g = square(10);
        let u = ScalarField::from_fn(g.clone(), |x| 2.0 * x[0] - 3.0 * x[1] + 0.5).unwrap();
        let du = gradient(&u);
        for k in g.active_nodes() {
            assert!((du.at(k)[0] - 2.0).abs() < 1e-12 && (du.at(k)[1] + 3.0).abs() < 1e-12);
        }
        let u = ScalarField::from_fn(g.clone(), |x| x[0] * x[0]).unwrap();
        let du = gradient(&u);
        for k in g.active_nodes() {
            assert!((du.at(k)[0] - 2.0 * g.point(k)[0]).abs() < 1e-12, "node {:?}", g.coords(k));
        }
    }

    #[test]
    fn hessian_exact_on_quadratic_forms() {
        let g = square(8);
        let q = Sym2::new(1.5, -0.7, 0.25);
        let u = ScalarField::from_fn(g.clone(), |x| 0.5 * q.quad(x) + x[0] - 4.0).unwrap();
        let d2u = hessian(&u);
        for k in g.active_nodes() {
            let h = d2u.at(k);
            assert!((h.xx - q.xx).abs() < 1e-9 && (h.xy - q.xy).abs() < 1e-9 && (h.yy - q.yy).abs() < 1e-9);
        }
        let lin = ScalarField::from_fn(g.clone(), |x| x[0] + x[1]).unwrap();
        assert!(hessian(&lin).values().iter().all(|h| h.norm_sq() < 1e-18));
    }

    #[test]
    fn infinity_laplacians_of_radial_quadratic() {
        let g = square(10);
        let u = ScalarField::from_fn(g.clone(), norm_sq).unwrap();
        let du = gradient(&u);
        let d2u = hessian(&u);
        let inf = infinity_laplacian(&du, &d2u).unwrap();
        let norm = normalized_infinity_laplacian(&du, &d2u).unwrap();
        for k in g.interior_nodes() {
            let x = g.point(k);
            assert!((inf.at(k) - 8.0 * norm_sq(x)).abs() < 1e-9);
            assert!((norm.at(k) - 2.0).abs() < 1e-9);
        }
        // Du = 0 at the origin node
        assert_eq!(norm.at(0), 0.0);
        let flat = ScalarField::from_fn(g.clone(), |x| 3.0 * x[1]).unwrap();
        let inf = infinity_laplacian(&gradient(&flat), &hessian(&flat)).unwrap();
        assert!(inf.interior_sup_norm() < 1e-12);
    }

    #[test]
    fn mu_examples() {
        let g = square(2);
        let du = VectorField::from_fn(g.clone(), |_| [0.0, 0.0]).unwrap();
        assert_eq!(mu_field(&du, 1.0).unwrap().at(0), 1.0);
        let du = VectorField::from_fn(g.clone(), |_| [3.0, 4.0]).unwrap();
        assert_eq!(mu_field(&du, 0.0).unwrap().at(4), 5.0);
        let du = VectorField::from_fn(g.clone(), |_| [1.0, 0.0]).unwrap();
        assert_eq!(mu_field(&du, 1.0).unwrap().at(4), 2f64.sqrt());
        assert!(mu_field(&du, -1.0).is_err());
    }

    #[test]
    fn a_matrix_examples() {
        assert_eq!(a_matrix([0.0, 0.0], 1.0, 5.0), Sym2::IDENTITY);
        assert_eq!(a_matrix([0.3, -2.0], 0.1, 2.0), Sym2::IDENTITY);
        let a = a_matrix([1.0, 0.0], 1e-14, 3.0);
        assert!((a.xx - 2.0).abs() < 1e-12 && a.xy == 0.0 && a.yy == 1.0);

        let g = square(2);
        let du = VectorField::from_fn(g, |x| [x[0] - 0.5, 0.0]).unwrap();
        assert!(a_matrix_field(&du, 0.0, 3.0).is_err());
        assert!(a_matrix_field(&du, 1e-3, 3.0).is_ok());
    }

    #[test]
    fn v_s_examples() {
        assert_eq!(v_s(&[0.3, -1.7], 2.0, 0.0), vec![0.3, -1.7]);
        assert_eq!(v_s(&[0.0, 0.0], 1.5, -1.0), vec![0.0, 0.0]);
        assert_eq!(v_s_eps(&[0.0, 0.0], 3.0, 1.0, 0.5), vec![0.0, 0.0]);
        let v = v_s(&[2.0, 0.0], 3.0, 0.0);
        assert!((v[0] - 2.0 * 2f64.sqrt()).abs() < 1e-15 && v[1] == 0.0);
        assert_eq!(v_s_eps(&[0.4, 0.1], 3.0, 0.5, 0.0), v_s(&[0.4, 0.1], 3.0, 0.5));
        assert!(v_s_inverse(&[1.0, 0.0], 1.5, -1.5).is_err());
    }

    #[test]
    fn dvs_reduces_to_hessian_for_laplace_case() {
        let h = Sym2::new(0.3, 1.1, -0.4);
        assert_eq!(dvs_at([0.7, -0.2], &h, 2.0, 0.0, 0.0), Some([[0.3, 1.1], [1.1, -0.4]]));
        assert_eq!(dvs_at([0.0, 0.0], &h, 1.5, -0.2, 0.0), None);
        assert_eq!(dvs_at([0.0, 0.0], &h, 3.0, 0.0, 0.0), Some([[0.0; 2]; 2]));
    }

    #[test]
    fn laplace_case_residuals() {
        let g = square(16);
        let u = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] - x[1] * x[1] + 0.1 * x[0]).unwrap();
        let nd = nondivergence_residual(&u, 2.0, 1e-3).unwrap();
        assert!(nd.interior_sup_norm() < 1e-9);
        let lin = linearized_residual(&u, 2.0, 1e-3, 0).unwrap();
        assert!(lin.interior_sup_norm() < 1e-8);
        let flat = ScalarField::from_fn(g, |x| 0.2 - x[0] + 2.0 * x[1]).unwrap();
        for p in [1.5, 3.0, 4.0] {
            assert!(nondivergence_residual(&flat, p, 1e-3).unwrap().interior_sup_norm() < 1e-9);
            assert!(linearized_residual(&flat, p, 1e-3, 1).unwrap().interior_sup_norm() < 1e-8);
        }
    }

    #[test]
    fn field_rejects_nan_and_bad_length() {
        let g = square(2);
        assert!(ScalarField::new(g.clone(), vec![0.0; 3]).is_err());
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(ScalarField::new(g, v).is_err());
    }

    #[test]
    fn quarter_turn_rotates_geometry() {
        let g = square(4);
        // (x, y) relative to the centre (0.5, 0.5)
        let u = ScalarField::from_fn(g.clone(), |x| x[0] - 0.5).unwrap();
        let r = u.rotated_quarter_turn().unwrap();
        // rotated field is u(R^{-1} x) = (y - 0.5)
        for k in g.active_nodes() {
            assert!((r.at(k) - (g.point(k)[1] - 0.5)).abs() < 1e-12);
        }
        let du = gradient(&u).rotated_quarter_turn().unwrap();
        assert!((du.at(12)[0]).abs() < 1e-12 && (du.at(12)[1] - 1.0).abs() < 1e-12);
    }
}
