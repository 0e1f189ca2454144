//! Pointwise identities on gradient/Hessian jets in any dimension.
//!
//! These are the `n`-dimensional counterparts of the grid checks in
//! [`crate::field`]; they take a Hessian `H` and gradient `g` at one point.

use crate::error::{invalid, Result};
use crate::tensor::{SymMatrix, Vector};

/// `Phi(n, p, eps, mu)`: coefficient of `(Δ∞^N u)^2` in the Hessian lower bound.
///
/// `(p-1)^2/(n-1) - 1 - (eps/mu^2) 2(p-1)(p-2)/(n-1) + (eps/mu^2)^2 (p-2)^2/(n-1)`
pub fn lower_bound_phi(n: usize, p: f64, eps: f64, mu: f64) -> f64 {
    let nm1 = (n - 1) as f64;
    let y = if eps == 0.0 { 0.0 } else { eps / (mu * mu) };
    (p - 1.0).powi(2) / nm1 - 1.0 - y * 2.0 * (p - 1.0) * (p - 2.0) / nm1 + y * y * (p - 2.0).powi(2) / nm1
}

/// `Δu + (p-2) Δ∞u / (|Du|^2 + eps)` at one point; `0` for the second term
/// when `|Du|^2 + eps == 0`.
pub fn nondivergence_residual(hess: &SymMatrix, grad: &Vector, p: f64, eps: f64) -> Result<f64> {
    let hg = hess.mul_vec(grad)?;
    let mu2 = grad.norm_sq() + eps;
    let inf_lap = grad.dot(&hg);
    let second = if mu2 > 0.0 { (p - 2.0) * inf_lap / mu2 } else { 0.0 };
    Ok(hess.trace() + second)
}

/// Replaces `H` by `H + tI` with `t` chosen so the jet satisfies the
/// non-divergence form of the regularized equation exactly.
pub fn project_onto_equation(hess: &SymMatrix, grad: &Vector, p: f64, eps: f64) -> Result<SymMatrix> {
    let mu2 = grad.norm_sq() + eps;
    if mu2 <= 0.0 {
        return Err(invalid("projection needs |Du|^2 + eps > 0"));
    }
    let n = hess.dim() as f64;
    let r = nondivergence_residual(hess, grad, p, eps)?;
    let t = -r / (n + (p - 2.0) * grad.norm_sq() / mu2);
    Ok(hess.shifted(t))
}

/// Terms of the Hessian lower bound at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerBoundTerms {
    /// `|D^2u|^2`
    pub hess_sq: f64,
    /// `|D|Du||^2`
    pub grad_of_norm_sq: f64,
    /// `Δ∞^N u`
    pub normalized_inf_lap: f64,
    pub phi: f64,
}

impl LowerBoundTerms {
    /// `|D^2u|^2 - 2|D|Du||^2 - Phi (Δ∞^N u)^2`
    pub fn residual(&self) -> f64 {
        self.hess_sq - 2.0 * self.grad_of_norm_sq - self.phi * self.normalized_inf_lap.powi(2)
    }
}

/// `|D|Du||^2` is taken as `|D^2u Du|^2 / |Du|^2`; `denominator` overrides
/// `|Du|^2` (the near-critical policy passes `mu^2`). Both vanish when the
/// denominator does.
pub fn lower_bound_terms(hess: &SymMatrix, grad: &Vector, p: f64, eps: f64, denominator: Option<f64>) -> Result<LowerBoundTerms> {
    let hg = hess.mul_vec(grad)?;
    let g2 = grad.norm_sq();
    let d = denominator.unwrap_or(g2);
    let mu = (g2 + eps).sqrt();
    let (grad_of_norm_sq, normalized_inf_lap) = if d > 0.0 {
        (hg.norm_sq() / d, grad.dot(&hg) / d)
    } else {
        (0.0, 0.0)
    };
    let phi = if mu > 0.0 { lower_bound_phi(hess.dim(), p, eps, mu) } else { lower_bound_phi(hess.dim(), p, 0.0, 1.0) };
    Ok(LowerBoundTerms {
        hess_sq: hess.norm_sq(),
        grad_of_norm_sq,
        normalized_inf_lap,
        phi,
    })
}

/// Squared Hilbert–Schmidt norm of `D(V_s^eps(Du))` written out as
/// `mu^{p-2+s} (|H|^2 + (p-2+s)|Hg|^2/mu^2 + (p-2+s)^2/4 |g|^2|Hg|^2/mu^4)`.
pub fn dvs_expanded_norm_sq(hess: &SymMatrix, grad: &Vector, p: f64, s: f64, eps: f64) -> Result<f64> {
    let hg2 = hess.mul_vec(grad)?.norm_sq();
    let g2 = grad.norm_sq();
    let mu2 = g2 + eps;
    if mu2 <= 0.0 {
        return Err(invalid("D(V_s) expansion is singular at Du = 0 with eps = 0"));
    }
    let k = p - 2.0 + s;
    Ok(mu2.powf(k / 2.0) * (hess.norm_sq() + k * hg2 / mu2 + k * k / 4.0 * g2 * hg2 / (mu2 * mu2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{gaussian_sym_matrix, gaussian_vector, stream_rng};

    #[test]
    fn phi_for_laplace_case() {
        // p = 2: Phi = 1/(n-1) - 1 regardless of eps
        assert_eq!(lower_bound_phi(2, 2.0, 0.0, 1.0), 0.0);
        assert!((lower_bound_phi(3, 2.0, 0.3, 0.9) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn projected_jets_satisfy_the_equation() {
        let mut rng = stream_rng(11, 0);
        for n in 2..6 {
            let h = gaussian_sym_matrix(&mut rng, n);
            let g = gaussian_vector(&mut rng, n);
            let hp = project_onto_equation(&h, &g, 3.5, 0.1).unwrap();
            assert!(nondivergence_residual(&hp, &g, 3.5, 0.1).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn lower_bound_on_equation_jets() {
        let mut rng = stream_rng(12, 0);
        for trial in 0..2000 {
            let n = 2 + trial % 5;
            let p = 1.1 + (trial % 17) as f64 * 0.5;
            let eps = [0.0, 1e-3, 0.5, 4.0][trial % 4];
            let g = gaussian_vector(&mut rng, n);
            let h = project_onto_equation(&gaussian_sym_matrix(&mut rng, n), &g, p, eps).unwrap();
            let t = lower_bound_terms(&h, &g, p, eps, None).unwrap();
            let scale = t.hess_sq.max(1.0);
            if n == 2 {
                assert!(t.residual().abs() < 1e-10 * scale, "n=2 equality fails: {}", t.residual());
            } else {
                assert!(t.residual() > -1e-10 * scale, "n={n} p={p}: {}", t.residual());
            }
        }
    }

    #[test]
    fn expansion_is_singular_without_regularization() {
        let h = SymMatrix::identity(2).unwrap();
        assert!(dvs_expanded_norm_sq(&h, &Vector::zeros(2), 3.0, 0.0, 0.0).is_err());
        assert_eq!(dvs_expanded_norm_sq(&h, &Vector::zeros(2), 2.0, 0.0, 1.0).unwrap(), 2.0);
    }
}
