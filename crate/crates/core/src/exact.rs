//! Closed-form p-harmonic functions used as oracles.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{SymMatrix, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExactSolution {
    /// `<a, x> + b`, p-harmonic for every `p`.
    Linear { a: Vec<f64>, b: f64 },
    /// `|x - center|^{(p-n)/(p-1)}`, `p != n`.
    RadialPower { center: Vec<f64>, p: f64 },
    /// `log |x - center|`, the `p = n` fundamental solution.
    RadialLog { center: Vec<f64>, p: f64 },
    /// `Re (x + iy)^degree`, harmonic (p = 2) in the plane.
    HarmonicPoly { degree: u32 },
}

/// Value, gradient and Hessian at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub u: f64,
    pub du: Vector,
    pub d2u: SymMatrix,
}

impl ExactSolution {
    /// The radial fundamental solution for `(n, p)`: a power when `p != n`
    /// and the logarithm when `p == n`.
    pub fn radial(center: Vec<f64>, p: f64) -> Self {
        if p == center.len() as f64 {
            Self::RadialLog { center, p }
        } else {
            Self::RadialPower { center, p }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Linear { a, .. } if a.is_empty() => Err(invalid("linear solution needs a non-empty slope")),
            Self::RadialPower { center, p } => {
                if center.len() < 2 {
                    return Err(invalid("radial solution needs n >= 2"));
                }
                if !(*p > 1.0) {
                    return Err(invalid(format!("radial solution needs p > 1, got {p}")));
                }
                if *p == center.len() as f64 {
                    return Err(invalid("radial power requires p != n (use radial_log)"));
                }
                Ok(())
            }
            Self::RadialLog { center, p } => {
                if *p != center.len() as f64 {
                    return Err(invalid(format!("radial log requires p == n, got p = {p}, n = {}", center.len())));
                }
                Ok(())
            }
            Self::HarmonicPoly { degree } if *degree == 0 => Err(invalid("harmonic polynomial needs degree >= 1")),
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Linear { a, .. } => a.len(),
            Self::RadialPower { center, .. } | Self::RadialLog { center, .. } => center.len(),
            Self::HarmonicPoly { .. } => 2,
        }
    }

    /// Whether the function solves the (unregularized) p-Laplace equation.
    pub fn is_p_harmonic_for(&self, p: f64) -> bool {
        match self {
            Self::Linear { .. } => true,
            Self::RadialPower { p: q, .. } | Self::RadialLog { p: q, .. } => *q == p,
            Self::HarmonicPoly { degree } => p == 2.0 || *degree <= 1,
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<Jet> {
        exact_eval(self, point)
    }

    pub fn value(&self, point: &[f64]) -> Result<f64> {
        Ok(exact_eval(self, point)?.u)
    }
}

fn radial_offset(center: &[f64], point: &[f64]) -> Result<(Vec<f64>, f64)> {
    if center.len() != point.len() {
        return Err(crate::error::Error::DimensionMismatch {
            expected: center.len(),
            got: point.len(),
        });
    }
    let x: Vec<f64> = point.iter().zip(center).map(|(a, c)| a - c).collect();
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(invalid("radial solution evaluated at its centre"));
    }
    Ok((x, r))
}

/// `f(r) I + g(r) x x^T`
fn radial_hessian(x: &[f64], diag: f64, outer: f64) -> SymMatrix {
    let n = x.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = outer * (x[i] * x[j]) + if i == j { diag } else { 0.0 };
        }
    }
    SymMatrix::from_row_major(n, m).expect("symmetric by construction")
}

pub fn exact_eval(sol: &ExactSolution, point: &[f64]) -> Result<Jet> {
    sol.validate()?;
    match sol {
        ExactSolution::Linear { a, b } => {
            if a.len() != point.len() {
                return Err(crate::error::Error::DimensionMismatch {
                    expected: a.len(),
                    got: point.len(),
                });
            }
            let n = a.len().max(2);
            Ok(Jet {
                u: a.iter().zip(point).map(|(x, y)| x * y).sum::<f64>() + b,
                du: Vector::new(a.clone()),
                d2u: SymMatrix::zeros(n)?,
            })
        }
        ExactSolution::RadialPower { center, p } => {
            let (x, r) = radial_offset(center, point)?;
            let n = center.len() as f64;
            let beta = (p - n) / (p - 1.0);
            // Du = beta r^{beta-2} x ; D2u = beta r^{beta-2} (I + (beta-2) x x^T / r^2)
            let c = beta * r.powf(beta - 2.0);
            Ok(Jet {
                u: r.powf(beta),
                du: Vector::new(x.iter().map(|v| c * v).collect()),
                d2u: radial_hessian(&x, c, c * (beta - 2.0) / (r * r)),
            })
        }
        ExactSolution::RadialLog { center, .. } => {
            let (x, r) = radial_offset(center, point)?;
            let r2 = r * r;
            Ok(Jet {
                u: r.ln(),
                du: Vector::new(x.iter().map(|v| v / r2).collect()),
                d2u: radial_hessian(&x, 1.0 / r2, -2.0 / (r2 * r2)),
            })
        }
        ExactSolution::HarmonicPoly { degree } => {
            if point.len() != 2 {
                return Err(crate::error::Error::DimensionMismatch { expected: 2, got: point.len() });
            }
            let d = *degree as i32;
            let z = (point[0], point[1]);
            let pow = |k: i32| -> (f64, f64) {
                if k < 0 {
                    return (0.0, 0.0);
                }
                let mut acc = (1.0, 0.0);
                for _ in 0..k {
                    acc = (acc.0 * z.0 - acc.1 * z.1, acc.0 * z.1 + acc.1 * z.0);
                }
                acc
            };
            let f = pow(d);
            let df = pow(d - 1);
            let d2f = pow(d - 2);
            let (c1, c2) = (d as f64, (d * (d - 1)) as f64);
            Ok(Jet {
                u: f.0,
                du: Vector::new(vec![c1 * df.0, -c1 * df.1]),
                d2u: SymMatrix::from_row_major(2, vec![c2 * d2f.0, -c2 * d2f.1, -c2 * d2f.1, -c2 * d2f.0])?,
            })
        }
    }
}
