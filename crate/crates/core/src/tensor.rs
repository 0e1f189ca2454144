//! Algebraic inequalities on symmetric matrices and vectors.
//!
//! Every check is expressed as a *residual*: the right-hand side minus the
//! left-hand side of an inequality that is supposed to hold, so a correct
//! inequality shows up as a residual `>= -tol`. Tolerances are relative to
//! the natural scale of the dominant term (see [`QuadInvariants::scale`]).

use crate::error::{invalid, Error, Result};

/// Dense symmetric `n x n` matrix, `n >= 2`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries. Symmetry is checked bit-exactly.
    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(invalid(format!("symmetric matrix needs dim >= 2, got {dim}")));
        }
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if entries[i * dim + j].to_bits() != entries[j * dim + i].to_bits() {
                    return Err(Error::NotSymmetric(i, j));
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::from_row_major(dim, entries)
    }

    /// `(M + M^T) / 2` of an arbitrary row-major square matrix.
    pub fn symmetrize(dim: usize, m: &[f64]) -> Result<Self> {
        if m.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: m.len(),
            });
        }
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = 0.5 * (m[i * dim + j] + m[j * dim + i]);
                entries[i * dim + j] = v;
                entries[j * dim + i] = v;
            }
        }
        Self::from_row_major(dim, entries)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::from_row_major(dim, vec![0.0; dim * dim])
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, d) in diag.iter().enumerate() {
            entries[i * dim + i] = *d;
        }
        Self::from_row_major(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Squared Hilbert–Schmidt (Frobenius) norm.
    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum()
    }

    pub fn mul_vec(&self, v: &Vector) -> Result<Vector> {
        check_dims(self.dim, v.dim())?;
        let n = self.dim;
        let out = (0..n)
            .map(|i| (0..n).map(|j| self.entries[i * n + j] * v.0[j]).sum())
            .collect();
        Ok(Vector(out))
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|x| t * x).collect(),
        }
    }

    /// Adds `t` to every diagonal entry.
    pub fn shifted(&self, t: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.entries[i * self.dim + i] += t;
        }
        out
    }

    /// `O^T A O` for an `n x n` matrix `O` given column-major (column `k` is
    /// `frame[k*n .. (k+1)*n]`). The upper triangle is mirrored so the result
    /// is symmetric bit-exactly.
    pub fn congruence(&self, frame: &[f64]) -> Result<Self> {
        let n = self.dim;
        if frame.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: frame.len(),
            });
        }
        let col = |k: usize| &frame[k * n..(k + 1) * n];
        let mut a_cols = Vec::with_capacity(n);
        for k in 0..n {
            let c = col(k);
            let ac: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| self.entries[i * n + j] * c[j]).sum())
                .collect();
            a_cols.push(ac);
        }
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = col(i).iter().zip(&a_cols[j]).map(|(x, y)| x * y).sum();
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        Self::from_row_major(n, entries)
    }
}

/// Plain `n`-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn new(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn unit(dim: usize, k: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self(self.0.iter().map(|x| t * x).collect())
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `O^T v` with `O` column-major as in [`SymMatrix::congruence`].
    pub fn rotated_by_transpose(&self, frame: &[f64]) -> Result<Self> {
        let n = self.dim();
        if frame.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: frame.len(),
            });
        }
        Ok(Self(
            (0..n)
                .map(|k| frame[k * n..(k + 1) * n].iter().zip(&self.0).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// The five scalars from which every inequality in this module is built.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadInvariants {
    pub dim: usize,
    /// `|e|^2`
    pub e2: f64,
    /// `|A|^2` (Hilbert–Schmidt)
    pub norm_a2: f64,
    /// `|Ae|^2`
    pub ae2: f64,
    /// `tr(A)`
    pub tr_a: f64,
    /// `<e, Ae>`
    pub e_ae: f64,
}

impl QuadInvariants {
    /// `max(1, |e|^4 |A|^2)`, the dominant term of the matrix inequality.
    pub fn scale(&self) -> f64 {
        (self.e2 * self.e2 * self.norm_a2).max(1.0)
    }

    /// `max(1, |e|^2 (|A|^2 + tr(A)^2))`, the scale of the two-sided bound.
    pub fn two_sided_scale(&self) -> f64 {
        (self.e2 * (self.norm_a2 + self.tr_a * self.tr_a)).max(1.0)
    }
}

pub fn quad_invariants(a: &SymMatrix, e: &Vector) -> Result<QuadInvariants> {
    check_dims(a.dim(), e.dim())?;
    let ae = a.mul_vec(e)?;
    Ok(QuadInvariants {
        dim: a.dim(),
        e2: e.norm_sq(),
        norm_a2: a.norm_sq(),
        ae2: ae.norm_sq(),
        tr_a: a.trace(),
        e_ae: e.dot(&ae),
    })
}

/// `|e|^4|A|^2 - 2|e|^2|Ae|^2 - (|e|^2 tr A - <e,Ae>)^2/(n-1) + <e,Ae>^2`.
///
/// Nonnegative for every symmetric `A`; identically zero when `n = 2`.
pub fn matrix_inequality_residual(a: &SymMatrix, e: &Vector) -> Result<f64> {
    Ok(matrix_inequality_residual_from(&quad_invariants(a, e)?))
}

pub fn matrix_inequality_residual_from(q: &QuadInvariants) -> f64 {
    if q.e2 == 0.0 {
        return 0.0;
    }
    let nm1 = (q.dim - 1) as f64;
    let t = q.e2 * q.tr_a - q.e_ae;
    q.e2 * q.e2 * q.norm_a2 - 2.0 * q.e2 * q.ae2 - t * t / nm1 + q.e_ae * q.e_ae
}

/// Residual of the two-sided bound
/// `| |Ae|^2 - tr(A)<e,Ae> - (|A|^2 - tr(A)^2)|e|^2/2 | <= (n-2)/2 (|A|^2|e|^2 - |Ae|^2)`,
/// i.e. right-hand side minus the absolute value on the left.
pub fn two_sided_residual(a: &SymMatrix, e: &Vector) -> Result<f64> {
    Ok(two_sided_residual_from(&quad_invariants(a, e)?))
}

pub fn two_sided_residual_from(q: &QuadInvariants) -> f64 {
    let n = q.dim as f64;
    let rhs = 0.5 * (n - 2.0) * (q.norm_a2 * q.e2 - q.ae2);
    let lhs = q.ae2 - q.tr_a * q.e_ae - 0.5 * (q.norm_a2 - q.tr_a * q.tr_a) * q.e2;
    rhs - lhs.abs()
}

/// The two one-sided lower bounds for `|e|^2|A|^2` that together are
/// equivalent to the two-sided bound. Returns `(trivial_margin, sharp_margin)`:
///
/// * `(n-3)|e|^2|A|^2 - (n-4)|Ae|^2 + |e|^2 tr(A)^2 - 2 tr(A)<e,Ae>`
/// * `(n-1)|e|^2|A|^2 - n|Ae|^2 - |e|^2 tr(A)^2 + 2 tr(A)<e,Ae>`
///
/// `two_sided_residual == min(trivial_margin, sharp_margin) / 2`.
pub fn two_sided_margins(q: &QuadInvariants) -> (f64, f64) {
    let n = q.dim as f64;
    let ea = q.e2 * q.norm_a2;
    let et = q.e2 * q.tr_a * q.tr_a;
    let cross = 2.0 * q.tr_a * q.e_ae;
    let trivial = (n - 3.0) * ea - (n - 4.0) * q.ae2 + et - cross;
    let sharp = (n - 1.0) * ea - n * q.ae2 - et + cross;
    (trivial, sharp)
}

/// Eigenvalue form: `lambda` plays the role of the spectrum of `A`, and the
/// unit vector `a` the coordinates of `e` in its eigenbasis.
pub fn vector_inequality_residual(lambda: &Vector, a: &Vector) -> Result<f64> {
    check_dims(lambda.dim(), a.dim())?;
    let a2 = a.norm_sq();
    if (a2 - 1.0).abs() > 2e-12 {
        return Err(invalid(format!("vector a must be a unit vector, |a|^2 = {a2}")));
    }
    let n = lambda.dim() as f64;
    let la2: f64 = lambda.0.iter().zip(&a.0).map(|(l, x)| (l * x) * (l * x)).sum();
    let sum_l = lambda.sum();
    let sum_la2: f64 = lambda.0.iter().zip(&a.0).map(|(l, x)| l * x * x).sum();
    let l2 = lambda.norm_sq();
    let lhs = la2 - sum_l * sum_la2 - 0.5 * (l2 - sum_l * sum_l);
    let rhs = 0.5 * (n - 2.0) * (l2 - la2);
    Ok(rhs - lhs.abs())
}

/// Two lower bounds for `|A|^2 |e|^2 / |e|^2`-normalised Hessian energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpnessGap {
    /// Lower bound for `|e|^2|A|^2` implied by the matrix inequality.
    pub sharp: f64,
    /// Lower bound implied by the two-sided inequality.
    pub two_sided: f64,
}

impl SharpnessGap {
    pub fn improvement(&self) -> f64 {
        self.sharp - self.two_sided
    }
}

pub fn sharpness_gap(a: &SymMatrix, e: &Vector) -> Result<SharpnessGap> {
    sharpness_gap_from(&quad_invariants(a, e)?)
}

pub fn sharpness_gap_from(q: &QuadInvariants) -> Result<SharpnessGap> {
    if q.e2 == 0.0 {
        return Err(invalid("sharpness gap is undefined for e = 0"));
    }
    let nm1 = (q.dim - 1) as f64;
    let n = q.dim as f64;
    let t = q.e2 * q.tr_a - q.e_ae;
    let sharp = (2.0 * q.e2 * q.ae2 + t * t / nm1 - q.e_ae * q.e_ae) / q.e2;
    let two_sided = n / nm1 * q.ae2 + q.e2 * q.tr_a * q.tr_a / nm1 - 2.0 / nm1 * q.tr_a * q.e_ae;
    Ok(SharpnessGap { sharp, two_sided })
}

/// Orthonormal frame whose last column is `e / |e|`, built by Gram–Schmidt
/// over the standard basis with the basis vector most parallel to `e`
/// skipped. Column-major.
pub fn orthonormal_frame(e: &Vector) -> Result<Vec<f64>> {
    let n = e.dim();
    let norm = e.norm();
    if norm == 0.0 {
        return Err(invalid("cannot build a frame around e = 0"));
    }
    let en: Vec<f64> = e.0.iter().map(|x| x / norm).collect();
    let skip = (0..n)
        .max_by(|&i, &j| en[i].abs().total_cmp(&en[j].abs()).then(j.cmp(&i)))
        .unwrap_or(0);

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut basis: Vec<Vec<f64>> = vec![en.clone()];
    for k in (0..n).filter(|&k| k != skip) {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= vn);
        basis.push(v.clone());
        cols.push(v);
    }
    cols.push(en);
    Ok(cols.concat())
}

/// Rotates `A` into the frame adapted to `e` and checks the block
/// decomposition `|B|^2 = |B_{n-1}|^2 + 2 sum_{i<n} B_in^2 + B_nn^2` along with
/// `|B| = |A|` and `tr B = tr A`. Returns the largest discrepancy relative to
/// `max(1, |A|^2)`.
pub fn frame_decomposition_check(a: &SymMatrix, e: &Vector) -> Result<f64> {
    check_dims(a.dim(), e.dim())?;
    let frame = orthonormal_frame(e)?;
    let b = a.congruence(&frame)?;
    let n = a.dim();
    let last = n - 1;
    let block: f64 = (0..last)
        .flat_map(|i| (0..last).map(move |j| (i, j)))
        .map(|(i, j)| b.get(i, j).powi(2))
        .sum();
    let middle: f64 = 2.0 * (0..last).map(|i| b.get(i, last).powi(2)).sum::<f64>();
    let corner = b.get(last, last).powi(2);
    let scale = a.norm_sq().max(1.0);
    let decomposition = (b.norm_sq() - (block + middle + corner)).abs();
    let norm = (b.norm_sq() - a.norm_sq()).abs();
    let trace = (b.trace() - a.trace()).abs() * a.norm_sq().sqrt().max(1.0);
    Ok(decomposition.max(norm).max(trace) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: &[f64]) -> SymMatrix {
        SymMatrix::diagonal(d).unwrap()
    }

    #[test]
    fn invariants_identity() {
        let q = quad_invariants(&SymMatrix::identity(3).unwrap(), &Vector::unit(3, 0)).unwrap();
        assert_eq!((q.e2, q.norm_a2, q.ae2, q.tr_a, q.e_ae), (1.0, 3.0, 1.0, 3.0, 1.0));
    }

    #[test]
    fn invariants_zero_matrix() {
        let e = Vector::new(vec![1.0, -2.0, 0.5]);
        let q = quad_invariants(&SymMatrix::zeros(3).unwrap(), &e).unwrap();
        assert_eq!(q.e2, 5.25);
        assert_eq!((q.norm_a2, q.ae2, q.tr_a, q.e_ae), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn invariants_indefinite() {
        let q = quad_invariants(&diag(&[1.0, -1.0]), &Vector::unit(2, 0)).unwrap();
        assert_eq!((q.e2, q.norm_a2, q.ae2, q.tr_a, q.e_ae), (1.0, 2.0, 1.0, 0.0, 1.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = SymMatrix::identity(3).unwrap();
        assert!(matches!(
            quad_invariants(&a, &Vector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matrix_inequality_residual(&a, &Vector::zeros(4)).is_err());
        assert!(two_sided_residual(&a, &Vector::zeros(4)).is_err());
    }

    #[test]
    fn construction_rejects_asymmetry_and_small_dims() {
        assert!(matches!(
            SymMatrix::from_rows(&[&[1.0, 2.0], &[2.0000001, 1.0]]),
            Err(Error::NotSymmetric(0, 1))
        ));
        assert!(SymMatrix::from_rows(&[&[1.0]]).is_err());
        assert!(SymMatrix::symmetrize(2, &[1.0, 2.0, 4.0, 3.0]).unwrap().get(0, 1) == 3.0);
    }

    #[test]
    fn matrix_inequality_hand_examples() {
        let r = matrix_inequality_residual(&SymMatrix::identity(3).unwrap(), &Vector::unit(3, 2)).unwrap();
        assert_eq!(r, 0.0);
        let r = matrix_inequality_residual(&diag(&[1.0, -1.0]), &Vector::unit(2, 0)).unwrap();
        assert_eq!(r, 0.0);
        let r = matrix_inequality_residual(&diag(&[1.0, 1.0, -2.0]), &Vector::unit(3, 0)).unwrap();
        assert!((r - 4.5).abs() < 1e-15);
    }

    #[test]
    fn matrix_inequality_zero_vector_is_exactly_zero() {
        let a = diag(&[3.0, -1.0, 7.0]);
        assert_eq!(matrix_inequality_residual(&a, &Vector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn two_sided_hand_examples() {
        // n = 2: both sides vanish
        let a = SymMatrix::from_rows(&[&[0.3, -1.2], &[-1.2, 2.5]]).unwrap();
        let e = Vector::new(vec![0.7, -0.4]);
        let q = quad_invariants(&a, &e).unwrap();
        assert!(two_sided_residual_from(&q).abs() < 1e-14);

        let r = two_sided_residual(&SymMatrix::identity(3).unwrap(), &Vector::unit(3, 1)).unwrap();
        assert!(r.abs() < 1e-15);
        let r = two_sided_residual(&diag(&[1.0, 1.0, -2.0]), &Vector::unit(3, 0)).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn margins_reproduce_two_sided_residual() {
        let a = SymMatrix::from_rows(&[&[1.0, 0.5, -0.2], &[0.5, -2.0, 0.3], &[-0.2, 0.3, 0.7]]).unwrap();
        let e = Vector::new(vec![0.3, 1.1, -0.8]);
        let q = quad_invariants(&a, &e).unwrap();
        let (t, s) = two_sided_margins(&q);
        assert!((two_sided_residual_from(&q) - t.min(s) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn vector_inequality_hand_examples() {
        let r = vector_inequality_residual(&Vector::new(vec![1.0, 1.0]), &Vector::unit(2, 0)).unwrap();
        assert_eq!(r, 0.0);
        let r = vector_inequality_residual(&Vector::zeros(3), &Vector::unit(3, 1)).unwrap();
        assert_eq!(r, 0.0);
        let r = vector_inequality_residual(&Vector::new(vec![1.0, 0.0, 0.0]), &Vector::unit(3, 1)).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn vector_inequality_rejects_non_unit() {
        let err = vector_inequality_residual(&Vector::new(vec![1.0, 2.0]), &Vector::new(vec![1.0, 1.0]));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sharpness_gap_n2_and_eigenvector_cases() {
        let a = SymMatrix::from_rows(&[&[0.3, -1.2], &[-1.2, 2.5]]).unwrap();
        let g = sharpness_gap(&a, &Vector::new(vec![0.7, -0.4])).unwrap();
        assert!(g.improvement().abs() < 1e-13);

        let a = diag(&[2.0, -1.0, 5.0, 0.5]);
        let g = sharpness_gap(&a, &Vector::new(vec![0.0, 0.0, 3.0, 0.0])).unwrap();
        assert!(g.improvement().abs() < 1e-12);
    }

    #[test]
    fn sharpness_gap_rejects_zero_vector() {
        assert!(sharpness_gap(&SymMatrix::identity(3).unwrap(), &Vector::zeros(3)).is_err());
    }

    #[test]
    fn frame_has_e_last_and_is_orthonormal() {
        let e = Vector::new(vec![0.2, -3.0, 1.0, 0.5]);
        let f = orthonormal_frame(&e).unwrap();
        let n = 4;
        for i in 0..n {
            for j in 0..n {
                let d: f64 = (0..n).map(|k| f[i * n + k] * f[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-14, "({i},{j}) = {d}");
            }
        }
        let en = e.scaled(1.0 / e.norm());
        for k in 0..n {
            assert!((f[(n - 1) * n + k] - en.0[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn frame_decomposition_trivial_cases() {
        let e = Vector::new(vec![0.6, 0.0, 0.8]);
        assert!(frame_decomposition_check(&SymMatrix::identity(3).unwrap(), &e).unwrap() < 1e-15);
        let v = frame_decomposition_check(&diag(&[1.0, 2.0, 3.0]), &Vector::unit(3, 2)).unwrap();
        assert_eq!(v, 0.0);
        assert!(frame_decomposition_check(&diag(&[1.0, 2.0]), &Vector::zeros(2)).is_err());
    }
}
