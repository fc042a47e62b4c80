//! Khatri-Rao and Kronecker products, and the invertible transform that maps
//! the Khatri-Rao product of conditional probability tables to the product
//! of the same tables shifted by constant vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{BlessError, Result};

/// Columns of stochastic matrices must sum to one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Smallest accepted reciprocal 1-norm condition number of a transform.
pub const MIN_RCOND: f64 = 1e-12;

/// Column-wise Kronecker product: column `i` of the result is
/// `kron(a[:, i], b[:, i])`, with the row index of `a` most significant.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(BlessError::Dimension(format!(
            "khatri_rao column mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n, m) = (a.nrows(), b.nrows());
    Ok(DMatrix::from_fn(n * m, a.ncols(), |r, c| a[(r / m, c)] * b[(r % m, c)]))
}

/// Left-to-right Khatri-Rao product of all factors.
pub fn khatri_rao_all(factors: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| BlessError::InvalidArgument("no Khatri-Rao factors".into()))?;
    rest.iter().try_fold(first.clone(), |acc, f| khatri_rao(&acc, f))
}

/// `(KR_j factors[j]) * v` without materializing the product: each column
/// is built as a chain of vector Kronecker products and accumulated.
pub fn khatri_rao_matvec(factors: &[DMatrix<f64>], v: &DVector<f64>) -> Result<DVector<f64>> {
    let first = factors
        .first()
        .ok_or_else(|| BlessError::InvalidArgument("no Khatri-Rao factors".into()))?;
    let ncols = first.ncols();
    if factors.iter().any(|f| f.ncols() != ncols) || v.len() != ncols {
        return Err(BlessError::Dimension(
            "Khatri-Rao factors and vector disagree on column count".into(),
        ));
    }
    let nrows: usize = factors.iter().map(|f| f.nrows()).product();
    let mut out = DVector::zeros(nrows);
    let mut col = Vec::with_capacity(nrows);
    let mut next = Vec::with_capacity(nrows);
    for c in 0..ncols {
        if v[c] == 0.0 {
            continue;
        }
        col.clear();
        col.push(v[c]);
        for f in factors {
            next.clear();
            for &x in &col {
                for r in 0..f.nrows() {
                    next.push(x * f[(r, c)]);
                }
            }
            std::mem::swap(&mut col, &mut next);
        }
        for (o, x) in out.iter_mut().zip(&col) {
            *o += x;
        }
    }
    Ok(out)
}

/// Kronecker product of a list of square or rectangular matrices.
pub fn kronecker_all(factors: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| BlessError::InvalidArgument("no Kronecker factors".into()))?;
    Ok(rest.iter().fold(first.clone(), |acc, f| acc.kronecker(f)))
}

/// Shift vector with its final component pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVector {
    values: Vec<f64>,
}

impl DeltaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        match values.last() {
            None => Err(BlessError::InvalidArgument("empty delta vector".into())),
            Some(&last) if last != 0.0 => Err(BlessError::InvalidArgument(format!(
                "delta vector must end in 0, got {last}"
            ))),
            Some(_) => Ok(Self { values }),
        }
    }

    /// Delta of length `free.len() + 1` with the given leading entries.
    pub fn from_free(free: &[f64]) -> Self {
        let mut values = free.to_vec();
        values.push(0.0);
        Self { values }
    }

    pub fn zeros(d: usize) -> Self {
        Self { values: vec![0.0; d] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `d x d` matrix `[[I, -delta], [-1^T, 1]]`.
    fn shift_matrix(&self) -> DMatrix<f64> {
        let d = self.len();
        DMatrix::from_fn(d, d, |r, c| match (r + 1 == d, c + 1 == d) {
            (false, false) => f64::from(u8::from(r == c)),
            (false, true) => -self.values[r],
            (true, false) => -1.0,
            (true, true) => 1.0,
        })
    }
}

/// Lower-triangular `d x d` matrix with an all-ones last row; maps a
/// probability column to its first `d - 1` entries followed by 1.
fn completion_matrix(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |r, c| f64::from(u8::from(r + 1 == d || r == c)))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max)
}

/// The Kronecker-structured transform `B = kron_j (shift_j * C_j)`.
#[derive(Debug, Clone)]
pub struct TransformMatrix {
    factors: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    rcond: f64,
}

impl TransformMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    /// Reciprocal 1-norm condition number (exact per factor, multiplied).
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn determinant(&self) -> f64 {
        let n = self.b.nrows();
        self.factors
            .iter()
            .map(|f| f.determinant().powi((n / f.nrows()) as i32))
            .product()
    }

    /// Solve `B x = rhs` by LU.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.b
            .clone()
            .lu()
            .solve(rhs)
            .ok_or_else(|| BlessError::Singular("LU solve failed".into()))
    }
}

pub fn build_lemma1_transform(deltas: &[DeltaVector]) -> Result<TransformMatrix> {
    if deltas.is_empty() {
        return Err(BlessError::InvalidArgument("no delta vectors".into()));
    }
    let mut factors = Vec::with_capacity(deltas.len());
    let mut rcond = 1.0;
    for (j, delta) in deltas.iter().enumerate() {
        if delta.len() < 2 {
            return Err(BlessError::Dimension(format!(
                "delta {} has length {} < 2",
                j + 1,
                delta.len()
            )));
        }
        let f = delta.shift_matrix() * completion_matrix(delta.len());
        let inv = f.clone().try_inverse().ok_or_else(|| {
            BlessError::Singular(format!("factor {} is singular (sum of delta = 1)", j + 1))
        })?;
        rcond /= one_norm(&f) * one_norm(&inv);
        factors.push(f);
    }
    if !(rcond > MIN_RCOND) {
        return Err(BlessError::Singular(format!(
            "reciprocal condition {rcond:e} below {MIN_RCOND:e}"
        )));
    }
    let b = kronecker_all(&factors)?;
    Ok(TransformMatrix { factors, b, rcond })
}

/// Max-abs residual of `KR_j(Phi_j - delta_j 1^T) - B * KR_j Phi_j`.
pub fn verify_lemma1_identity(phis: &[DMatrix<f64>], deltas: &[DeltaVector]) -> Result<f64> {
    if phis.len() != deltas.len() || phis.is_empty() {
        return Err(BlessError::Dimension(format!(
            "{} tables for {} delta vectors",
            phis.len(),
            deltas.len()
        )));
    }
    for (j, (phi, delta)) in phis.iter().zip(deltas).enumerate() {
        if phi.nrows() != delta.len() {
            return Err(BlessError::Dimension(format!(
                "table {} has {} rows but delta has length {}",
                j + 1,
                phi.nrows(),
                delta.len()
            )));
        }
        if let Some(c) = phi
            .column_iter()
            .position(|col| (col.sum() - 1.0).abs() > STOCHASTIC_TOL)
        {
            return Err(BlessError::Precondition(format!(
                "column {} of table {} does not sum to 1",
                c + 1,
                j + 1
            )));
        }
    }
    let shifted: Vec<DMatrix<f64>> = phis
        .iter()
        .zip(deltas)
        .map(|(phi, delta)| {
            let mut s = phi.clone();
            for (r, &dv) in delta.values().iter().enumerate() {
                s.row_mut(r).add_scalar_mut(-dv);
            }
            s
        })
        .collect();
    let lhs = khatri_rao_all(&shifted)?;
    let transform = build_lemma1_transform(deltas)?;
    let rhs = transform.matrix() * khatri_rao_all(phis)?;
    Ok((lhs - rhs).abs().max())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Triple-index expansion of a Khatri-Rao product of three matrices.
    fn kr3_by_index(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let (na, nb, nc) = (a.nrows(), b.nrows(), c.nrows());
        let mut out = DMatrix::zeros(na * nb * nc, a.ncols());
        for col in 0..a.ncols() {
            for i in 0..na {
                for j in 0..nb {
                    for k in 0..nc {
                        out[(i * nb * nc + j * nc + k, col)] = a[(i, col)] * b[(j, col)] * c[(k, col)];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn khatri_rao_by_hand() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let kr = khatri_rao(&a, &b).unwrap();
        let expect = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(kr, expect);
        assert!(khatri_rao(&a, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn single_column_is_kronecker() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let b = DMatrix::from_column_slice(2, 1, &[4.0, 5.0]);
        assert_eq!(khatri_rao(&a, &b).unwrap(), a.kronecker(&b));
    }

    #[test]
    fn associativity_matches_index_expansion() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 2.5]);
        let b = DMatrix::from_row_slice(2, 2, &[1.1, 0.4, -0.6, 0.9]);
        let c = DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 1.5, -0.1]);
        let left = khatri_rao(&khatri_rao(&a, &b).unwrap(), &c).unwrap();
        let right = khatri_rao(&a, &khatri_rao(&b, &c).unwrap()).unwrap();
        let oracle = kr3_by_index(&a, &b, &c);
        assert!((&left - &right).abs().max() < 1e-14);
        assert!((&left - &oracle).abs().max() < 1e-14);
    }

    #[test]
    fn matvec_matches_materialized_product() {
        let a = DMatrix::from_row_slice(2, 3, &[0.2, 0.5, 0.9, 0.8, 0.5, 0.1]);
        let b = DMatrix::from_row_slice(3, 3, &[0.1, 0.3, 0.6, 0.2, 0.3, 0.2, 0.7, 0.4, 0.2]);
        let v = DVector::from_vec(vec![0.2, 0.0, 0.8]);
        let full = khatri_rao_all(&[a.clone(), b.clone()]).unwrap() * &v;
        let mv = khatri_rao_matvec(&[a, b], &v).unwrap();
        assert!((full - mv).abs().max() < 1e-15);
    }

    #[test]
    fn delta_vector_requires_trailing_zero() {
        assert!(DeltaVector::new(vec![0.1, 0.2]).is_err());
        assert!(DeltaVector::new(vec![]).is_err());
        assert_eq!(DeltaVector::from_free(&[0.1]).values(), &[0.1, 0.0]);
    }

    #[test]
    fn zero_deltas_give_identity() {
        let t = build_lemma1_transform(&[DeltaVector::zeros(2), DeltaVector::zeros(2)]).unwrap();
        assert_eq!(t.matrix(), &DMatrix::identity(4, 4));
        let t3 = build_lemma1_transform(&[DeltaVector::zeros(3)]).unwrap();
        assert_eq!(t3.matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn single_binary_item_by_hand() {
        let delta = 0.3;
        let t = build_lemma1_transform(&[DeltaVector::from_free(&[delta])]).unwrap();
        // [[1, -delta], [-1, 1]] * [[1, 0], [1, 1]]
        let expect = DMatrix::from_row_slice(2, 2, &[1.0 - delta, -delta, 0.0, 1.0]);
        assert!((t.matrix() - expect).abs().max() < 1e-15);
        assert!((t.determinant() - (1.0 - delta)).abs() < 1e-15);
        let phi = DMatrix::from_row_slice(2, 4, &[0.2, 0.2, 0.7, 0.7, 0.8, 0.8, 0.3, 0.3]);
        let r = verify_lemma1_identity(&[phi], &[DeltaVector::from_free(&[delta])]).unwrap();
        assert!(r < 1e-15);
    }

    #[test]
    fn singular_factor_is_rejected() {
        // delta summing to 1 makes shift * C singular
        let err = build_lemma1_transform(&[DeltaVector::from_free(&[0.4, 0.6])]).unwrap_err();
        assert!(matches!(err, BlessError::Singular(_)));
    }

    #[test]
    fn non_stochastic_table_is_rejected() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.6, 0.5]);
        let err = verify_lemma1_identity(&[phi], &[DeltaVector::zeros(2)]).unwrap_err();
        assert!(matches!(err, BlessError::Precondition(_)));
    }

    #[test]
    fn zero_delta_residual_is_exactly_zero() {
        let phi1 = DMatrix::from_row_slice(2, 2, &[0.25, 0.75, 0.75, 0.25]);
        let phi2 = DMatrix::from_row_slice(3, 2, &[0.5, 0.125, 0.25, 0.375, 0.25, 0.5]);
        let r = verify_lemma1_identity(&[phi1, phi2], &[DeltaVector::zeros(2), DeltaVector::zeros(3)])
            .unwrap();
        assert_eq!(r, 0.0);
    }
}
