//! The quadratic candidate `V(xi) = xi' Q xi` and its evaluation.
//!
//! `Q` is assembled as `L L'` from a lower-triangular factor with strictly
//! positive diagonal, which makes positive definiteness structural rather
//! than something to verify after the fact. `Vdot` is evaluated by the chain
//! rule, `Vdot = 2 xi' Q xidot`, keeping it a closed-form function of `Q`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("factor entry count {got} does not match dimension {n} (need n(n+1)/2)")]
    BadEntryCount { n: usize, got: usize },
    #[error("factor diagonal entry {index} is not strictly positive: {value}")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("non-finite factor entry at {index}")]
    NonFiniteEntry { index: usize },
    #[error("matrix is not symmetric within {tol}: |Q[{i},{j}] - Q[{j},{i}]| = {diff}")]
    NotSymmetric {
        i: usize,
        j: usize,
        diff: f64,
        tol: f64,
    },
}

/// Number of entries in an n-by-n lower triangle.
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// A lower-triangular matrix with strictly positive diagonal, stored as the
/// row-major lower triangle: `(0,0), (1,0), (1,1), (2,0), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangularFactor {
    n: usize,
    entries: Vec<f64>,
}

impl LowerTriangularFactor {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self, LyapunovError> {
        if entries.len() != tri_len(n) || n == 0 {
            return Err(LyapunovError::BadEntryCount {
                n,
                got: entries.len(),
            });
        }
        for (idx, &v) in entries.iter().enumerate() {
            if !v.is_finite() {
                return Err(LyapunovError::NonFiniteEntry { index: idx });
            }
        }
        for i in 0..n {
            let d = entries[Self::index(i, i)];
            if d <= 0.0 {
                return Err(LyapunovError::NonPositiveDiagonal { index: i, value: d });
            }
        }
        Ok(Self { n, entries })
    }

    fn index(i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Entry `L[i,j]`; zero above the diagonal.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.entries[Self::index(i, j)]
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j))
    }
}

/// A symmetric matrix backing the quadratic candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    q: DMatrix<f64>,
}

impl QuadraticForm {
    /// Assemble `Q = L L'`. Positive definiteness follows from the factor's
    /// strictly positive diagonal.
    pub fn from_factor(factor: &LowerTriangularFactor) -> Self {
        let l = factor.to_matrix();
        Self {
            q: &l * l.transpose(),
        }
    }

    /// Wrap an explicitly given symmetric matrix (tolerance 1e-12 relative to
    /// the largest entry). Used for deserialized certificates and oracles;
    /// positive definiteness is the caller's responsibility here.
    pub fn from_matrix(q: DMatrix<f64>) -> Result<Self, LyapunovError> {
        if q.nrows() != q.ncols() || q.nrows() == 0 {
            return Err(LyapunovError::DimensionMismatch {
                expected: q.nrows(),
                got: q.ncols(),
            });
        }
        let scale = q.amax().max(1.0);
        let tol = 1e-12 * scale;
        for i in 0..q.nrows() {
            for j in 0..i {
                let diff = (q[(i, j)] - q[(j, i)]).abs();
                if diff > tol {
                    return Err(LyapunovError::NotSymmetric { i, j, diff, tol });
                }
            }
        }
        Ok(Self { q })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Row-major copy of the entries (the serialization layout).
    pub fn row_major(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.q[(i, j)]);
            }
        }
        out
    }

    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Self, LyapunovError> {
        if entries.len() != n * n {
            return Err(LyapunovError::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(n, n, entries))
    }

    /// `V(xi) = xi' Q xi`.
    pub fn eval_v(&self, xi: &DVector<f64>) -> Result<f64, LyapunovError> {
        if xi.len() != self.n() {
            return Err(LyapunovError::DimensionMismatch {
                expected: self.n(),
                got: xi.len(),
            });
        }
        Ok(xi.dot(&(&self.q * xi)))
    }

    /// `Vdot = 2 xi' Q xidot` (chain rule through `xi(t)`, `Q` symmetric).
    pub fn eval_vdot(&self, xi: &DVector<f64>, xidot: &DVector<f64>) -> Result<f64, LyapunovError> {
        if xi.len() != self.n() || xidot.len() != self.n() {
            return Err(LyapunovError::DimensionMismatch {
                expected: self.n(),
                got: xi.len().min(xidot.len()),
            });
        }
        Ok(2.0 * xi.dot(&(&self.q * xidot)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn factor(n: usize, entries: &[f64]) -> LowerTriangularFactor {
        LowerTriangularFactor::new(n, entries.to_vec()).unwrap()
    }

    #[test]
    fn identity_factor_gives_identity_q() {
        let q = QuadraticForm::from_factor(&factor(2, &[1.0, 0.0, 1.0]));
        assert_eq!(q.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn assembles_hand_multiplied_product() {
        // L = [[2,0],[1,1]] -> L L' = [[4,2],[2,2]]
        let q = QuadraticForm::from_factor(&factor(2, &[2.0, 1.0, 1.0]));
        assert_eq!(q.row_major(), vec![4.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn diagonal_factor_squares_the_diagonal() {
        let q = QuadraticForm::from_factor(&factor(2, &[3.0, 0.0, 0.5]));
        assert_eq!(q.row_major(), vec![9.0, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn rejects_non_positive_diagonal() {
        assert!(matches!(
            LowerTriangularFactor::new(2, vec![1.0, 0.5, 0.0]),
            Err(LyapunovError::NonPositiveDiagonal { index: 1, .. })
        ));
        assert!(matches!(
            LowerTriangularFactor::new(2, vec![-1.0, 0.5, 1.0]),
            Err(LyapunovError::NonPositiveDiagonal { index: 0, .. })
        ));
    }

    #[test]
    fn eval_v_basic_values() {
        let q = QuadraticForm::from_matrix(DMatrix::identity(2, 2)).unwrap();
        let v = q.eval_v(&DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        assert_eq!(v, 1.0);
        let v = q.eval_v(&DVector::from_row_slice(&[0.0, 0.0])).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn eval_v_on_reference_coefficients() {
        let q = QuadraticForm::from_row_major(2, &[0.2425, -0.0134, -0.0134, 0.4804]).unwrap();
        let v = q.eval_v(&DVector::from_row_slice(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(v, 0.6961, max_relative = 1e-12);
    }

    #[test]
    fn eval_vdot_basic_values() {
        let q = QuadraticForm::from_matrix(DMatrix::identity(2, 2)).unwrap();
        let xi = DVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(
            q.eval_vdot(&xi, &DVector::from_row_slice(&[0.0, 1.0]))
                .unwrap(),
            0.0
        );
        assert_eq!(q.eval_vdot(&xi, &(-&xi)).unwrap(), -2.0);
        let v = q
            .eval_vdot(
                &DVector::from_row_slice(&[1.0, 2.0]),
                &DVector::from_row_slice(&[3.0, 4.0]),
            )
            .unwrap();
        assert_eq!(v, 22.0);
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let q = QuadraticForm::from_matrix(DMatrix::identity(2, 2)).unwrap();
        assert!(q.eval_v(&DVector::from_row_slice(&[1.0])).is_err());
        assert!(q
            .eval_vdot(
                &DVector::from_row_slice(&[1.0, 0.0]),
                &DVector::from_row_slice(&[1.0])
            )
            .is_err());
    }

    #[test]
    fn from_matrix_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            QuadraticForm::from_matrix(m),
            Err(LyapunovError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn directional_derivative_identity() {
        // d/ds V(xi + s xidot) at s = 0 equals eval_vdot; V is quadratic in s,
        // so the central difference is exact up to roundoff.
        let q = QuadraticForm::from_factor(&factor(2, &[1.2, -0.4, 0.8]));
        let xi = DVector::from_row_slice(&[0.7, -1.3]);
        let xidot = DVector::from_row_slice(&[-0.2, 0.9]);
        let s = 1e-4;
        let plus = q.eval_v(&(&xi + &xidot * s)).unwrap();
        let minus = q.eval_v(&(&xi - &xidot * s)).unwrap();
        let fd = (plus - minus) / (2.0 * s);
        let an = q.eval_vdot(&xi, &xidot).unwrap();
        assert_relative_eq!(fd, an, max_relative = 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn assembled_form_is_positive_definite(
            n in 2usize..6,
            raw in proptest::collection::vec(-3.0f64..3.0, 21),
        ) {
            let mut entries = Vec::with_capacity(tri_len(n));
            let mut it = raw.into_iter();
            for i in 0..n {
                for j in 0..=i {
                    let v = it.next().unwrap_or(0.5);
                    entries.push(if i == j { v.abs() + 0.05 } else { v });
                }
            }
            let q = QuadraticForm::from_factor(&factor(n, &entries));
            let lambda_min = q
                .matrix()
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            prop_assert!(lambda_min > 0.0, "lambda_min = {}", lambda_min);
        }

        #[test]
        fn candidate_is_even(
            a in 0.1f64..3.0,
            b in -2.0f64..2.0,
            c in 0.1f64..3.0,
            x in -10.0f64..10.0,
            y in -10.0f64..10.0,
        ) {
            let q = QuadraticForm::from_factor(&factor(2, &[a, b, c]));
            let xi = DVector::from_row_slice(&[x, y]);
            let v_pos = q.eval_v(&xi).unwrap();
            let v_neg = q.eval_v(&(-&xi)).unwrap();
            prop_assert!((v_pos - v_neg).abs() <= 1e-12 * (1.0 + v_pos.abs()));
            prop_assert!(v_pos >= 0.0);
        }
    }
}
