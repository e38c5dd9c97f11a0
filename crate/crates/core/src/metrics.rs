//! Frobenius-norm error of an approximate product against the exact one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub abs_frobenius: f64,
    /// `abs_frobenius / ‖exact‖_F`. Set to `+inf` together with
    /// `zero_reference` when the exact product is zero and the approximation
    /// is not.
    pub rel_frobenius: f64,
    pub max_abs_elem: f64,
    pub zero_reference: bool,
}

impl ErrorReport {
    pub fn is_relative_defined(&self) -> bool {
        !self.zero_reference
    }
}

pub fn frobenius_error(approx: &Matrix<f64>, exact: &Matrix<f64>) -> Result<ErrorReport> {
    if approx.shape() != exact.shape() {
        return Err(Error::shape(format!(
            "error of {:?} against {:?}",
            approx.shape(),
            exact.shape()
        )));
    }
    let mut sq = 0.0;
    let mut ref_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for (&a, &e) in approx.as_slice().iter().zip(exact.as_slice()) {
        let d = a - e;
        sq += d * d;
        ref_sq += e * e;
        max_abs = max_abs.max(d.abs());
    }
    let abs_frobenius = sq.sqrt();
    let ref_norm = ref_sq.sqrt();
    let (rel_frobenius, zero_reference) = if ref_norm > 0.0 {
        (abs_frobenius / ref_norm, false)
    } else if abs_frobenius > 0.0 {
        (f64::INFINITY, true)
    } else {
        (0.0, false)
    };
    Ok(ErrorReport {
        abs_frobenius,
        rel_frobenius,
        max_abs_elem: max_abs,
        zero_reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_is_zero() {
        let x = Matrix::from_fn(3, 3, |r, c| (r as f64) - (c as f64) * 0.5).unwrap();
        let rep = frobenius_error(&x, &x).unwrap();
        assert_eq!(rep.rel_frobenius, 0.0);
        assert_eq!(rep.max_abs_elem, 0.0);
    }

    #[test]
    fn zero_approx_is_one() {
        let x = Matrix::from_fn(3, 4, |r, c| (r + 2 * c) as f64 + 1.0).unwrap();
        let rep = frobenius_error(&Matrix::zeros(3, 4).unwrap(), &x).unwrap();
        assert!((rep.rel_frobenius - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_reference_is_flagged() {
        let z = Matrix::zeros(2, 2).unwrap();
        let x = Matrix::filled(2, 2, 1.0).unwrap();
        let rep = frobenius_error(&x, &z).unwrap();
        assert!(rep.zero_reference);
        assert!(rep.rel_frobenius.is_infinite());
        let both = frobenius_error(&z, &z).unwrap();
        assert!(!both.zero_reference);
        assert_eq!(both.rel_frobenius, 0.0);
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let b = Matrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let rep = frobenius_error(&a, &b).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..8 {
            for j in 0..8 {
                num += (a[(i, j)] - b[(i, j)]).powi(2);
                den += b[(i, j)].powi(2);
            }
        }
        assert!((rep.abs_frobenius - num.sqrt()).abs() < 1e-14);
        assert!((rep.rel_frobenius - num.sqrt() / den.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3).unwrap();
        let b = Matrix::<f64>::zeros(3, 2).unwrap();
        assert!(frobenius_error(&a, &b).is_err());
    }
}
