//! In-domain emotion analysis: per-clip whitening of the visual emotion
//! stream followed by an atmosphere-conditioned affine modulation.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const IDEA_RIDGE: f64 = 1e-5;

/// Maps every row to `(Σ + εI)^(−1/2)(v − μ)` where `μ` and `Σ` are the
/// temporal mean and (population) covariance. Eigenvalues are clamped at
/// zero before the ridge is added.
pub fn idea_normalize<T: Scalar>(v: &Matrix<T>, ridge: f64) -> Result<Matrix<T>> {
    let (n, d) = v.shape();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "whitening needs at least 2 frames, got {n}"
        )));
    }
    if !(ridge > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge {ridge} must be positive")));
    }
    let x = DMatrix::<f64>::from_fn(n, d, |i, j| v[(i, j)].to_f64_lossy());
    let mean = x.row_mean();
    let mut centred = x;
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + ridge).sqrt());
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let out = centred * w;
    Ok(Matrix::from_fn(n, d, |i, j| T::of(out[(i, j)])))
}

/// `f_α(a) ⊙ v + f_β(a)` with the gain and bias broadcast over time.
pub fn idea_modulate<T: Scalar>(
    v_norm: &Matrix<T>,
    atmosphere: &[T],
    f_alpha: impl Fn(&[T]) -> Vec<T>,
    f_beta: impl Fn(&[T]) -> Vec<T>,
) -> Result<Matrix<T>> {
    let d = v_norm.cols();
    if atmosphere.len() != d {
        return Err(Error::InvalidArgument(format!(
            "atmosphere has {} dims, emotion stream {d}",
            atmosphere.len()
        )));
    }
    let (alpha, beta) = (f_alpha(atmosphere), f_beta(atmosphere));
    if alpha.len() != d || beta.len() != d {
        return Err(Error::InvalidArgument(
            "modulation width differs from the emotion stream".into(),
        ));
    }
    Ok(Matrix::from_fn(v_norm.rows(), d, |t, j| {
        alpha[j] * v_norm[(t, j)] + beta[j]
    }))
}
