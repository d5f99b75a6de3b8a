//! Least-squares Koopman fitting through an SVD pseudoinverse.

use faer::Mat;

use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};

/// Singular values below `PINV_RTOL · σ_max` are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

fn to_faer(t: &Tensor) -> Mat<f64> {
    Mat::from_fn(t.rows(), t.cols(), |i, j| t.get(i, j))
}

/// Moore–Penrose pseudoinverse with a relative singular-value cutoff.
pub fn pinv(a: &Tensor, rtol: f64) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::dim("pinv", format!("rank {}", a.rank())));
    }
    let (r, c) = (a.rows(), a.cols());
    if r == 0 || c == 0 {
        return Ok(Tensor::zeros(&[c, r]));
    }
    a.ensure_finite("pinv input")?;
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::NonFinite(format!("svd did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let k = r.min(c);
    let smax = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = rtol * smax;
    // out = Σ v_i u_iᵀ / σ_i over retained singular values
    let mut out = vec![0.0; c * r];
    for i in (0..k).filter(|&i| s[i] > cutoff && s[i] > 0.0) {
        let inv = 1.0 / s[i];
        for row in 0..c {
            let vi = v[(row, i)] * inv;
            for col in 0..r {
                out[row * r + col] += vi * u[(col, i)];
            }
        }
    }
    Tensor::matrix(c, r, out)
}

/// `argmin_W ‖W·x − y‖²` (minimum-norm) for `x: a×T`, `y: b×T`.
pub fn lstsq_map(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols() {
        return Err(Error::dim(
            "lstsq",
            format!("x {:?} and y {:?} must share a column count", x.shape(), y.shape()),
        ));
    }
    if x.cols() == 0 {
        return Err(Error::InvalidArgument("least squares needs at least one sample".into()));
    }
    matmul(y, &pinv(x, PINV_RTOL)?)
}

/// `K* = g(Y)·g(X)⁺`: the transition matrix best mapping each column of
/// `gx` onto the matching column of `gy`.
pub fn lstsq_koopman(gx: &Tensor, gy: &Tensor) -> Result<Tensor> {
    if gx.shape() != gy.shape() {
        return Err(Error::dim(
            "lstsq_koopman",
            format!("{:?} vs {:?}", gx.shape(), gy.shape()),
        ));
    }
    lstsq_map(gx, gy)
}
