//! Activations, normalization and losses with their backward passes.

use super::{Matrix2D, Scalar};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(x: &Matrix2D<T>) -> Matrix2D<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through ReLU given the pre-activation `x`.
pub fn relu_backward<T: Scalar>(dy: &Matrix2D<T>, x: &Matrix2D<T>) -> Matrix2D<T> {
    dy.zip_map(x, |g, v| if v > T::zero() { g } else { T::zero() })
}

// tanh approximation of GELU
fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy)
}

pub fn gelu<T: Scalar>(x: &Matrix2D<T>) -> Matrix2D<T> {
    x.map(|v| gelu_parts(v).0)
}

pub fn gelu_backward<T: Scalar>(dy: &Matrix2D<T>, x: &Matrix2D<T>) -> Matrix2D<T> {
    dy.zip_map(x, |g, v| g * gelu_parts(v).1)
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_rows<T: Scalar>(x: &Matrix2D<T>) -> Matrix2D<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Mean squared error over all entries and its gradient.
pub fn mse<T: Scalar>(pred: &Matrix2D<T>, target: &Matrix2D<T>) -> Result<(T, Matrix2D<T>)> {
    let diff = pred.sub(target)?;
    let n = T::of(diff.len() as f64);
    let loss = diff.data().iter().fold(T::zero(), |a, &d| a + d * d) / n;
    let two_over_n = T::of(2.0) / n;
    Ok((loss, diff.map(|d| d * two_over_n)))
}

/// Mean cross-entropy of row-wise softmax against class targets, and the
/// gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Matrix2D<T>, targets: &[usize]) -> Result<(T, Matrix2D<T>)> {
    if logits.rows() != targets.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} rows, {} targets", logits.rows(), targets.len()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::shape(
            "cross_entropy",
            format!("target {t} >= {} classes", logits.cols()),
        ));
    }
    let mut grad = softmax_rows(logits);
    let n = T::of(targets.len() as f64);
    let mut loss = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let row = grad.row_mut(r);
        loss -= row[t].max(T::min_positive_value()).ln();
        row[t] -= T::one();
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok((loss / n, grad))
}

/// Cached values of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Matrix2D<T>,
    pub inv_std: Vec<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization with gain `gamma` and shift `beta`
/// (both `1 x cols`).
pub fn layer_norm<T: Scalar>(
    x: &Matrix2D<T>,
    gamma: &Matrix2D<T>,
    beta: &Matrix2D<T>,
) -> Result<(Matrix2D<T>, LayerNormCache<T>)> {
    if gamma.shape() != (1, x.cols()) || beta.shape() != (1, x.cols()) {
        return Err(Error::shape(
            "layer_norm",
            format!("input {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    let n = T::of(x.cols() as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut normalized = Matrix2D::zeros(x.rows(), x.cols());
    let mut y = Matrix2D::zeros(x.rows(), x.cols());
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let rstd = T::one() / (var + eps).sqrt();
        inv_std.push(rstd);
        for c in 0..x.cols() {
            let h = (row[c] - mean) * rstd;
            normalized.set(r, c, h);
            y.set(r, c, h * gamma.data()[c] + beta.data()[c]);
        }
    }
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &Matrix2D<T>,
    cache: &LayerNormCache<T>,
    gamma: &Matrix2D<T>,
) -> (Matrix2D<T>, Matrix2D<T>, Matrix2D<T>) {
    let (rows, cols) = dy.shape();
    let n = T::of(cols as f64);
    let mut dx = Matrix2D::zeros(rows, cols);
    let mut dgamma = Matrix2D::zeros(1, cols);
    let dbeta = dy.col_sums();
    for r in 0..rows {
        let g = dy.row(r);
        let h = cache.normalized.row(r);
        let mut mean_dh = T::zero();
        let mut mean_dh_h = T::zero();
        for c in 0..cols {
            let dh = g[c] * gamma.data()[c];
            mean_dh += dh;
            mean_dh_h += dh * h[c];
            dgamma.data_mut()[c] += g[c] * h[c];
        }
        mean_dh /= n;
        mean_dh_h /= n;
        let rstd = cache.inv_std[r];
        let out = dx.row_mut(r);
        for c in 0..cols {
            let dh = g[c] * gamma.data()[c];
            out[c] = rstd * (dh - mean_dh - h[c] * mean_dh_h);
        }
    }
    (dx, dgamma, dbeta)
}

/// `x * w + b` with `b` a `1 x out` row.
pub fn linear<T: Scalar>(x: &Matrix2D<T>, w: &Matrix2D<T>, b: &Matrix2D<T>) -> Result<Matrix2D<T>> {
    let mut y = x.matmul(w)?;
    y.add_row_broadcast(b)?;
    Ok(y)
}

/// Returns `(dx, dw, db)` for [`linear`].
pub fn linear_backward<T: Scalar>(
    dy: &Matrix2D<T>,
    x: &Matrix2D<T>,
    w: &Matrix2D<T>,
) -> Result<(Matrix2D<T>, Matrix2D<T>, Matrix2D<T>)> {
    let dw = x.matmul_tn(dy)?;
    let db = dy.col_sums();
    let dx = dy.matmul_nt(w)?;
    Ok((dx, dw, db))
}
