//! Central finite-difference check of analytic gradients.

use super::prng::Prng;
use super::{Matrix2D, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates sampled per tensor; tensors smaller than this are checked
    /// exhaustively.
    pub coords_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            coords_per_tensor: 24,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (tensor, index, analytic, numeric) at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares the gradients returned by `loss_and_grad` with central
/// differences on a seeded random subset of coordinates. The closure must be
/// a deterministic function of its parameters.
pub fn grad_check<T, F>(
    mut loss_and_grad: F,
    params: &[Matrix2D<T>],
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[Matrix2D<T>]) -> (T, Vec<Matrix2D<T>>),
{
    let (loss, grads) = loss_and_grad(params);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at the base point".into()));
    }
    if grads.len() != params.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    let mut stream = Prng::new(config.seed).substream("grad-check");
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let h = T::of(config.step);
    for (t, grad) in grads.iter().enumerate() {
        if grad.shape() != params[t].shape() {
            return Err(Error::shape(
                "grad_check",
                format!("tensor {t}: gradient {:?}, param {:?}", grad.shape(), params[t].shape()),
            ));
        }
        let n = params[t].len();
        let coords: Vec<usize> = if n <= config.coords_per_tensor {
            (0..n).collect()
        } else {
            stream.choose_without_replacement(n, config.coords_per_tensor)
        };
        for i in coords {
            let original = work[t].data()[i];
            work[t].data_mut()[i] = original + h;
            let (plus, _) = loss_and_grad(&work);
            work[t].data_mut()[i] = original - h;
            let (minus, _) = loss_and_grad(&work);
            work[t].data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss near tensor {t}[{i}]")));
            }
            let numeric = ((plus - minus) / (h + h)).as_f64();
            let analytic = grad.data()[i].as_f64();
            let denom = analytic.abs().max(numeric.abs()).max(config.floor);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((t, i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
