use serde::{Deserialize, Serialize};

use super::{Matrix2D, Scalar};
use crate::error::{Error, Result};

/// Adam moments and step counter for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Matrix2D<T>>,
    pub v: Vec<Matrix2D<T>>,
    pub t: u64,
    pub hyper: AdamHyper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix2D<T>>, hyper: AdamHyper) -> Self {
        let m: Vec<Matrix2D<T>> = params
            .into_iter()
            .map(|p| Matrix2D::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Matrix2D<T>],
    grads: &[&Matrix2D<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment tensors",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("tensor {i}: param {:?}, grad {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.t += 1;
    let h = state.hyper;
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let bc1 = T::one() - T::of(h.beta1.powi(state.t as i32));
    let bc2 = T::one() - T::of(h.beta2.powi(state.t as i32));
    let lr = T::of(h.learning_rate);
    let eps = T::of(h.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Matrix2D::row_vector(vec![0.0f64]);
        let g = Matrix2D::row_vector(vec![1.0f64]);
        let mut state = AdamState::new([&p], AdamHyper::with_learning_rate(0.001));
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.get(0, 0) - expected).abs() < 1e-15);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix2D::row_vector(vec![0.3f32, -2.0]);
        let g = Matrix2D::zeros(1, 2);
        let mut state = AdamState::new([&p], AdamHyper::with_learning_rate(0.01));
        for _ in 0..3 {
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        }
        assert_eq!(p.data(), &[0.3, -2.0]);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = Matrix2D::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
            let g = Matrix2D::from_vec(2, 2, vec![0.1, -0.2, 0.3, -0.4]).unwrap();
            let mut s = AdamState::new([&p], AdamHyper::with_learning_rate(0.001));
            for _ in 0..5 {
                adam_step(&mut [&mut p], &[&g], &mut s).unwrap();
            }
            p
        };
        assert_eq!(run(), run());

        let mut p = Matrix2D::<f64>::zeros(2, 2);
        let g = Matrix2D::zeros(2, 3);
        let mut s = AdamState::new([&p], AdamHyper::with_learning_rate(0.001));
        assert!(adam_step(&mut [&mut p], &[&g], &mut s).is_err());
        assert_eq!(s.t, 0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Matrix2D::row_vector(vec![3.0f64, -1.5]);
        let mut s = AdamState::new([&p], AdamHyper::with_learning_rate(0.05));
        for _ in 0..2000 {
            let g = p.clone();
            adam_step(&mut [&mut p], &[&g], &mut s).unwrap();
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-3), "{p:?}");
    }
}
