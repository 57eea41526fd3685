use serde::{Deserialize, Serialize};

use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_len: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.len() != self.v.len() {
            return Err(Error::Shape("Adam moment lengths differ".into()));
        }
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Parameter("Adam hyper-parameters out of range".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "Adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Mean squared error and its gradient `2(y − t)/N`.
pub fn mse_loss(y: &Tensor4, t: &Tensor4) -> Result<(f64, Tensor4)> {
    y.ensure_same_shape(t)?;
    let n = y.len() as f64;
    let diff: Vec<f64> = y.values().iter().zip(t.values()).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let (nn, c, h, w) = y.dims();
    let grad = Tensor4::raw(nn, c, h, w, diff.iter().map(|d| 2.0 * d / n).collect());
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3, DEFAULT_LR);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.5];
        let mut s = AdamState::new(1, DEFAULT_LR);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let expected = 0.5 - DEFAULT_LR / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2, DEFAULT_LR);
        assert!(matches!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s), Err(Error::Shape(_))));
        assert!(matches!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut s), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn first_step_moves_against_gradient(g in prop::collection::vec(-10.0f64..10.0, 1..20)) {
            let mut p = vec![0.0; g.len()];
            let mut s = AdamState::new(g.len(), DEFAULT_LR);
            adam_step(&mut p, &g, &mut s).unwrap();
            for (pi, gi) in p.iter().zip(&g) {
                if gi.abs() > 1e-6 {
                    prop_assert_eq!(pi.signum(), -gi.signum());
                    prop_assert!((pi.abs() - DEFAULT_LR).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mse_examples() {
        let y = Tensor4::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (l, g) = mse_loss(&y, &y).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.values().iter().all(|&v| v == 0.0));

        let t = Tensor4::new(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let (l, g) = mse_loss(&y, &t).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.values().iter().all(|&v| v == 0.5));

        let bad = Tensor4::zeros(1, 1, 1, 4);
        assert!(matches!(mse_loss(&y, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let y: Vec<f64> = (0..24).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.37).collect();
        let t: Vec<f64> = (0..24).map(|i| ((i * 5 % 11) as f64 - 5.0) * 0.21).collect();
        let yt = Tensor4::new(2, 1, 3, 4, y.clone()).unwrap();
        let tt = Tensor4::new(2, 1, 3, 4, t).unwrap();
        let (_, g) = mse_loss(&yt, &tt).unwrap();
        let d = 1e-5;
        for i in 0..y.len() {
            let mut plus = yt.clone();
            plus.values_mut()[i] += d;
            let mut minus = yt.clone();
            minus.values_mut()[i] -= d;
            let fd = (mse_loss(&plus, &tt).unwrap().0 - mse_loss(&minus, &tt).unwrap().0) / (2.0 * d);
            let rel = (fd - g.values()[i]).abs() / g.values()[i].abs().max(1e-12);
            assert!(rel < 1e-6, "i={i} rel={rel}");
        }
    }
}
