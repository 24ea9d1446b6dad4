use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update using each tensor's gradient buffer.
/// Tensors without a gradient buffer are treated as having zero gradient.
pub fn adam_step(
    params: &mut [&mut Tensor],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].len() != p.numel() || state.v[i].len() != p.numel() {
            return Err(Error::Contract(format!(
                "optimizer state {i} has {} entries, parameter has {}",
                state.m[i].len(),
                p.numel()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(grad) = p.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.values_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: &[f64]) -> Tensor {
        let mut p = Tensor::param(vec![values.len()], values.to_vec()).unwrap();
        p.accumulate_grad(grad).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = param(&[1.0, 1.0], &[0.3, -2.0]);
        let mut st = AdamState::new(&[&p]);
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &mut st, &cfg).unwrap();
        assert!((p.values()[0] - (1.0 - 0.002 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
        assert!((p.values()[1] - 1.002).abs() < 1e-10);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(&[0.5], &[0.0]);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.values(), &[0.5]);
    }

    #[test]
    fn mismatched_state_is_a_contract_error() {
        let mut p = param(&[0.5, 1.0], &[0.1, 0.1]);
        let other = Tensor::zeros(vec![3]);
        let mut st = AdamState::new(&[&other]);
        assert!(matches!(
            adam_step(&mut [&mut p], &mut st, &AdamConfig::default()),
            Err(Error::Contract(_))
        ));
    }
}
