//! Adam optimizer state and update.

use nalgebra::{DMatrix, DVector};

use super::mlp::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { alpha: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m_weights: Vec<DMatrix<f64>>,
    pub v_weights: Vec<DMatrix<f64>>,
    pub m_biases: Vec<DVector<f64>>,
    pub v_biases: Vec<DVector<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        AdamState {
            m_weights: mlp.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_weights: mlp.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_biases: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_biases: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            step: 0,
        }
    }
}

fn update_slice(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..param.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        param[i] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// One Adam step over every weight and bias; increments the step counter.
pub fn adam_update(params: &mut super::NetworkParams, grads: &Gradients, cfg: &AdamConfig) {
    let state = &mut params.adam;
    state.step += 1;
    let bias1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bias2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for layer in 0..params.mlp.weights.len() {
        update_slice(
            params.mlp.weights[layer].as_mut_slice(),
            grads.weights[layer].as_slice(),
            state.m_weights[layer].as_mut_slice(),
            state.v_weights[layer].as_mut_slice(),
            cfg,
            bias1,
            bias2,
        );
        update_slice(
            params.mlp.biases[layer].as_mut_slice(),
            grads.biases[layer].as_slice(),
            state.m_biases[layer].as_mut_slice(),
            state.v_biases[layer].as_mut_slice(),
            cfg,
            bias1,
            bias2,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{LayerSpec, NetworkParams};

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = NetworkParams::new(LayerSpec::new(2, 3).unwrap(), 9);
        let before = params.mlp.clone();
        let grads = Gradients::zeros_like(&params.mlp);
        adam_update(&mut params, &grads, &AdamConfig::default());
        // moments stay zero, so the update term is 0/(0+eps) = 0
        assert_eq!(params.mlp, before);
        assert_eq!(params.adam.step, 1);
    }

    #[test]
    fn first_step_on_a_quadratic_is_one_bias_corrected_unit_step() {
        // f(w) = w^2 at w0 = 1: grad = 2; after bias correction m_hat = 2,
        // v_hat = 4, so the step is alpha * 2 / (2 + eps) ~ alpha.
        let cfg = AdamConfig::default();
        let mut w = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        let grad = 2.0 * w;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        w -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
        assert!((w - (1.0 - cfg.alpha)).abs() < 1e-9);

        // the same computation through the real update path
        let mut params = NetworkParams::new(LayerSpec::new(1, 1).unwrap(), 0);
        params.mlp.weights[0].fill(0.0);
        params.mlp.biases[0][0] = 1.0;
        let mut grads = Gradients::zeros_like(&params.mlp);
        grads.biases[0][0] = 2.0 * params.mlp.biases[0][0];
        adam_update(&mut params, &grads, &cfg);
        assert!((params.mlp.biases[0][0] - (1.0 - cfg.alpha)).abs() < 1e-9);
    }

    #[test]
    fn a_hundred_steps_descend_a_convex_quadratic() {
        // One bias parameter, loss (b - 3)^2; Adam must strictly reduce it.
        let cfg = AdamConfig::default();
        let mut params = NetworkParams::new(LayerSpec::new(1, 1).unwrap(), 1);
        let initial_loss = (params.mlp.biases[0][0] - 3.0).powi(2);
        for _ in 0..100 {
            let mut grads = Gradients::zeros_like(&params.mlp);
            grads.biases[0][0] = 2.0 * (params.mlp.biases[0][0] - 3.0);
            adam_update(&mut params, &grads, &cfg);
        }
        let final_loss = (params.mlp.biases[0][0] - 3.0).powi(2);
        assert!(final_loss < initial_loss, "{final_loss} !< {initial_loss}");
        assert_eq!(params.adam.step, 100);
    }
}
