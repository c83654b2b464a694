//! Initial training from the nominal geometric model and the online loop
//! that folds plant data back into the network.

mod explore;
mod online;

pub use explore::{ExploreCycle, ExplorePhase};
pub use online::{accumulate_sample, build_online_batch, online_update, OnlineBuffer, OnlineTrainConfig};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimation::estimate_joints;
use crate::net::{
    adam_update, backward_params, build_input, forward, scale_units, AdamConfig, Gradients,
    MaskCase, NetworkParams, SensorTriple,
};

/// Weights of the three reconstruction terms, applied on scaled units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub theta: f64,
    pub tension: f64,
    pub length: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { theta: 1.0, tension: 10.0, length: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialTrainConfig {
    pub weights: LossWeights,
    /// Batches per epoch; batch size is dataset_size / batch_count.
    pub batch_count: usize,
    pub epochs: usize,
    pub dataset_size: usize,
    /// Upper bound of the uniform tension sampling, N.
    pub tension_max: f64,
    pub adam: AdamConfig,
}

impl Default for InitialTrainConfig {
    fn default() -> Self {
        InitialTrainConfig {
            weights: LossWeights::default(),
            batch_count: 100,
            epochs: 30,
            dataset_size: 10_000,
            tension_max: 500.0,
            adam: AdamConfig::default(),
        }
    }
}

/// Reconstruction loss of one sample:
/// `w_th*||th - th_hat|| + w_T*||T - T_hat|| + w_l*||l - l_hat||`
/// with every norm taken on scaled units.
pub fn initial_loss(predicted: &SensorTriple, target: &SensorTriple, w: &LossWeights) -> f64 {
    let p = scale_units(predicted);
    let t = scale_units(target);
    let d = predicted.theta.len();
    let m = predicted.tension.len();
    loss_and_grad_scaled(&p, &t, d, m, w).0
}

/// Loss and its gradient with respect to the scaled prediction vector.
pub(crate) fn loss_and_grad_scaled(
    predicted: &DVector<f64>,
    target: &DVector<f64>,
    d: usize,
    m: usize,
    w: &LossWeights,
) -> (f64, DVector<f64>) {
    let mut grad = DVector::zeros(d + 2 * m);
    let mut total = 0.0;
    let blocks = [(0usize, d, w.theta), (d, m, w.tension), (d + m, m, w.length)];
    for (offset, len, weight) in blocks {
        let mut sq = 0.0;
        for i in offset..offset + len {
            let r = predicted[i] - target[i];
            sq += r * r;
        }
        let norm = sq.sqrt();
        total += weight * norm;
        if norm > 1e-300 {
            for i in offset..offset + len {
                grad[i] = weight * (predicted[i] - target[i]) / norm + grad[i];
            }
        }
    }
    (total, grad)
}

/// One gradient accumulation for a (sample, mask) pair. Returns the loss.
pub(crate) fn accumulate_sample_gradient(
    params: &NetworkParams,
    sample: &SensorTriple,
    case: MaskCase,
    w: &LossWeights,
    grads: &mut Gradients,
) -> Result<f64> {
    let input = build_input(sample, case);
    let pass = forward(params, &input)?;
    let target = scale_units(sample);
    let (loss, d_out) = loss_and_grad_scaled(pass.output(), &target, params.d(), params.m(), w);
    backward_params(params, &pass, &d_out, grads);
    Ok(loss)
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    /// Global optimizer step count after this epoch.
    pub step: u64,
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    /// Mean ||theta - theta_hat|| on the probe set via the angle-masked case.
    pub mean_theta_err_rad: f64,
    /// Mean ||T - T_hat|| on the probe set, N.
    pub mean_tension_err_n: f64,
    pub wall_ms: u128,
}

/// Mean probe errors: angle estimation error and tension reconstruction
/// error through the angle-masked case.
pub fn probe_errors(params: &NetworkParams, probe: &[SensorTriple]) -> (f64, f64) {
    if probe.is_empty() {
        return (0.0, 0.0);
    }
    let mut theta_err = 0.0;
    let mut tension_err = 0.0;
    for sample in probe {
        let est = estimate_joints(params, &sample.tension, &sample.length).unwrap();
        theta_err += sample
            .theta
            .iter()
            .zip(&est.theta_est)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        tension_err += sample
            .tension
            .iter()
            .zip(&est.tension_rec)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    (theta_err / probe.len() as f64, tension_err / probe.len() as f64)
}

/// Train from scratch on sampled nominal-model data: every epoch shuffles
/// the dataset into `batch_count` batches, draws a uniformly random mask
/// case per sample, accumulates the reconstruction loss gradient, and
/// applies one Adam step per batch.
pub fn initial_train<R: Rng>(
    params: &mut NetworkParams,
    dataset: &[SensorTriple],
    probe: &[SensorTriple],
    cfg: &InitialTrainConfig,
    rng: &mut R,
) -> Result<Vec<TrainLogRow>> {
    if dataset.len() < cfg.batch_count {
        return Err(Error::InvalidConfig(format!(
            "dataset of {} cannot fill {} batches",
            dataset.len(),
            cfg.batch_count
        )));
    }
    let batch_size = dataset.len() / cfg.batch_count;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let started = std::time::Instant::now();

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in 0..cfg.batch_count {
            let slice = &order[batch * batch_size..(batch + 1) * batch_size];
            let mut grads = Gradients::zeros_like(&params.mlp);
            let mut batch_loss = 0.0;
            for &idx in slice {
                let case = MaskCase::ALL[rng.random_range(0..3)];
                batch_loss +=
                    accumulate_sample_gradient(params, &dataset[idx], case, &cfg.weights, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { context: "initial training" });
            }
            adam_update(params, &grads, &cfg.adam);
            epoch_loss += batch_loss;
            seen += slice.len();
        }
        let (theta_err, tension_err) = probe_errors(params, probe);
        log.push(TrainLogRow {
            step: params.adam.step,
            epoch,
            loss: epoch_loss / seen as f64,
            mean_theta_err_rad: theta_err,
            mean_tension_err_n: tension_err,
            wall_ms: started.elapsed().as_millis(),
        });
    }
    Ok(log)
}
