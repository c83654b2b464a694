//! Online learning: the deviation-gated sample buffer and the batched
//! update that mixes the newest sample, the zero anchor, and random history
//! under all three mask cases.

use std::collections::VecDeque;

use rand::Rng;

use super::{accumulate_sample_gradient, LossWeights};
use crate::error::{Error, Result};
use crate::net::{adam_update, AdamConfig, Gradients, MaskCase, NetworkParams, SensorTriple};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineTrainConfig {
    /// Updates start once this many samples are stored.
    pub c_thre: usize,
    /// Random history samples per batch.
    pub c_data: usize,
    /// Batches per epoch, each freshly drawn.
    pub batch_count: usize,
    pub epochs: usize,
    /// Admission thresholds: a new sample must deviate from every stored one.
    pub delta_theta: f64,
    pub delta_tension: f64,
    /// Ring capacity; the oldest sample is evicted first.
    pub capacity: usize,
}

impl Default for OnlineTrainConfig {
    fn default() -> Self {
        OnlineTrainConfig {
            c_thre: 20,
            c_data: 10,
            batch_count: 10,
            epochs: 10,
            delta_theta: 0.1,
            delta_tension: 10.0,
            capacity: 1000,
        }
    }
}

/// Ring of accepted plant samples.
#[derive(Debug, Clone)]
pub struct OnlineBuffer {
    entries: VecDeque<SensorTriple>,
    cfg: OnlineTrainConfig,
}

impl OnlineBuffer {
    pub fn new(cfg: OnlineTrainConfig) -> Self {
        OnlineBuffer { entries: VecDeque::new(), cfg }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.entries.len() >= self.cfg.c_thre
    }

    pub fn newest(&self) -> Option<&SensorTriple> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SensorTriple> {
        self.entries.iter()
    }

    pub fn config(&self) -> &OnlineTrainConfig {
        &self.cfg
    }

    #[cfg(test)]
    pub(crate) fn push_unchecked(&mut self, triple: SensorTriple) {
        self.entries.push_back(triple);
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Store the triple iff the robot is still and the nearest stored sample is
/// farther than `delta_theta` in joint space or farther than `delta_tension`
/// in tension space. Returns whether it was stored.
pub fn accumulate_sample(buffer: &mut OnlineBuffer, triple: &SensorTriple, still: bool) -> bool {
    if !still || !triple.is_finite() {
        return false;
    }
    if !buffer.entries.is_empty() {
        let min_theta = buffer
            .entries
            .iter()
            .map(|e| euclidean(&e.theta, &triple.theta))
            .fold(f64::INFINITY, f64::min);
        let min_tension = buffer
            .entries
            .iter()
            .map(|e| euclidean(&e.tension, &triple.tension))
            .fold(f64::INFINITY, f64::min);
        if min_theta <= buffer.cfg.delta_theta && min_tension <= buffer.cfg.delta_tension {
            return false;
        }
    }
    if buffer.entries.len() == buffer.cfg.capacity {
        buffer.entries.pop_front();
    }
    buffer.entries.push_back(triple.clone());
    true
}

/// Compose one online batch: the newest sample, the zero anchor, and
/// `c_data` random stored samples, each expanded under all three mask cases
/// — `3 * (c_data + 2)` pairs.
pub fn build_online_batch<R: Rng>(
    buffer: &OnlineBuffer,
    rng: &mut R,
) -> Result<Vec<(SensorTriple, MaskCase)>> {
    if !buffer.is_ready() {
        return Err(Error::BufferNotReady { have: buffer.len(), need: buffer.cfg.c_thre });
    }
    let newest = buffer.newest().unwrap().clone();
    let d = newest.theta.len();
    let m = newest.tension.len();
    let mut picked = Vec::with_capacity(buffer.cfg.c_data + 2);
    picked.push(newest);
    picked.push(SensorTriple::zeros(d, m));
    let chosen = rand::seq::index::sample(rng, buffer.len(), buffer.cfg.c_data);
    for idx in chosen.iter() {
        picked.push(buffer.entries[idx].clone());
    }
    let mut batch = Vec::with_capacity(3 * picked.len());
    for sample in picked {
        for case in MaskCase::ALL {
            batch.push((sample.clone(), case));
        }
    }
    Ok(batch)
}

/// Run `epochs * batch_count` freshly drawn online batches through Adam.
/// A non-finite loss aborts and rolls the parameters back to the input
/// state. Returns the per-batch mean losses.
pub fn online_update<R: Rng>(
    params: &mut NetworkParams,
    buffer: &OnlineBuffer,
    cfg: &OnlineTrainConfig,
    weights: &LossWeights,
    adam: &AdamConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let snapshot = params.clone();
    let mut losses = Vec::with_capacity(cfg.epochs * cfg.batch_count);
    for _ in 0..cfg.epochs {
        for _ in 0..cfg.batch_count {
            let batch = build_online_batch(buffer, rng)?;
            let mut grads = Gradients::zeros_like(&params.mlp);
            let mut batch_loss = 0.0;
            for (sample, case) in &batch {
                match accumulate_sample_gradient(params, sample, *case, weights, &mut grads) {
                    Ok(loss) => batch_loss += loss,
                    Err(e) => {
                        *params = snapshot;
                        return Err(e);
                    }
                }
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                *params = snapshot;
                return Err(Error::NonFiniteLoss { context: "online update" });
            }
            adam_update(params, &grads, adam);
            losses.push(batch_loss / batch.len() as f64);
        }
    }
    Ok(losses)
}
