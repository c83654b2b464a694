//! Joint-angle estimation from (tension, length) and the anomaly score.

use crate::error::Result;
use crate::net::{
    decode, encode_tension_length, scale_units, unscale_units, NetworkParams, SensorTriple,
};

/// Full decode of the angle-masked encoding plus the anomaly score.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// rad
    pub theta_est: Vec<f64>,
    /// reconstructed tensions, N
    pub tension_rec: Vec<f64>,
    /// reconstructed lengths, mm
    pub length_rec: Vec<f64>,
    /// sum of the scaled-unit reconstruction residuals of T and l; rises
    /// when the sensor pair leaves the learned manifold
    pub anomaly: f64,
}

/// Estimate joint angles from the measured tensions and lengths. The masked
/// angle channel never enters the input, so any angle attached to the
/// snapshot is irrelevant by construction.
pub fn estimate_joints(params: &NetworkParams, tension: &[f64], length: &[f64]) -> Result<EstimationResult> {
    let z = encode_tension_length(params, tension, length);
    let pass = decode(params, &z)?;
    let rec = unscale_units(pass.output(), params.d(), params.m());

    let input = SensorTriple {
        theta: vec![0.0; params.d()],
        tension: tension.to_vec(),
        length: length.to_vec(),
    };
    let in_scaled = scale_units(&input);
    let out_scaled = pass.output();
    let (d, m) = (params.d(), params.m());
    let t_res: f64 = (0..m)
        .map(|i| (out_scaled[d + i] - in_scaled[d + i]).powi(2))
        .sum::<f64>()
        .sqrt();
    let l_res: f64 = (0..m)
        .map(|i| (out_scaled[d + m + i] - in_scaled[d + m + i]).powi(2))
        .sum::<f64>()
        .sqrt();

    Ok(EstimationResult {
        theta_est: rec.theta,
        tension_rec: rec.tension,
        length_rec: rec.length,
        anomaly: t_res + l_res,
    })
}

/// Flag when the newest anomaly score exceeds `factor` times the trailing
/// median over the previous `window` scores.
pub fn detect_anomaly(history: &[f64], window: usize, factor: f64) -> bool {
    if history.len() < 2 || window == 0 {
        return false;
    }
    let current = *history.last().unwrap();
    let start = history.len().saturating_sub(window + 1);
    let mut trailing: Vec<f64> = history[start..history.len() - 1].to_vec();
    trailing.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = trailing[trailing.len() / 2];
    current > factor * median
}
