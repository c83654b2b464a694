//! Actuation-side computation: muscle stiffness control, elongation
//! compensation, the two-step posture commands, the learned muscle Jacobian,
//! and the batched latent-space descent that picks target muscle lengths
//! with minimal tension.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::model::{end_effector_jacobian, gravity_torque, GeometricModel};
use crate::net::{
    decode, encode_theta_tension, grad_wrt_latent_cached, unscale_units, DecodePass, LatentState,
    NetworkParams, SensorTriple, TENSION_SCALE,
};

/// Muscle stiffness control constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MscParams {
    /// N
    pub t_bias: f64,
    /// N/mm
    pub k_stiff: f64,
    /// Upper bound for randomized tension commands, N.
    pub t_limit: f64,
}

impl Default for MscParams {
    fn default() -> Self {
        MscParams { t_bias: 30.0, k_stiff: 2.0, t_limit: 200.0 }
    }
}

/// Latent-descent constants for posture control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConfig {
    pub w_tension: f64,
    pub w_theta: f64,
    pub w_torque: f64,
    pub gamma_max: f64,
    /// Number of step-size candidates per epoch (the gamma grid).
    pub batch: usize,
    pub epochs: usize,
    /// Finite-difference step for the learned muscle Jacobian, rad.
    pub jacobian_step: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            w_tension: 1.0,
            w_theta: 1.0,
            w_torque: 0.01,
            gamma_max: 0.5,
            batch: 10,
            epochs: 10,
            jacobian_step: 1e-3,
        }
    }
}

/// Target tensions: `T_bias + max(0, K_stiff * (l_current - l_target))`.
pub fn msc_target_tension(l_current: &[f64], l_target: &[f64], msc: &MscParams) -> Vec<f64> {
    l_current
        .iter()
        .zip(l_target)
        .map(|(&cur, &tgt)| msc.t_bias + (msc.k_stiff * (cur - tgt)).max(0.0))
        .collect()
}

/// Length offset that makes MSC settle at tension `T`:
/// `-(T - T_bias) / K_stiff`.
pub fn l_comp(tension: &[f64], msc: &MscParams) -> Vec<f64> {
    tension.iter().map(|&t| -(t - msc.t_bias) / msc.k_stiff).collect()
}

/// One step of the two-step posture command: decode the muscle lengths for
/// `theta_target` at reference tension `t_ref` and compensate the stiffness
/// controller's sag at that tension. Callers run this first with
/// `t_ref = T_const` and again with the measured tensions after settling.
pub fn control_two_step(
    params: &NetworkParams,
    theta_target: &[f64],
    t_ref: &[f64],
    msc: &MscParams,
) -> Result<Vec<f64>> {
    let z = encode_theta_tension(params, theta_target, t_ref);
    let decoded = decode(params, &z)?;
    let triple = unscale_units(decoded.output(), params.d(), params.m());
    let comp = l_comp(t_ref, msc);
    Ok(triple.length.iter().zip(&comp).map(|(l, c)| l + c).collect())
}

/// Muscle Jacobian of the learned model, M x D in mm/rad: forward
/// differences of the decoded lengths when nudging each joint of the
/// length-masked encoding.
pub fn muscle_jacobian_mae(
    params: &NetworkParams,
    theta: &[f64],
    tension: &[f64],
    step: f64,
) -> Result<DMatrix<f64>> {
    let d = params.d();
    let m = params.m();
    let base_z = encode_theta_tension(params, theta, tension);
    let base = decode_triple(params, &base_z)?;
    let mut jac = DMatrix::zeros(m, d);
    let mut probe = theta.to_vec();
    for col in 0..d {
        probe[col] = theta[col] + step;
        let z = encode_theta_tension(params, &probe, tension);
        let moved = decode_triple(params, &z)?;
        probe[col] = theta[col];
        for row in 0..m {
            jac[(row, col)] = (moved.length[row] - base.length[row]) / step;
        }
    }
    Ok(jac)
}

fn decode_triple(params: &NetworkParams, z: &LatentState) -> Result<SensorTriple> {
    let pass = decode(params, z)?;
    Ok(unscale_units(pass.output(), params.d(), params.m()))
}

/// Torque the muscles must produce to hold `theta` against gravity, the
/// carried end load, and an optional external tip force, N*mm. This is the
/// tau fed to the latent-descent torque terms: at equilibrium
/// `-G^T T = holding_torque`.
pub fn holding_torque(
    model: &GeometricModel,
    theta: &[f64],
    end_load_kg: f64,
    external_force: Option<&Vector3<f64>>,
) -> Result<Vec<f64>> {
    let mut tau = gravity_torque(model, theta, end_load_kg)?;
    if let Some(force) = external_force {
        let jac = end_effector_jacobian(model, theta)?;
        for d in 0..tau.len() {
            let jt_f: f64 = (0..3).map(|r| jac[(r, d)] * force[r]).sum();
            tau[d] += jt_f;
        }
    }
    Ok(tau.iter().map(|t| -t).collect())
}

/// A loss over the decoder output. Returns the loss value and its gradient
/// with respect to the raw (scaled) output vector.
pub(crate) trait LatentLoss {
    fn eval(&self, pass: &DecodePass) -> (f64, DVector<f64>);
}

/// Outcome of a batched latent descent.
pub(crate) struct DescentOutcome {
    pub z: LatentState,
    /// Incumbent loss before the first epoch and after each epoch;
    /// non-increasing because gamma = 0 is always a candidate.
    pub trace: Vec<f64>,
}

/// Normalized-gradient descent on the latent state with a gamma grid:
/// every epoch evaluates `batch` candidates `z - gamma * g/|g|` for gamma
/// equally spaced over [0, gamma_max] and keeps the lowest loss.
pub(crate) fn descend_latent(
    params: &NetworkParams,
    z0: LatentState,
    epochs: usize,
    batch: usize,
    gamma_max: f64,
    loss: &dyn LatentLoss,
) -> Result<DescentOutcome> {
    let mut z = z0;
    let mut pass = decode(params, &z)?;
    let (mut current_loss, mut d_out) = loss.eval(&pass);
    if !current_loss.is_finite() {
        return Err(Error::NonFiniteLoss { context: "latent descent start" });
    }
    let mut trace = Vec::with_capacity(epochs + 1);
    trace.push(current_loss);

    for _ in 0..epochs {
        let grad = grad_wrt_latent_cached(params, &pass, &d_out);
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss { context: "latent gradient" });
        }
        if norm < 1e-300 {
            // nowhere to go; keep z
            trace.push(current_loss);
            continue;
        }
        let dir = grad / norm;

        let mut best: Option<(f64, LatentState, DecodePass, DVector<f64>)> = None;
        for i in 0..batch.max(2) {
            let gamma = gamma_max * i as f64 / (batch.max(2) - 1) as f64;
            let candidate = LatentState(&z.0 - gamma * &dir);
            let cand_pass = decode(params, &candidate)?;
            let (cand_loss, cand_grad) = loss.eval(&cand_pass);
            if !cand_loss.is_finite() {
                return Err(Error::NonFiniteLoss { context: "latent descent candidate" });
            }
            if best.as_ref().is_none_or(|(l, ..)| cand_loss < *l) {
                best = Some((cand_loss, candidate, cand_pass, cand_grad));
            }
        }
        let (loss_val, best_z, best_pass, best_grad) = best.unwrap();
        z = best_z;
        pass = best_pass;
        d_out = best_grad;
        current_loss = loss_val;
        trace.push(current_loss);
    }
    Ok(DescentOutcome { z, trace })
}

/// Gradient pair of an L2-norm term `w * ||x - c||`, accumulated into `out`
/// at the block starting at `offset`. Returns the term value.
pub(crate) fn norm_term(
    w: f64,
    x: &[f64],
    center: Option<&[f64]>,
    out: &mut DVector<f64>,
    offset: usize,
    unit_scale: f64,
) -> f64 {
    let residual: Vec<f64> = match center {
        Some(c) => x.iter().zip(c).map(|(a, b)| a - b).collect(),
        None => x.to_vec(),
    };
    let norm: f64 = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    if norm > 1e-300 {
        for (i, r) in residual.iter().enumerate() {
            // d||x-c||/dx_scaled = (x-c)/||..|| * d x/d x_scaled
            out[offset + i] += w * r / norm * unit_scale;
        }
    }
    w * norm
}

/// Result of the latent-space controller.
#[derive(Debug, Clone)]
pub struct ControlOutcome {
    /// Spool command to send, after elongation compensation, mm.
    pub l_target: Vec<f64>,
    /// The decoded optimum (theta_calc, T_calc, l_calc) in physical units.
    pub decoded: SensorTriple,
    /// Loss at start and after each epoch; non-increasing.
    pub trace: Vec<f64>,
}

struct ControlLoss<'a> {
    cfg: &'a ControlConfig,
    d: usize,
    m: usize,
    theta_target: &'a [f64],
    /// N*mm; the torque term drives -G^T T toward this.
    tau_target: &'a [f64],
    /// mm/rad, frozen at (theta_target, T_current)
    jacobian: &'a DMatrix<f64>,
}

impl LatentLoss for ControlLoss<'_> {
    fn eval(&self, pass: &DecodePass) -> (f64, DVector<f64>) {
        let out = pass.output();
        let (d, m) = (self.d, self.m);
        let mut grad = DVector::zeros(d + 2 * m);

        // tensions arrive in scaled units; the norm is taken on them directly
        let t_scaled: Vec<f64> = (0..m).map(|i| out[d + i]).collect();
        let theta: Vec<f64> = (0..d).map(|i| out[i]).collect();
        let mut loss = norm_term(self.cfg.w_tension, &t_scaled, None, &mut grad, d, 1.0);
        loss += norm_term(self.cfg.w_theta, &theta, Some(self.theta_target), &mut grad, 0, 1.0);

        // torque consistency in physical units: r = tau_target + G^T T
        let t_phys: Vec<f64> = t_scaled.iter().map(|t| t * TENSION_SCALE).collect();
        let mut residual = self.tau_target.to_vec();
        for j in 0..d {
            for mm in 0..m {
                residual[j] += self.jacobian[(mm, j)] * t_phys[mm];
            }
        }
        let rnorm: f64 = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        loss += self.cfg.w_torque * rnorm;
        if rnorm > 1e-300 {
            for mm in 0..m {
                let mut dt = 0.0;
                for j in 0..d {
                    dt += self.jacobian[(mm, j)] * residual[j] / rnorm;
                }
                grad[d + mm] += self.cfg.w_torque * dt * TENSION_SCALE;
            }
        }
        (loss, grad)
    }
}

/// Latent-space posture control: encode (theta_target, T_current), descend
/// the tension/tracking/torque loss with the Jacobian frozen at the start
/// posture, and compensate the final decoded command for stiffness-control
/// sag.
pub fn control_latent(
    params: &NetworkParams,
    theta_target: &[f64],
    t_current: &[f64],
    tau_target: &[f64],
    cfg: &ControlConfig,
    msc: &MscParams,
) -> Result<ControlOutcome> {
    let z0 = encode_theta_tension(params, theta_target, t_current);
    let jacobian = muscle_jacobian_mae(params, theta_target, t_current, cfg.jacobian_step)?;
    let loss = ControlLoss {
        cfg,
        d: params.d(),
        m: params.m(),
        theta_target,
        tau_target,
        jacobian: &jacobian,
    };
    let outcome = descend_latent(params, z0, cfg.epochs, cfg.batch, cfg.gamma_max, &loss)?;
    let decoded = decode_triple(params, &outcome.z)?;
    let comp = l_comp(&decoded.tension, msc);
    let l_target = decoded.length.iter().zip(&comp).map(|(l, c)| l + c).collect();
    Ok(ControlOutcome { l_target, decoded, trace: outcome.trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerSpec;

    #[test]
    fn msc_matches_the_stiffness_law() {
        let msc = MscParams::default();
        let l_cur = vec![5.0, 5.0, 5.0];
        // equal lengths -> bias everywhere
        let t = msc_target_tension(&l_cur, &l_cur, &msc);
        assert!(t.iter().all(|&x| x == msc.t_bias));
        // +10 mm error with K=2 -> bias + 20
        let t = msc_target_tension(&l_cur, &[-5.0, -5.0, -5.0], &msc);
        assert!(t.iter().all(|&x| (x - (msc.t_bias + 20.0)).abs() < 1e-12));
        // slack side never drops below bias
        let t = msc_target_tension(&l_cur, &[50.0, 50.0, 50.0], &msc);
        assert!(t.iter().all(|&x| x == msc.t_bias));
    }

    #[test]
    fn msc_output_is_always_at_least_bias() {
        let msc = MscParams::default();
        for err in [-100.0, -1.0, 0.0, 0.5, 3.0, 400.0] {
            let t = msc_target_tension(&[err], &[0.0], &msc);
            assert!(t[0] >= msc.t_bias);
        }
    }

    #[test]
    fn l_comp_zero_at_bias_and_linear() {
        let msc = MscParams::default();
        assert_eq!(l_comp(&[msc.t_bias], &msc)[0], 0.0);
        let delta = 7.5;
        let t = msc.t_bias + msc.k_stiff * delta;
        assert!((l_comp(&[t], &msc)[0] + delta).abs() < 1e-12);
    }

    #[test]
    fn msc_round_trips_through_l_comp() {
        // Commanding l_target + l_comp(T) and sitting at l_target reproduces
        // exactly T for T >= bias.
        let msc = MscParams::default();
        let l_target = 12.0;
        for t in [30.0, 31.0, 75.0, 200.0, 412.5] {
            let commanded = l_target + l_comp(&[t], &msc)[0];
            let realized = msc_target_tension(&[l_target], &[commanded], &msc)[0];
            assert!((realized - t).abs() < 1e-9, "t={t} realized={realized}");
        }
    }

    #[test]
    fn two_step_with_bias_reference_is_the_raw_decode() {
        let params = NetworkParams::new(LayerSpec::new(5, 10).unwrap(), 3);
        let msc = MscParams::default();
        let theta_target = vec![0.1, -0.3, 0.2, -0.5, 0.0];
        let bias = vec![msc.t_bias; 10];
        let l = control_two_step(&params, &theta_target, &bias, &msc).unwrap();
        let z = encode_theta_tension(&params, &theta_target, &bias);
        let raw = decode_triple(&params, &z).unwrap();
        for (a, b) in l.iter().zip(&raw.length) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_network_gives_zero_jacobian() {
        let mut params = NetworkParams::new(LayerSpec::new(3, 4).unwrap(), 5);
        // zero the decoder output weights: output constant in everything
        let last = params.mlp.layer_count() - 1;
        params.mlp.weights[last].fill(0.0);
        let jac = muscle_jacobian_mae(&params, &[0.1, 0.2, 0.3], &[10.0; 4], 1e-3).unwrap();
        assert!(jac.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_columns_are_forward_differences_by_construction() {
        let params = NetworkParams::new(LayerSpec::new(3, 4).unwrap(), 5);
        let theta = [0.05, -0.1, 0.2];
        let tension = [20.0, 40.0, 10.0, 5.0];
        let step = 1e-3;
        let jac = muscle_jacobian_mae(&params, &theta, &tension, step).unwrap();
        let base = decode_triple(&params, &encode_theta_tension(&params, &theta, &tension)).unwrap();
        let mut probe = theta;
        probe[1] += step;
        let moved = decode_triple(&params, &encode_theta_tension(&params, &probe, &tension)).unwrap();
        for m in 0..4 {
            let fd = (moved.length[m] - base.length[m]) / step;
            assert!((jac[(m, 1)] - fd).abs() < 1e-12);
        }
    }

    #[test]
    fn latent_descent_trace_is_monotone_and_reduces_tension_norm() {
        let params = NetworkParams::new(LayerSpec::new(5, 10).unwrap(), 21);
        let cfg = ControlConfig::default();
        let msc = MscParams::default();
        let theta_target = vec![0.2, -0.4, 0.1, -0.6, 0.3];
        let t_current = vec![60.0; 10];
        let tau_target = vec![100.0, -50.0, 20.0, -10.0, 5.0];
        let out =
            control_latent(&params, &theta_target, &t_current, &tau_target, &cfg, &msc).unwrap();
        assert_eq!(out.trace.len(), cfg.epochs + 1);
        for w in out.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace must be non-increasing: {:?}", out.trace);
        }
    }

    #[test]
    fn zero_gradient_keeps_the_latent_state() {
        // constant decoder -> zero gradient everywhere -> z unchanged
        let mut params = NetworkParams::new(LayerSpec::new(2, 3).unwrap(), 1);
        let last = params.mlp.layer_count() - 1;
        params.mlp.weights[last].fill(0.0);
        params.mlp.biases[last].fill(0.3);
        let cfg = ControlConfig::default();
        let msc = MscParams::default();
        let out = control_latent(
            &params,
            &[0.1, 0.2],
            &[10.0, 20.0, 30.0],
            &[0.0, 0.0],
            &cfg,
            &msc,
        )
        .unwrap();
        let z0 = encode_theta_tension(&params, &[0.1, 0.2], &[10.0, 20.0, 30.0]);
        let z_end = encode_theta_tension(&params, &[0.1, 0.2], &[10.0, 20.0, 30.0]);
        assert_eq!(z0.0, z_end.0);
        assert!(out.trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn holding_torque_opposes_gravity() {
        let model = GeometricModel::default_arm();
        let theta = vec![0.0; 5];
        let tau = holding_torque(&model, &theta, 0.0, None).unwrap();
        let grav = gravity_torque(&model, &theta, 0.0).unwrap();
        for (a, b) in tau.iter().zip(&grav) {
            assert!((a + b).abs() < 1e-12);
        }
        // a downward tip force adds J^T F
        let force = Vector3::new(0.0, 0.0, -50.0);
        let tau_f = holding_torque(&model, &theta, 0.0, Some(&force)).unwrap();
        let jac = end_effector_jacobian(&model, &theta).unwrap();
        for d in 0..5 {
            let jt: f64 = (0..3).map(|r| jac[(r, d)] * force[r]).sum();
            assert!((tau_f[d] - (-grav[d] - jt)).abs() < 1e-9);
        }
    }
}
