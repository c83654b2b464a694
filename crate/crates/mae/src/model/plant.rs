//! The synthetic plant that stands in for the physical robot: the nominal
//! geometric model with perturbed routing and elongation, Coulomb joint
//! friction, optional disabled muscles, and an optional carried end load.
//!
//! Muscles are driven by muscle stiffness control, so a step solves the
//! coupled quasi-static equilibrium: tensions follow the MSC law at the
//! settled sensor lengths while the net joint torque falls inside the
//! per-joint friction band.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::kinematics::{
    gravity_potential_unchecked, gravity_torque_unchecked, lengths_abs_unchecked,
    muscle_jacobian_unchecked,
};
use super::GeometricModel;
use crate::control::MscParams;
use crate::error::{Error, Result};
use crate::net::SensorTriple;

/// Torque tolerance on top of the friction band, N*mm.
const RESIDUAL_TOL: f64 = 1e-3;
const MAX_NEWTON_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    /// Seed for the routing/elongation perturbation.
    pub seed: u64,
    /// Every via-point coordinate is shifted by U(-offset, offset) mm.
    pub relay_offset_mm: f64,
    /// Scale factor applied to both elongation parameters `k_d` and `a`.
    pub elongation_scale: f64,
    /// Per-joint Coulomb dead zone, N*mm.
    pub friction_torque: Vec<f64>,
    /// Muscles whose actuators are switched off (tension 0, stale length).
    pub disabled_muscles: Vec<usize>,
    /// Point mass carried at the end effector, kg.
    pub end_load_kg: f64,
}

impl PlantConfig {
    pub fn new(joint_count: usize) -> Self {
        PlantConfig {
            seed: 1,
            relay_offset_mm: 10.0,
            elongation_scale: 1.5,
            friction_torque: vec![25.0; joint_count],
            disabled_muscles: Vec::new(),
            end_load_kg: 0.0,
        }
    }

    pub fn validate(&self, model: &GeometricModel) -> Result<()> {
        if self.friction_torque.len() != model.joint_count() {
            return Err(Error::ShapeMismatch {
                what: "friction_torque",
                expected: model.joint_count(),
                got: self.friction_torque.len(),
            });
        }
        if self.friction_torque.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::InvalidModel("friction_torque must be >= 0".into()));
        }
        if !self.relay_offset_mm.is_finite() || !self.elongation_scale.is_finite() {
            return Err(Error::InvalidModel("non-finite perturbation magnitude".into()));
        }
        if let Some(&m) = self.disabled_muscles.iter().find(|&&m| m >= model.muscle_count()) {
            return Err(Error::InvalidModel(format!(
                "disabled muscle {m} out of range (M={})",
                model.muscle_count()
            )));
        }
        Ok(())
    }
}

/// Current quasi-static equilibrium of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// rad
    pub theta: Vec<f64>,
    /// N, componentwise >= 0
    pub tension: Vec<f64>,
    /// Sensor muscle length relative to the initial posture, actuator side, mm.
    pub length: Vec<f64>,
    /// Largest effective torque residual at the last settle, N*mm.
    pub equilibrium_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Plant {
    /// The perturbed "true" model; hidden from controllers.
    true_model: GeometricModel,
    config: PlantConfig,
    /// Absolute muscle lengths of the true model at the zero posture.
    lengths_at_zero: Vec<f64>,
    state: PlantState,
}

/// Perturb the nominal model into the "true" one: shift every via-point and
/// scale the elongation parameters.
fn perturb_model(nominal: &GeometricModel, config: &PlantConfig) -> GeometricModel {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut model = nominal.clone();
    let r = config.relay_offset_mm;
    for route in &mut model.routes {
        for point in &mut route.points {
            for c in 0..3 {
                point.offset[c] += rng.random_range(-r..=r);
            }
        }
    }
    model.elongation.k_d *= config.elongation_scale;
    model.elongation.a *= config.elongation_scale;
    model
}

impl Plant {
    /// Build the perturbed plant and settle it once under bias tension.
    pub fn new(nominal: &GeometricModel, config: PlantConfig, msc: &MscParams) -> Result<Self> {
        nominal.validate()?;
        config.validate(nominal)?;
        let true_model = perturb_model(nominal, &config);
        let zero = vec![0.0; true_model.joint_count()];
        let lengths_at_zero = lengths_abs_unchecked(&true_model, &zero);
        let m = true_model.muscle_count();
        let mut plant = Plant {
            state: PlantState {
                theta: zero,
                tension: vec![msc.t_bias; m],
                length: vec![0.0; m],
                equilibrium_residual: 0.0,
            },
            true_model,
            config,
            lengths_at_zero,
        };
        // Hold the spools where bias tension keeps the zero posture, then
        // let the arm settle under gravity.
        let initial_target = plant.sensor_lengths(&plant.state.theta.clone(), &vec![msc.t_bias; m]);
        plant.step(&initial_target, msc)?;
        Ok(plant)
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    /// Ground-truth model, used only by oracles and plant-side baselines.
    pub fn true_model(&self) -> &GeometricModel {
        &self.true_model
    }

    /// Enable or disable the end load mid-experiment (resettles on next step).
    pub fn set_end_load(&mut self, kg: f64) {
        self.config.end_load_kg = kg;
    }

    /// Switch a muscle's actuator off; its tension drops to zero and its
    /// length sensor keeps reporting the commanded spool position.
    pub fn disable_muscle(&mut self, muscle: usize) {
        if !self.config.disabled_muscles.contains(&muscle) {
            self.config.disabled_muscles.push(muscle);
        }
    }

    /// The sensor snapshot controllers and estimators are allowed to see.
    pub fn sensor_triple(&self) -> SensorTriple {
        SensorTriple {
            theta: self.state.theta.clone(),
            tension: self.state.tension.clone(),
            length: self.state.length.clone(),
        }
    }

    fn elongation_scalar(&self, l_abs: f64, tension: f64) -> f64 {
        let e = &self.true_model.elongation;
        e.k_d * l_abs * tension + e.a * (1.0 - (-e.b * tension).exp())
    }

    /// Sensor lengths (relative, actuator side) at a posture and tension.
    fn sensor_lengths(&self, theta: &[f64], tension: &[f64]) -> Vec<f64> {
        let l_abs = lengths_abs_unchecked(&self.true_model, theta);
        (0..self.true_model.muscle_count())
            .map(|m| {
                l_abs[m] - self.lengths_at_zero[m] - self.elongation_scalar(l_abs[m], tension[m])
            })
            .collect()
    }

    /// Per-muscle MSC tension at posture `theta`, solving the scalar fixed
    /// point T = bias + max(0, K*(l_sensor(theta, T) - l_target)).
    fn tensions_at(&self, theta: &[f64], l_target: &[f64], msc: &MscParams) -> Vec<f64> {
        let l_abs = lengths_abs_unchecked(&self.true_model, theta);
        (0..self.true_model.muscle_count())
            .map(|m| {
                if self.config.disabled_muscles.contains(&m) {
                    return 0.0;
                }
                let rel = l_abs[m] - self.lengths_at_zero[m];
                let mut t = self.state.tension[m].max(msc.t_bias);
                // contraction: |d elongation/dT * K| << 1 for sane gains
                for _ in 0..60 {
                    let sensor = rel - self.elongation_scalar(l_abs[m], t);
                    let next = msc.t_bias + (msc.k_stiff * (sensor - l_target[m])).max(0.0);
                    if (next - t).abs() < 1e-10 {
                        t = next;
                        break;
                    }
                    t = next;
                }
                t
            })
            .collect()
    }

    /// Net joint torque: gravity (plus end load) minus muscle torque G^T T.
    fn raw_residual(&self, theta: &[f64], tension: &[f64]) -> Vec<f64> {
        let tau_g = gravity_torque_unchecked(&self.true_model, theta, self.config.end_load_kg);
        let jac = muscle_jacobian_unchecked(&self.true_model, theta);
        let d = self.true_model.joint_count();
        (0..d)
            .map(|j| {
                let muscle: f64 = (0..tension.len()).map(|m| jac[(m, j)] * tension[m]).sum();
                tau_g[j] - muscle
            })
            .collect()
    }

    /// Residual after removing the part carried by friction or joint stops;
    /// zero means nothing would move.
    fn effective_residual(&self, theta: &[f64], raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, &r)| {
                let limits = self.true_model.joints[j].limits;
                let against_stop = (theta[j] <= limits[0] && r < 0.0)
                    || (theta[j] >= limits[1] && r > 0.0);
                if against_stop {
                    return 0.0;
                }
                let band = self.config.friction_torque[j];
                if r.abs() <= band {
                    0.0
                } else {
                    r - band * r.signum()
                }
            })
            .collect()
    }

    fn raw_at(&self, theta: &[f64], l_target: &[f64], msc: &MscParams) -> Vec<f64> {
        let tension = self.tensions_at(theta, l_target, msc);
        self.raw_residual(theta, &tension)
    }

    fn effective_norm(&self, theta: &[f64], raw: &[f64]) -> f64 {
        self.effective_residual(theta, raw)
            .iter()
            .fold(0.0f64, |a, &r| a.max(r.abs()))
    }

    /// Residual with only the joint-stop support removed (friction kept);
    /// this is the force that can actually move the plant.
    fn stop_adjusted(&self, theta: &[f64], raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, &r)| {
                let limits = self.true_model.joints[j].limits;
                let against_stop = (theta[j] <= limits[0] && r < 0.0)
                    || (theta[j] >= limits[1] && r > 0.0);
                if against_stop {
                    0.0
                } else {
                    r
                }
            })
            .collect()
    }

    /// Total potential driving the quasi-static motion: gravity plus the
    /// elastic energy stored by the stiffness controller. The torque
    /// residual is (minus) its gradient, so flowing along the residual
    /// always descends this function.
    fn total_potential(&self, theta: &[f64], l_target: &[f64], msc: &MscParams) -> f64 {
        let tension = self.tensions_at(theta, l_target, msc);
        let sensors = self.sensor_lengths(theta, &tension);
        let mut v = gravity_potential_unchecked(&self.true_model, theta, self.config.end_load_kg);
        for m in 0..sensors.len() {
            if self.config.disabled_muscles.contains(&m) {
                continue;
            }
            let stretch = (sensors[m] - l_target[m]).max(0.0);
            v += msc.t_bias * sensors[m] + 0.5 * msc.k_stiff * stretch * stretch;
        }
        v
    }

    /// Advance the plant to the quasi-static equilibrium for spool targets
    /// `l_target` under muscle stiffness control.
    ///
    /// Damped Newton on the raw torque residual, with tensions eliminated
    /// through the MSC fixed point at every iterate and a gradient-descent
    /// fallback when a Newton step stalls. The solver stops as soon as the
    /// effective residual — raw torque minus what friction or a joint stop
    /// carries — is inside the tolerance, so repeating a command is a no-op.
    pub fn step(&mut self, l_target: &[f64], msc: &MscParams) -> Result<&PlantState> {
        let d = self.true_model.joint_count();
        let m = self.true_model.muscle_count();
        if l_target.len() != m {
            return Err(Error::ShapeMismatch {
                what: "l_target",
                expected: m,
                got: l_target.len(),
            });
        }
        if l_target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite l_target".into()));
        }

        let mut theta = self.state.theta.clone();
        let mut raw = self.raw_at(&theta, l_target, msc);
        let mut norm = self.effective_norm(&theta, &raw);
        let fd_step = 1e-5;
        let adj_norm_of = |adj: &[f64]| adj.iter().fold(0.0f64, |a, &r| a.max(r.abs()));

        let mut iters = 0;
        while norm > RESIDUAL_TOL {
            if iters >= MAX_NEWTON_ITERS {
                return Err(Error::SolverDiverged { iterations: iters, residual: norm });
            }
            iters += 1;

            let adjusted = self.stop_adjusted(&theta, &raw);
            let adj_norm = adj_norm_of(&adjusted);
            let stuck: Vec<bool> = adjusted
                .iter()
                .zip(&raw)
                .map(|(&a, &r)| a == 0.0 && r != 0.0)
                .collect();

            let mut jac = DMatrix::zeros(d, d);
            for col in 0..d {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[col] += fd_step;
                minus[col] -= fd_step;
                let rp = self.raw_at(&plus, l_target, msc);
                let rm = self.raw_at(&minus, l_target, msc);
                for row in 0..d {
                    jac[(row, col)] = (rp[row] - rm[row]) / (2.0 * fd_step);
                }
            }
            // freeze stop-supported joints: identity row/column, zero rhs
            for j in 0..d {
                if stuck[j] {
                    for k in 0..d {
                        jac[(j, k)] = 0.0;
                        jac[(k, j)] = 0.0;
                    }
                    jac[(j, j)] = 1.0;
                }
            }
            let rhs = nalgebra::DVector::from_iterator(
                d,
                adjusted.iter().map(|&r| -r),
            );
            let newton = jac.lu().solve(&rhs);

            let mut accepted = false;
            if let Some(delta) = newton {
                let mut scale: f64 = 1.0;
                // cap the step so one iteration never tunnels across basins
                let max_step = delta.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                if max_step > 0.3 {
                    scale = 0.3 / max_step;
                }
                for _ in 0..8 {
                    let mut trial = theta.clone();
                    for j in 0..d {
                        trial[j] += scale * delta[j];
                    }
                    self.true_model.clamp_to_limits(&mut trial);
                    let trial_raw = self.raw_at(&trial, l_target, msc);
                    let trial_adj = self.stop_adjusted(&trial, &trial_raw);
                    let trial_norm = self.effective_norm(&trial, &trial_raw);
                    if adj_norm_of(&trial_adj) < adj_norm || trial_norm <= RESIDUAL_TOL {
                        theta = trial;
                        raw = trial_raw;
                        norm = trial_norm;
                        accepted = true;
                        break;
                    }
                    scale *= 0.5;
                }
            }

            if !accepted {
                // Fallback: follow the torque itself (steepest descent on the
                // total potential), which carries the state through regions
                // where the residual norm alone has spurious minima.
                let dir_scale = adj_norm.max(1e-9);
                let potential_now = self.total_potential(&theta, l_target, msc);
                let mut improved = false;
                let mut step_rad = 0.05;
                for _ in 0..14 {
                    let mut trial = theta.clone();
                    for j in 0..d {
                        trial[j] += step_rad * adjusted[j] / dir_scale;
                    }
                    self.true_model.clamp_to_limits(&mut trial);
                    let trial_raw = self.raw_at(&trial, l_target, msc);
                    let trial_norm = self.effective_norm(&trial, &trial_raw);
                    let trial_potential = self.total_potential(&trial, l_target, msc);
                    if trial_potential < potential_now - 1e-12 || trial_norm <= RESIDUAL_TOL {
                        theta = trial;
                        raw = trial_raw;
                        norm = trial_norm;
                        improved = true;
                        break;
                    }
                    step_rad *= 0.5;
                }
                if !improved {
                    return Err(Error::SolverDiverged { iterations: iters, residual: norm });
                }
            }
        }

        let tension = self.tensions_at(&theta, l_target, msc);
        let mut length = self.sensor_lengths(&theta, &tension);
        for &dm in &self.config.disabled_muscles {
            // slack cable: the spool stays where it was commanded
            length[dm] = l_target[dm];
        }
        self.state = PlantState {
            theta,
            tension,
            length,
            equilibrium_residual: norm,
        };
        Ok(&self.state)
    }
}


#[cfg(test)]
impl Plant {
    pub(crate) fn debug_tensions(&self, theta: &[f64], l_target: &[f64], msc: &MscParams) -> Vec<f64> {
        self.tensions_at(theta, l_target, msc)
    }
    pub(crate) fn debug_residual(&self, theta: &[f64], tension: &[f64]) -> Vec<f64> {
        self.raw_residual(theta, tension)
    }
}
