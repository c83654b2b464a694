//! The learned quasi-static simulator: advance (theta_sim, T_sim) from
//! commanded muscle lengths by latent descent, under either a torque
//! objective (gravity/external force consistency) or a forced-posture
//! objective.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::control::{
    descend_latent, holding_torque, muscle_jacobian_mae, norm_term, LatentLoss,
};
use crate::error::{Error, Result};
use crate::model::GeometricModel;
use crate::net::{
    decode, encode_case, unscale_units, DecodePass, MaskCase, NetworkParams, SensorTriple,
    LENGTH_SCALE, TENSION_SCALE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Torque,
    Fix,
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimMode::Torque => write!(f, "torque"),
            SimMode::Fix => write!(f, "fix"),
        }
    }
}

/// Simulator state; `length` holds the last commanded (settled) spool
/// lengths, not a decoded value.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub theta: Vec<f64>,
    pub tension: Vec<f64>,
    pub length: Vec<f64>,
    pub mode: SimMode,
}

impl SimState {
    /// Start the simulator from a sensor snapshot (typically the plant's
    /// settled initial state).
    pub fn from_triple(triple: &SensorTriple) -> Self {
        SimState {
            theta: triple.theta.clone(),
            tension: triple.tension.clone(),
            length: triple.length.clone(),
            mode: SimMode::Torque,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub w_tension: f64,
    pub w_length: f64,
    pub w_torque: f64,
    pub w_fix: f64,
    pub gamma_max: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Finite-difference step for the learned muscle Jacobian, rad.
    pub jacobian_step: f64,
    /// Encoder for FIX mode; tension-masked works more stably, but the
    /// angle-masked encoder of TORQUE mode stays selectable for comparison.
    pub fix_encoder: MaskCase,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            w_tension: 0.1,
            w_length: 1.0,
            w_torque: 0.001,
            w_fix: 1.0,
            gamma_max: 0.2,
            batch: 10,
            epochs: 3,
            jacobian_step: 1e-3,
            fix_encoder: MaskCase::InferTension,
        }
    }
}

struct TorqueLoss<'a> {
    cfg: &'a SimConfig,
    d: usize,
    m: usize,
    /// scaled (mm/100) command
    l_cmd_scaled: Vec<f64>,
    tau_target: &'a [f64],
    jacobian: &'a DMatrix<f64>,
}

impl LatentLoss for TorqueLoss<'_> {
    fn eval(&self, pass: &DecodePass) -> (f64, DVector<f64>) {
        let out = pass.output();
        let (d, m) = (self.d, self.m);
        let mut grad = DVector::zeros(d + 2 * m);
        let t_scaled: Vec<f64> = (0..m).map(|i| out[d + i]).collect();
        let l_scaled: Vec<f64> = (0..m).map(|i| out[d + m + i]).collect();

        let mut loss = norm_term(self.cfg.w_tension, &t_scaled, None, &mut grad, d, 1.0);
        loss += norm_term(
            self.cfg.w_length,
            &l_scaled,
            Some(&self.l_cmd_scaled),
            &mut grad,
            d + m,
            1.0,
        );

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

struct FixLoss<'a> {
    cfg: &'a SimConfig,
    d: usize,
    m: usize,
    l_cmd_scaled: Vec<f64>,
    theta_fix: &'a [f64],
}

impl LatentLoss for FixLoss<'_> {
    fn eval(&self, pass: &DecodePass) -> (f64, DVector<f64>) {
        let out = pass.output();
        let (d, m) = (self.d, self.m);
        let mut grad = DVector::zeros(d + 2 * m);
        let t_scaled: Vec<f64> = (0..m).map(|i| out[d + i]).collect();
        let l_scaled: Vec<f64> = (0..m).map(|i| out[d + m + i]).collect();
        let theta: Vec<f64> = (0..d).map(|i| out[i]).collect();

        let mut loss = norm_term(self.cfg.w_tension, &t_scaled, None, &mut grad, d, 1.0);
        loss += norm_term(
            self.cfg.w_length,
            &l_scaled,
            Some(&self.l_cmd_scaled),
            &mut grad,
            d + m,
            1.0,
        );
        loss += norm_term(self.cfg.w_fix, &theta, Some(self.theta_fix), &mut grad, 0, 1.0);
        (loss, grad)
    }
}

fn encode_state(params: &NetworkParams, state: &SimState, case: MaskCase) -> crate::net::LatentState {
    let triple = SensorTriple {
        theta: state.theta.clone(),
        tension: state.tension.clone(),
        length: state.length.clone(),
    };
    encode_case(params, case, &triple)
}

/// Outcome of one simulator step.
#[derive(Debug, Clone)]
pub struct SimStep {
    pub state: SimState,
    /// Loss at start and after each epoch; non-increasing.
    pub trace: Vec<f64>,
}

/// Advance the simulator one tick toward commanded lengths `l_cmd` while
/// producing the holding torque `tau_target`: encode (T_sim, l_sim), descend
/// the tension/length/torque loss with the Jacobian frozen at
/// (theta_sim, T_sim), then adopt the decoded (theta', T') and set
/// `l_sim = l_cmd`. On a non-finite loss the old state is left untouched.
pub fn sim_step_torque(
    params: &NetworkParams,
    state: &SimState,
    l_cmd: &[f64],
    tau_target: &[f64],
    cfg: &SimConfig,
) -> Result<SimStep> {
    if l_cmd.len() != params.m() {
        return Err(Error::ShapeMismatch { what: "l_cmd", expected: params.m(), got: l_cmd.len() });
    }
    let z0 = encode_state(params, state, MaskCase::InferTheta);
    let jacobian = muscle_jacobian_mae(params, &state.theta, &state.tension, cfg.jacobian_step)?;
    let loss = TorqueLoss {
        cfg,
        d: params.d(),
        m: params.m(),
        l_cmd_scaled: l_cmd.iter().map(|l| l / LENGTH_SCALE).collect(),
        tau_target,
        jacobian: &jacobian,
    };
    let outcome = descend_latent(params, z0, cfg.epochs, cfg.batch, cfg.gamma_max, &loss)?;
    let decoded = decode(params, &outcome.z)?;
    let triple = unscale_units(decoded.output(), params.d(), params.m());
    Ok(SimStep {
        state: SimState {
            theta: triple.theta,
            tension: triple.tension,
            length: l_cmd.to_vec(),
            mode: SimMode::Torque,
        },
        trace: outcome.trace,
    })
}

/// Advance the simulator one tick with the posture forced to `theta_fix`
/// (externally moved or resting against something). Encodes with the
/// configured FIX encoder and descends the tension/length/posture loss.
pub fn sim_step_fix(
    params: &NetworkParams,
    state: &SimState,
    l_cmd: &[f64],
    theta_fix: &[f64],
    cfg: &SimConfig,
) -> Result<SimStep> {
    if l_cmd.len() != params.m() {
        return Err(Error::ShapeMismatch { what: "l_cmd", expected: params.m(), got: l_cmd.len() });
    }
    if theta_fix.len() != params.d() {
        return Err(Error::ShapeMismatch {
            what: "theta_fix",
            expected: params.d(),
            got: theta_fix.len(),
        });
    }
    let z0 = encode_state(params, state, cfg.fix_encoder);
    let loss = FixLoss {
        cfg,
        d: params.d(),
        m: params.m(),
        l_cmd_scaled: l_cmd.iter().map(|l| l / LENGTH_SCALE).collect(),
        theta_fix,
    };
    let outcome = descend_latent(params, z0, cfg.epochs, cfg.batch, cfg.gamma_max, &loss)?;
    let decoded = decode(params, &outcome.z)?;
    let triple = unscale_units(decoded.output(), params.d(), params.m());
    Ok(SimStep {
        state: SimState {
            theta: triple.theta,
            tension: triple.tension,
            length: l_cmd.to_vec(),
            mode: SimMode::Fix,
        },
        trace: outcome.trace,
    })
}

/// A timed simulator command.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptEvent {
    /// `at <tick> len <m values>`: new spool command, torque mode.
    Lengths(Vec<f64>),
    /// `at <tick> force <fx fy fz>`: external tip force in N, torque mode.
    Force(Vector3<f64>),
    /// `at <tick> fix <d values>`: forced posture, fix mode.
    Fix(Vec<f64>),
}

/// Parse a command script. Lines: `at <tick> len|force|fix <values...>`,
/// `#` comments allowed.
pub fn parse_script(text: &str, file: &str, d: usize, m: usize) -> Result<Vec<(u64, ScriptEvent)>> {
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { file: file.to_string(), line: line_no, message };
        let mut tok = line.split_whitespace();
        if tok.next() != Some("at") {
            return Err(err("expected 'at <tick> <command> ...'".into()));
        }
        let tick: u64 = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("bad tick".into()))?;
        let kind = tok.next().ok_or_else(|| err("missing command".into()))?;
        let values: Vec<f64> = tok
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad value '{t}'"))))
            .collect::<Result<_>>()?;
        let event = match kind {
            "len" => {
                if values.len() != m {
                    return Err(err(format!("len needs {m} values, got {}", values.len())));
                }
                ScriptEvent::Lengths(values)
            }
            "force" => {
                if values.len() != 3 {
                    return Err(err(format!("force needs 3 values, got {}", values.len())));
                }
                ScriptEvent::Force(Vector3::new(values[0], values[1], values[2]))
            }
            "fix" => {
                if values.len() != d {
                    return Err(err(format!("fix needs {d} values, got {}", values.len())));
                }
                ScriptEvent::Fix(values)
            }
            other => return Err(err(format!("unknown command '{other}'"))),
        };
        events.push((tick, event));
    }
    events.sort_by_key(|(tick, _)| *tick);
    Ok(events)
}

/// One logged tick of a scripted run.
#[derive(Debug, Clone)]
pub struct SimTraceRow {
    pub tick: u64,
    pub mode: SimMode,
    pub theta: Vec<f64>,
    pub tension: Vec<f64>,
}

/// Run a command script tick by tick, switching the loss per event type.
/// Torque targets come from the geometric model's gravity compensation plus
/// the scripted external force. Returns the per-tick trajectory.
pub fn run_simulation(
    params: &NetworkParams,
    model: &GeometricModel,
    initial: &SimState,
    script: &[(u64, ScriptEvent)],
    cfg: &SimConfig,
) -> Result<Vec<SimTraceRow>> {
    let mut state = initial.clone();
    let mut rows = Vec::new();
    if script.is_empty() {
        rows.push(SimTraceRow {
            tick: 0,
            mode: state.mode,
            theta: state.theta.clone(),
            tension: state.tension.clone(),
        });
        return Ok(rows);
    }
    let last_tick = script.iter().map(|(t, _)| *t).max().unwrap();

    let mut l_cmd = state.length.clone();
    let mut force = Vector3::zeros();
    let mut fix_target: Option<Vec<f64>> = None;
    let mut next_event = 0usize;

    for tick in 0..=last_tick {
        while next_event < script.len() && script[next_event].0 == tick {
            match &script[next_event].1 {
                ScriptEvent::Lengths(l) => {
                    l_cmd = l.clone();
                    fix_target = None;
                }
                ScriptEvent::Force(f) => {
                    force = *f;
                    fix_target = None;
                }
                ScriptEvent::Fix(theta) => {
                    fix_target = Some(theta.clone());
                }
            }
            next_event += 1;
        }

        let step = match &fix_target {
            Some(theta_fix) => sim_step_fix(params, &state, &l_cmd, theta_fix, cfg)?,
            None => {
                let mut theta_clamped = state.theta.clone();
                model.clamp_to_limits(&mut theta_clamped);
                let tau = holding_torque(model, &theta_clamped, 0.0, Some(&force))?;
                sim_step_torque(params, &state, &l_cmd, &tau, cfg)?
            }
        };
        state = step.state;
        rows.push(SimTraceRow {
            tick,
            mode: state.mode,
            theta: state.theta.clone(),
            tension: state.tension.clone(),
        });
    }
    Ok(rows)
}
