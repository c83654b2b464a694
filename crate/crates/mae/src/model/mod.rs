//! Geometric musculoskeletal model: serial joint chain, straight-line muscle
//! routing over via-points, and the series-elastic elongation model.
//!
//! Conventions: lengths in millimeters, masses in kilograms, tensions in
//! newtons, torques in newton-millimeters, angles in radians. Link `j` is the
//! parent of joint `j`; joint `j` sits at the distal end of link `j` and
//! rotates link `j+1`. A chain with D joints therefore has D+1 links, where
//! link 0 is the fixed base. Zero-length links let several joints share one
//! rotation center (ball-joint style).

mod kinematics;
mod parse;
mod plant;
mod sampling;

pub use kinematics::{
    end_effector_jacobian, end_effector_position, gravity_torque, link_frames, muscle_jacobian,
    muscle_length_abs, muscle_length_rel,
};
pub use parse::{parse_model, write_model};
pub use plant::{Plant, PlantConfig, PlantState};
pub use sampling::sample_initial_data;

use nalgebra::{Unit, Vector3};

use crate::error::{Error, Result};

/// Standard gravity, m/s^2. Weights in N come out as kg * G; with lever arms
/// in mm the torques are in N*mm.
pub const GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    /// Rotation axis, unit vector in the frame of the child link.
    pub axis: Unit<Vector3<f64>>,
    /// [min, max] in radians; must contain 0 (the initial posture).
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    /// Distance from this link's origin to the next joint, along local +x, mm.
    pub length: f64,
    /// kg
    pub mass: f64,
    /// Center of mass in the link frame, mm.
    pub com: Vector3<f64>,
}

/// One muscle attachment or relay point: a position fixed in some link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViaPoint {
    pub link: usize,
    pub offset: Vector3<f64>,
}

/// A muscle route: start point, optional relay points, end point, connected
/// by straight segments.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleRoute {
    pub points: Vec<ViaPoint>,
}

/// Series elasticity of one muscle: Dyneema stretch proportional to absolute
/// length and tension, plus a saturating nonlinear element.
///
/// `L_e(l_abs, T) = k_d * l_abs * T + a * (1 - exp(-b * T))`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElongationParams {
    /// mm of stretch per (mm of absolute length * N)
    pub k_d: f64,
    /// saturation amplitude of the elastic element, mm
    pub a: f64,
    /// saturation rate, 1/N
    pub b: f64,
}

impl ElongationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_d >= 0.0 && self.a >= 0.0 && self.b > 0.0) {
            return Err(Error::InvalidModel(format!(
                "elongation params out of range: k_d={}, a={}, b={}",
                self.k_d, self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Per-muscle elongation for absolute lengths `l_abs` under tensions `t`.
///
/// Componentwise monotone nondecreasing in `t`; zero at `t = 0`.
pub fn elongation(params: &ElongationParams, l_abs: &[f64], tension: &[f64]) -> Result<Vec<f64>> {
    if l_abs.len() != tension.len() {
        return Err(Error::ShapeMismatch {
            what: "elongation inputs",
            expected: l_abs.len(),
            got: tension.len(),
        });
    }
    for (m, &t) in tension.iter().enumerate() {
        if t < 0.0 {
            return Err(Error::NegativeTension { muscle: m, value: t });
        }
    }
    Ok(l_abs
        .iter()
        .zip(tension)
        .map(|(&l, &t)| params.k_d * l * t + params.a * (1.0 - (-params.b * t).exp()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricModel {
    pub joints: Vec<JointSpec>,
    /// joints.len() + 1 entries; links[0] is the base.
    pub links: Vec<LinkSpec>,
    pub routes: Vec<MuscleRoute>,
    pub elongation: ElongationParams,
}

impl GeometricModel {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn muscle_count(&self) -> usize {
        self.routes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidModel("model needs at least one joint".into()));
        }
        if self.routes.is_empty() {
            return Err(Error::InvalidModel("model needs at least one muscle".into()));
        }
        if self.links.len() != self.joints.len() + 1 {
            return Err(Error::InvalidModel(format!(
                "expected {} links for {} joints, got {}",
                self.joints.len() + 1,
                self.joints.len(),
                self.links.len()
            )));
        }
        for (j, joint) in self.joints.iter().enumerate() {
            if !(joint.limits[0] < joint.limits[1]) {
                return Err(Error::InvalidModel(format!(
                    "joint {j}: limits [{}, {}] are not ordered",
                    joint.limits[0], joint.limits[1]
                )));
            }
            if joint.limits[0] > 0.0 || joint.limits[1] < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "joint {j}: limits must contain the initial posture 0"
                )));
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            if link.length < 0.0 || link.mass < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "link {i}: negative length or mass"
                )));
            }
        }
        for (m, route) in self.routes.iter().enumerate() {
            if route.points.len() < 2 {
                return Err(Error::InvalidModel(format!(
                    "muscle {m}: route needs at least start and end point"
                )));
            }
            for p in &route.points {
                if p.link >= self.links.len() {
                    return Err(Error::InvalidModel(format!(
                        "muscle {m}: via-point references link {} of {}",
                        p.link,
                        self.links.len()
                    )));
                }
                if !p.offset.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "muscle {m}: non-finite via-point offset"
                    )));
                }
            }
        }
        self.elongation.validate()
    }

    pub fn check_limits(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.joint_count() {
            return Err(Error::ShapeMismatch {
                what: "joint vector",
                expected: self.joint_count(),
                got: theta.len(),
            });
        }
        const LIMIT_SLACK: f64 = 1e-9;
        for (j, (&th, joint)) in theta.iter().zip(&self.joints).enumerate() {
            if th < joint.limits[0] - LIMIT_SLACK || th > joint.limits[1] + LIMIT_SLACK {
                return Err(Error::JointLimit {
                    joint: j,
                    value: th,
                    min: joint.limits[0],
                    max: joint.limits[1],
                });
            }
        }
        Ok(())
    }

    pub fn clamp_to_limits(&self, theta: &mut [f64]) {
        for (th, joint) in theta.iter_mut().zip(&self.joints) {
            *th = th.clamp(joint.limits[0], joint.limits[1]);
        }
    }

    /// The default desk-scale arm: a 3-DOF shoulder (roll/pitch/yaw sharing
    /// one center) and a 2-DOF elbow (pitch/yaw), driven by 10 muscles so
    /// that every joint axis is spanned by antagonists.
    ///
    /// Anchor points sit on a ring around each joint, placed so that the
    /// angle between anchor and insertion stays on one side of zero across
    /// the whole joint range; otherwise the muscle line would sweep through
    /// the joint center and its moment arm would flip sign mid-range.
    pub fn default_arm() -> Self {
        let x = Unit::new_normalize(Vector3::x());
        let y = Unit::new_normalize(Vector3::y());
        let z = Unit::new_normalize(Vector3::z());
        let joints = vec![
            // shoulder roll / pitch / yaw
            JointSpec { axis: x, limits: [-0.5, 0.5] },
            JointSpec { axis: y, limits: [-120f64.to_radians(), 30f64.to_radians()] },
            JointSpec { axis: z, limits: [-0.5, 0.5] },
            // elbow pitch / yaw (negative pitch flexes the forearm upward)
            JointSpec { axis: y, limits: [-1.4, 0.3] },
            JointSpec { axis: z, limits: [-0.5, 0.5] },
        ];
        let links = vec![
            LinkSpec { length: 0.0, mass: 0.0, com: Vector3::zeros() }, // base
            LinkSpec { length: 0.0, mass: 0.0, com: Vector3::zeros() },
            LinkSpec { length: 0.0, mass: 0.0, com: Vector3::zeros() },
            // upper arm
            LinkSpec { length: 180.0, mass: 0.5, com: Vector3::new(90.0, 0.0, 0.0) },
            LinkSpec { length: 0.0, mass: 0.0, com: Vector3::zeros() },
            // forearm + hand
            LinkSpec { length: 200.0, mass: 0.4, com: Vector3::new(100.0, 0.0, 0.0) },
        ];

        let pt = |link: usize, x: f64, y: f64, z: f64| ViaPoint {
            link,
            offset: Vector3::new(x, y, z),
        };
        let routes = vec![
            // m0/m1: shoulder pitch antagonists (lift / lower); m1 wraps a
            // relay on the base below the joint
            MuscleRoute { points: vec![pt(0, -47.6, 0.0, 27.5), pt(3, 70.0, 0.0, 30.0)] },
            MuscleRoute { points: vec![pt(0, 18.8, 0.0, -51.7), pt(0, 30.0, 0.0, -48.0), pt(3, 70.0, 0.0, -30.0)] },
            // m2/m3: shoulder yaw antagonists
            MuscleRoute { points: vec![pt(0, -18.8, 51.7, 0.0), pt(3, 70.0, 30.0, 0.0)] },
            MuscleRoute { points: vec![pt(0, -18.8, -51.7, 0.0), pt(3, 70.0, -30.0, 0.0)] },
            // m4/m5: shoulder roll antagonists over the cap; both also lift.
            // Anchors sit on a wider ring than the insertions so the two
            // rings never come close under combined rotations.
            MuscleRoute { points: vec![pt(0, 0.0, 18.0, 70.0), pt(3, 45.0, 28.0, 6.0)] },
            MuscleRoute { points: vec![pt(0, 0.0, -18.0, 70.0), pt(3, 45.0, -28.0, 6.0)] },
            // m6/m7: elbow pitch antagonists; the flexor relays on the
            // upper arm above the elbow, the extensor anchors below it
            MuscleRoute { points: vec![pt(3, 143.1, 0.0, 25.8), pt(3, 155.0, 0.0, 35.0), pt(5, 45.0, 0.0, 18.0)] },
            MuscleRoute { points: vec![pt(3, 180.0, 0.0, -50.0), pt(5, 45.0, 0.0, -18.0)] },
            // m8/m9: elbow yaw antagonists
            MuscleRoute { points: vec![pt(3, 180.0, 45.0, 0.0), pt(5, 45.0, 18.0, 0.0)] },
            MuscleRoute { points: vec![pt(3, 180.0, -45.0, 0.0), pt(5, 45.0, -18.0, 0.0)] },
        ];

        let model = GeometricModel {
            joints,
            links,
            routes,
            elongation: ElongationParams { k_d: 2.0e-5, a: 3.0, b: 0.015 },
        };
        debug_assert!(model.validate().is_ok());
        model
    }
}
