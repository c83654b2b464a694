//! Forward kinematics of the joint chain and everything derived from it:
//! muscle path lengths, the geometric muscle Jacobian, gravity torque, and
//! the end-effector Jacobian used to map external forces to joint torque.

use nalgebra::{DMatrix, Isometry3, Point3, Translation3, UnitQuaternion, Vector3};

use super::{GeometricModel, GRAVITY};
use crate::error::Result;

/// Central-difference step for the geometric muscle Jacobian, rad.
const JACOBIAN_STEP: f64 = 1e-4;

/// World pose of every link frame at posture `theta` (no limit check).
///
/// `frames[i]` maps link-`i` coordinates to world coordinates.
pub fn link_frames(model: &GeometricModel, theta: &[f64]) -> Vec<Isometry3<f64>> {
    debug_assert_eq!(theta.len(), model.joint_count());
    let mut frames = Vec::with_capacity(model.links.len());
    frames.push(Isometry3::identity());
    for (j, joint) in model.joints.iter().enumerate() {
        let shift = Translation3::new(model.links[j].length, 0.0, 0.0);
        let spin = UnitQuaternion::from_axis_angle(&joint.axis, theta[j]);
        let next = frames[j] * shift * spin;
        frames.push(next);
    }
    frames
}

fn route_points_world(
    model: &GeometricModel,
    frames: &[Isometry3<f64>],
    muscle: usize,
) -> Vec<Point3<f64>> {
    model.routes[muscle]
        .points
        .iter()
        .map(|p| frames[p.link] * Point3::from(p.offset))
        .collect()
}

/// Absolute muscle lengths without the joint-limit check; shared by the
/// Jacobian differencing and the equilibrium solver, both of which probe
/// slightly past the limits.
pub(crate) fn lengths_abs_unchecked(model: &GeometricModel, theta: &[f64]) -> Vec<f64> {
    let frames = link_frames(model, theta);
    model
        .routes
        .iter()
        .enumerate()
        .map(|(m, _)| {
            let pts = route_points_world(model, &frames, m);
            pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
        })
        .collect()
}

/// Absolute muscle length per muscle: the sum of straight-segment distances
/// between consecutive via-points after forward kinematics, mm.
pub fn muscle_length_abs(model: &GeometricModel, theta: &[f64]) -> Result<Vec<f64>> {
    model.check_limits(theta)?;
    Ok(lengths_abs_unchecked(model, theta))
}

/// Muscle length relative to the initial posture: `f(theta) - f(0)`, mm.
pub fn muscle_length_rel(model: &GeometricModel, theta: &[f64]) -> Result<Vec<f64>> {
    model.check_limits(theta)?;
    let zero = vec![0.0; model.joint_count()];
    let at_zero = lengths_abs_unchecked(model, &zero);
    let at_theta = lengths_abs_unchecked(model, theta);
    Ok(at_theta.iter().zip(&at_zero).map(|(a, b)| a - b).collect())
}

pub(crate) fn muscle_jacobian_unchecked(model: &GeometricModel, theta: &[f64]) -> DMatrix<f64> {
    let m = model.muscle_count();
    let d = model.joint_count();
    let mut jac = DMatrix::zeros(m, d);
    let mut probe = theta.to_vec();
    for col in 0..d {
        probe[col] = theta[col] + JACOBIAN_STEP;
        let plus = lengths_abs_unchecked(model, &probe);
        probe[col] = theta[col] - JACOBIAN_STEP;
        let minus = lengths_abs_unchecked(model, &probe);
        probe[col] = theta[col];
        for row in 0..m {
            jac[(row, col)] = (plus[row] - minus[row]) / (2.0 * JACOBIAN_STEP);
        }
    }
    jac
}

/// Geometric muscle Jacobian `d(length)/d(theta)`, M x D in mm/rad, by
/// central differences on the routing geometry.
pub fn muscle_jacobian(model: &GeometricModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    model.check_limits(theta)?;
    Ok(muscle_jacobian_unchecked(model, theta))
}

/// World axis and origin of each joint at the given frames.
fn joint_axes_origins(
    model: &GeometricModel,
    frames: &[Isometry3<f64>],
) -> Vec<(Vector3<f64>, Point3<f64>)> {
    model
        .joints
        .iter()
        .enumerate()
        .map(|(j, joint)| {
            let axis = frames[j].rotation * joint.axis.into_inner();
            let origin = frames[j] * Point3::new(model.links[j].length, 0.0, 0.0);
            (axis, origin)
        })
        .collect()
}

/// Torque exerted by gravity about each joint at posture `theta`, N*mm.
///
/// This is minus the gradient of the potential energy, so at a quasi-static
/// equilibrium it equals `G^T T`, the torque the muscle tensions produce.
/// `end_load_kg` adds a point mass carried at the end effector.
pub fn gravity_torque(model: &GeometricModel, theta: &[f64], end_load_kg: f64) -> Result<Vec<f64>> {
    model.check_limits(theta)?;
    Ok(gravity_torque_unchecked(model, theta, end_load_kg))
}

pub(crate) fn gravity_torque_unchecked(
    model: &GeometricModel,
    theta: &[f64],
    end_load_kg: f64,
) -> Vec<f64> {
    let frames = link_frames(model, theta);
    let axes = joint_axes_origins(model, &frames);

    // Link i (and the end load on the last link) hangs from joints 0..i.
    let mut tau = vec![0.0; model.joint_count()];
    let z = Vector3::z();
    let add_load = |tau: &mut Vec<f64>, link_idx: usize, point: Point3<f64>, weight: f64| {
        for d in 0..link_idx.min(model.joint_count()) {
            let (axis, origin) = &axes[d];
            let dp_dtheta = axis.cross(&(point - origin));
            // dU/dtheta_d = weight * dz/dtheta_d; tau = -dU/dtheta
            tau[d] -= weight * z.dot(&dp_dtheta);
        }
    };
    for (i, link) in model.links.iter().enumerate() {
        if link.mass > 0.0 {
            add_load(&mut tau, i, frames[i] * Point3::from(link.com), link.mass * GRAVITY);
        }
    }
    if end_load_kg > 0.0 {
        let tip = end_effector_from_frames(model, &frames);
        add_load(&mut tau, model.links.len() - 1, tip, end_load_kg * GRAVITY);
    }
    tau
}

fn end_effector_from_frames(model: &GeometricModel, frames: &[Isometry3<f64>]) -> Point3<f64> {
    let last = model.links.len() - 1;
    frames[last] * Point3::new(model.links[last].length, 0.0, 0.0)
}

/// Gravitational potential energy at `theta`, N*mm (up to a constant).
pub(crate) fn gravity_potential_unchecked(
    model: &GeometricModel,
    theta: &[f64],
    end_load_kg: f64,
) -> f64 {
    let frames = link_frames(model, theta);
    let mut u = 0.0;
    for (i, link) in model.links.iter().enumerate() {
        if link.mass > 0.0 {
            let c = frames[i] * Point3::from(link.com);
            u += link.mass * GRAVITY * c.z;
        }
    }
    if end_load_kg > 0.0 {
        u += end_load_kg * GRAVITY * end_effector_from_frames(model, &frames).z;
    }
    u
}

/// World position of the end effector (tip of the last link), mm.
pub fn end_effector_position(model: &GeometricModel, theta: &[f64]) -> Result<Point3<f64>> {
    model.check_limits(theta)?;
    let frames = link_frames(model, theta);
    Ok(end_effector_from_frames(model, &frames))
}

/// Positional end-effector Jacobian, 3 x D in mm/rad. `J^T F` maps an
/// external force in N applied at the tip to joint torque in N*mm.
pub fn end_effector_jacobian(model: &GeometricModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    model.check_limits(theta)?;
    let frames = link_frames(model, theta);
    let axes = joint_axes_origins(model, &frames);
    let tip = end_effector_from_frames(model, &frames);
    let d = model.joint_count();
    let mut jac = DMatrix::zeros(3, d);
    for (col, (axis, origin)) in axes.iter().enumerate() {
        let dp = axis.cross(&(tip - origin));
        for row in 0..3 {
            jac[(row, col)] = dp[row];
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ElongationParams, JointSpec, LinkSpec, MuscleRoute, ViaPoint};
    use nalgebra::Unit;

    fn pt(link: usize, x: f64, y: f64, z: f64) -> ViaPoint {
        ViaPoint { link, offset: Vector3::new(x, y, z) }
    }

    /// One pin joint about +y at the origin; start point 50 mm above the
    /// axis on the base, end point 50 mm below the axis on the child.
    fn pin_joint_model() -> GeometricModel {
        GeometricModel {
            joints: vec![JointSpec {
                axis: Unit::new_normalize(Vector3::y()),
                limits: [-3.0, 3.0],
            }],
            links: vec![
                LinkSpec { length: 0.0, mass: 0.0, com: Vector3::zeros() },
                LinkSpec { length: 100.0, mass: 0.0, com: Vector3::new(50.0, 0.0, 0.0) },
            ],
            routes: vec![MuscleRoute {
                points: vec![pt(0, 0.0, 0.0, 50.0), pt(1, 0.0, 0.0, -50.0)],
            }],
            elongation: ElongationParams { k_d: 0.0, a: 0.0, b: 1.0 },
        }
    }

    #[test]
    fn rigid_route_has_fixed_length() {
        // Both points on the same link: length never changes with theta.
        let mut model = pin_joint_model();
        model.routes = vec![MuscleRoute {
            points: vec![pt(1, 10.0, 0.0, 0.0), pt(1, 110.0, 0.0, 0.0)],
        }];
        for theta in [-1.0, 0.0, 0.7, 2.5] {
            let l = muscle_length_abs(&model, &[theta]).unwrap();
            assert!((l[0] - 100.0).abs() < 1e-12);
        }
        let jac = muscle_jacobian(&model, &[0.4]).unwrap();
        assert!(jac[(0, 0)].abs() < 1e-9, "rigid route must give a zero row");
    }

    #[test]
    fn pin_joint_matches_chord_formula() {
        // Independent trig oracle: both points 50 mm from the axis, so the
        // distance is a chord of the 50 mm circle: 100*|cos(theta/2)|.
        let model = pin_joint_model();
        for theta in [0.0, 0.3, std::f64::consts::FRAC_PI_2, -1.2, 2.0] {
            let expected = 100.0 * (theta / 2.0).cos().abs();
            let got = muscle_length_abs(&model, &[theta]).unwrap()[0];
            assert!((got - expected).abs() < 1e-9, "theta={theta}: {got} vs {expected}");
        }
        assert!((muscle_length_abs(&model, &[0.0]).unwrap()[0] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn relative_length_is_zero_at_initial_posture() {
        for model in [pin_joint_model(), GeometricModel::default_arm()] {
            let zero = vec![0.0; model.joint_count()];
            let rel = muscle_length_rel(&model, &zero).unwrap();
            assert!(rel.iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn pin_joint_relative_length_from_same_oracle() {
        let model = pin_joint_model();
        let th = std::f64::consts::FRAC_PI_2;
        let rel = muscle_length_rel(&model, &[th]).unwrap()[0];
        let expected = 100.0 * (th / 2.0).cos() - 100.0;
        assert!((rel - expected).abs() < 1e-9);
    }

    #[test]
    fn pin_joint_jacobian_matches_chord_derivative() {
        // d/dtheta of 100*cos(theta/2) = -50*sin(theta/2)
        let model = pin_joint_model();
        for theta in [0.0, 0.5, 1.0, -0.9] {
            let jac = muscle_jacobian(&model, &[theta]).unwrap();
            let expected = -50.0 * (theta / 2.0).sin();
            assert!((jac[(0, 0)] - expected).abs() < 1e-3);
        }
    }

    #[test]
    fn jacobian_first_order_taylor_consistency() {
        let model = GeometricModel::default_arm();
        let theta = vec![0.21, -0.43, 0.12, -0.55, 0.31];
        let jac = muscle_jacobian(&model, &theta).unwrap();
        let base = muscle_length_rel(&model, &theta).unwrap();
        let delta = [4.2e-4, -3.1e-4, 5.5e-4, -2.8e-4, 6.1e-4]; // |dtheta| ~ 1e-3
        let moved: Vec<f64> = theta.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let shifted = muscle_length_rel(&model, &moved).unwrap();
        for m in 0..model.muscle_count() {
            let predicted: f64 = (0..5).map(|d| jac[(m, d)] * delta[d]).sum();
            let actual = shifted[m] - base[m];
            assert!(
                (predicted - actual).abs() < 1e-4,
                "muscle {m}: {predicted} vs {actual}"
            );
        }
    }

    #[test]
    fn default_arm_lengths_at_zero_match_brute_force_snapshot() {
        // Oracle: sum via-point distances by hand at theta=0, where every
        // frame is a pure translation along +x by the preceding link lengths.
        let model = GeometricModel::default_arm();
        let mut link_origin_x = vec![0.0; model.links.len()];
        for i in 1..model.links.len() {
            link_origin_x[i] = link_origin_x[i - 1] + model.links[i - 1].length;
        }
        let expected: Vec<f64> = model
            .routes
            .iter()
            .map(|route| {
                let world: Vec<Vector3<f64>> = route
                    .points
                    .iter()
                    .map(|p| Vector3::new(link_origin_x[p.link], 0.0, 0.0) + p.offset)
                    .collect();
                world.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>()
            })
            .collect();
        let got = muscle_length_abs(&model, &[0.0; 5]).unwrap();
        for (m, (g, e)) in got.iter().zip(&expected).enumerate() {
            assert!((g - e).abs() < 1e-9, "muscle {m}: {g} vs {e}");
        }
    }

    #[test]
    fn gravity_zero_mass_gives_zero_torque() {
        let mut model = GeometricModel::default_arm();
        for link in &mut model.links {
            link.mass = 0.0;
        }
        let tau = gravity_torque(&model, &[0.1, -0.5, 0.2, -0.3, 0.4], 0.0).unwrap();
        assert!(tau.iter().all(|&t| t.abs() < 1e-12));
    }

    #[test]
    fn gravity_horizontal_arm_lever() {
        // Point mass m at distance r on a horizontal 1-DOF arm: |tau| = m*g*r
        // at theta=0 and ~0 with the arm vertical.
        let m = 0.8;
        let r = 150.0;
        let model = GeometricModel {
            joints: vec![JointSpec {
                axis: Unit::new_normalize(Vector3::y()),
                limits: [-2.0, 2.0],
            }],
            links: vec![
                LinkSpec { length: 0.0, mass: 0.0, com: Vector3::zeros() },
                LinkSpec { length: 200.0, mass: m, com: Vector3::new(r, 0.0, 0.0) },
            ],
            routes: vec![MuscleRoute {
                points: vec![pt(0, 0.0, 0.0, 50.0), pt(1, 50.0, 0.0, 0.0)],
            }],
            elongation: ElongationParams { k_d: 0.0, a: 0.0, b: 1.0 },
        };
        let tau0 = gravity_torque(&model, &[0.0], 0.0).unwrap()[0];
        assert!((tau0 - m * GRAVITY * r).abs() < 1e-9, "got {tau0}");
        for vertical in [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2] {
            let tau = gravity_torque(&model, &[vertical], 0.0).unwrap()[0];
            assert!(tau.abs() < 1e-9, "vertical arm should carry no torque, got {tau}");
        }
    }

    /// Potential energy summed from the same frames, used as the independent
    /// finite-difference oracle for the analytic torque assembly.
    fn potential_energy(model: &GeometricModel, theta: &[f64], end_load_kg: f64) -> f64 {
        let frames = link_frames(model, theta);
        let mut u = 0.0;
        for (i, link) in model.links.iter().enumerate() {
            if link.mass > 0.0 {
                let c = frames[i] * Point3::from(link.com);
                u += link.mass * GRAVITY * c.z;
            }
        }
        if end_load_kg > 0.0 {
            let last = model.links.len() - 1;
            let tip = frames[last] * Point3::new(model.links[last].length, 0.0, 0.0);
            u += end_load_kg * GRAVITY * tip.z;
        }
        u
    }

    #[test]
    fn gravity_matches_potential_energy_gradient() {
        let model = GeometricModel::default_arm();
        let postures = [
            vec![0.3, -0.8, 0.4, -1.1, 0.2],
            vec![-0.5, 0.3, -0.6, -0.2, -0.7],
            vec![0.0, -1.9, 0.0, -1.5, 0.6],
        ];
        let h = 1e-6;
        for theta in &postures {
            for &load in &[0.0, 3.6] {
                let tau = gravity_torque(&model, theta, load).unwrap();
                for d in 0..model.joint_count() {
                    let mut plus = theta.clone();
                    let mut minus = theta.clone();
                    plus[d] += h;
                    minus[d] -= h;
                    let grad =
                        (potential_energy(&model, &plus, load) - potential_energy(&model, &minus, load))
                            / (2.0 * h);
                    assert!(
                        (tau[d] + grad).abs() < 1e-3,
                        "joint {d}, load {load}: tau={} -dU/dth={}",
                        tau[d],
                        -grad
                    );
                }
            }
        }
    }

    #[test]
    fn end_effector_jacobian_matches_finite_differences() {
        let model = GeometricModel::default_arm();
        let theta = vec![0.2, -0.9, 0.3, -0.8, 0.1];
        let jac = end_effector_jacobian(&model, &theta).unwrap();
        let h = 1e-6;
        for d in 0..5 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[d] += h;
            minus[d] -= h;
            let pp = end_effector_position(&model, &plus).unwrap();
            let pm = end_effector_position(&model, &minus).unwrap();
            for row in 0..3 {
                let fd = (pp[row] - pm[row]) / (2.0 * h);
                assert!((jac[(row, d)] - fd).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn shoulder_pitch_sweep_is_monotone_for_the_antagonist_pair() {
        // Sweeping the shoulder pitch across its full range must lengthen one
        // pitch muscle monotonically while shortening the other.
        let model = GeometricModel::default_arm();
        let lo = model.joints[1].limits[0];
        let hi = model.joints[1].limits[1];
        let mut up = Vec::new();
        let mut down = Vec::new();
        for i in 0..=60 {
            let th = lo + (hi - lo) * i as f64 / 60.0;
            let rel = muscle_length_rel(&model, &[0.0, th, 0.0, 0.0, 0.0]).unwrap();
            up.push(rel[0]);
            down.push(rel[1]);
        }
        for w in up.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "muscle 0 not monotone over the sweep");
        }
        for w in down.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "muscle 1 not monotone over the sweep");
        }
    }

    #[test]
    fn out_of_limit_posture_is_rejected() {
        let model = GeometricModel::default_arm();
        let theta = vec![0.0, 0.6, 0.0, 0.0, 0.0];
        assert!(muscle_length_abs(&model, &theta).is_err());
        assert!(gravity_torque(&model, &theta, 0.0).is_err());
    }
}
