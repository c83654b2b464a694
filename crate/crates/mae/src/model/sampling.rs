//! Synthetic training data from the nominal model: random postures and
//! tensions with the consistent sensor length
//! `l = f_geo(theta) - L_e(f_geo_abs(theta), T)`.

use rand::Rng;

use super::kinematics::lengths_abs_unchecked;
use super::{elongation, GeometricModel};
use crate::error::Result;
use crate::net::SensorTriple;

/// Draw `n` samples with per-joint uniform angles and per-muscle uniform
/// tensions in `[0, tension_max]`.
pub fn sample_initial_data<R: Rng>(
    model: &GeometricModel,
    n: usize,
    tension_max: f64,
    rng: &mut R,
) -> Result<Vec<SensorTriple>> {
    let zero = vec![0.0; model.joint_count()];
    let at_zero = lengths_abs_unchecked(model, &zero);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let theta: Vec<f64> = model
            .joints
            .iter()
            .map(|j| rng.random_range(j.limits[0]..=j.limits[1]))
            .collect();
        let tension: Vec<f64> = (0..model.muscle_count())
            .map(|_| rng.random_range(0.0..=tension_max))
            .collect();
        let l_abs = lengths_abs_unchecked(model, &theta);
        let stretch = elongation(&model.elongation, &l_abs, &tension)?;
        let length: Vec<f64> = (0..model.muscle_count())
            .map(|m| l_abs[m] - at_zero[m] - stretch[m])
            .collect();
        out.push(SensorTriple { theta, tension, length });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::muscle_length_rel;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn samples_satisfy_the_generating_identity() {
        let model = GeometricModel::default_arm();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let data = sample_initial_data(&model, 50, 500.0, &mut rng).unwrap();
        let zero = vec![0.0; model.joint_count()];
        let at_zero = lengths_abs_unchecked(&model, &zero);
        for triple in &data {
            let rel = muscle_length_rel(&model, &triple.theta).unwrap();
            let l_abs: Vec<f64> = rel.iter().zip(&at_zero).map(|(r, z)| r + z).collect();
            let stretch = elongation(&model.elongation, &l_abs, &triple.tension).unwrap();
            for m in 0..model.muscle_count() {
                let expected = rel[m] - stretch[m];
                assert!((triple.length[m] - expected).abs() < 1e-9);
            }
            assert!(triple.tension.iter().all(|&t| (0.0..=500.0).contains(&t)));
        }
    }

    #[test]
    fn zero_posture_zero_tension_maps_to_zero_triple() {
        // Not sampled, but the identity the sampler implements must hold at
        // the origin.
        let model = GeometricModel::default_arm();
        let zero_theta = vec![0.0; 5];
        let rel = muscle_length_rel(&model, &zero_theta).unwrap();
        let l_abs = lengths_abs_unchecked(&model, &zero_theta);
        let stretch = elongation(&model.elongation, &l_abs, &vec![0.0; 10]).unwrap();
        for m in 0..10 {
            assert_eq!(rel[m] - stretch[m], 0.0);
        }
    }

    #[test]
    fn sampling_covers_the_joint_ranges() {
        let model = GeometricModel::default_arm();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let data = sample_initial_data(&model, 10_000, 500.0, &mut rng).unwrap();
        for (j, joint) in model.joints.iter().enumerate() {
            let lo = data.iter().map(|t| t.theta[j]).fold(f64::INFINITY, f64::min);
            let hi = data.iter().map(|t| t.theta[j]).fold(f64::NEG_INFINITY, f64::max);
            let coverage = (hi - lo) / (joint.limits[1] - joint.limits[0]);
            assert!(coverage >= 0.95, "joint {j} coverage {coverage}");
        }
    }
}
