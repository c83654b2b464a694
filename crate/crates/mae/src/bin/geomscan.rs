// Scratch validation of the default arm geometry: moment-arm signs, tension
// feasibility of gravity balance across the posture box, and plant fuzz.
// Development aid only.

use mae::control::MscParams;
use mae::model::{gravity_torque, muscle_jacobian, GeometricModel, Plant, PlantConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// min ||G^T T - tau||^2 over T in [lo, hi] by projected coordinate descent.
fn balance_residual(g: &DMatrix<f64>, tau: &[f64], lo: f64, hi: f64) -> (f64, Vec<f64>) {
    let m = g.nrows();
    let d = g.ncols();
    let mut t = vec![60.0; m];
    let mut r = vec![0.0; d]; // r = G^T t - tau
    for j in 0..d {
        for i in 0..m {
            r[j] += g[(i, j)] * t[i];
        }
        r[j] -= tau[j];
    }
    for _ in 0..3000 {
        for i in 0..m {
            let gi: Vec<f64> = (0..d).map(|j| g[(i, j)]).collect();
            let gg: f64 = gi.iter().map(|v| v * v).sum();
            if gg < 1e-12 {
                continue;
            }
            let gr: f64 = gi.iter().zip(&r).map(|(a, b)| a * b).sum();
            let old = t[i];
            let new = (old - gr / gg).clamp(lo, hi);
            if new != old {
                for j in 0..d {
                    r[j] += g[(i, j)] * (new - old);
                }
                t[i] = new;
            }
        }
    }
    (r.iter().fold(0.0f64, |a, &x| a.max(x.abs())), t)
}

fn main() {
    let model = GeometricModel::default_arm();
    let d = model.joint_count();
    let mut rng = ChaCha12Rng::seed_from_u64(99);

    // 1) moment arm sign table at random postures
    println!("== per-joint moment-arm ranges over 300 random postures ==");
    let mut min_arm = vec![vec![f64::INFINITY; d]; 10];
    let mut max_arm = vec![vec![f64::NEG_INFINITY; d]; 10];
    let mut worst_balance: f64 = 0.0;
    let mut worst_balance_loaded: f64 = 0.0;
    let mut max_tension_needed: f64 = 0.0;
    for _ in 0..300 {
        let theta: Vec<f64> = model
            .joints
            .iter()
            .map(|j| rng.random_range(j.limits[0]..=j.limits[1]))
            .collect();
        let g = muscle_jacobian(&model, &theta).unwrap();
        for mi in 0..10 {
            for ji in 0..d {
                min_arm[mi][ji] = min_arm[mi][ji].min(g[(mi, ji)]);
                max_arm[mi][ji] = max_arm[mi][ji].max(g[(mi, ji)]);
            }
        }
        let tau = gravity_torque(&model, &theta, 0.0).unwrap();
        let (res, t) = balance_residual(&g, &tau, 5.0, 500.0);
        if res > worst_balance {
            println!("  worst so far {res:.1} at theta={:?} tau={:?}",
                theta.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>(),
                tau.iter().map(|v| v.round()).collect::<Vec<_>>());
        }
        worst_balance = worst_balance.max(res);
        max_tension_needed =
            max_tension_needed.max(t.iter().fold(0.0f64, |a, &x| a.max(x)));
        let tau_l = gravity_torque(&model, &theta, 3.6).unwrap();
        let (res_l, _) = balance_residual(&g, &tau_l, 5.0, 500.0);
        worst_balance_loaded = worst_balance_loaded.max(res_l);
    }
    for mi in 0..10 {
        print!("m{mi}: ");
        for ji in 0..d {
            print!("[{:+7.1},{:+7.1}] ", min_arm[mi][ji], max_arm[mi][ji]);
        }
        println!();
    }
    println!("worst gravity-balance residual (no load): {worst_balance:.3} N*mm");
    println!("worst gravity-balance residual (3.6 kg): {worst_balance_loaded:.3} N*mm");
    println!("max tension used in balancing: {max_tension_needed:.1} N");

    // 2) shoulder-pitch sweep monotonicity of m0/m1
    let lo = model.joints[1].limits[0];
    let hi = model.joints[1].limits[1];
    let mut up = Vec::new();
    let mut down = Vec::new();
    for i in 0..=80 {
        let th = lo + (hi - lo) * i as f64 / 80.0;
        let rel = mae::model::muscle_length_rel(&model, &[0.0, th, 0.0, 0.0, 0.0]).unwrap();
        up.push(rel[0]);
        down.push(rel[1]);
    }
    let mono_up = up.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    let mono_down = down.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    println!("S-p sweep: m0 monotone up: {mono_up}, m1 monotone down: {mono_down}");
    println!(
        "  m0 range [{:.1}, {:.1}] mm, m1 range [{:.1}, {:.1}] mm",
        up.first().unwrap(),
        up.last().unwrap(),
        down.first().unwrap(),
        down.last().unwrap()
    );

    // 3) plant fuzz
    let msc = MscParams::default();
    let config = PlantConfig::new(d);
    match Plant::new(&model, config, &msc) {
        Err(e) => println!("plant init FAILED: {e}"),
        Ok(mut plant) => {
            println!(
                "plant init ok: theta={:?}",
                plant.state().theta.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
            );
            let mut failures = 0;
            let mut max_t: f64 = 0.0;
            for step in 0..200 {
                let l_target: Vec<f64> = plant
                    .state()
                    .length
                    .iter()
                    .map(|l| l + rng.random_range(-10.0..10.0))
                    .collect();
                match plant.step(&l_target, &msc) {
                    Ok(state) => {
                        max_t = max_t.max(state.tension.iter().fold(0.0f64, |a, &t| a.max(t)));
                    }
                    Err(e) => {
                        failures += 1;
                        if failures < 5 {
                            println!("  step {step} failed: {e}");
                        }
                    }
                }
            }
            println!("plant fuzz: {failures}/200 failures, max tension {max_t:.1} N");
        }
    }
}
