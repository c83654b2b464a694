//! The masked autoencoder over (joint angles, muscle tensions, muscle
//! lengths): unit scaling, masked input construction, forward/encode/decode,
//! gradients, and the Adam update.

pub mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use mlp::{Activation, Gradients, Mlp};

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Tension is fed to the network in units of N/200.
pub const TENSION_SCALE: f64 = 200.0;
/// Muscle length is fed to the network in units of mm/100.
pub const LENGTH_SCALE: f64 = 100.0;

/// One synchronized sensor reading in physical units: rad, N, mm.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTriple {
    pub theta: Vec<f64>,
    pub tension: Vec<f64>,
    pub length: Vec<f64>,
}

impl SensorTriple {
    pub fn zeros(d: usize, m: usize) -> Self {
        SensorTriple { theta: vec![0.0; d], tension: vec![0.0; m], length: vec![0.0; m] }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.tension).chain(&self.length).all(|v| v.is_finite())
    }
}

/// Which sensor channel is withheld at the input and inferred by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskCase {
    /// supply (theta, T), infer l -- mask bits (1, 1, 0)
    InferLength,
    /// supply (T, l), infer theta -- mask bits (0, 1, 1)
    InferTheta,
    /// supply (theta, l), infer T -- mask bits (1, 0, 1)
    InferTension,
}

impl MaskCase {
    pub const ALL: [MaskCase; 3] = [MaskCase::InferLength, MaskCase::InferTheta, MaskCase::InferTension];

    pub fn bits(self) -> [f64; 3] {
        match self {
            MaskCase::InferLength => [1.0, 1.0, 0.0],
            MaskCase::InferTheta => [0.0, 1.0, 1.0],
            MaskCase::InferTension => [1.0, 0.0, 1.0],
        }
    }
}

/// The (D+M)-dimensional middle-layer state optimized by control and
/// simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState(pub DVector<f64>);

/// Unit counts of the seven layers: (D+2M+3, 200, 30, D+M, 30, 200, D+2M).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub joint_count: usize,
    pub muscle_count: usize,
}

impl LayerSpec {
    pub fn new(joint_count: usize, muscle_count: usize) -> Result<Self> {
        if joint_count == 0 || muscle_count == 0 {
            return Err(Error::InvalidModel("layer spec needs D >= 1 and M >= 1".into()));
        }
        Ok(LayerSpec { joint_count, muscle_count })
    }

    pub fn sizes(&self) -> [usize; 7] {
        let (d, m) = (self.joint_count, self.muscle_count);
        [d + 2 * m + 3, 200, 30, d + m, 30, 200, d + 2 * m]
    }

    pub fn input_len(&self) -> usize {
        self.joint_count + 2 * self.muscle_count + 3
    }

    pub fn latent_len(&self) -> usize {
        self.joint_count + self.muscle_count
    }

    pub fn output_len(&self) -> usize {
        self.joint_count + 2 * self.muscle_count
    }

    /// Index of the latent layer in the activation list (after affine 2).
    const LATENT_LAYER: usize = 3;
}

/// All network weights plus the paired optimizer state. The single learned
/// object shared by estimation, control, and simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: LayerSpec,
    pub mlp: Mlp,
    pub adam: AdamState,
}

const ACTIVATIONS: [Activation; 6] = [
    Activation::Tanh,
    Activation::Tanh,
    Activation::Identity, // latent layer
    Activation::Tanh,
    Activation::Tanh,
    Activation::Identity, // output layer
];

impl NetworkParams {
    pub fn new(spec: LayerSpec, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mlp = Mlp::new(&spec.sizes(), &ACTIVATIONS, &mut rng);
        let adam = AdamState::zeros_like(&mlp);
        NetworkParams { spec, mlp, adam }
    }

    pub fn d(&self) -> usize {
        self.spec.joint_count
    }

    pub fn m(&self) -> usize {
        self.spec.muscle_count
    }
}

/// Scale a physical triple into network units: rad, N/200, mm/100.
pub fn scale_units(triple: &SensorTriple) -> DVector<f64> {
    let d = triple.theta.len();
    let m = triple.tension.len();
    let mut v = DVector::zeros(d + 2 * m);
    for (i, &th) in triple.theta.iter().enumerate() {
        v[i] = th;
    }
    for (i, &t) in triple.tension.iter().enumerate() {
        v[d + i] = t / TENSION_SCALE;
    }
    for (i, &l) in triple.length.iter().enumerate() {
        v[d + m + i] = l / LENGTH_SCALE;
    }
    v
}

/// Exact inverse of [`scale_units`].
pub fn unscale_units(scaled: &DVector<f64>, d: usize, m: usize) -> SensorTriple {
    debug_assert_eq!(scaled.len(), d + 2 * m);
    SensorTriple {
        theta: (0..d).map(|i| scaled[i]).collect(),
        tension: (0..m).map(|i| scaled[d + i] * TENSION_SCALE).collect(),
        length: (0..m).map(|i| scaled[d + m + i] * LENGTH_SCALE).collect(),
    }
}

/// Build the network input: the scaled triple with the masked channel
/// zeroed, concatenated with the three mask bits.
pub fn build_input(triple: &SensorTriple, case: MaskCase) -> DVector<f64> {
    let d = triple.theta.len();
    let m = triple.tension.len();
    let scaled = scale_units(triple);
    let mut v = DVector::zeros(d + 2 * m + 3);
    let bits = case.bits();
    for i in 0..d {
        v[i] = scaled[i] * bits[0];
    }
    for i in 0..m {
        v[d + i] = scaled[d + i] * bits[1];
    }
    for i in 0..m {
        v[d + m + i] = scaled[d + m + i] * bits[2];
    }
    v[d + 2 * m] = bits[0];
    v[d + 2 * m + 1] = bits[1];
    v[d + 2 * m + 2] = bits[2];
    v
}

/// Activations of a full forward pass; keeps everything backprop needs.
pub struct ForwardPass {
    pub activations: Vec<DVector<f64>>,
}

impl ForwardPass {
    pub fn latent(&self) -> LatentState {
        LatentState(self.activations[LayerSpec::LATENT_LAYER].clone())
    }

    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().unwrap()
    }
}

/// Full forward pass from a (D+2M+3) input vector.
pub fn forward(params: &NetworkParams, input: &DVector<f64>) -> Result<ForwardPass> {
    if input.len() != params.spec.input_len() {
        return Err(Error::ShapeMismatch {
            what: "network input",
            expected: params.spec.input_len(),
            got: input.len(),
        });
    }
    Ok(ForwardPass { activations: params.mlp.forward_from(0, input) })
}

/// Encoder only: the latent state for a masked triple.
pub fn encode_case(params: &NetworkParams, case: MaskCase, triple: &SensorTriple) -> LatentState {
    let input = build_input(triple, case);
    let pass = ForwardPass { activations: params.mlp.forward_from(0, &input) };
    pass.latent()
}

/// f_encode,1: latent from (theta, T), length masked.
pub fn encode_theta_tension(params: &NetworkParams, theta: &[f64], tension: &[f64]) -> LatentState {
    let triple = SensorTriple {
        theta: theta.to_vec(),
        tension: tension.to_vec(),
        length: vec![0.0; tension.len()],
    };
    encode_case(params, MaskCase::InferLength, &triple)
}

/// f_encode,2: latent from (T, l), joint angles masked.
pub fn encode_tension_length(params: &NetworkParams, tension: &[f64], length: &[f64]) -> LatentState {
    let triple = SensorTriple {
        theta: vec![0.0; params.d()],
        tension: tension.to_vec(),
        length: length.to_vec(),
    };
    encode_case(params, MaskCase::InferTheta, &triple)
}

/// f_encode,3: latent from (theta, l), tensions masked.
pub fn encode_theta_length(params: &NetworkParams, theta: &[f64], length: &[f64]) -> LatentState {
    let triple = SensorTriple {
        theta: theta.to_vec(),
        tension: vec![0.0; params.m()],
        length: length.to_vec(),
    };
    encode_case(params, MaskCase::InferTension, &triple)
}

/// Decoder activations starting from the latent layer.
pub struct DecodePass {
    pub activations: Vec<DVector<f64>>,
}

impl DecodePass {
    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().unwrap()
    }
}

/// f_decode: run only the decoder half from a latent state.
pub fn decode(params: &NetworkParams, z: &LatentState) -> Result<DecodePass> {
    if z.0.len() != params.spec.latent_len() {
        return Err(Error::ShapeMismatch {
            what: "latent state",
            expected: params.spec.latent_len(),
            got: z.0.len(),
        });
    }
    Ok(DecodePass {
        activations: params.mlp.forward_from(LayerSpec::LATENT_LAYER, &z.0),
    })
}

/// Decode to a physical-unit triple.
pub fn decode_triple(params: &NetworkParams, z: &LatentState) -> Result<SensorTriple> {
    let pass = decode(params, z)?;
    Ok(unscale_units(pass.output(), params.d(), params.m()))
}

/// Exact parameter gradients for a scalar loss with the given gradient at
/// the output layer, using the activations of a previous [`forward`].
pub fn backward_params(
    params: &NetworkParams,
    pass: &ForwardPass,
    d_output: &DVector<f64>,
    grads: &mut Gradients,
) {
    params.mlp.backward_from(0, &pass.activations, d_output, Some(grads));
}

/// dL/dz through the decoder half only, given decoder activations.
pub fn grad_wrt_latent_cached(
    params: &NetworkParams,
    pass: &DecodePass,
    d_output: &DVector<f64>,
) -> DVector<f64> {
    params
        .mlp
        .backward_from(LayerSpec::LATENT_LAYER, &pass.activations, d_output, None)
}

/// dL/dz through the decoder half only.
pub fn grad_wrt_latent(
    params: &NetworkParams,
    z: &LatentState,
    d_output: &DVector<f64>,
) -> Result<DVector<f64>> {
    let pass = decode(params, z)?;
    Ok(grad_wrt_latent_cached(params, &pass, d_output))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm_spec() -> LayerSpec {
        LayerSpec::new(5, 10).unwrap()
    }

    fn sample_triple() -> SensorTriple {
        SensorTriple {
            theta: vec![0.1, -0.4, 0.3, -0.8, 0.2],
            tension: (0..10).map(|i| 20.0 * i as f64).collect(),
            length: (0..10).map(|i| 5.0 * i as f64 - 20.0).collect(),
        }
    }

    #[test]
    fn layer_sizes_match_the_published_shape() {
        let spec = arm_spec();
        assert_eq!(spec.sizes(), [28, 200, 30, 15, 30, 200, 25]);
        let spec2 = LayerSpec::new(2, 3).unwrap();
        assert_eq!(spec2.sizes(), [11, 200, 30, 5, 30, 200, 8]);
    }

    #[test]
    fn scaling_units() {
        let zero = SensorTriple::zeros(5, 10);
        assert!(scale_units(&zero).iter().all(|&v| v == 0.0));

        let ones = SensorTriple {
            theta: vec![1.0; 5],
            tension: vec![200.0; 10],
            length: vec![100.0; 10],
        };
        assert!(scale_units(&ones).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unscale_is_exact_inverse() {
        let triple = sample_triple();
        let back = unscale_units(&scale_units(&triple), 5, 10);
        for (a, b) in triple.theta.iter().zip(&back.theta) {
            assert_eq!(a, b);
        }
        for (a, b) in triple.tension.iter().zip(&back.tension) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in triple.length.iter().zip(&back.length) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn build_input_layout() {
        let triple = sample_triple();
        let v = build_input(&triple, MaskCase::InferLength);
        assert_eq!(v.len(), 28);
        // masked channel zeroed, mask bits at the tail
        assert!(v.as_slice()[15..25].iter().all(|&x| x == 0.0));
        assert_eq!(&v.as_slice()[25..28], &[1.0, 1.0, 0.0]);

        let v2 = build_input(&triple, MaskCase::InferTheta);
        assert!(v2.as_slice()[..5].iter().all(|&x| x == 0.0));

        let zero = SensorTriple::zeros(5, 10);
        let v3 = build_input(&zero, MaskCase::InferTension);
        assert!(v3.as_slice()[..25].iter().all(|&x| x == 0.0));
        assert_eq!(&v3.as_slice()[25..28], &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn masked_channel_never_influences_the_input() {
        let mut a = sample_triple();
        let v1 = build_input(&a, MaskCase::InferTheta);
        a.theta = vec![9.9, -3.0, 1.1, 0.0, 7.7];
        let v2 = build_input(&a, MaskCase::InferTheta);
        assert_eq!(v1, v2);
    }

    #[test]
    fn zero_parameters_give_zero_latent_and_output() {
        let mut params = NetworkParams::new(arm_spec(), 0);
        for w in &mut params.mlp.weights {
            w.fill(0.0);
        }
        let pass = forward(&params, &build_input(&sample_triple(), MaskCase::InferLength)).unwrap();
        assert!(pass.latent().0.iter().all(|&v| v == 0.0));
        assert!(pass.output().iter().all(|&v| v == 0.0));
        for case in MaskCase::ALL {
            let z = encode_case(&params, case, &sample_triple());
            assert!(z.0.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encode_case_is_the_masked_forward_latent() {
        let params = NetworkParams::new(arm_spec(), 42);
        let triple = sample_triple();
        let z1 = encode_theta_tension(&params, &triple.theta, &triple.tension);
        let pass = forward(&params, &build_input(&triple, MaskCase::InferLength)).unwrap();
        assert_eq!(z1.0, pass.latent().0);
    }

    #[test]
    fn case2_latent_is_independent_of_theta() {
        let params = NetworkParams::new(arm_spec(), 42);
        let mut triple = sample_triple();
        let z1 = encode_case(&params, MaskCase::InferTheta, &triple);
        triple.theta = vec![2.0, 2.0, 2.0, 2.0, 2.0];
        let z2 = encode_case(&params, MaskCase::InferTheta, &triple);
        assert_eq!(z1.0, z2.0);
    }

    #[test]
    fn decode_splits_into_a_triple_of_the_right_shape() {
        let params = NetworkParams::new(arm_spec(), 42);
        let triple = sample_triple();
        let z = encode_case(&params, MaskCase::InferLength, &triple);
        let decoded = decode_triple(&params, &z).unwrap();
        assert_eq!(decoded.theta.len(), 5);
        assert_eq!(decoded.tension.len(), 10);
        assert_eq!(decoded.length.len(), 10);
        let pass = decode(&params, &z).unwrap();
        assert_eq!(pass.output().len(), 25);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let params = NetworkParams::new(arm_spec(), 42);
        let bad = DVector::zeros(27);
        assert!(forward(&params, &bad).is_err());
    }

    #[test]
    fn decoder_latent_gradient_matches_finite_differences() {
        let params = NetworkParams::new(arm_spec(), 7);
        let triple = sample_triple();
        let z = encode_case(&params, MaskCase::InferLength, &triple);

        // loss = 0.5 * ||decode(z)||^2
        let loss = |z: &LatentState| -> f64 {
            let pass = decode(&params, z).unwrap();
            0.5 * pass.output().norm_squared()
        };
        let pass = decode(&params, &z).unwrap();
        let d_out = pass.output().clone();
        let g = grad_wrt_latent(&params, &z, &d_out).unwrap();

        let h = 1e-5;
        for i in 0..z.0.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.0[i] += h;
            zm.0[i] -= h;
            let numeric = (loss(&zp) - loss(&zm)) / (2.0 * h);
            let denom = g[i].abs().max(numeric.abs()).max(1e-8);
            assert!(((g[i] - numeric) / denom).abs() < 1e-5, "z[{i}]");
        }

        // zero upstream gradient -> zero latent gradient
        let zero_g = grad_wrt_latent(&params, &z, &DVector::zeros(25)).unwrap();
        assert!(zero_g.iter().all(|&v| v == 0.0));
    }
}
