//! Dense feed-forward network with exact reverse-mode gradients.
//!
//! This is the size-agnostic machinery underneath the autoencoder: affine
//! layers, tanh or identity activations, forward passes that keep their
//! activations for backprop, and gradient computation for both parameters
//! and inputs (the latter drives the latent-space descent).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: &mut DVector<f64>) {
        if self == Activation::Tanh {
            v.apply(|x| *x = x.tanh());
        }
    }

    /// Derivative expressed through the post-activation value.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Unit counts per layer, affine i maps sizes[i] -> sizes[i+1].
    pub sizes: Vec<usize>,
    /// Activation applied after affine i.
    pub activations: Vec<Activation>,
    /// weights[i] has shape (sizes[i+1], sizes[i])
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Per-affine parameter gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Symmetric uniform initialization in +-sqrt(6/(fan_in+fan_out)),
    /// biases zero.
    pub fn new<R: Rng>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least one affine layer");
        assert_eq!(activations.len(), sizes.len() - 1);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for i in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.random_range(-bound..=bound)
            }));
            biases.push(DVector::zeros(fan_out));
        }
        Mlp { sizes: sizes.to_vec(), activations: activations.to_vec(), weights, biases }
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Forward from layer `from`, keeping every activation.
    /// `activations[0]` is the input, `activations.last()` the output.
    pub fn forward_from(&self, from: usize, input: &DVector<f64>) -> Vec<DVector<f64>> {
        assert_eq!(input.len(), self.sizes[from], "input size mismatch");
        let mut acts = Vec::with_capacity(self.layer_count() - from + 1);
        acts.push(input.clone());
        for i in from..self.layer_count() {
            let mut v = &self.weights[i] * acts.last().unwrap() + &self.biases[i];
            self.activations[i].apply(&mut v);
            acts.push(v);
        }
        acts
    }

    /// Backprop through layers `from..end` given the activations from
    /// `forward_from(from, ..)`. Accumulates parameter gradients into
    /// `grads` (indexed by absolute layer) and returns dL/d(input of `from`).
    pub fn backward_from(
        &self,
        from: usize,
        activations: &[DVector<f64>],
        d_output: &DVector<f64>,
        mut grads: Option<&mut Gradients>,
    ) -> DVector<f64> {
        let layers = self.layer_count() - from;
        assert_eq!(activations.len(), layers + 1);
        assert_eq!(d_output.len(), *self.sizes.last().unwrap());

        let mut delta = d_output.clone();
        for rel in (0..layers).rev() {
            let layer = from + rel;
            let y = &activations[rel + 1];
            for i in 0..delta.len() {
                delta[i] *= self.activations[layer].grad_from_output(y[i]);
            }
            if let Some(g) = grads.as_deref_mut() {
                let x = &activations[rel];
                g.weights[layer].gemm(1.0, &delta, &x.transpose(), 1.0);
                g.biases[layer] += &delta;
            }
            delta = self.weights[layer].tr_mul(&delta);
        }
        delta
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}
