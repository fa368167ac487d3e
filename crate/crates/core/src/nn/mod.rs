//! Minimal float64 layer library with explicit forward/backward passes.
//!
//! Every layer exposes an inference `forward(&self)` that is free of side
//! effects and a `forward_train(&mut self)` that pushes whatever it needs for
//! the backward pass onto an internal stack. `backward` pops in LIFO order, so
//! a layer applied several times (the shared RPN head over pyramid levels)
//! must be back-propagated in the reverse order of its forward calls.

mod activation;
mod batchnorm;
mod conv;
mod deconv;
mod depthwise;
mod linear;
mod resample;

pub use activation::{relu, relu6, sigmoid, Relu, Relu6};
pub use batchnorm::{BatchNorm, BnMode};
pub use conv::{im2col, same_padding, Conv2d};
pub use deconv::ConvTranspose2x2;
pub use depthwise::DepthwiseConv2d;
pub use linear::Linear;
pub use resample::{subsample2, subsample2_backward, upsample_nearest2, upsample_nearest2_backward};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type Tensor4 = ndarray::Array4<f64>;

/// A named learned (or tracked) tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    /// Moving statistics are tracked but never touched by the optimizer.
    pub trainable: bool,
    /// Whether weight decay applies (weights yes, biases and BN affine no).
    pub decay: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize], trainable: bool, decay: bool) -> Self {
        Param {
            name: name.into(),
            value: ArrayD::zeros(IxDyn(shape)),
            grad: ArrayD::zeros(IxDyn(shape)),
            trainable,
            decay,
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: f64, trainable: bool, decay: bool) -> Self {
        let mut p = Self::zeros(name, shape, trainable, decay);
        p.value.fill(v);
        p
    }

    /// Zero-mean Gaussian with the given standard deviation.
    pub fn gaussian<R: Rng>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape, true, true);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            p.value.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// A single-input, single-output differentiable layer over NCHW tensors.
pub trait Layer: Module {
    fn forward(&self, x: &Tensor4) -> Tensor4;
    fn forward_train(&mut self, x: &Tensor4) -> Tensor4;
    fn backward(&mut self, dy: &Tensor4) -> Tensor4;
    /// Drops any cached activations from unmatched `forward_train` calls.
    fn clear_cache(&mut self);
}

/// He-style fan-in scaled standard deviation.
pub fn fan_in_std(fan_in: usize) -> f64 {
    (2.0 / fan_in.max(1) as f64).sqrt()
}

/// Pops the most recent cache entry; a missing entry is a caller bug.
pub(crate) fn pop_cache<T>(stack: &mut Vec<T>, layer: &str) -> T {
    stack
        .pop()
        .unwrap_or_else(|| panic!("{layer}: backward called without a matching forward_train"))
}
