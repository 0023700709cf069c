//! Parametric building blocks and their initializers.
//!
//! Layers own their parameter tensors and register them on a [`Tape`] under
//! a hierarchical name (`prefix.weight`, `prefix.bias`, ...) each time they
//! run forward. Batch-norm running statistics are buffers, not parameters:
//! they are never registered for gradients and are updated explicitly from
//! the [`BatchStats`] a train-mode forward returns.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BatchNormMode, BatchStats, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Visitor over named tensors, in a fixed traversal order.
pub trait Parameterized<S: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>));

    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &Tensor<S>)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor<S>)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }
}

/// Normal(0, sqrt(2 / fan_in)) samples: He initialization for ReLU networks.
pub fn kaiming_init<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<S>> {
    if fan_in == 0 {
        return Err(Error::config("kaiming_init: fan_in must be at least 1"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = S::of(rng.normal(0.0, std));
    }
    Ok(t)
}

/// Uniform(-bound, bound) samples.
pub fn uniform_init<S: Scalar>(shape: &[usize], bound: f64, rng: &mut Rng) -> Result<Tensor<S>> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::config(format!(
            "uniform_init: bound must be positive, got {bound}"
        )));
    }
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = S::of(rng.uniform(-bound, bound));
    }
    Ok(t)
}

/// Fully connected layer `y = x·Wᵀ + b` with `W` stored out×in.
#[derive(Clone, Debug)]
pub struct LinearLayer<S = f32> {
    prefix: String,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> LinearLayer<S> {
    /// Uniform weights with bound 1/sqrt(inputs); zero bias.
    pub fn new(prefix: impl Into<String>, inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = uniform_init(&[outputs, inputs], bound, rng)?;
        let bias = Tensor::zeros(&[outputs])?;
        Self::from_parts(prefix, weight, bias)
    }

    pub fn from_parts(prefix: impl Into<String>, weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "linear layer: bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(LinearLayer {
            prefix: prefix.into(),
            weight,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let w = tape.param(&format!("{}.weight", self.prefix), &self.weight);
        let b = tape.param(&format!("{}.bias", self.prefix), &self.bias);
        tape.linear(x, w, Some(b))
    }
}

impl<S: Scalar> Parameterized<S> for LinearLayer<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&format!("{}.weight", self.prefix), &self.weight);
        f(&format!("{}.bias", self.prefix), &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&format!("{}.weight", self.prefix), &mut self.weight);
        f(&format!("{}.bias", self.prefix), &mut self.bias);
    }
}

/// 2-D convolution, Kaiming-initialized. Bias is optional; convolutions
/// that feed a batch norm are built without one.
#[derive(Clone, Debug)]
pub struct Conv2dLayer<S = f32> {
    prefix: String,
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
    pub stride: usize,
    pub pad: usize,
}

impl<S: Scalar> Conv2dLayer<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = kaiming_init(&[out_channels, in_channels, kernel, kernel], fan_in, rng)?;
        let bias = if with_bias {
            Some(Tensor::zeros(&[out_channels])?)
        } else {
            None
        };
        Ok(Conv2dLayer {
            prefix: prefix.into(),
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let k = tape.param(&format!("{}.weight", self.prefix), &self.weight);
        let b = self
            .bias
            .as_ref()
            .map(|b| tape.param(&format!("{}.bias", self.prefix), b));
        tape.conv2d(x, k, b, self.stride, self.pad)
    }
}

impl<S: Scalar> Parameterized<S> for Conv2dLayer<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&format!("{}.weight", self.prefix), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{}.bias", self.prefix), b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&format!("{}.weight", self.prefix), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{}.bias", self.prefix), b);
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm2d<S = f32> {
    prefix: String,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: f64,
    pub eps: f64,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            prefix: prefix.into(),
            gamma: Tensor::full(&[channels], S::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], S::one())?,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// Train mode normalizes with batch statistics and returns them; the
    /// caller applies them with [`BatchNorm2d::update_running`].
    pub fn forward(&self, tape: &mut Tape<S>, x: Var, mode: Mode) -> Result<(Var, Option<BatchStats<S>>)> {
        let shape = tape.value(x).shape();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch norm {}: expected {} channels, input is {shape:?}",
                self.prefix,
                self.channels()
            )));
        }
        let g = tape.param(&format!("{}.gamma", self.prefix), &self.gamma);
        let b = tape.param(&format!("{}.beta", self.prefix), &self.beta);
        let eps = S::of(self.eps);
        match mode {
            Mode::Train => tape.batch_norm(x, g, b, BatchNormMode::Train { eps }),
            Mode::Eval => tape.batch_norm(
                x,
                g,
                b,
                BatchNormMode::Eval {
                    mean: self.running_mean.data(),
                    var: self.running_var.data(),
                    eps,
                },
            ),
        }
    }

    /// `running ← (1 − m)·running + m·batch`.
    pub fn update_running(&mut self, stats: &BatchStats<S>) -> Result<()> {
        if stats.mean.len() != self.channels() || stats.var.len() != self.channels() {
            return Err(Error::shape("batch statistics do not match channel count"));
        }
        let m = S::of(self.momentum);
        let keep = S::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (keep * *r + m * b).max(S::zero());
        }
        Ok(())
    }
}

impl<S: Scalar> Parameterized<S> for BatchNorm2d<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&format!("{}.gamma", self.prefix), &self.gamma);
        f(&format!("{}.beta", self.prefix), &self.beta);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&format!("{}.gamma", self.prefix), &mut self.gamma);
        f(&format!("{}.beta", self.prefix), &mut self.beta);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&format!("{}.running_mean", self.prefix), &self.running_mean);
        f(&format!("{}.running_var", self.prefix), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&format!("{}.running_mean", self.prefix), &mut self.running_mean);
        f(&format!("{}.running_var", self.prefix), &mut self.running_var);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    p: f64,
}

impl DropoutSpec {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        Ok(DropoutSpec { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by 1/(1 − p). Eval mode is the identity.
pub fn dropout<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    spec: DropoutSpec,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    if mode == Mode::Eval || spec.p == 0.0 {
        return Ok(x);
    }
    let keep = S::of(1.0 / (1.0 - spec.p));
    let mask = (0..tape.value(x).numel())
        .map(|_| if rng.bernoulli(spec.p) { S::zero() } else { keep })
        .collect();
    tape.mul_const(x, mask)
}
