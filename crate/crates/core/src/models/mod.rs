//! The two estimator families: a wide-to-narrow fully connected network and
//! a bottleneck residual network, each taking either a single 6-band frame
//! or five stacked frames (30 channels).
//!
//! ResNet layer bookkeeping for the default plan: 35 convolutions (1 stem,
//! 30 inside the 10 bottleneck blocks, 4 skip projections), 2 fully
//! connected layers, and the output activation.

mod checkpoint;
mod spec;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::{
    dropout, BatchNorm2d, Conv2dLayer, DropoutSpec, LinearLayer, Mode, Parameterized,
};
use crate::rng::Rng;
use crate::tensor::{BatchStats, Scalar, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use spec::{
    ArchitectureSpec, Family, ResnetPlan, BANDS, BOTTLENECK_BLOCKS, INPUT_HEIGHT, INPUT_WIDTH, OUTPUTS,
};

#[derive(Clone, Debug)]
struct LinearNet<S> {
    layers: Vec<LinearLayer<S>>,
    dropout: DropoutSpec,
}

#[derive(Clone, Debug)]
struct Bottleneck<S> {
    conv1: Conv2dLayer<S>,
    bn1: BatchNorm2d<S>,
    conv2: Conv2dLayer<S>,
    bn2: BatchNorm2d<S>,
    conv3: Conv2dLayer<S>,
    bn3: BatchNorm2d<S>,
    projection: Option<(Conv2dLayer<S>, BatchNorm2d<S>)>,
}

impl<S: Scalar> Bottleneck<S> {
    fn new(prefix: &str, inputs: usize, outputs: usize, compression: usize, rng: &mut Rng) -> Result<Self> {
        let mid = outputs / compression;
        let projection = if inputs != outputs {
            Some((
                Conv2dLayer::new(format!("{prefix}.proj.conv"), inputs, outputs, 1, 1, 0, false, rng)?,
                BatchNorm2d::new(format!("{prefix}.proj.bn"), outputs)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            conv1: Conv2dLayer::new(format!("{prefix}.conv1"), inputs, mid, 1, 1, 0, false, rng)?,
            bn1: BatchNorm2d::new(format!("{prefix}.bn1"), mid)?,
            conv2: Conv2dLayer::new(format!("{prefix}.conv2"), mid, mid, 3, 1, 1, false, rng)?,
            bn2: BatchNorm2d::new(format!("{prefix}.bn2"), mid)?,
            conv3: Conv2dLayer::new(format!("{prefix}.conv3"), mid, outputs, 1, 1, 0, false, rng)?,
            bn3: BatchNorm2d::new(format!("{prefix}.bn3"), outputs)?,
            projection,
        })
    }

    fn forward(&self, tape: &mut Tape<S>, x: Var, mode: Mode, stats: &mut Vec<BatchStats<S>>) -> Result<Var> {
        let mut bn = |tape: &mut Tape<S>, layer: &BatchNorm2d<S>, v: Var| -> Result<Var> {
            let (y, st) = layer.forward(tape, v, mode)?;
            stats.extend(st);
            Ok(y)
        };
        let h = self.conv1.forward(tape, x)?;
        let h = bn(tape, &self.bn1, h)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, h)?;
        let h = bn(tape, &self.bn2, h)?;
        let h = tape.relu(h);
        let h = self.conv3.forward(tape, h)?;
        let h = bn(tape, &self.bn3, h)?;
        let skip = match &self.projection {
            Some((conv, norm)) => {
                let s = conv.forward(tape, x)?;
                bn(tape, norm, s)?
            }
            None => x,
        };
        let sum = tape.add(h, skip)?;
        Ok(tape.relu(sum))
    }

    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm2d<S>> {
        let mut v = vec![&mut self.bn1, &mut self.bn2, &mut self.bn3];
        if let Some((_, bn)) = &mut self.projection {
            v.push(bn);
        }
        v
    }

    fn convs(&self) -> usize {
        3 + usize::from(self.projection.is_some())
    }
}

impl<S: Scalar> Parameterized<S> for Bottleneck<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        self.conv3.visit_params(f);
        self.bn3.visit_params(f);
        if let Some((c, b)) = &self.projection {
            c.visit_params(f);
            b.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.conv1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
        self.conv3.visit_params_mut(f);
        self.bn3.visit_params_mut(f);
        if let Some((c, b)) = &mut self.projection {
            c.visit_params_mut(f);
            b.visit_params_mut(f);
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
        self.bn3.visit_buffers(f);
        if let Some((_, b)) = &self.projection {
            b.visit_buffers(f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.bn1.visit_buffers_mut(f);
        self.bn2.visit_buffers_mut(f);
        self.bn3.visit_buffers_mut(f);
        if let Some((_, b)) = &mut self.projection {
            b.visit_buffers_mut(f);
        }
    }
}

#[derive(Clone, Debug)]
struct ResNet<S> {
    stem: Conv2dLayer<S>,
    stem_bn: BatchNorm2d<S>,
    stages: Vec<Vec<Bottleneck<S>>>,
    pool: usize,
    head: Vec<LinearLayer<S>>,
}

#[derive(Clone, Debug)]
enum Body<S> {
    Linear(LinearNet<S>),
    Resnet(ResNet<S>),
}

/// Result of a forward pass: the N×2 output and, in train mode, the batch
/// statistics of every batch norm in traversal order.
#[derive(Debug)]
pub struct Forward<S> {
    pub output: Var,
    pub batch_stats: Vec<BatchStats<S>>,
}

#[derive(Clone, Debug)]
pub struct Model<S = f32> {
    spec: ArchitectureSpec,
    body: Body<S>,
    mode: Mode,
}

impl<S: Scalar> Model<S> {
    pub fn build(spec: ArchitectureSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let body = match spec.family {
            Family::Linear => {
                let mut inputs = spec.input_len();
                let mut layers = Vec::with_capacity(spec.fc_plan.len());
                for (i, &width) in spec.fc_plan.iter().enumerate() {
                    layers.push(LinearLayer::new(format!("fc{}", i + 1), inputs, width, rng)?);
                    inputs = width;
                }
                Body::Linear(LinearNet {
                    layers,
                    dropout: DropoutSpec::new(spec.dropout)?,
                })
            }
            Family::Resnet => {
                let plan = spec.resnet.as_ref().expect("validated");
                let stem = Conv2dLayer::new(
                    "stem.conv",
                    spec.input_channels,
                    plan.stem_width,
                    plan.stem_kernel,
                    plan.stem_stride,
                    plan.stem_kernel / 2,
                    false,
                    rng,
                )?;
                let stem_bn = BatchNorm2d::new("stem.bn", plan.stem_width)?;
                let mut width = plan.stem_width;
                let mut stages = Vec::new();
                for (s, (&blocks, &out)) in plan.block_counts.iter().zip(&plan.stage_widths).enumerate() {
                    let mut stage = Vec::with_capacity(blocks);
                    for b in 0..blocks {
                        let inputs = if b == 0 { width } else { out };
                        let prefix = format!("stage{}.block{}", s + 1, b + 1);
                        stage.push(Bottleneck::new(&prefix, inputs, out, plan.compression, rng)?);
                    }
                    width = out;
                    stages.push(stage);
                }
                let mut head = Vec::new();
                for (i, &h) in spec.fc_plan.iter().enumerate() {
                    head.push(LinearLayer::new(format!("head.fc{}", i + 1), width, h, rng)?);
                    width = h;
                }
                Body::Resnet(ResNet {
                    stem,
                    stem_bn,
                    stages,
                    pool: plan.pool,
                    head,
                })
            }
        };
        Ok(Model {
            spec,
            body,
            mode: Mode::Eval,
        })
    }

    /// Paper-sized fully connected estimator (800-400-200-2).
    pub fn build_linear(input_channels: usize, rng: &mut Rng) -> Result<Self> {
        Self::build(ArchitectureSpec::linear(input_channels), rng)
    }

    pub fn build_resnet(input_channels: usize, rng: &mut Rng) -> Result<Self> {
        Self::build(ArchitectureSpec::resnet(input_channels), rng)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn bottleneck_blocks(&self) -> usize {
        match &self.body {
            Body::Linear(_) => 0,
            Body::Resnet(r) => r.stages.iter().map(Vec::len).sum(),
        }
    }

    pub fn conv_layers(&self) -> usize {
        match &self.body {
            Body::Linear(_) => 0,
            Body::Resnet(r) => 1 + r.stages.iter().flatten().map(Bottleneck::convs).sum::<usize>(),
        }
    }

    pub fn fc_layers(&self) -> usize {
        match &self.body {
            Body::Linear(l) => l.layers.len(),
            Body::Resnet(r) => r.head.len(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = &self.spec;
        if shape.len() != 4
            || shape[1] != s.input_channels
            || shape[2] != s.input_height
            || shape[3] != s.input_width
        {
            return Err(Error::shape(format!(
                "model expects N×{}×{}×{} input, got {shape:?}",
                s.input_channels, s.input_height, s.input_width
            )));
        }
        Ok(())
    }

    /// Forward pass in the model's current mode. Train mode needs `rng` when
    /// dropout is active. Column 0 is solar, column 1 wind; both ≥ 0.
    pub fn forward(&self, tape: &mut Tape<S>, x: Var, rng: Option<&mut Rng>) -> Result<Forward<S>> {
        self.forward_in(tape, x, self.mode, rng)
    }

    fn forward_in(&self, tape: &mut Tape<S>, x: Var, mode: Mode, rng: Option<&mut Rng>) -> Result<Forward<S>> {
        self.check_input(tape.value(x).shape())?;
        let n = tape.value(x).shape()[0];
        let mut batch_stats = Vec::new();
        let output = match &self.body {
            Body::Linear(net) => {
                let mut rng = rng;
                let mut h = tape.reshape(x, &[n, self.spec.input_len()])?;
                for (i, layer) in net.layers.iter().enumerate() {
                    if mode == Mode::Train && net.dropout.p() > 0.0 {
                        let r = rng
                            .as_deref_mut()
                            .ok_or_else(|| Error::config("train-mode dropout needs a random stream"))?;
                        h = dropout(tape, h, net.dropout, mode, r)?;
                    }
                    h = layer.forward(tape, h)?;
                    if i + 1 < net.layers.len() {
                        h = tape.relu(h);
                    }
                }
                tape.relu(h)
            }
            Body::Resnet(net) => {
                let h = net.stem.forward(tape, x)?;
                let (h, st) = net.stem_bn.forward(tape, h, mode)?;
                batch_stats.extend(st);
                let mut h = tape.relu(h);
                for (s, stage) in net.stages.iter().enumerate() {
                    if s > 0 {
                        h = tape.avgpool2d(h, net.pool, net.pool)?;
                    }
                    for block in stage {
                        h = block.forward(tape, h, mode, &mut batch_stats)?;
                    }
                }
                let mut h = tape.mean(h, &[2, 3])?;
                for (i, layer) in net.head.iter().enumerate() {
                    h = layer.forward(tape, h)?;
                    if i + 1 < net.head.len() {
                        h = tape.relu(h);
                    }
                }
                tape.relu(h)
            }
        };
        Ok(Forward { output, batch_stats })
    }

    /// Eval-mode prediction for an N×C×H×W batch; returns N×2.
    pub fn predict(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::frozen_params();
        let x = tape.constant(batch.clone());
        let out = self.forward_in(&mut tape, x, Mode::Eval, None)?;
        Ok(tape.value(out.output).clone())
    }

    /// Eval-mode forward on a caller-supplied tape (used for saliency).
    pub fn forward_eval(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        Ok(self.forward_in(tape, x, Mode::Eval, None)?.output)
    }

    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm2d<S>> {
        match &mut self.body {
            Body::Linear(_) => Vec::new(),
            Body::Resnet(net) => {
                let mut v = vec![&mut net.stem_bn];
                for block in net.stages.iter_mut().flatten() {
                    v.extend(block.batchnorms_mut());
                }
                v
            }
        }
    }

    /// Folds train-mode batch statistics into the running statistics.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats<S>]) -> Result<()> {
        let mut bns = self.batchnorms_mut();
        if stats.is_empty() {
            return Ok(());
        }
        if stats.len() != bns.len() {
            return Err(Error::shape(format!(
                "{} batch statistics for {} batch norms",
                stats.len(),
                bns.len()
            )));
        }
        for (bn, st) in bns.iter_mut().zip(stats) {
            bn.update_running(st)?;
        }
        Ok(())
    }

    /// All parameters and buffers, by name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, t| out.push((n.to_string(), t.clone())));
        self.visit_buffers(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    /// Replaces every parameter and buffer from `named`. Every name must be
    /// present with a matching shape and no extras are allowed.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<S>)>) -> Result<()> {
        let mut map: BTreeMap<String, Tensor<S>> = BTreeMap::new();
        for (n, t) in named {
            if map.insert(n.clone(), t).is_some() {
                return Err(Error::data(format!("tensor `{n}` given twice")));
            }
        }
        let mut err = None;
        let mut assign = |name: &str, dst: &mut Tensor<S>| {
            if err.is_some() {
                return;
            }
            match map.remove(name) {
                Some(src) if src.shape() == dst.shape() => *dst = src,
                Some(src) => {
                    err = Some(Error::shape(format!(
                        "tensor `{name}`: expected {:?}, found {:?}",
                        dst.shape(),
                        src.shape()
                    )))
                }
                None => err = Some(Error::data(format!("tensor `{name}` missing"))),
            }
        };
        self.visit_params_mut(&mut assign);
        self.visit_buffers_mut(&mut assign);
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::data(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }

    /// Same weights in another element type.
    pub fn cast<T: Scalar>(&self) -> Result<Model<T>> {
        let mut m = Model::<T>::build(self.spec.clone(), &mut Rng::new(0))?;
        m.load_named(
            self.named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.cast()))
                .collect(),
        )?;
        m.mode = self.mode;
        Ok(m)
    }
}

impl<S: Scalar> Parameterized<S> for Model<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        match &self.body {
            Body::Linear(net) => net.layers.iter().for_each(|l| l.visit_params(f)),
            Body::Resnet(net) => {
                net.stem.visit_params(f);
                net.stem_bn.visit_params(f);
                net.stages.iter().flatten().for_each(|b| b.visit_params(f));
                net.head.iter().for_each(|l| l.visit_params(f));
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        match &mut self.body {
            Body::Linear(net) => net.layers.iter_mut().for_each(|l| l.visit_params_mut(f)),
            Body::Resnet(net) => {
                net.stem.visit_params_mut(f);
                net.stem_bn.visit_params_mut(f);
                net.stages
                    .iter_mut()
                    .flatten()
                    .for_each(|b| b.visit_params_mut(f));
                net.head.iter_mut().for_each(|l| l.visit_params_mut(f));
            }
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        if let Body::Resnet(net) = &self.body {
            net.stem_bn.visit_buffers(f);
            net.stages.iter().flatten().for_each(|b| b.visit_buffers(f));
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        if let Body::Resnet(net) = &mut self.body {
            net.stem_bn.visit_buffers_mut(f);
            net.stages
                .iter_mut()
                .flatten()
                .for_each(|b| b.visit_buffers_mut(f));
        }
    }
}
