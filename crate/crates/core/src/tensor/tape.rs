use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, S> {
    /// Normalize with the batch's own per-channel statistics.
    Train { eps: S },
    /// Normalize with fixed (running) statistics.
    Eval { mean: &'a [S], var: &'a [S], eps: S },
}

/// Per-channel batch statistics (population variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Recorded ops whose backward rule ran.
    pub ops_replayed: usize,
    /// Leaves that received a gradient.
    pub leaves_reached: usize,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Sqrt(Var),
    MulConst(Var, Vec<S>),
    Reshape(Var),
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    AvgPool {
        x: Var,
        geom: PoolGeom,
    },
    Sum {
        x: Var,
        map: Vec<usize>,
    },
    Mean {
        x: Var,
        map: Vec<usize>,
        count: usize,
    },
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        planes: usize,
        channels: usize,
        plane: usize,
        train: bool,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Ordered record of differentiable ops.
///
/// Values are appended in execution order, so the record is topologically
/// sorted by construction. An op is recorded with its backward rule only when
/// at least one operand requires a gradient; otherwise its result is stored
/// as a constant.
#[derive(Debug)]
pub struct Tape<S = f32> {
    nodes: Vec<Node<S>>,
    params: Vec<(String, Var)>,
    track_params: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, delta: Vec<S>) {
    match slot {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a = *a + d;
            }
        }
        None => *slot = Some(delta),
    }
}

/// Maps each input element to its output element when `axes` are removed.
fn reduction_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut seen = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::shape(format!(
                "axis {a} out of range for rank {}",
                shape.len()
            )));
        }
        if seen[a] {
            return Err(Error::shape(format!("axis {a} listed twice")));
        }
        seen[a] = true;
    }
    let mut out_shape: Vec<usize> = shape
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| !s)
        .map(|(&n, _)| n)
        .collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..total {
        let mut o = 0;
        for (d, &i) in idx.iter().enumerate() {
            if !seen[d] {
                o = o * shape[d] + i;
            }
        }
        map.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok((out_shape, map))
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            track_params: true,
        }
    }

    /// A tape whose registered parameters are constants: gradients flow only
    /// to leaves explicitly marked `requires_grad` (e.g. saliency inputs).
    pub fn frozen_params() -> Self {
        Tape {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of ops recorded with a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    /// Registered parameters in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value.with_requires_grad(false), Op::Leaf, false)
    }

    /// Registers a named trainable parameter as a leaf.
    pub fn param(&mut self, name: &str, value: &Tensor<S>) -> Var {
        let v = self.push(
            value.clone().with_requires_grad(self.track_params),
            Op::Leaf,
            self.track_params,
        );
        if self.track_params {
            self.params.push((name.to_string(), v));
        }
        v
    }

    fn push(&mut self, mut value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        value.set_requires_grad(requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<(Tensor<S>, bool)> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        Ok((t, self.any_grad(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, g) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, g) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, g) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), g))
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S) -> Tensor<S> {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        Tensor::from_vec(self.shape(a), data).expect("unary op keeps shape")
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let t = self.unary(a, |x| x * factor);
        let g = self.any_grad(&[a]);
        self.push(t, Op::Scale(a, factor), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| if x > S::zero() { x } else { S::zero() });
        let g = self.any_grad(&[a]);
        self.push(t, Op::Relu(a), g)
    }

    /// Square root; inputs below zero are a numeric error.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.data(a).iter().any(|&x| x < S::zero()) {
            return Err(Error::numeric("sqrt of a negative value"));
        }
        let t = self.unary(a, |x| x.sqrt());
        let g = self.any_grad(&[a]);
        Ok(self.push(t, Op::Sqrt(a), g))
    }

    /// Elementwise product with a constant buffer (used for dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Vec<S>) -> Result<Var> {
        if mask.len() != self.data(a).len() {
            return Err(Error::shape(format!(
                "mask of {} values for tensor of {}",
                mask.len(),
                self.data(a).len()
            )));
        }
        let data = self.data(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(t, Op::MulConst(a, mask), g))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(shape, self.data(a).to_vec())?;
        let g = self.any_grad(&[a]);
        Ok(self.push(t, Op::Reshape(a), g))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        kernels::gemm(m, k, n, self.data(a), self.data(b), &mut out);
        let t = Tensor::from_vec(&[m, n], out)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Matmul { a, b, m, k, n }, g))
    }

    /// `x[N×in] · w[out×in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape(format!(
                "linear: input {sx:?} does not match weight {sw:?}"
            )));
        }
        let (rows, inputs, outputs) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [outputs] {
                return Err(Error::shape(format!(
                    "linear: bias {:?} does not match {outputs} outputs",
                    self.shape(b)
                )));
            }
        }
        let mut out = vec![S::zero(); rows * outputs];
        kernels::gemm_nt(rows, inputs, outputs, self.data(x), self.data(w), &mut out);
        if let Some(b) = b {
            let bias = self.data(b);
            for row in out.chunks_mut(outputs) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o = *o + bv;
                }
            }
        }
        let t = Tensor::from_vec(&[rows, outputs], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let g = self.any_grad(&deps);
        Ok(self.push(
            t,
            Op::Linear {
                x,
                w,
                b,
                rows,
                inputs,
                outputs,
            },
            g,
        ))
    }

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(k));
        if sx.len() != 4 || sk.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d: expected rank-4 input and kernel, got {sx:?} and {sk:?}"
            )));
        }
        if sx[1] != sk[1] {
            return Err(Error::shape(format!(
                "conv2d: input has {} channels, kernel expects {}",
                sx[1], sk[1]
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d: stride must be positive"));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ho, wo) = match (
            kernels::conv_output_extent(h, kh, stride, pad),
            kernels::conv_output_extent(w, kw, stride, pad),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d: kernel {kh}×{kw} larger than padded input {}×{}",
                    h + 2 * pad,
                    w + 2 * pad
                )))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [f] {
                return Err(Error::shape(format!(
                    "conv2d: bias {:?} does not match {f} filters",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let out = kernels::conv2d_forward(&geom, self.data(x), self.data(k), b.map(|b| self.data(b)));
        let t = Tensor::from_vec(&[n, f, ho, wo], out)?;
        let mut deps = vec![x, k];
        deps.extend(b);
        let g = self.any_grad(&deps);
        Ok(self.push(t, Op::Conv2d { x, k, b, geom }, g))
    }

    /// Mean over each k×k window of every plane.
    pub fn avgpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 4 {
            return Err(Error::shape(format!("avgpool2d: expected rank 4, got {sx:?}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if k == 0 || stride == 0 || k > h || k > w {
            return Err(Error::shape(format!(
                "avgpool2d: window {k} (stride {stride}) does not fit {h}×{w}"
            )));
        }
        let geom = PoolGeom {
            planes: n * c,
            h,
            w,
            k,
            stride,
            ho: (h - k) / stride + 1,
            wo: (w - k) / stride + 1,
        };
        let out = kernels::avgpool_forward(&geom, self.data(x));
        let t = Tensor::from_vec(&[n, c, geom.ho, geom.wo], out)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(t, Op::AvgPool { x, geom }, g))
    }

    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let (shape, map) = reduction_map(self.shape(x), axes)?;
        let mut out = vec![S::zero(); shape.iter().product()];
        for (&v, &o) in self.data(x).iter().zip(&map) {
            out[o] = out[o] + v;
        }
        let t = Tensor::from_vec(&shape, out)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(t, Op::Sum { x, map }, g))
    }

    /// Sum over every axis.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum(x, &axes)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let (shape, map) = reduction_map(self.shape(x), axes)?;
        let out_len: usize = shape.iter().product();
        let count = self.data(x).len() / out_len;
        let mut out = vec![S::zero(); out_len];
        for (&v, &o) in self.data(x).iter().zip(&map) {
            out[o] = out[o] + v;
        }
        let inv = S::one() / S::of(count as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        let t = Tensor::from_vec(&shape, out)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(t, Op::Mean { x, map, count }, g))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.mean(x, &axes)
    }

    /// Maximum along one axis; ties resolve to the first index.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, map) = reduction_map(self.shape(x), &[axis])?;
        let out_len: usize = shape.iter().product();
        let mut out = vec![S::neg_infinity(); out_len];
        let mut argmax = vec![usize::MAX; out_len];
        for (i, (&v, &o)) in self.data(x).iter().zip(&map).enumerate() {
            if argmax[o] == usize::MAX || v > out[o] {
                out[o] = v;
                argmax[o] = i;
            }
        }
        let t = Tensor::from_vec(&shape, out)?;
        let g = self.any_grad(&[x]);
        Ok(self.push(t, Op::Max { x, argmax }, g))
    }

    /// Per-channel normalization of an N×C×H×W tensor followed by the affine
    /// map `gamma·x̂ + beta`. Train mode also returns the batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, S>,
    ) -> Result<(Var, Option<BatchStats<S>>)> {
        let sx = self.shape(x);
        if sx.len() != 4 {
            return Err(Error::shape(format!("batch_norm: expected rank 4, got {sx:?}")));
        }
        let (n, c, plane) = (sx[0], sx[1], sx[2] * sx[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batch_norm: gamma/beta must have {c} entries"
            )));
        }
        let count = n * plane;
        let data = self.data(x);
        let (mean, var, eps, train) = match mode {
            BatchNormMode::Train { eps } => {
                if count < 2 {
                    return Err(Error::data(
                        "batch_norm: train mode needs at least two values per channel",
                    ));
                }
                let mut mean = vec![S::zero(); c];
                let mut var = vec![S::zero(); c];
                let inv = S::one() / S::of(count as f64);
                for ch in 0..c {
                    let mut acc = S::zero();
                    for i in 0..n {
                        for &v in &data[(i * c + ch) * plane..][..plane] {
                            acc = acc + v;
                        }
                    }
                    let mu = acc * inv;
                    let mut sq = S::zero();
                    for i in 0..n {
                        for &v in &data[(i * c + ch) * plane..][..plane] {
                            sq = sq + (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq * inv;
                }
                (mean, var, eps, true)
            }
            BatchNormMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(format!(
                        "batch_norm: running statistics must have {c} entries"
                    )));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![S::zero(); data.len()];
        let mut out = vec![S::zero(); data.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    let h = (data[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = g[ch] * h + b[ch];
                }
            }
        }
        let t = Tensor::from_vec(sx, out)?;
        let requires = self.any_grad(&[x, gamma, beta]);
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                planes: n,
                channels: c,
                plane,
                train,
            },
            requires,
        );
        Ok((v, train.then_some(BatchStats { mean, var })))
    }

    /// Reverse sweep from `output` seeded with `seed`. Leaf gradients are
    /// written into the leaves' grad slots (replacing earlier values);
    /// intermediate gradients are dropped as soon as they are consumed.
    pub fn backward(&mut self, output: Var, seed: &Tensor<S>) -> Result<BackwardStats> {
        if self.nodes.is_empty() {
            return Ok(BackwardStats::default());
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::shape("backward: output is not on this tape"));
        }
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::shape(format!(
                "backward: seed shape {:?} does not match output {out_shape:?}",
                seed.shape()
            )));
        }
        let mut stats = BackwardStats::default();
        if !self.nodes[output.0].requires_grad {
            return Ok(stats);
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed.data().to_vec());

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].requires_grad {
                    self.nodes[i].value.set_grad(Some(g))?;
                    stats.leaves_reached += 1;
                }
                continue;
            }
            stats.ops_replayed += 1;
            for (parent, delta) in self.backward_rule(i, g) {
                if self.nodes[parent.0].requires_grad {
                    accumulate(&mut grads[parent.0], delta);
                }
            }
        }
        Ok(stats)
    }

    fn backward_rule(&self, i: usize, g: Vec<S>) -> Vec<(Var, Vec<S>)> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
            Op::Sub(a, b) => {
                let neg = g.iter().map(|&v| -v).collect();
                vec![(*a, g), (*b, neg)]
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let ga = g.iter().zip(db).map(|(&gv, &y)| gv * y).collect();
                let gb = g.iter().zip(da).map(|(&gv, &x)| gv * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, f) => vec![(*a, g.iter().map(|&v| v * *f).collect())],
            Op::Relu(a) => {
                let x = self.data(*a);
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                    .collect();
                vec![(*a, d)]
            }
            Op::Sqrt(a) => {
                let y = self.nodes[i].value.data();
                let two = S::of(2.0);
                let d = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > S::zero() { gv / (two * yv) } else { S::zero() })
                    .collect();
                vec![(*a, d)]
            }
            Op::MulConst(a, mask) => vec![(*a, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect())],
            Op::Reshape(a) => vec![(*a, g)],
            Op::Matmul { a, b, m, k, n } => {
                let mut out = Vec::new();
                if wants(*a) {
                    let mut da = vec![S::zero(); m * k];
                    kernels::gemm_nt(*m, *n, *k, &g, self.data(*b), &mut da);
                    out.push((*a, da));
                }
                if wants(*b) {
                    let at = kernels::transpose(self.data(*a), *m, *k);
                    let mut db = vec![S::zero(); k * n];
                    kernels::gemm(*k, *m, *n, &at, &g, &mut db);
                    out.push((*b, db));
                }
                out
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                inputs,
                outputs,
            } => {
                let mut out = Vec::new();
                if wants(*x) {
                    let mut dx = vec![S::zero(); rows * inputs];
                    kernels::gemm(*rows, *outputs, *inputs, &g, self.data(*w), &mut dx);
                    out.push((*x, dx));
                }
                if wants(*w) {
                    let gt = kernels::transpose(&g, *rows, *outputs);
                    let mut dw = vec![S::zero(); outputs * inputs];
                    kernels::gemm(*outputs, *rows, *inputs, &gt, self.data(*x), &mut dw);
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut db = vec![S::zero(); *outputs];
                        for row in g.chunks(*outputs) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        out.push((*b, db));
                    }
                }
                out
            }
            Op::Conv2d { x, k, b, geom } => {
                let need_b = b.map(wants).unwrap_or(false);
                let grads = kernels::conv2d_backward(
                    geom,
                    self.data(*x),
                    self.data(*k),
                    &g,
                    (wants(*x), wants(*k), need_b),
                );
                let mut out = Vec::new();
                if let Some(dx) = grads.dx {
                    out.push((*x, dx));
                }
                if let Some(dk) = grads.dk {
                    out.push((*k, dk));
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    out.push((*b, db));
                }
                out
            }
            Op::AvgPool { x, geom } => vec![(*x, kernels::avgpool_backward(geom, &g))],
            Op::Sum { x, map } => vec![(*x, map.iter().map(|&o| g[o]).collect())],
            Op::Mean { x, map, count } => {
                let inv = S::one() / S::of(*count as f64);
                vec![(*x, map.iter().map(|&o| g[o] * inv).collect())]
            }
            Op::Max { x, argmax } => {
                let mut dx = vec![S::zero(); self.data(*x).len()];
                for (o, &i) in argmax.iter().enumerate() {
                    dx[i] = dx[i] + g[o];
                }
                vec![(*x, dx)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                planes,
                channels,
                plane,
                train,
            } => {
                let (n, c, p) = (*planes, *channels, *plane);
                let gam = self.data(*gamma);
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * p;
                        for j in base..base + p {
                            dgamma[ch] = dgamma[ch] + g[j] * xhat[j];
                            dbeta[ch] = dbeta[ch] + g[j];
                        }
                    }
                }
                let mut out = Vec::new();
                if wants(*x) {
                    let mut dx = vec![S::zero(); g.len()];
                    let m = S::of((n * p) as f64);
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * p;
                            for j in base..base + p {
                                dx[j] = if *train {
                                    // dγ = Σ g·x̂ and dβ = Σ g, so the batch
                                    // terms reuse them scaled by γ.
                                    gam[ch] * inv_std[ch] / m
                                        * (m * g[j] - dbeta[ch] - xhat[j] * dgamma[ch])
                                } else {
                                    g[j] * gam[ch] * inv_std[ch]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_and_flat_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]).with_requires_grad(true));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        tape.backward(y, &t(&[3], &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_values() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[3], &[3.0, 4.0, 5.0]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
        assert!(tape.matmul(a, a).is_err());
    }

    #[test]
    fn conv_hand_sum_and_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0).unwrap());
        let k = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0).unwrap());
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);

        let data: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let x = tape.constant(t(&[1, 1, 3, 4], &data));
        let one = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, one, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_kernel_too_large() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0).unwrap());
        let k = tape.constant(Tensor::full(&[1, 1, 5, 5], 1.0).unwrap());
        assert!(matches!(tape.conv2d(x, k, None, 1, 1), Err(Error::Shape(_))));
        assert!(tape.conv2d(x, k, None, 1, 2).is_ok());
    }

    #[test]
    fn avgpool_hand_mean_and_bad_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.avgpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
        assert!(tape.avgpool2d(x, 3, 1).is_err());
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum_all(x).unwrap();
        assert_eq!(tape.value(s).data(), &[6.0]);

        let c = tape.constant(Tensor::full(&[2, 3], 4.5).unwrap());
        let m = tape.mean_all(c).unwrap();
        assert_eq!(tape.value(m).data(), &[4.5]);

        // 2 channels × 2×2 pixels, channel-major.
        let v = tape.constant(t(
            &[2, 2, 2],
            &[1.0, 5.0, -2.0, 0.5, 3.0, 4.0, -1.0, 0.25],
        ));
        let mx = tape.max_over_axis(v, 0).unwrap();
        assert_eq!(tape.value(mx).shape(), &[2, 2]);
        assert_eq!(tape.value(mx).data(), &[3.0, 5.0, -1.0, 0.5]);

        assert!(tape.sum(v, &[3]).is_err());
        assert!(tape.sum(v, &[1, 1]).is_err());
    }

    #[test]
    fn backward_identity_and_square() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]).with_requires_grad(true));
        tape.backward(x, &t(&[1], &[1.0])).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq).unwrap();
        tape.backward(s, &t(&[1], &[1.0])).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_seed_mismatch_and_empty_tape() {
        let mut empty = Tape::<f64>::new();
        assert_eq!(
            empty.backward(Var(0), &t(&[1], &[1.0])).unwrap(),
            BackwardStats::default()
        );

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let y = tape.relu(x);
        assert!(tape.backward(y, &t(&[3], &[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn each_op_replayed_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, -2.0]).with_requires_grad(true));
        let a = tape.relu(x);
        let b = tape.mul(a, x).unwrap();
        let c = tape.add(b, a).unwrap();
        let d = tape.scale(c, 0.5);
        let s = tape.sum_all(d).unwrap();
        let stats = tape.backward(s, &t(&[1], &[1.0])).unwrap();
        assert_eq!(stats.ops_replayed, tape.recorded_ops());
        assert_eq!(stats.ops_replayed, 5);
        let again = tape.backward(s, &t(&[1], &[1.0])).unwrap();
        assert_eq!(again, stats);
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.relu(a);
        assert!(!tape.requires_grad(b));
        assert_eq!(tape.recorded_ops(), 0);
    }

    #[test]
    fn frozen_params_are_constants() {
        let w = t(&[2], &[1.0, 2.0]);
        let mut tape = Tape::<f64>::frozen_params();
        let p = tape.param("w", &w);
        assert!(!tape.requires_grad(p));
        assert!(tape.params().is_empty());
        let mut tape = Tape::<f64>::new();
        let p = tape.param("w", &w);
        assert!(tape.requires_grad(p));
        assert_eq!(tape.params()[0].0, "w");
    }

    #[test]
    fn batch_norm_degenerate_batch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let g = tape.constant(t(&[1], &[1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let err = tape
            .batch_norm(x, g, b, BatchNormMode::Train { eps: 1e-5 })
            .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
