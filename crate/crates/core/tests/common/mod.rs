//! Shared fixtures: a central-difference gradient oracle and small synthetic
//! datasets.
#![allow(dead_code)]

use wxpower::data::{align, synth_generate, AlignOptions, AlignedDataset, SynthConfig};
use wxpower::data::{apply_normalizer, fit_normalizer};
use wxpower::layers::{Mode, Parameterized};
use wxpower::models::{ArchitectureSpec, Model};
use wxpower::optim::{loss_with_l2, L2Scope};
use wxpower::rng::Rng;
use wxpower::tensor::{BatchNormMode, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Relative error with a floor on the denominator so that gradients that
/// are zero on both sides compare equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// `(f(x + h) − f(x − h)) / 2h` for each coordinate in `coords`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut x = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central difference at `FD_STEP` for coordinate `i`, or `None` when the
/// estimate at half the step disagrees, meaning the stencil straddles a
/// ReLU kink and the one-sided slopes differ.
pub fn smooth_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> Option<f64> {
    let mut x = x.to_vec();
    let orig = x[i];
    let mut at = |h: f64| {
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        (up - down) / (2.0 * h)
    };
    let full = at(FD_STEP);
    let half = at(FD_STEP / 2.0);
    ((full - half).abs() <= 1e-6 * full.abs().max(1e-3)).then_some(full)
}

/// Draws `want` coordinates from `0..n` whose difference quotient is
/// kink-free, returning `(coordinate, numeric)` pairs. Panics if more than
/// half of the draws had to be rejected.
pub fn sample_smooth(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    want: usize,
    rng: &mut Rng,
) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(want);
    let mut rejected = 0;
    while out.len() < want {
        let i = rng.below(x.len());
        match smooth_diff(&mut f, x, i) {
            Some(d) => out.push((i, d)),
            None => rejected += 1,
        }
        assert!(rejected <= want, "too many coordinates straddle a kink ({rejected})");
    }
    out
}

/// Values in ±[0.1, 1], kept away from the ReLU kink.
pub fn random_values(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.uniform(0.1, 1.0);
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> wxpower::Result<Var>;

/// Checks every input of `build` against central differences of the scalar
/// `Σ wᵢ·outᵢ` with a random fixed projection `w`. Returns the maximum
/// relative error over all input coordinates.
pub fn check_op(seed: u64, shapes: &[Vec<usize>], positive: bool, build: &Build) -> f64 {
    let mut rng = Rng::new(seed);
    let inputs: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| {
            let v = random_values(&mut rng, s.iter().product());
            if positive {
                v.into_iter().map(f64::abs).collect()
            } else {
                v
            }
        })
        .collect();

    let eval = |vals: &[Vec<f64>], with_grad: bool| -> (f64, Vec<Vec<f64>>, usize) {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = vals
            .iter()
            .zip(shapes)
            .map(|(v, s)| tape.leaf(Tensor::from_vec(s, v.clone()).unwrap().with_requires_grad(true)))
            .collect();
        let out = build(&mut tape, &vars).unwrap();
        let n = tape.value(out).numel();
        let mut prng = Rng::substream(seed, 99);
        let w = (0..n).map(|_| prng.uniform(-1.0, 1.0)).collect();
        let proj = tape.mul_const(out, w).unwrap();
        let loss = tape.sum_all(proj).unwrap();
        let value = tape.value(loss).data()[0];
        let mut grads = Vec::new();
        if with_grad {
            tape.backward(loss, &Tensor::scalar(1.0)).unwrap();
            grads = vars
                .iter()
                .zip(vals)
                .map(|(v, x)| tape.grad(*v).map_or(vec![0.0; x.len()], <[f64]>::to_vec))
                .collect();
        }
        (value, grads, n)
    };

    let (_, analytic, _) = eval(&inputs, true);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let coords: Vec<usize> = (0..inputs[k].len()).collect();
        let numeric = central_diff(
            |x| {
                let mut vals = inputs.clone();
                vals[k] = x.to_vec();
                eval(&vals, false).0
            },
            &inputs[k],
            &coords,
        );
        worst = worst.max(max_rel_err(&analytic[k], &numeric));
    }
    worst
}

/// Flat parameter vector of a model in traversal order.
pub fn flat_params(model: &Model<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, t| out.extend_from_slice(t.data()));
    out
}

pub fn set_flat_params(model: &mut Model<f64>, values: &[f64]) {
    let mut at = 0;
    model.visit_params_mut(&mut |_, t| {
        let n = t.numel();
        t.data_mut().copy_from_slice(&values[at..at + n]);
        at += n;
    });
}

/// Synthetic planted-plant dataset, z-scored, aligned with its targets.
pub fn synth_dataset(config: &SynthConfig) -> AlignedDataset {
    let data = synth_generate(config).unwrap();
    let stats = fit_normalizer(&data.cube).unwrap();
    let cube = apply_normalizer(&data.cube, &stats).unwrap();
    align(cube, data.power, &AlignOptions::default()).unwrap()
}

pub struct OpCase {
    pub name: String,
    pub shapes: Vec<Vec<usize>>,
    /// Draw strictly positive inputs (for `sqrt`).
    pub positive: bool,
    pub build: Box<Build>,
}

fn case(name: &str, shapes: &[&[usize]], build: impl Fn(&mut Tape<f64>, &[Var]) -> wxpower::Result<Var> + 'static) -> OpCase {
    OpCase {
        name: name.to_string(),
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        positive: false,
        build: Box::new(build),
    }
}

/// Every differentiable tape operation, each on a small fixed shape.
pub fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        case("add", &[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1])),
        case("sub", &[&[3, 4], &[3, 4]], |t, v| t.sub(v[0], v[1])),
        case("mul", &[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1])),
        case("scale", &[&[3, 4]], |t, v| Ok(t.scale(v[0], -2.5))),
        case("relu", &[&[3, 4]], |t, v| Ok(t.relu(v[0]))),
        case("reshape", &[&[3, 4]], |t, v| t.reshape(v[0], &[2, 6])),
        case("mul_const", &[&[2, 3]], |t, v| t.mul_const(v[0], vec![0.5, -1.0, 2.0, 0.0, 3.0, 1.5])),
        case("matmul", &[&[3, 5], &[5, 4]], |t, v| t.matmul(v[0], v[1])),
        case("linear", &[&[4, 6], &[3, 6], &[3]], |t, v| t.linear(v[0], v[1], Some(v[2]))),
        case("linear without bias", &[&[2, 5], &[4, 5]], |t, v| t.linear(v[0], v[1], None)),
        case("conv2d 1x1", &[&[2, 5, 4, 4], &[3, 5, 1, 1]], |t, v| t.conv2d(v[0], v[1], None, 1, 0)),
        case("conv2d 7x7 stride 2", &[&[1, 2, 9, 8], &[2, 2, 7, 7]], |t, v| t.conv2d(v[0], v[1], None, 2, 3)),
        case("avgpool2d 2/2", &[&[2, 3, 6, 5]], |t, v| t.avgpool2d(v[0], 2, 2)),
        case("avgpool2d 3/1", &[&[1, 2, 5, 5]], |t, v| t.avgpool2d(v[0], 3, 1)),
        case("sum one axis", &[&[2, 3, 4]], |t, v| t.sum(v[0], &[1])),
        case("sum two axes", &[&[2, 3, 4]], |t, v| t.sum(v[0], &[0, 2])),
        case("sum_all", &[&[2, 3, 4]], |t, v| t.sum_all(v[0])),
        case("mean", &[&[2, 3, 4]], |t, v| t.mean(v[0], &[1, 2])),
        case("mean_all", &[&[2, 3, 4]], |t, v| t.mean_all(v[0])),
        case("max_over_axis", &[&[2, 3, 4]], |t, v| t.max_over_axis(v[0], 1)),
        case("batch_norm train", &[&[3, 2, 3, 4], &[2], &[2]], |t, v| {
            Ok(t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train { eps: 1e-5 })?.0)
        }),
        case("batch_norm eval", &[&[3, 2, 3, 4], &[2], &[2]], |t, v| {
            let (mean, var) = ([0.3, -0.2], [1.7, 0.4]);
            Ok(t.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var, eps: 1e-5 })?.0)
        }),
        case("rmse with l2 penalty", &[&[4, 2], &[4, 2], &[3, 2]], |t, v| {
            let params = vec![("w".to_string(), v[2])];
            loss_with_l2(t, v[0], v[1], &params, 0.01, &L2Scope::default())
        }),
    ];
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 3)] {
        cases.push(case(
            &format!("conv2d stride {stride} pad {pad}"),
            &[&[2, 3, 7, 6], &[4, 3, 3, 3], &[4]],
            move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad),
        ));
    }
    let mut sqrt = case("sqrt", &[&[3, 4]], |t, v| t.sqrt(v[0]));
    sqrt.positive = true;
    cases.push(sqrt);
    cases
}

/// Loss of a train-mode model on a fixed batch, with the gradients of the
/// flat parameter vector and of the input.
pub fn model_loss(model: &Model<f64>, x: &Tensor<f64>, y: &Tensor<f64>, lambda: f64, seed: u64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone().with_requires_grad(true));
    let yv = tape.constant(y.clone());
    // a fresh stream per call keeps any dropout mask fixed across calls
    let mut rng = Rng::new(seed);
    let fwd = model.forward(&mut tape, xv, Some(&mut rng)).unwrap();
    let params = tape.params().to_vec();
    let loss = loss_with_l2(&mut tape, fwd.output, yv, &params, lambda, &L2Scope::default()).unwrap();
    let value = tape.value(loss).data()[0];
    tape.backward(loss, &Tensor::scalar(1.0)).unwrap();
    let mut pg = Vec::new();
    for (_, v) in &params {
        pg.extend_from_slice(tape.grad(*v).unwrap());
    }
    let xg = tape.grad(xv).unwrap().to_vec();
    (value, pg, xg)
}

/// Max relative error between analytic and numeric gradients of a
/// width-reduced model's training loss, over 40 parameter and 20 input
/// coordinates.
pub fn model_fd_error(spec: &ArchitectureSpec, batch: usize, lambda: f64, seed: u64) -> f64 {
    let mut model = Model::<f64>::build(spec.clone(), &mut Rng::new(seed)).unwrap();
    model.set_mode(Mode::Train);
    let mut rng = Rng::substream(seed, 7);
    let shape = [batch, spec.input_channels, spec.input_height, spec.input_width];
    let x = Tensor::from_vec(&shape, (0..batch * spec.input_len()).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
    let y = Tensor::from_vec(&[batch, 2], (0..batch * 2).map(|_| rng.uniform(0.5, 2.0)).collect()).unwrap();
    // lift the output bias so the final clip is inactive and gradients flow
    let mut last = String::new();
    model.visit_params(&mut |n, _| last = n.to_string());
    model.visit_params_mut(&mut |n, t| {
        if n == last {
            t.data_mut().iter_mut().for_each(|b| *b = 1.0);
        }
    });

    let (_, pg, xg) = model_loss(&model, &x, &y, lambda, seed);
    assert!(pg.iter().any(|g| *g != 0.0), "seed {seed}: all parameter gradients are zero");
    let flat = flat_params(&model);
    let mut pick = Rng::substream(seed, 8);
    let numeric = sample_smooth(
        |p| {
            let mut m = model.clone();
            set_flat_params(&mut m, p);
            model_loss(&m, &x, &y, lambda, seed).0
        },
        &flat,
        40,
        &mut pick,
    );
    let perr = numeric.iter().map(|&(i, n)| rel_err(pg[i], n)).fold(0.0, f64::max);
    let numeric = sample_smooth(
        |xs| {
            let xt = Tensor::from_vec(&shape, xs.to_vec()).unwrap();
            model_loss(&model, &xt, &y, lambda, seed).0
        },
        x.data(),
        20,
        &mut pick,
    );
    let xerr = numeric.iter().map(|&(i, n)| rel_err(xg[i], n)).fold(0.0, f64::max);
    perr.max(xerr)
}

/// The width-reduced models checked by gradient tests: `(name, spec, batch, λ)`.
pub fn reduced_models() -> Vec<(&'static str, ArchitectureSpec, usize, f64)> {
    vec![
        (
            "linear",
            ArchitectureSpec::linear(6).with_input_size(4, 3).with_fc_plan(vec![10, 6, 2]),
            3,
            0.01,
        ),
        (
            "resnet",
            ArchitectureSpec::resnet(6)
                .with_input_size(16, 16)
                .with_resnet_widths(4, vec![8, 12, 16, 20])
                .with_fc_plan(vec![8, 2]),
            2,
            0.001,
        ),
        (
            "stacked resnet",
            ArchitectureSpec::resnet(30)
                .with_input_size(16, 16)
                .with_resnet_widths(4, vec![8, 8, 8, 8])
                .with_fc_plan(vec![4, 2]),
            2,
            0.001,
        ),
    ]
}
