//! Mini-batch training with staged learning rates, and evaluation.

use std::fmt::Write as _;
use std::path::PathBuf;

use indexmap::IndexMap;

use super::adam::{AdamConfig, AdamState};
use super::loss::{loss_with_l2, L2Scope};
use super::schedule::{StageSchedule, STAGES};
use crate::data::{batches, SampleSource, SplitIndices};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::metrics::{mean_accuracy, rmse};
use crate::models::{save_checkpoint, Family, Model};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const LINEAR_LAMBDA: f64 = 0.01;
pub const RESNET_LAMBDA: f64 = 0.001;
pub const PLATEAU_PATIENCE: usize = 2;
pub const DROPOUT_STREAM: u64 = 3 << 32;

/// When a new stage begins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageTrigger {
    /// Every `stage_length` epochs.
    Fixed,
    /// As `Fixed`, or earlier once validation RMSE has not improved for
    /// `patience` consecutive epochs.
    Plateau { patience: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub schedule: StageSchedule,
    pub lambda_l2: f64,
    pub l2_scope: L2Scope,
    pub seed: u64,
    pub trigger: StageTrigger,
    pub adam: AdamConfig,
    /// Where stage and final checkpoints go; `None` writes nothing.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn for_family(family: Family, seed: u64) -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            schedule: StageSchedule::default(),
            lambda_l2: match family {
                Family::Linear => LINEAR_LAMBDA,
                Family::Resnet => RESNET_LAMBDA,
            },
            l2_scope: L2Scope::default(),
            seed,
            trigger: StageTrigger::Fixed,
            adam: AdamConfig::default(),
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lambda_l2 >= 0.0) || !self.lambda_l2.is_finite() {
            return Err(Error::config(format!("lambda_l2 must be ≥ 0, got {}", self.lambda_l2)));
        }
        if let StageTrigger::Plateau { patience: 0 } = self.trigger {
            return Err(Error::config("plateau patience must be at least 1"));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.schedule.epochs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitScore {
    pub rmse: f64,
    pub solar_accuracy: f64,
    pub wind_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub score: SplitScore,
    pub predictions: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    pub lr: f64,
    /// Mean training-batch loss (RMSE plus penalty) over the epoch.
    pub mean_loss: f64,
    pub train: SplitScore,
    pub val: SplitScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub steps: usize,
    /// Training-split mean of the solar and wind targets.
    pub y_bar: [f64; 2],
}

impl TrainRun {
    /// `epoch,split,rmse,solar_acc,wind_acc`, two rows per epoch.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,split,rmse,solar_acc,wind_acc\n");
        for r in &self.history {
            for (name, sc) in [("train", &r.train), ("val", &r.val)] {
                let _ = writeln!(
                    s,
                    "{},{name},{:.6},{:.6},{:.6}",
                    r.epoch + 1,
                    sc.rmse,
                    sc.solar_accuracy,
                    sc.wind_accuracy
                );
            }
        }
        s
    }
}

/// Per-source mean target over `indices`.
pub fn target_means(source: &dyn SampleSource, indices: &[usize]) -> Result<[f64; 2]> {
    if indices.is_empty() {
        return Err(Error::data("mean of an empty split"));
    }
    let mut acc = [0.0; 2];
    for &i in indices {
        let t = source.target(i)?;
        acc[0] += t[0];
        acc[1] += t[1];
    }
    Ok(acc.map(|a| a / indices.len() as f64))
}

/// Eval-mode metrics over `indices`; the model is not modified.
pub fn evaluate(
    model: &Model<f32>,
    source: &dyn SampleSource,
    indices: &[usize],
    y_bar: [f64; 2],
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::data("evaluate: empty index list"));
    }
    let mut predictions = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(DEFAULT_BATCH_SIZE * 4) {
        let (x, y) = source.batch(chunk)?;
        let out = model.predict(&x)?;
        for (p, t) in out.data().chunks_exact(2).zip(y.data().chunks_exact(2)) {
            predictions.push([p[0] as f64, p[1] as f64]);
            targets.push([t[0] as f64, t[1] as f64]);
        }
    }
    let flat = |rows: &[[f64; 2]]| rows.iter().flatten().copied().collect::<Vec<_>>();
    let col = |rows: &[[f64; 2]], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let score = SplitScore {
        rmse: rmse(&flat(&targets), &flat(&predictions))?,
        solar_accuracy: mean_accuracy(&col(&targets, 0), &col(&predictions, 0), y_bar[0])?,
        wind_accuracy: mean_accuracy(&col(&targets, 1), &col(&predictions, 1), y_bar[1])?,
    };
    Ok(Evaluation {
        score,
        predictions,
        targets,
    })
}

/// One optimizer step on a batch; returns the loss before the update.
/// The model must be in train mode for dropout and batch statistics.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    x: Tensor<f32>,
    y: Tensor<f32>,
    lr: f64,
    lambda: f64,
    scope: &L2Scope,
    rng: &mut Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let fwd = model.forward(&mut tape, xv, Some(rng))?;
    let params = tape.params().to_vec();
    let loss = loss_with_l2(&mut tape, fwd.output, yv, &params, lambda, scope)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::numeric(format!("non-finite training loss ({value})")));
    }
    tape.backward(loss, &Tensor::scalar(1.0))?;
    let mut grads = IndexMap::new();
    for (name, v) in &params {
        if let Some(g) = tape.grad(*v) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient for `{name}`")));
            }
            grads.insert(name.clone(), g.to_vec());
        }
    }
    adam.step(model, &grads, lr)?;
    model.apply_batch_stats(&fwd.batch_stats)?;
    Ok(value)
}

pub fn train(
    model: &mut Model<f32>,
    source: &dyn SampleSource,
    splits: &SplitIndices,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    if splits.train.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    if splits.val.is_empty() {
        return Err(Error::data("validation split is empty"));
    }
    let [c, h, w] = source.input_shape();
    let spec = model.spec();
    if (spec.input_channels, spec.input_height, spec.input_width) != (c, h, w) {
        return Err(Error::shape(format!(
            "model expects {}×{}×{} inputs, data provides {c}×{h}×{w}",
            spec.input_channels, spec.input_height, spec.input_width
        )));
    }
    let y_bar = target_means(source, &splits.train)?;
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut adam = AdamState::new(config.adam);
    let mut run = TrainRun {
        history: Vec::new(),
        checkpoints: Vec::new(),
        steps: 0,
        y_bar,
    };
    let sched = &config.schedule;
    let mut stage = 0;
    let mut in_stage = 0;
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut epoch = 0;
    while stage < STAGES {
        let lr = sched.lr_for_stage(stage);
        let mut rng = Rng::substream(config.seed, DROPOUT_STREAM + epoch as u64);
        model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        let plan = batches(&splits.train, config.batch_size, config.seed, epoch)?;
        for (b, idx) in plan.iter().enumerate() {
            let (x, y) = source.batch(idx)?;
            let loss = train_step(model, &mut adam, x, y, lr, config.lambda_l2, &config.l2_scope, &mut rng)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::numeric(format!("epoch {} batch {}: {m}", epoch + 1, b + 1)),
                    other => other,
                })?;
            loss_sum += loss;
            run.steps += 1;
        }
        model.set_mode(Mode::Eval);
        let train_eval = evaluate(model, source, &splits.train, y_bar)?.score;
        let val_eval = evaluate(model, source, &splits.val, y_bar)?.score;
        log::info!(
            "epoch {:>3} stage {} lr {:.1e}: loss {:.4} train rmse {:.4} val rmse {:.4}",
            epoch + 1,
            stage + 1,
            lr,
            loss_sum / plan.len() as f64,
            train_eval.rmse,
            val_eval.rmse
        );
        run.history.push(EpochRecord {
            epoch,
            stage,
            lr,
            mean_loss: loss_sum / plan.len() as f64,
            train: train_eval,
            val: val_eval,
        });
        if val_eval.rmse < best_val {
            best_val = val_eval.rmse;
            since_best = 0;
        } else {
            since_best += 1;
        }
        in_stage += 1;
        epoch += 1;
        let plateaued = matches!(config.trigger, StageTrigger::Plateau { patience } if since_best >= patience);
        if in_stage == sched.stage_length() || plateaued {
            stage += 1;
            in_stage = 0;
            since_best = 0;
            if let Some(dir) = &config.checkpoint_dir {
                let name = if stage == STAGES {
                    "final.wxpm".to_string()
                } else {
                    format!("stage{stage}.wxpm")
                };
                let path = dir.join(name);
                save_checkpoint(model, &path)?;
                run.checkpoints.push(path);
            }
        }
    }
    Ok(run)
}
