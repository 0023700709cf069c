//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use crate::data::{format_timestamp, parse_timestamp, Source, SynthConfig};
use crate::error::{Error, Result};
use crate::models::{ArchitectureSpec, Family};
use crate::optim::{L2Scope, StageSchedule, StageTrigger, TrainConfig, DEFAULT_STAGE_LENGTH, DEFAULT_STAGE_LRS, PLATEAU_PATIENCE};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub cube: Option<PathBuf>,
    pub power: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub frames: Option<PathBuf>,

    pub model: Family,
    pub stack: usize,
    pub seed: u64,

    pub batch_size: usize,
    pub stage_length: usize,
    pub stage_lrs: Vec<f64>,
    pub lambda_l2: Option<f64>,
    pub l2_exclude: Vec<String>,
    pub stage_trigger: StageTrigger,

    pub dropout: Option<f64>,
    pub fc_plan: Option<Vec<usize>>,
    pub resnet_stem_width: Option<usize>,
    pub resnet_widths: Option<Vec<usize>>,

    pub exclude_anomalies: bool,
    pub anomaly_source: Source,
    pub anomaly_min_len: usize,

    pub bands: Option<Vec<usize>>,
    pub coarsen: Option<usize>,

    pub eval_window_start: Option<NaiveDateTime>,
    pub eval_window_hours: usize,

    pub synth: SynthConfig,
    pub synth_frames: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cube: None,
            power: None,
            splits: None,
            checkpoint: None,
            frames: None,
            model: Family::Resnet,
            stack: 5,
            seed: 0,
            batch_size: 16,
            stage_length: DEFAULT_STAGE_LENGTH,
            stage_lrs: DEFAULT_STAGE_LRS.to_vec(),
            lambda_l2: None,
            l2_exclude: vec![],
            stage_trigger: StageTrigger::Fixed,
            dropout: None,
            fc_plan: None,
            resnet_stem_width: None,
            resnet_widths: None,
            exclude_anomalies: false,
            anomaly_source: Source::Wind,
            anomaly_min_len: 24,
            bands: None,
            coarsen: None,
            eval_window_start: None,
            eval_window_hours: 168,
            synth: SynthConfig::default(),
            synth_frames: false,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("{key}: bad list element `{}`", s.trim())))
        })
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: bad value `{}`", v.trim())))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::config(format!("{key}: expected true or false, got `{other}`"))),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// `r:c;r:c;...`
fn plants(key: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|p| {
            let (r, c) = p
                .split_once(':')
                .ok_or_else(|| Error::config(format!("{key}: expected row:col, got `{p}`")))?;
            Ok((one(key, r)?, one(key, c)?))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim();
        let v = value.trim();
        match k {
            "cube" => self.cube = opt_path(v),
            "power" => self.power = opt_path(v),
            "splits" => self.splits = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "frames" => self.frames = opt_path(v),
            "model" => self.model = v.parse()?,
            "stack" => {
                self.stack = one(k, v)?;
                if self.stack != 1 && self.stack != 5 {
                    return Err(Error::config(format!("stack must be 1 or 5, got {}", self.stack)));
                }
            }
            "seed" => self.seed = one(k, v)?,
            "batch_size" => self.batch_size = one(k, v)?,
            "stage_length" => self.stage_length = one(k, v)?,
            "stage_lrs" => self.stage_lrs = list(k, v)?,
            "lambda_l2" => self.lambda_l2 = if v.is_empty() { None } else { Some(one(k, v)?) },
            "l2_exclude" => self.l2_exclude = list(k, v)?,
            "stage_trigger" => {
                self.stage_trigger = match v {
                    "fixed" => StageTrigger::Fixed,
                    "plateau" => StageTrigger::Plateau {
                        patience: PLATEAU_PATIENCE,
                    },
                    _ => return Err(Error::config(format!("stage_trigger: `{v}` (fixed or plateau)"))),
                }
            }
            "dropout" => self.dropout = if v.is_empty() { None } else { Some(one(k, v)?) },
            "fc_plan" => self.fc_plan = if v.is_empty() { None } else { Some(list(k, v)?) },
            "resnet_stem_width" => self.resnet_stem_width = if v.is_empty() { None } else { Some(one(k, v)?) },
            "resnet_widths" => self.resnet_widths = if v.is_empty() { None } else { Some(list(k, v)?) },
            "exclude_anomalies" => self.exclude_anomalies = flag(k, v)?,
            "anomaly_source" => self.anomaly_source = v.parse()?,
            "anomaly_min_len" => self.anomaly_min_len = one(k, v)?,
            "bands" => self.bands = if v.is_empty() { None } else { Some(list(k, v)?) },
            "coarsen" => self.coarsen = if v.is_empty() { None } else { Some(one(k, v)?) },
            "eval_window_start" => {
                self.eval_window_start = if v.is_empty() {
                    None
                } else {
                    Some(parse_timestamp(v).map_err(|e| Error::config(format!("{k}: {e}")))?)
                }
            }
            "eval_window_hours" => self.eval_window_hours = one(k, v)?,
            "synth_height" => self.synth.height = one(k, v)?,
            "synth_width" => self.synth.width = one(k, v)?,
            "synth_hours" => self.synth.hours = one(k, v)?,
            "synth_start" => self.synth.start = parse_timestamp(v).map_err(|e| Error::config(format!("{k}: {e}")))?,
            "synth_solar_plants" => self.synth.solar_plants = plants(k, v)?,
            "synth_wind_plants" => self.synth.wind_plants = plants(k, v)?,
            "synth_solar_scale" => self.synth.solar_scale = one(k, v)?,
            "synth_wind_scale" => self.synth.wind_scale = one(k, v)?,
            "synth_noise" => self.synth.noise = one(k, v)?,
            "synth_cloud_max" => self.synth.cloud_max = one(k, v)?,
            "synth_corner" => self.synth.corner = one(k, v)?,
            "synth_gap_hours" => self.synth.gap_hours = list(k, v)?,
            "synth_frames" => self.synth_frames = flag(k, v)?,
            _ => return Err(Error::config(format!("unknown configuration key `{k}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. A key may appear
    /// only once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("config line {}: expected key = value", n + 1)))?;
            if !seen.insert(k.trim().to_string()) {
                return Err(Error::config(format!("config line {}: `{}` set twice", n + 1, k.trim())));
            }
            self.set(k, v)
                .map_err(|e| Error::config(format!("config line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Every key with its effective value; parses back to the same config.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let o = |o: Option<String>| o.unwrap_or_default();
        let s = &self.synth;
        let plants = |v: &[(usize, usize)]| v.iter().map(|(r, c)| format!("{r}:{c}")).collect::<Vec<_>>().join(";");
        let rows: Vec<(&str, String)> = vec![
            ("cube", p(&self.cube)),
            ("power", p(&self.power)),
            ("splits", p(&self.splits)),
            ("checkpoint", p(&self.checkpoint)),
            ("frames", p(&self.frames)),
            ("model", self.model.to_string()),
            ("stack", self.stack.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("stage_length", self.stage_length.to_string()),
            ("stage_lrs", join(&self.stage_lrs)),
            ("lambda_l2", self.lambda_l2().to_string()),
            ("l2_exclude", self.l2_exclude.join(",")),
            (
                "stage_trigger",
                match self.stage_trigger {
                    StageTrigger::Fixed => "fixed".into(),
                    StageTrigger::Plateau { .. } => "plateau".into(),
                },
            ),
            ("dropout", o(self.dropout.map(|d| d.to_string()))),
            ("fc_plan", o(self.fc_plan.as_deref().map(join))),
            ("resnet_stem_width", o(self.resnet_stem_width.map(|w| w.to_string()))),
            ("resnet_widths", o(self.resnet_widths.as_deref().map(join))),
            ("exclude_anomalies", self.exclude_anomalies.to_string()),
            ("anomaly_source", self.anomaly_source.as_str().into()),
            ("anomaly_min_len", self.anomaly_min_len.to_string()),
            ("bands", o(self.bands.as_deref().map(join))),
            ("coarsen", o(self.coarsen.map(|c| c.to_string()))),
            ("eval_window_start", o(self.eval_window_start.as_ref().map(format_timestamp))),
            ("eval_window_hours", self.eval_window_hours.to_string()),
            ("synth_height", s.height.to_string()),
            ("synth_width", s.width.to_string()),
            ("synth_hours", s.hours.to_string()),
            ("synth_start", format_timestamp(&s.start)),
            ("synth_solar_plants", plants(&s.solar_plants)),
            ("synth_wind_plants", plants(&s.wind_plants)),
            ("synth_solar_scale", s.solar_scale.to_string()),
            ("synth_wind_scale", s.wind_scale.to_string()),
            ("synth_noise", s.noise.to_string()),
            ("synth_cloud_max", s.cloud_max.to_string()),
            ("synth_corner", s.corner.to_string()),
            ("synth_gap_hours", join(&s.gap_hours)),
            ("synth_frames", self.synth_frames.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The configured value, or the family default.
    pub fn lambda_l2(&self) -> f64 {
        self.lambda_l2
            .unwrap_or_else(|| TrainConfig::for_family(self.model, 0).lambda_l2)
    }

    pub fn architecture(&self, height: usize, width: usize) -> Result<ArchitectureSpec> {
        let mut spec = ArchitectureSpec::for_family(self.model, 6 * self.stack).with_input_size(height, width);
        if let Some(plan) = &self.fc_plan {
            spec = spec.with_fc_plan(plan.clone());
        }
        if let Some(p) = self.dropout {
            spec = spec.with_dropout(p);
        }
        if self.resnet_stem_width.is_some() || self.resnet_widths.is_some() {
            if self.model != Family::Resnet {
                return Err(Error::config("resnet_* keys apply only to the resnet model"));
            }
            let plan = spec.resnet.clone().expect("resnet spec has a plan");
            spec = spec.with_resnet_widths(
                self.resnet_stem_width.unwrap_or(plan.stem_width),
                self.resnet_widths.clone().unwrap_or(plan.stage_widths),
            );
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            schedule: StageSchedule::new(self.stage_length, &self.stage_lrs)?,
            lambda_l2: self.lambda_l2(),
            l2_scope: L2Scope {
                exclude: self.l2_exclude.clone(),
            },
            seed: self.seed,
            trigger: self.stage_trigger,
            adam: Default::default(),
            checkpoint_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
