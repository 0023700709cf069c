//! The `wxpower` command line: import, synth, split, train, eval, saliency
//! and anomalies. [`run`] takes the argument list so the commands can be
//! driven in-process.

mod config;
mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use svg::{line_chart, Series};

use crate::data::{
    aggregate_power, align, apply_normalizer, detect_constant_runs, fit_normalizer, flag_constant_runs,
    format_timestamp, import_frames, make_sample, parse_timestamp, read_frame_manifest, split, synth_generate,
    AlignOptions, AlignedDataset, ImportOptions, SplitIndices, StackWindow, WeatherCube,
};
use crate::data::Source;
use crate::error::{Error, Result};
use crate::metrics::{report, SplitName, SplitPredictions};
use crate::models::{load_checkpoint, Model};
use crate::optim::{evaluate, target_means, train, TrainRun};
use crate::rng::{Rng, ALGORITHM};
use crate::saliency::{export_map, saliency_map, MapFormat};

/// Native grid of the raw weather exports; coarsened by 4 on import.
pub const RAW_GRID: (usize, usize) = (460, 432);
pub const RAW_COARSEN: usize = 4;

#[derive(Debug, Parser)]
#[command(name = "wxpower", version, about = "Solar and wind power estimation from weather maps")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for the numeric kernels.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Override any configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// WXC1 weather cube.
    #[arg(long)]
    pub cube: Option<PathBuf>,
    /// 5-minute `timestamp,source,mw` production CSV.
    #[arg(long)]
    pub power: Option<PathBuf>,
    /// Split file.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a normalized WXC1 cube from raw frame exports.
    Import {
        /// Frame manifest CSV.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        coarsen: Option<usize>,
        /// Source channel of each of the six bands, comma separated.
        #[arg(long)]
        bands: Option<String>,
    },
    /// Generate a synthetic dataset with planted plants.
    Synth {
        #[arg(long)]
        hours: Option<usize>,
        /// Also write raw per-hour frames and a frame manifest.
        #[arg(long)]
        frames: bool,
    },
    /// Write a train/val/test split.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        stack: Option<usize>,
        /// Split `0..N` without a dataset.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        stack: Option<usize>,
    },
    /// Score a checkpoint on every split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// First hour of the prediction plot window.
        #[arg(long)]
        window_start: Option<String>,
        #[arg(long)]
        window_hours: Option<usize>,
    },
    /// Saliency maps for one sample.
    Saliency {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sample index.
        #[arg(long, conflicts_with = "timestamp")]
        index: Option<usize>,
        /// Sample hour.
        #[arg(long)]
        timestamp: Option<String>,
    },
    /// Report runs of constant production values.
    Anomalies {
        #[arg(long)]
        power: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        min_len: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Import { .. } => "import",
            Command::Synth { .. } => "synth",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Saliency { .. } => "saliency",
            Command::Anomalies { .. } => "anomalies",
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                print!("{e}");
                return Ok(());
            }
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            return Err(Error::config(first.trim_start_matches("error: ").to_string()));
        }
    };
    execute(cli)
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    let path = |cfg: &mut RunConfig, key: &str, p: &Option<PathBuf>| -> Result<()> {
        match p {
            Some(p) => cfg.set(key, &p.display().to_string()),
            None => Ok(()),
        }
    };
    let data = |cfg: &mut RunConfig, d: &DataArgs| -> Result<()> {
        path(cfg, "cube", &d.cube)?;
        path(cfg, "power", &d.power)?;
        path(cfg, "splits", &d.splits)
    };
    match &cli.command {
        Command::Import { frames, coarsen, bands } => {
            path(&mut cfg, "frames", frames)?;
            if let Some(c) = coarsen {
                cfg.set("coarsen", &c.to_string())?;
            }
            if let Some(b) = bands {
                cfg.set("bands", b)?;
            }
        }
        Command::Synth { hours, frames } => {
            if let Some(h) = hours {
                cfg.set("synth_hours", &h.to_string())?;
            }
            if *frames {
                cfg.synth_frames = true;
            }
        }
        Command::Split { data: d, stack, .. } => {
            data(&mut cfg, d)?;
            if let Some(s) = stack {
                cfg.set("stack", &s.to_string())?;
            }
        }
        Command::Train { data: d, model, stack } => {
            data(&mut cfg, d)?;
            if let Some(m) = model {
                cfg.set("model", m)?;
            }
            if let Some(s) = stack {
                cfg.set("stack", &s.to_string())?;
            }
        }
        Command::Eval {
            data: d,
            checkpoint,
            window_start,
            window_hours,
        } => {
            data(&mut cfg, d)?;
            path(&mut cfg, "checkpoint", checkpoint)?;
            if let Some(w) = window_start {
                cfg.set("eval_window_start", w)?;
            }
            if let Some(h) = window_hours {
                cfg.set("eval_window_hours", &h.to_string())?;
            }
        }
        Command::Saliency { data: d, checkpoint, .. } => {
            data(&mut cfg, d)?;
            path(&mut cfg, "checkpoint", checkpoint)?;
        }
        Command::Anomalies { power, source, min_len } => {
            path(&mut cfg, "power", power)?;
            if let Some(s) = source {
                cfg.set("anomaly_source", s)?;
            }
            if let Some(m) = min_len {
                cfg.set("anomaly_min_len", &m.to_string())?;
            }
        }
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.synth.seed = cfg.seed;
    Ok(cfg)
}

/// Records inputs and outputs (with SHA-256 digests) of one command.
struct RunRecord {
    command: &'static str,
    out: PathBuf,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<PathBuf>,
}

impl RunRecord {
    fn input(&mut self, role: &str, path: &Path) {
        self.inputs.push((role.to_string(), path.to_path_buf()));
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(self, cfg: &RunConfig) -> Result<()> {
        let resolved = self.out.join("config.resolved.txt");
        std::fs::write(&resolved, cfg.to_text()).map_err(|e| Error::io(&resolved, e))?;
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "seed={}", cfg.seed);
        let _ = writeln!(s, "rng={ALGORITHM}");
        let _ = writeln!(s, "config=config.resolved.txt sha256={}", sha256_file(&resolved)?);
        for (role, p) in &self.inputs {
            let _ = writeln!(s, "input {role} {} sha256={}", p.display(), sha256_file(p)?);
        }
        for p in &self.outputs {
            let name = p.strip_prefix(&self.out).unwrap_or(p);
            let _ = writeln!(s, "output {} sha256={}", name.display(), sha256_file(p)?);
        }
        let path = self.out.join("manifest.txt");
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::config(format!("`{key}` is required (flag --{key} or config key)")))
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        // a pool may already exist when run twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = resolve(&cli)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let mut rec = RunRecord {
        command: cli.command.name(),
        out: cli.out.clone(),
        inputs: vec![],
        outputs: vec![],
    };
    match &cli.command {
        Command::Import { .. } => cmd_import(&cfg, &mut rec)?,
        Command::Synth { .. } => cmd_synth(&cfg, &mut rec)?,
        Command::Split { samples, .. } => cmd_split(&cfg, *samples, &mut rec)?,
        Command::Train { .. } => cmd_train(&cfg, &mut rec)?,
        Command::Eval { .. } => cmd_eval(&cfg, &mut rec)?,
        Command::Saliency { index, timestamp, .. } => cmd_saliency(&cfg, *index, timestamp.as_deref(), &mut rec)?,
        Command::Anomalies { .. } => cmd_anomalies(&cfg, &mut rec)?,
    }
    rec.finish(&cfg)
}

fn normalize_and_save(cube: &WeatherCube, rec: &mut RunRecord) -> Result<WeatherCube> {
    let stats = fit_normalizer(cube)?;
    let normalized = apply_normalizer(cube, &stats)?;
    let mut bytes = Vec::new();
    normalized.write(&mut bytes)?;
    rec.write("cube.wxc1", bytes)?;
    rec.write("normalizer.csv", stats.to_csv())?;
    Ok(normalized)
}

fn cmd_import(cfg: &RunConfig, rec: &mut RunRecord) -> Result<()> {
    let manifest = required(&cfg.frames, "frames")?;
    rec.input("frames", manifest);
    let entries = read_frame_manifest(manifest)?;
    let coarsen = cfg.coarsen.unwrap_or(if (entries[0].height, entries[0].width) == RAW_GRID {
        RAW_COARSEN
    } else {
        1
    });
    log::info!("import: {} frames, coarsening by {coarsen}", entries.len());
    let cube = import_frames(
        manifest,
        &ImportOptions {
            band_select: cfg.bands.clone(),
            coarsen,
        },
    )?;
    let cube = normalize_and_save(&cube, rec)?;
    let mut report = String::new();
    let _ = writeln!(report, "frames={}", cube.frames());
    let _ = writeln!(report, "grid={}x{}", cube.height(), cube.width());
    let _ = writeln!(report, "coarsen={coarsen}");
    let _ = writeln!(report, "masked_pixels={}", cube.mask().count());
    let _ = writeln!(report, "first={}", format_timestamp(&cube.timestamps()[0]));
    let _ = writeln!(report, "last={}", format_timestamp(cube.timestamps().last().expect("non-empty")));
    for (after, missing) in cube.gaps() {
        let _ = writeln!(
            report,
            "gap after={} missing_hours={missing}",
            format_timestamp(&cube.timestamps()[after])
        );
    }
    rec.write("import_report.txt", &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, rec: &mut RunRecord) -> Result<()> {
    let data = synth_generate(&cfg.synth)?;
    let cube = normalize_and_save(&data.cube, rec)?;
    rec.write("power.csv", data.power.to_five_minute_csv())?;
    rec.write("plants.csv", data.plants_csv())?;
    rec.write("truth.txt", data.truth_manifest())?;
    if cfg.synth_frames {
        let manifest = data.write_frames(&rec.out.join("frames"))?;
        rec.outputs.push(manifest);
    }
    println!(
        "synth: {} frames of {}×{}, {} solar and {} wind plants",
        cube.frames(),
        cube.height(),
        cube.width(),
        cfg.synth.solar_plants.len(),
        cfg.synth.wind_plants.len()
    );
    Ok(())
}

fn load_dataset(cfg: &RunConfig, rec: &mut RunRecord) -> Result<AlignedDataset> {
    let cube_path = required(&cfg.cube, "cube")?;
    let power_path = required(&cfg.power, "power")?;
    rec.input("cube", cube_path);
    rec.input("power", power_path);
    let cube = WeatherCube::load(cube_path)?;
    let mut power = aggregate_power(power_path)?;
    if cfg.exclude_anomalies {
        let runs = detect_constant_runs(&power, cfg.anomaly_source.as_str(), cfg.anomaly_min_len)?;
        log::info!("excluding {} constant-value runs", runs.len());
        flag_constant_runs(&mut power, &runs);
    }
    align(
        cube,
        power,
        &AlignOptions {
            exclude_flagged: cfg.exclude_anomalies,
        },
    )
}

fn cmd_split(cfg: &RunConfig, samples: Option<usize>, rec: &mut RunRecord) -> Result<()> {
    let window = StackWindow::for_stack(cfg.stack)?;
    let s = match samples {
        Some(n) => split(n, cfg.seed, window.is_stacked())?,
        None => load_dataset(cfg, rec)?.split(cfg.seed, &window)?,
    };
    rec.write("splits.txt", s.to_text())?;
    println!("split: train {} val {} test {}", s.train.len(), s.val.len(), s.test.len());
    Ok(())
}

fn load_or_make_splits(
    cfg: &RunConfig,
    data: &AlignedDataset,
    window: &StackWindow,
    rec: &mut RunRecord,
    make: bool,
) -> Result<SplitIndices> {
    match &cfg.splits {
        Some(p) => {
            rec.input("splits", p);
            let s = SplitIndices::load(p)?;
            s.check_against(data, window)?;
            Ok(s)
        }
        None if make => {
            let s = data.split(cfg.seed, window)?;
            rec.write("splits.txt", s.to_text())?;
            Ok(s)
        }
        None => Err(Error::config("`splits` is required (flag --splits or config key)")),
    }
}

fn history_plots(run: &TrainRun) -> (String, String) {
    let pts = |f: &dyn Fn(&crate::optim::EpochRecord) -> f64| {
        run.history.iter().map(|r| ((r.epoch + 1) as f64, f(r))).collect::<Vec<_>>()
    };
    let loss = line_chart(
        "RMSE loss",
        "epoch",
        "RMSE (MW)",
        &[
            Series::new("train", pts(&|r| r.train.rmse)),
            Series::new("validation", pts(&|r| r.val.rmse)).dashed(),
        ],
        &[],
    );
    let acc = line_chart(
        "Accuracy",
        "epoch",
        "mean accuracy",
        &[
            Series::new("solar train", pts(&|r| r.train.solar_accuracy)),
            Series::new("solar val", pts(&|r| r.val.solar_accuracy)).dashed(),
            Series::new("wind train", pts(&|r| r.train.wind_accuracy)),
            Series::new("wind val", pts(&|r| r.val.wind_accuracy)).dashed(),
        ],
        &[],
    );
    (loss, acc)
}

fn cmd_train(cfg: &RunConfig, rec: &mut RunRecord) -> Result<()> {
    let data = load_dataset(cfg, rec)?;
    let window = StackWindow::for_stack(cfg.stack)?;
    let splits = load_or_make_splits(cfg, &data, &window, rec, true)?;
    let spec = cfg.architecture(data.cube().height(), data.cube().width())?;
    let mut model = Model::<f32>::build(spec, &mut Rng::new(cfg.seed))?;
    let tc = cfg.train_config(Some(rec.out.clone()))?;
    log::info!(
        "train: {} model, {} parameters, {} epochs, λ = {}",
        cfg.model,
        crate::layers::Parameterized::param_count(&model),
        tc.epochs(),
        tc.lambda_l2
    );
    let run = train(&mut model, &data.view(window), &splits, &tc)?;
    rec.outputs.extend(run.checkpoints.iter().cloned());
    rec.write("history.csv", run.history_csv())?;
    let (loss, acc) = history_plots(&run);
    rec.write("loss.svg", loss)?;
    rec.write("accuracy.svg", acc)?;
    if let Some(last) = run.history.last() {
        println!(
            "train: {} epochs, {} steps; val rmse {:.4}, solar acc {:.4}, wind acc {:.4}",
            run.history.len(),
            run.steps,
            last.val.rmse,
            last.val.solar_accuracy,
            last.val.wind_accuracy
        );
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, rec: &mut RunRecord) -> Result<(Model<f32>, StackWindow)> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    rec.input("checkpoint", path);
    let model = load_checkpoint(path)?;
    let c = model.spec().input_channels;
    let window = StackWindow::for_stack(c / 6)?;
    Ok((model, window))
}

fn cmd_eval(cfg: &RunConfig, rec: &mut RunRecord) -> Result<()> {
    let (model, window) = load_model(cfg, rec)?;
    let data = load_dataset(cfg, rec)?;
    let splits = load_or_make_splits(cfg, &data, &window, rec, false)?;
    let view = data.view(window.clone());
    let y_bar = target_means(&view, &splits.train)?;
    let mut per_split = Vec::new();
    for (name, idx) in [
        (SplitName::Train, &splits.train),
        (SplitName::Val, &splits.val),
        (SplitName::Test, &splits.test),
    ] {
        if idx.is_empty() {
            continue;
        }
        let ev = evaluate(&model, &view, idx, y_bar)?;
        per_split.push(SplitPredictions {
            split: name,
            predictions: ev.predictions,
            targets: ev.targets,
        });
    }
    let rep = report(&per_split, y_bar[0], y_bar[1])?;
    rec.write("metrics.csv", rep.to_csv())?;
    rec.write("metrics.txt", rep.to_table())?;
    print!("{}", rep.to_table());

    let chosen: Vec<usize> = match cfg.eval_window_start {
        Some(start) => window_samples(&data, &window, start, cfg.eval_window_hours)?,
        None => splits.test.clone(),
    };
    if !chosen.is_empty() {
        let ev = evaluate(&model, &view, &chosen, y_bar)?;
        let mut csv = String::from("timestamp,true_solar,pred_solar,true_wind,pred_wind\n");
        let mut series: [Vec<(f64, f64)>; 4] = Default::default();
        let t0 = data.timestamp(chosen[0])?;
        let mut labels = Vec::new();
        for (k, &i) in chosen.iter().enumerate() {
            let t = data.timestamp(i)?;
            let (p, y) = (ev.predictions[k], ev.targets[k]);
            let _ = writeln!(
                csv,
                "{},{:.6},{:.6},{:.6},{:.6}",
                format_timestamp(&t),
                y[0],
                p[0],
                y[1],
                p[1]
            );
            let x = (t - t0).num_minutes() as f64 / 60.0;
            for (s, v) in series.iter_mut().zip([y[0], p[0], y[1], p[1]]) {
                s.push((x, v));
            }
            if k == 0 || k == chosen.len() - 1 {
                labels.push((x, t.format("%m-%d %H:00").to_string()));
            }
        }
        rec.write("predictions.csv", csv)?;
        let [ts, ps, tw, pw] = series;
        let svg = line_chart(
            "Estimated and reported production",
            "time",
            "MW",
            &[
                Series::new("solar reported", ts).dashed(),
                Series::new("solar estimated", ps),
                Series::new("wind reported", tw).dashed(),
                Series::new("wind estimated", pw),
            ],
            &labels,
        );
        rec.write("predictions.svg", svg)?;
    }
    Ok(())
}

/// Eligible samples in `[start, start + hours)`, chronological.
fn window_samples(data: &AlignedDataset, window: &StackWindow, start: NaiveDateTime, hours: usize) -> Result<Vec<usize>> {
    let first = data.timestamp(0)?;
    let last = data.timestamp(data.len() - 1)?;
    if start < first || start > last {
        return Err(Error::data(format!(
            "window start {} outside the data range {} .. {}",
            format_timestamp(&start),
            format_timestamp(&first),
            format_timestamp(&last)
        )));
    }
    let end = start + Duration::hours(hours as i64);
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let t = data.timestamp(i).expect("in range");
            t >= start && t < end && data.is_eligible(i, window)
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::data("no eligible samples in the requested window"));
    }
    Ok(idx)
}

fn cmd_saliency(cfg: &RunConfig, index: Option<usize>, timestamp: Option<&str>, rec: &mut RunRecord) -> Result<()> {
    let (model, window) = load_model(cfg, rec)?;
    let data = load_dataset(cfg, rec)?;
    let idx = match (index, timestamp) {
        (Some(i), _) => i,
        (None, Some(ts)) => {
            let t = parse_timestamp(ts)?;
            data.index_of(&t)
                .ok_or_else(|| Error::data(format!("no sample at {}", format_timestamp(&t))))?
        }
        (None, None) => return Err(Error::config("saliency needs --index or --timestamp")),
    };
    let (x, _) = make_sample(&data, idx, &window)?;
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let x = x.reshape(&shape)?;
    let stamp = format_timestamp(&data.timestamp(idx)?);
    for source in Source::ALL {
        let mut map = saliency_map(&model, &x, source)?;
        map.timestamp = Some(stamp.clone());
        for fmt in [MapFormat::Csv, MapFormat::Pgm] {
            let ext = match fmt {
                MapFormat::Csv => "csv",
                MapFormat::Pgm => "pgm",
            };
            let path = rec.out.join(format!("saliency_{}.{ext}", source.as_str()));
            export_map(&map, &path, fmt, Some(data.cube().mask()))?;
            rec.outputs.push(path);
        }
        println!("saliency {} at {stamp}: max {:.6e}", source.as_str(), map.max());
    }
    Ok(())
}

fn cmd_anomalies(cfg: &RunConfig, rec: &mut RunRecord) -> Result<()> {
    let path = required(&cfg.power, "power")?;
    rec.input("power", path);
    let series = aggregate_power(path)?;
    let runs = detect_constant_runs(&series, cfg.anomaly_source.as_str(), cfg.anomaly_min_len)?;
    let mut csv = String::from("source,start,end,hours,value\n");
    for r in &runs {
        let line = format!(
            "{},{},{},{},{}",
            r.source.as_str(),
            format_timestamp(&r.start),
            format_timestamp(&r.end),
            r.len(),
            r.value
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    if runs.is_empty() {
        println!("no constant runs of {}+ hours in {}", cfg.anomaly_min_len, cfg.anomaly_source.as_str());
    }
    rec.write("anomalies.csv", csv)?;
    Ok(())
}
