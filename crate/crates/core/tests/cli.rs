use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wx<A: AsRef<OsStr>>(args: &[A]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wxpower"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok<A: AsRef<OsStr> + std::fmt::Debug>(args: &[A]) {
    let out = wx(args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn strings(args: &[&str]) -> Vec<String> {
    args.iter().map(|a| a.to_string()).collect()
}

const TINY: [&str; 10] = [
    "--set",
    "resnet_stem_width=4",
    "--set",
    "resnet_widths=8,8,8,8",
    "--set",
    "fc_plan=8,2",
    "--set",
    "batch_size=8",
    "--model",
    "resnet",
];

/// Synthetic cube and power plus a trained tiny stacked ResNet.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(stage_length: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = Fixture {
            root: dir.path().to_path_buf(),
            _dir: dir,
        };
        ok(&["synth", "--out", &s(&fx.root.join("synth")), "--hours", "48", "--seed", "7"]);
        let mut args = strings(&["train", "--stack", "5", "--seed", "7", "--set"]);
        args.push(format!("stage_length={stage_length}"));
        args.extend(strings(&TINY));
        args.extend(["--out".to_string(), s(&fx.root.join("train"))]);
        args.extend(fx.data_args(false));
        ok(&args);
        fx
    }

    fn data_args(&self, with_splits: bool) -> Vec<String> {
        let mut v = vec![
            "--cube".to_string(),
            s(&self.root.join("synth/cube.wxc1")),
            "--power".to_string(),
            s(&self.root.join("synth/power.csv")),
        ];
        if with_splits {
            v.extend(["--splits".to_string(), s(&self.root.join("train/splits.txt"))]);
        }
        v
    }

    fn with_data(&self, args: &[&str]) -> Vec<String> {
        let mut v = strings(args);
        v.extend(self.data_args(true));
        v
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn config_errors_exit_2_with_a_prefixed_line() {
    for args in [
        vec!["frobnicate"],
        vec!["synth", "--set", "no_such_key=1"],
        vec!["synth", "--set", "synth_solar_plants=99:99", "--out", "/tmp/unused-wx"],
        vec!["train", "--model", "transformer"],
    ] {
        let out = wx(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        let err = stderr(&out);
        assert!(err.starts_with("error[config]: "), "{err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    }
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = wx(&["split", "--out", &s(dir.path()), "--cube", "/nonexistent/cube.wxc1", "--power", "/nonexistent/p.csv"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("/nonexistent/"));
}

#[test]
fn synth_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--out", &s(d), "--seed", "1"]);
    }
    for f in ["cube.wxc1", "power.csv", "plants.csv", "truth.txt", "normalizer.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    ok(&["synth", "--out", &s(&dir.path().join("c")), "--hours", "48"]);
    let cube = wxpower::data::WeatherCube::load(&dir.path().join("c/cube.wxc1")).unwrap();
    assert_eq!(cube.frames(), 48);
}

#[test]
fn every_run_records_config_and_hashes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", &s(dir.path()), "--seed", "3"]);
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.txt")).unwrap();
    assert!(resolved.lines().any(|l| l.trim() == "seed = 3" || l.trim() == "seed=3"), "{resolved}");
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("sha256="), "{manifest}");
    let cube_hash = wxpower::cli::sha256_file(&dir.path().join("cube.wxc1")).unwrap();
    assert!(manifest.contains(&cube_hash));
}

#[test]
fn train_eval_saliency_anomalies() {
    let fx = Fixture::new(5);
    let history = std::fs::read_to_string(fx.root.join("train/history.csv")).unwrap();
    // header plus train and val rows for each of the 20 epochs
    assert_eq!(history.lines().count(), 41);
    assert!(history.starts_with("epoch,split,rmse,solar_acc,wind_acc\n"));
    for f in ["stage1.wxpm", "stage2.wxpm", "stage3.wxpm", "final.wxpm", "loss.svg", "accuracy.svg"] {
        assert!(fx.root.join("train").join(f).exists(), "{f}");
    }
    let resolved = std::fs::read_to_string(fx.root.join("train/config.resolved.txt")).unwrap();
    assert!(resolved.contains("0.001"), "resnet λ default missing: {resolved}");

    let ckpt = fx.root.join("train/final.wxpm");
    let eval = fx.root.join("eval");
    ok(&fx.with_data(&["eval", "--out", &s(&eval), "--checkpoint", &s(&ckpt)]));
    let preds = std::fs::read_to_string(eval.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("timestamp,true_solar,pred_solar,true_wind,pred_wind\n"));
    assert!(eval.join("metrics.csv").exists() && eval.join("metrics.txt").exists());

    let out = wx(&fx.with_data(&[
        "eval",
        "--out",
        &s(&fx.root.join("eval2")),
        "--checkpoint",
        &s(&ckpt),
        "--window-start",
        "2030-01-01T00:00:00",
    ]));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let out = wx(&fx.with_data(&["eval", "--out", &s(&fx.root.join("eval3")), "--checkpoint", "/nonexistent.wxpm"]));
    assert_ne!(out.status.code(), Some(0));

    // index and timestamp selectors agree
    let night = "2019-05-05T23:00:00";
    let (by_idx, by_ts) = (fx.root.join("sal_idx"), fx.root.join("sal_ts"));
    ok(&fx.with_data(&["saliency", "--out", &s(&by_ts), "--checkpoint", &s(&ckpt), "--timestamp", night]));
    ok(&fx.with_data(&["saliency", "--out", &s(&by_idx), "--checkpoint", &s(&ckpt), "--index", "23"]));
    for f in ["saliency_solar.csv", "saliency_solar.pgm", "saliency_wind.csv", "saliency_wind.pgm"] {
        assert_eq!(std::fs::read(by_idx.join(f)).unwrap(), std::fs::read(by_ts.join(f)).unwrap(), "{f}");
    }
    let out = wx(&fx.with_data(&[
        "saliency",
        "--out",
        &s(&fx.root.join("sal_bad")),
        "--checkpoint",
        &s(&ckpt),
        "--timestamp",
        "2019-06-01T00:00:00",
    ]));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let out = wx(&[
        "anomalies",
        "--out",
        &s(&fx.root.join("anom")),
        "--power",
        &s(&fx.root.join("synth/power.csv")),
        "--source",
        "solar",
        "--min-len",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(fx.root.join("anom/anomalies.csv")).unwrap();
    assert!(csv.starts_with("source,start,end,hours,value\n"));
    // night hours are a constant run of zeros
    assert!(csv.lines().count() > 1, "{csv}");
}
