//! Root-mean-square error and the relative accuracy score
//! `1 − |ŷ − y| / ȳ_train`, computed per energy source.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::data("rmse of an empty series"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::shape(format!(
            "rmse: {} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    let sq: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / y.len() as f64).sqrt())
}

/// Not clamped: a prediction further than ȳ_train from the truth scores
/// below zero.
pub fn accuracy(y: f64, y_hat: f64, y_bar_train: f64) -> Result<f64> {
    if !(y_bar_train > 0.0) {
        return Err(Error::data(format!(
            "accuracy needs a positive training mean, got {y_bar_train}"
        )));
    }
    Ok(1.0 - (y_hat - y).abs() / y_bar_train)
}

pub fn mean_accuracy(y: &[f64], y_hat: &[f64], y_bar_train: f64) -> Result<f64> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::data("mean accuracy needs equal, non-empty series"));
    }
    let mut acc = 0.0;
    for (&a, &b) in y.iter().zip(y_hat) {
        acc += accuracy(a, b, y_bar_train)?;
    }
    Ok(acc / y.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::data(format!("unknown split `{other}`"))),
        }
    }
}

/// Predictions and targets for one split; each row is (solar, wind).
#[derive(Clone, Debug)]
pub struct SplitPredictions {
    pub split: SplitName,
    pub predictions: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitMetrics {
    pub split: SplitName,
    pub samples: usize,
    pub rmse: f64,
    pub solar_accuracy: f64,
    pub wind_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub y_bar_train_solar: f64,
    pub y_bar_train_wind: f64,
    pub splits: Vec<SplitMetrics>,
}

pub fn split_metrics(p: &SplitPredictions, y_bar_solar: f64, y_bar_wind: f64) -> Result<SplitMetrics> {
    if p.predictions.is_empty() {
        return Err(Error::data(format!("split `{}` is empty", p.split.as_str())));
    }
    if p.predictions.len() != p.targets.len() {
        return Err(Error::shape("predictions and targets differ in length"));
    }
    let col = |rows: &[[f64; 2]], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let flat = |rows: &[[f64; 2]]| rows.iter().flat_map(|r| *r).collect::<Vec<_>>();
    Ok(SplitMetrics {
        split: p.split,
        samples: p.predictions.len(),
        rmse: rmse(&flat(&p.targets), &flat(&p.predictions))?,
        solar_accuracy: mean_accuracy(&col(&p.targets, 0), &col(&p.predictions, 0), y_bar_solar)?,
        wind_accuracy: mean_accuracy(&col(&p.targets, 1), &col(&p.predictions, 1), y_bar_wind)?,
    })
}

pub fn report(splits: &[SplitPredictions], y_bar_solar: f64, y_bar_wind: f64) -> Result<MetricReport> {
    let splits = splits
        .iter()
        .map(|p| split_metrics(p, y_bar_solar, y_bar_wind))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        y_bar_train_solar: y_bar_solar,
        y_bar_train_wind: y_bar_wind,
        splits,
    })
}

impl MetricReport {
    /// `split,source,mean_accuracy` rows followed by `split,rmse` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,source,mean_accuracy\n");
        for m in &self.splits {
            let _ = writeln!(s, "{},solar,{:.6}", m.split.as_str(), m.solar_accuracy);
            let _ = writeln!(s, "{},wind,{:.6}", m.split.as_str(), m.wind_accuracy);
        }
        s.push_str("split,rmse\n");
        for m in &self.splits {
            let _ = writeln!(s, "{},{:.6}", m.split.as_str(), m.rmse);
        }
        s
    }

    /// Plain-text table: one row per source, one column per split.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "source");
        for m in &self.splits {
            let _ = write!(s, " {:>10}", m.split.as_str());
        }
        s.push('\n');
        for (name, pick) in [
            ("solar", (|m: &SplitMetrics| m.solar_accuracy) as fn(&SplitMetrics) -> f64),
            ("wind", |m: &SplitMetrics| m.wind_accuracy),
        ] {
            let _ = write!(s, "{name:<8}");
            for m in &self.splits {
                let _ = write!(s, " {:>10.4}", pick(m));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<8}", "rmse");
        for m in &self.splits {
            let _ = write!(s, " {:>10.4}", m.rmse);
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "mean training output: solar {:.4} MW, wind {:.4} MW",
            self.y_bar_train_solar, self.y_bar_train_wind
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_hand_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((r - 3.5355339).abs() < 1e-6);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn accuracy_hand_values() {
        assert_eq!(accuracy(2.0, 2.0, 3.02).unwrap(), 1.0);
        assert!((accuracy(1.0, 4.02, 3.02).unwrap()).abs() < 1e-12);
        let a = accuracy(3.02, 2.00, 3.02).unwrap();
        assert!((a - (1.0 - 1.02 / 3.02)).abs() < 1e-12);
        assert!((a - 0.6623).abs() < 1e-4);
        assert!(accuracy(1.0, 9.0, 1.0).unwrap() < 0.0);
        assert!(accuracy(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn report_perfect_and_single() {
        let p = SplitPredictions {
            split: SplitName::Test,
            predictions: vec![[1.0, 2.0], [0.0, 3.0]],
            targets: vec![[1.0, 2.0], [0.0, 3.0]],
        };
        let r = report(&[p], 3.02, 1.68).unwrap();
        assert_eq!(r.splits[0].solar_accuracy, 1.0);
        assert_eq!(r.splits[0].wind_accuracy, 1.0);
        assert_eq!(r.splits[0].rmse, 0.0);

        let single = SplitPredictions {
            split: SplitName::Val,
            predictions: vec![[2.0, 1.0]],
            targets: vec![[3.02, 1.68]],
        };
        let r = report(&[single], 3.02, 1.68).unwrap();
        assert_eq!(r.splits[0].solar_accuracy, accuracy(3.02, 2.0, 3.02).unwrap());
        assert_eq!(r.splits[0].wind_accuracy, accuracy(1.68, 1.0, 1.68).unwrap());

        let empty = SplitPredictions {
            split: SplitName::Train,
            predictions: vec![],
            targets: vec![],
        };
        assert!(report(&[empty], 1.0, 1.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let p = SplitPredictions {
            split: SplitName::Train,
            predictions: vec![[1.0, 1.0]],
            targets: vec![[1.0, 1.0]],
        };
        let csv = report(&[p], 1.0, 1.0).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "split,source,mean_accuracy");
        assert_eq!(lines[1], "train,solar,1.000000");
        assert_eq!(lines[3], "split,rmse");
        assert_eq!(lines[4], "train,0.000000");
    }

    proptest! {
        #[test]
        fn accuracy_is_affine_in_abs_error(y in -50.0f64..50.0, e in 0.0f64..20.0, ybar in 0.1f64..10.0) {
            let a = accuracy(y, y + e, ybar).unwrap();
            prop_assert!((a - (1.0 - e / ybar)).abs() < 1e-12);
            let b = accuracy(y, y - e, ybar).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn rmse_nonnegative_and_symmetric(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let r = rmse(&a, &b).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert_eq!(r, rmse(&b, &a).unwrap());
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        }
    }
}
