//! Hourly solar and wind production built from 5-minute reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use bitflags::bitflags;
use chrono::{Duration, NaiveDateTime};

use super::time::{floor_hour, format_timestamp, parse_timestamp};
use crate::error::{Error, Result};

pub const READINGS_PER_HOUR: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Solar,
    Wind,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Solar, Source::Wind];

    /// Column of the model output and of the target vector.
    pub fn index(self) -> usize {
        match self {
            Source::Solar => 0,
            Source::Wind => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Solar => "solar",
            Source::Wind => "wind",
        }
    }

    fn partial(self) -> QualityFlags {
        match self {
            Source::Solar => QualityFlags::SOLAR_PARTIAL,
            Source::Wind => QualityFlags::WIND_PARTIAL,
        }
    }

    fn missing(self) -> QualityFlags {
        match self {
            Source::Solar => QualityFlags::SOLAR_MISSING,
            Source::Wind => QualityFlags::WIND_MISSING,
        }
    }

    fn constant(self) -> QualityFlags {
        match self {
            Source::Solar => QualityFlags::SOLAR_CONSTANT,
            Source::Wind => QualityFlags::WIND_CONSTANT,
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "solar" => Ok(Source::Solar),
            "wind" => Ok(Source::Wind),
            other => Err(Error::config(format!("unknown source `{other}` (solar or wind)"))),
        }
    }
}

bitflags! {
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
    pub struct QualityFlags: u8 {
        const SOLAR_PARTIAL = 1;
        const SOLAR_MISSING = 1 << 1;
        const WIND_PARTIAL = 1 << 2;
        const WIND_MISSING = 1 << 3;
        const SOLAR_CONSTANT = 1 << 4;
        const WIND_CONSTANT = 1 << 5;
    }
}

impl QualityFlags {
    pub fn any_missing(self) -> bool {
        self.intersects(QualityFlags::SOLAR_MISSING | QualityFlags::WIND_MISSING)
    }

    pub fn any_constant(self) -> bool {
        self.intersects(QualityFlags::SOLAR_CONSTANT | QualityFlags::WIND_CONSTANT)
    }
}

/// Contiguous hourly series; hours with no readings hold 0 and carry a
/// `*_MISSING` flag.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub solar_mw: Vec<f64>,
    pub wind_mw: Vec<f64>,
    pub flags: Vec<QualityFlags>,
}

impl PowerSeries {
    pub fn new(timestamps: Vec<NaiveDateTime>, solar_mw: Vec<f64>, wind_mw: Vec<f64>) -> Result<Self> {
        let n = timestamps.len();
        if solar_mw.len() != n || wind_mw.len() != n {
            return Err(Error::shape("power series columns differ in length"));
        }
        if solar_mw.iter().chain(&wind_mw).any(|v| !(*v >= 0.0)) {
            return Err(Error::data("power values must be finite and non-negative"));
        }
        Ok(PowerSeries {
            timestamps,
            solar_mw,
            wind_mw,
            flags: vec![QualityFlags::empty(); n],
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn values(&self, source: Source) -> &[f64] {
        match source {
            Source::Solar => &self.solar_mw,
            Source::Wind => &self.wind_mw,
        }
    }

    pub fn index_of(&self, t: &NaiveDateTime) -> Option<usize> {
        self.timestamps.binary_search(t).ok()
    }

    /// Writes the 5-minute report format, repeating each hourly value
    /// `READINGS_PER_HOUR` times. Missing hours are left out.
    pub fn to_five_minute_csv(&self) -> String {
        let mut s = String::from("timestamp,source,mw\n");
        for i in 0..self.len() {
            for k in 0..READINGS_PER_HOUR {
                let t = self.timestamps[i] + Duration::minutes(5 * k as i64);
                for src in Source::ALL {
                    if self.flags[i].contains(src.missing()) {
                        continue;
                    }
                    let name = match src {
                        Source::Solar => "Solar",
                        Source::Wind => "Wind",
                    };
                    let _ = writeln!(s, "{},{name},{}", format_timestamp(&t), self.values(src)[i]);
                }
            }
        }
        s
    }
}

/// Hourly means of `timestamp,source,mw` rows. Sources other than solar and
/// wind are ignored. A negative hourly mean is clipped to 0.
pub fn aggregate_power_csv(text: &str) -> Result<PowerSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::data(format!("power CSV: {e}")))?;
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "source", "mw"] {
        return Err(Error::data("power CSV header must be `timestamp,source,mw`"));
    }
    // hour -> per-source (sum, count)
    let mut hours: BTreeMap<NaiveDateTime, [(f64, usize); 2]> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(format!("power CSV line {line}: {e}")))?;
        if rec.len() != 3 {
            return Err(Error::data(format!("power CSV line {line}: expected 3 fields")));
        }
        let t = parse_timestamp(&rec[0]).map_err(|e| Error::data(format!("power CSV line {line}: {e}")))?;
        let Ok(src) = rec[1].parse::<Source>() else {
            continue;
        };
        let mw: f64 = rec[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::data(format!("power CSV line {line}: bad value `{}`", &rec[2])))?;
        let slot = &mut hours.entry(floor_hour(&t)).or_default()[src.index()];
        slot.0 += mw;
        slot.1 += 1;
    }
    let (Some(&first), Some(&last)) = (hours.keys().next(), hours.keys().next_back()) else {
        return Err(Error::data("power CSV has no solar or wind readings"));
    };
    let n = (last - first).num_hours() as usize + 1;
    let mut series = PowerSeries {
        timestamps: Vec::with_capacity(n),
        solar_mw: Vec::with_capacity(n),
        wind_mw: Vec::with_capacity(n),
        flags: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t = first + Duration::hours(k as i64);
        let acc = hours.get(&t).copied().unwrap_or_default();
        let mut flags = QualityFlags::empty();
        let mut vals = [0.0; 2];
        for src in Source::ALL {
            let (sum, count) = acc[src.index()];
            if count == 0 {
                flags |= src.missing();
            } else {
                if count < READINGS_PER_HOUR {
                    flags |= src.partial();
                }
                vals[src.index()] = (sum / count as f64).max(0.0);
            }
        }
        series.timestamps.push(t);
        series.solar_mw.push(vals[0]);
        series.wind_mw.push(vals[1]);
        series.flags.push(flags);
    }
    Ok(series)
}

pub fn aggregate_power(path: &Path) -> Result<PowerSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    aggregate_power_csv(&text).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A maximal run of identical consecutive hourly values; indices inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantRun {
    pub source: Source,
    pub start_index: usize,
    pub end_index: usize,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub value: f64,
}

impl ConstantRun {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn detect_constant_runs(series: &PowerSeries, source: &str, min_len: usize) -> Result<Vec<ConstantRun>> {
    let source: Source = source.parse()?;
    if min_len < 2 {
        return Err(Error::config(format!("minimum run length must be at least 2, got {min_len}")));
    }
    let v = series.values(source);
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=v.len() {
        if i == v.len() || v[i] != v[start] {
            if i - start >= min_len {
                runs.push(ConstantRun {
                    source,
                    start_index: start,
                    end_index: i - 1,
                    start: series.timestamps[start],
                    end: series.timestamps[i - 1],
                    value: v[start],
                });
            }
            start = i;
        }
    }
    Ok(runs)
}

pub fn flag_constant_runs(series: &mut PowerSeries, runs: &[ConstantRun]) {
    for r in runs {
        for f in &mut series.flags[r.start_index..=r.end_index] {
            *f |= r.source.constant();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_hour(values: &[f64], source: &str) -> String {
        let mut s = String::from("timestamp,source,mw\n");
        for (k, v) in values.iter().enumerate() {
            let _ = writeln!(s, "2019-03-01T10:{:02}:00,{source},{v}", 5 * k);
        }
        s
    }

    #[test]
    fn hourly_means_and_flags() {
        let s = aggregate_power_csv(&csv_hour(&[1.0; 12], "Solar")).unwrap();
        assert_eq!(s.solar_mw, vec![1.0]);
        assert!(!s.flags[0].contains(QualityFlags::SOLAR_PARTIAL));
        assert!(s.flags[0].contains(QualityFlags::WIND_MISSING));

        let ramp: Vec<f64> = (1..=12).map(f64::from).collect();
        assert_eq!(aggregate_power_csv(&csv_hour(&ramp, "Wind")).unwrap().wind_mw, vec![6.5]);

        let s = aggregate_power_csv(&csv_hour(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], "solar")).unwrap();
        assert_eq!(s.solar_mw, vec![3.5]);
        assert!(s.flags[0].contains(QualityFlags::SOLAR_PARTIAL));
    }

    #[test]
    fn other_sources_ignored_and_gaps_filled() {
        let text = "timestamp,source,mw\n\
                    2019-03-01T00:00:00,Nuclear,900\n\
                    2019-03-01T00:00:00,Wind,5\n\
                    2019-03-01T02:10:00,Wind,7\n";
        let s = aggregate_power_csv(text).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.wind_mw, vec![5.0, 0.0, 7.0]);
        assert!(s.flags[1].contains(QualityFlags::WIND_MISSING));
    }

    #[test]
    fn bad_row_names_line() {
        let text = "timestamp,source,mw\n2019-03-01T00:00:00,Wind,5\n2019-03-01T00:05:00,Wind,abc\n";
        let err = aggregate_power_csv(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(aggregate_power_csv("time,src,v\n").is_err());
    }

    #[test]
    fn five_minute_round_trip() {
        let start = parse_timestamp("2019-01-01T00:00:00").unwrap();
        let ts = (0..3).map(|i| start + Duration::hours(i)).collect();
        let s = PowerSeries::new(ts, vec![0.0, 1.5, 3.25], vec![2.0, 2.0, 0.125]).unwrap();
        assert_eq!(aggregate_power_csv(&s.to_five_minute_csv()).unwrap(), s);
    }

    #[test]
    fn constant_runs() {
        let start = parse_timestamp("2019-10-06T00:00:00").unwrap();
        let mut wind: Vec<f64> = (0..60).map(|i| i as f64).collect();
        for v in &mut wind[10..34] {
            *v = 42.0;
        }
        let ts = (0..60).map(|i| start + Duration::hours(i)).collect();
        let mut s = PowerSeries::new(ts, vec![1.0; 60], wind).unwrap();
        let runs = detect_constant_runs(&s, "wind", 12).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!((runs[0].start_index, runs[0].len()), (10, 24));
        flag_constant_runs(&mut s, &runs);
        assert!(s.flags[20].contains(QualityFlags::WIND_CONSTANT));
        assert!(!s.flags[9].any_constant());
        assert!(detect_constant_runs(&s, "hydro", 12).is_err());
        assert!(detect_constant_runs(&s, "wind", 1).is_err());
        assert_eq!(detect_constant_runs(&s, "solar", 12).unwrap()[0].len(), 60);
    }
}
