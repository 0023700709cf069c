//! Synthetic weather and power with planted plants, for desk-scale checks.
//!
//! Every hour gets smooth random fields (bilinear upsampling of a coarse
//! lattice that evolves as an AR(1) process) plus per-pixel noise. The
//! diurnal insolation signal, `sin(π(hour − 6)/12)`, is carried in the
//! temperature band, since the six bands have no radiation channel. Solar
//! output sums `max(0, insolation)·(1 − cloud/100)` over solar-plant pixels;
//! wind output sums a cubic power curve of the local wind speed over
//! wind-plant pixels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, Timelike};

use super::cube::{hourly, CornerMask, WeatherCube, BAND_NAMES};
use super::import::{write_frame_file, write_frame_manifest, FrameEntry};
use super::power::PowerSeries;
use super::time::{format_timestamp, parse_timestamp};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CUT_IN: f64 = 3.0;
pub const RATED: f64 = 12.0;
pub const CUT_OUT: f64 = 25.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub hours: usize,
    pub start: NaiveDateTime,
    pub solar_plants: Vec<(usize, usize)>,
    pub wind_plants: Vec<(usize, usize)>,
    /// MW per solar plant at full sun and clear sky.
    pub solar_scale: f64,
    /// MW per wind plant at rated speed.
    pub wind_scale: f64,
    /// Standard deviation (MW) of Gaussian noise added to each target.
    pub noise: f64,
    /// Cloud cover ceiling in percent; 0 gives clear skies.
    pub cloud_max: f64,
    /// Leg of the masked corner triangles, in pixels.
    pub corner: usize,
    /// Frame indices left out of the cube, creating timestamp gaps.
    pub gap_hours: Vec<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 16,
            width: 16,
            hours: 96,
            start: parse_timestamp("2019-05-05T00:00:00").expect("valid literal"),
            solar_plants: vec![(4, 4), (5, 11), (11, 6)],
            wind_plants: vec![(9, 12), (12, 3), (3, 8)],
            solar_scale: 1.0,
            wind_scale: 1.0,
            noise: 0.0,
            cloud_max: 100.0,
            corner: 3,
            gap_hours: vec![],
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub config: SynthConfig,
    /// Raw physical units; masked pixels hold 0.
    pub cube: WeatherCube,
    pub power: PowerSeries,
    pub solar_mask: Vec<bool>,
    pub wind_mask: Vec<bool>,
}

pub fn insolation(t: &NaiveDateTime) -> f64 {
    let h = t.hour() as f64;
    let v = (std::f64::consts::PI * (h - 6.0) / 12.0).sin();
    // sin(π) is not exactly 0 in floating point; dusk must be dark
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// Fraction of rated output at wind speed `v` (m/s).
pub fn power_curve(v: f64) -> f64 {
    if v < CUT_IN || v > CUT_OUT {
        0.0
    } else if v >= RATED {
        1.0
    } else {
        ((v - CUT_IN) / (RATED - CUT_IN)).powi(3)
    }
}

/// Smooth field sequence: a coarse lattice (spacing `step`) of standard
/// normals evolving as AR(1) with coefficient `rho`, bilinearly upsampled.
struct SmoothField {
    rng: Rng,
    lattice: Vec<f64>,
    lh: usize,
    lw: usize,
    step: usize,
    rho: f64,
}

impl SmoothField {
    fn new(seed: u64, stream: u64, h: usize, w: usize, step: usize, rho: f64) -> Self {
        let (lh, lw) = (h / step + 2, w / step + 2);
        let mut rng = Rng::substream(seed, stream);
        let lattice = (0..lh * lw).map(|_| rng.normal(0.0, 1.0)).collect();
        SmoothField {
            rng,
            lattice,
            lh,
            lw,
            step,
            rho,
        }
    }

    fn advance(&mut self) {
        let k = (1.0 - self.rho * self.rho).sqrt();
        for v in &mut self.lattice {
            *v = self.rho * *v + k * self.rng.normal(0.0, 1.0);
        }
    }

    fn sample(&self, r: usize, c: usize) -> f64 {
        let (fr, fc) = (r as f64 / self.step as f64, c as f64 / self.step as f64);
        let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
        let (dr, dc) = (fr - r0 as f64, fc - c0 as f64);
        let at = |i: usize, j: usize| self.lattice[i.min(self.lh - 1) * self.lw + j.min(self.lw - 1)];
        at(r0, c0) * (1.0 - dr) * (1.0 - dc)
            + at(r0 + 1, c0) * dr * (1.0 - dc)
            + at(r0, c0 + 1) * (1.0 - dr) * dc
            + at(r0 + 1, c0 + 1) * dr * dc
    }
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthData> {
    let (h, w) = (config.height, config.width);
    if h < 2 || w < 2 || config.hours == 0 {
        return Err(Error::config("synthetic grid needs at least 2×2 pixels and one hour"));
    }
    if !(config.noise >= 0.0) || !(0.0..=100.0).contains(&config.cloud_max) {
        return Err(Error::config("noise must be ≥ 0 and cloud_max within [0, 100]"));
    }
    let mask = CornerMask::corner_triangles(h, w, config.corner);
    let mut solar_count = vec![0.0; h * w];
    let mut wind_count = vec![0.0; h * w];
    for (plants, m, kind) in [
        (&config.solar_plants, &mut solar_count, "solar"),
        (&config.wind_plants, &mut wind_count, "wind"),
    ] {
        for &(r, c) in plants {
            if r >= h || c >= w {
                return Err(Error::config(format!("{kind} plant ({r}, {c}) lies outside the {h}×{w} grid")));
            }
            if mask.is_masked(r, c) {
                return Err(Error::config(format!("{kind} plant ({r}, {c}) lies in a masked corner")));
            }
            m[r * w + c] += 1.0;
        }
    }
    if let Some(&g) = config.gap_hours.iter().find(|&&g| g >= config.hours) {
        return Err(Error::config(format!("gap hour {g} beyond the {} generated hours", config.hours)));
    }

    let seed = config.seed;
    let mut fields: Vec<SmoothField> = (0..6)
        .map(|k| SmoothField::new(seed, 100 + k, h, w, 4, 0.8))
        .collect();
    let mut noise = Rng::substream(seed, 200);
    let mut target_noise = Rng::substream(seed, 300);

    let all_ts = hourly(config.start, config.hours);
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    let mut solar = Vec::with_capacity(config.hours);
    let mut wind = Vec::with_capacity(config.hours);
    let mut frame = vec![0f32; 6 * h * w];
    for (k, t) in all_ts.iter().enumerate() {
        if k > 0 {
            fields.iter_mut().for_each(SmoothField::advance);
        }
        let ins = insolation(t);
        let (mut s_out, mut w_out) = (0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                let f = |i: usize| fields[i].sample(r, c);
                let pressure = 101_325.0 + 400.0 * f(0) + 50.0 * noise.normal(0.0, 1.0);
                let temperature = 10.0 + 12.0 * ins + 1.5 * f(1) + 0.5 * noise.normal(0.0, 1.0);
                let humidity = 0.008 + 0.002 * f(2) + 0.0005 * noise.normal(0.0, 1.0);
                let speed = (8.0 + 4.0 * f(3) + 3.0 * noise.normal(0.0, 1.0)).clamp(0.0, 30.0);
                let direction = (180.0 + 90.0 * f(4) + 20.0 * noise.normal(0.0, 1.0)).rem_euclid(360.0);
                let cloud =
                    config.cloud_max * (0.5 + 0.3 * f(5) + 0.25 * noise.normal(0.0, 1.0)).clamp(0.0, 1.0);
                s_out += solar_count[p] * ins.max(0.0) * (1.0 - cloud / 100.0);
                w_out += wind_count[p] * power_curve(speed);
                let values = [pressure, temperature, humidity, speed, direction, cloud];
                for (b, v) in values.iter().enumerate() {
                    frame[b * h * w + p] = if mask.as_slice()[p] { 0.0 } else { *v as f32 };
                }
            }
        }
        let mut s_val = config.solar_scale * s_out;
        let mut w_val = config.wind_scale * w_out;
        if config.noise > 0.0 {
            s_val += target_noise.normal(0.0, config.noise);
            w_val += target_noise.normal(0.0, config.noise);
        }
        solar.push(s_val.max(0.0));
        wind.push(w_val.max(0.0));
        if !config.gap_hours.contains(&k) {
            timestamps.push(*t);
            data.extend_from_slice(&frame);
        }
    }
    let cube = WeatherCube::new(BAND_NAMES.map(String::from).to_vec(), timestamps, mask, data)?;
    let power = PowerSeries::new(all_ts, solar, wind)?;
    Ok(SynthData {
        config: config.clone(),
        cube,
        power,
        solar_mask: solar_count.iter().map(|&n| n > 0.0).collect(),
        wind_mask: wind_count.iter().map(|&n| n > 0.0).collect(),
    })
}

impl SynthData {
    /// `row,col,source` for every planted pixel.
    pub fn plants_csv(&self) -> String {
        let mut s = String::from("row,col,source\n");
        for (plants, name) in [(&self.config.solar_plants, "solar"), (&self.config.wind_plants, "wind")] {
            for (r, c) in plants {
                let _ = writeln!(s, "{r},{c},{name}");
            }
        }
        s
    }

    pub fn truth_manifest(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "generator=wxpower-synth");
        let _ = writeln!(s, "seed={}", c.seed);
        let _ = writeln!(s, "grid={}x{}", c.height, c.width);
        let _ = writeln!(s, "hours={}", c.hours);
        let _ = writeln!(s, "start={}", format_timestamp(&c.start));
        let _ = writeln!(s, "solar_plants={}", c.solar_plants.len());
        let _ = writeln!(s, "wind_plants={}", c.wind_plants.len());
        let _ = writeln!(s, "solar_law=solar_scale*sum(max(0,sin(pi*(hour-6)/12))*(1-cloud/100))");
        let _ = writeln!(
            s,
            "wind_law=wind_scale*sum(curve(speed)); curve: 0 below {CUT_IN}, cubic to {RATED}, 1 to {CUT_OUT}, 0 above"
        );
        let _ = writeln!(s, "insolation_band=temperature");
        let _ = writeln!(s, "solar_scale={}", c.solar_scale);
        let _ = writeln!(s, "wind_scale={}", c.wind_scale);
        let _ = writeln!(s, "noise={}", c.noise);
        let _ = writeln!(s, "cloud_max={}", c.cloud_max);
        let _ = writeln!(s, "masked_pixels={}", self.cube.mask().count());
        let _ = writeln!(s, "frames={}", self.cube.frames());
        s
    }

    /// Writes one raw frame per hour (NaN at masked pixels) and a frame
    /// manifest, for exercising the import path. Returns the manifest path.
    pub fn write_frames(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cube = &self.cube;
        let (h, w) = (cube.height(), cube.width());
        let mut entries = Vec::new();
        let mut rel = Vec::new();
        for t in 0..cube.frames() {
            let name = format!("frame_{t:05}.f32");
            let mut values = cube.frame(t).to_vec();
            for (i, v) in values.iter_mut().enumerate() {
                if cube.mask().as_slice()[i % (h * w)] {
                    *v = f32::NAN;
                }
            }
            write_frame_file(&dir.join(&name), &values)?;
            entries.push(FrameEntry {
                index: t,
                timestamp: cube.timestamps()[t],
                path: dir.join(&name),
                height: h,
                width: w,
                channels: cube.channels(),
            });
            rel.push(name);
        }
        let manifest = dir.join("frames.csv");
        write_frame_manifest(&manifest, &entries, &rel)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn night_is_dark() {
        let cfg = SynthConfig {
            cloud_max: 0.0,
            hours: 24,
            ..SynthConfig::default()
        };
        let d = synth_generate(&cfg).unwrap();
        for (t, s) in d.power.timestamps.iter().zip(&d.power.solar_mw) {
            if t.hour() < 6 || t.hour() >= 18 {
                assert_eq!(*s, 0.0, "hour {}", t.hour());
            }
        }
        // clear sky at noon: full output from each of the three plants
        let noon = d.power.timestamps.iter().position(|t| t.hour() == 12).unwrap();
        assert!((d.power.solar_mw[noon] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn identical_plants_add_linearly() {
        let one = SynthConfig {
            solar_plants: vec![(5, 5)],
            ..SynthConfig::default()
        };
        let two = SynthConfig {
            solar_plants: vec![(5, 5), (5, 5)],
            ..one.clone()
        };
        let a = synth_generate(&one).unwrap();
        let b = synth_generate(&two).unwrap();
        for (x, y) in a.power.solar_mw.iter().zip(&b.power.solar_mw) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_and_validated() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.power, b.power);
        let bad = SynthConfig {
            wind_plants: vec![(16, 0)],
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad), Err(Error::Config(_))));
        let corner = SynthConfig {
            solar_plants: vec![(0, 0)],
            ..SynthConfig::default()
        };
        assert!(synth_generate(&corner).is_err());
    }

    #[test]
    fn power_curve_shape() {
        assert_eq!(power_curve(2.9), 0.0);
        assert_eq!(power_curve(12.0), 1.0);
        assert_eq!(power_curve(25.0), 1.0);
        assert_eq!(power_curve(25.1), 0.0);
        assert!((power_curve(7.5) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn gaps_leave_power_intact() {
        let cfg = SynthConfig {
            hours: 10,
            gap_hours: vec![4],
            ..SynthConfig::default()
        };
        let d = synth_generate(&cfg).unwrap();
        assert_eq!(d.cube.frames(), 9);
        assert_eq!(d.power.len(), 10);
        assert_eq!(d.cube.gaps(), vec![(3, 1)]);
    }
}
