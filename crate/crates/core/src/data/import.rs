//! Frame import, block coarsening and z-score normalization.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use super::cube::{CornerMask, WeatherCube, BAND_NAMES, WIND_DIRECTION_BAND};
use super::time::{format_timestamp, parse_timestamp};
use crate::error::{Error, Result};

/// One row of the frame manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp: NaiveDateTime,
    pub path: PathBuf,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportOptions {
    /// Source channel for each of the six output bands, in band order.
    /// `None` requires six-channel frames taken as-is.
    pub band_select: Option<Vec<usize>>,
    /// Block size for coarsening; 1 keeps the native grid.
    pub coarsen: usize,
}

impl Default for ImportOptions {
    fn default() -> Self {
        ImportOptions {
            band_select: None,
            coarsen: 1,
        }
    }
}

/// Reads `index,timestamp,relative_path,height,width,channels`; paths are
/// resolved against the manifest's directory. Rows come back sorted by
/// timestamp.
pub fn read_frame_manifest(path: &Path) -> Result<Vec<FrameEntry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["index", "timestamp", "relative_path", "height", "width", "channels"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::data(format!(
            "{}: header must be `{}`",
            path.display(),
            expected.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(format!("{}:{line}: {e}", path.display())))?;
        let num = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| {
                Error::data(format!(
                    "{}:{line}: `{}` is not a valid {}",
                    path.display(),
                    &rec[k],
                    expected[k]
                ))
            })
        };
        let timestamp = parse_timestamp(&rec[1])
            .map_err(|e| Error::data(format!("{}:{line}: {e}", path.display())))?;
        rows.push(FrameEntry {
            index: num(0)?,
            timestamp,
            path: base.join(&rec[2]),
            height: num(3)?,
            width: num(4)?,
            channels: num(5)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no frames listed", path.display())));
    }
    rows.sort_by_key(|r| r.timestamp);
    for w in rows.windows(2) {
        if w[0].timestamp == w[1].timestamp {
            return Err(Error::data(format!(
                "{}: duplicate timestamp {}",
                path.display(),
                format_timestamp(&w[0].timestamp)
            )));
        }
    }
    Ok(rows)
}

pub fn write_frame_manifest(path: &Path, entries: &[FrameEntry], relative: &[String]) -> Result<()> {
    let mut s = String::from("index,timestamp,relative_path,height,width,channels\n");
    for (e, rel) in entries.iter().zip(relative) {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.index,
            format_timestamp(&e.timestamp),
            rel,
            e.height,
            e.width,
            e.channels
        ));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Raw little-endian f32, channel-major.
pub fn write_frame_file(path: &Path, values: &[f32]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn read_frame(entry: &FrameEntry) -> Result<Vec<f32>> {
    let bytes = fs::read(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
    let expected = entry.height * entry.width * entry.channels;
    if bytes.len() != expected * 4 {
        return Err(Error::data(format!(
            "{}: holds {} bytes, manifest declares {}×{}×{} floats ({} bytes)",
            entry.path.display(),
            bytes.len(),
            entry.channels,
            entry.height,
            entry.width,
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn select_bands(frame: &[f32], hw: usize, select: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(select.len() * hw);
    for &c in select {
        out.extend_from_slice(&frame[c * hw..(c + 1) * hw]);
    }
    out
}

/// Reads every frame listed in the manifest, keeps the six bands, records
/// NaN pixels (in any frame or band) in the corner mask, and coarsens by
/// `options.coarsen`. Masked pixels hold 0.
pub fn import_frames(manifest: &Path, options: &ImportOptions) -> Result<WeatherCube> {
    let entries = read_frame_manifest(manifest)?;
    let first = &entries[0];
    let (h, w, c_in) = (first.height, first.width, first.channels);
    for e in &entries {
        if (e.height, e.width, e.channels) != (h, w, c_in) {
            return Err(Error::data(format!(
                "{}: extents {}×{}×{} differ from the first frame's {c_in}×{h}×{w}",
                e.path.display(),
                e.channels,
                e.height,
                e.width
            )));
        }
    }
    let select = match &options.band_select {
        Some(s) => s.clone(),
        None => (0..c_in).collect(),
    };
    if select.len() != BAND_NAMES.len() {
        return Err(Error::config(format!(
            "frames have {c_in} channels; choose exactly {} bands",
            BAND_NAMES.len()
        )));
    }
    if let Some(&bad) = select.iter().find(|&&c| c >= c_in) {
        return Err(Error::config(format!("band {bad} out of range for {c_in}-channel frames")));
    }
    let factor = options.coarsen.max(1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::config(format!(
            "{h}×{w} grid is not divisible by coarsening factor {factor}"
        )));
    }
    let hw = h * w;

    log::info!("import: scanning {} frames for missing pixels", entries.len());
    let mut mask = CornerMask::empty(h, w);
    for e in &entries {
        let frame = read_frame(e)?;
        for &c in &select {
            for (p, v) in frame[c * hw..(c + 1) * hw].iter().enumerate() {
                if v.is_nan() {
                    mask.set(p);
                }
            }
        }
    }

    log::info!("import: reading and coarsening by {factor}");
    let circular = circular_bands();
    let (ch, cw) = (h / factor, w / factor);
    let mut coarse_mask = None;
    let mut data = Vec::with_capacity(entries.len() * 6 * ch * cw);
    for e in &entries {
        let frame = select_bands(&read_frame(e)?, hw, &select);
        let (out, m) = coarsen_frame(&frame, 6, h, w, &mask, factor, &circular);
        data.extend(out);
        coarse_mask.get_or_insert(m);
    }
    let bands = BAND_NAMES.iter().map(|s| s.to_string()).collect();
    let timestamps = entries.iter().map(|e| e.timestamp).collect();
    WeatherCube::new(bands, timestamps, coarse_mask.expect("non-empty"), data)
}

fn circular_bands() -> Vec<bool> {
    (0..BAND_NAMES.len()).map(|c| c == WIND_DIRECTION_BAND).collect()
}

/// Block mean of one C×H×W frame over unmasked members. Circular channels
/// (degrees) average unit heading vectors. Returns the coarse frame and the
/// coarse mask (blocks with no unmasked member).
fn coarsen_frame(
    frame: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    mask: &CornerMask,
    factor: usize,
    circular: &[bool],
) -> (Vec<f32>, CornerMask) {
    let (ch, cw) = (h / factor, w / factor);
    let mut out = vec![0f32; channels * ch * cw];
    let mut coarse = CornerMask::empty(ch, cw);
    for br in 0..ch {
        for bc in 0..cw {
            let members: Vec<usize> = (0..factor)
                .flat_map(|dr| (0..factor).map(move |dc| (br * factor + dr) * w + bc * factor + dc))
                .filter(|&p| !mask.as_slice()[p])
                .collect();
            if members.is_empty() {
                coarse.set(br * cw + bc);
                continue;
            }
            for c in 0..channels {
                let plane = &frame[c * h * w..(c + 1) * h * w];
                let v = if circular.get(c).copied().unwrap_or(false) {
                    circular_mean_deg(members.iter().map(|&p| plane[p] as f64))
                } else {
                    members.iter().map(|&p| plane[p] as f64).sum::<f64>() / members.len() as f64
                };
                out[c * ch * cw + br * cw + bc] = v as f32;
            }
        }
    }
    (out, coarse)
}

/// Mean heading in [0, 360) of angles in degrees, via unit vectors.
pub fn circular_mean_deg(angles: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for a in angles {
        let r = a.to_radians();
        s += r.sin();
        c += r.cos();
    }
    let m = s.atan2(c).to_degrees();
    // snap rounding residue so that e.g. {350, 10} gives exactly 0
    let m = if m.abs() < 1e-9 { 0.0 } else { m };
    if m < 0.0 {
        m + 360.0
    } else {
        m
    }
}

/// Block-mean coarsening of a cube; the wind-direction band (when the cube
/// carries the standard band names) is averaged circularly.
pub fn coarsen(cube: &WeatherCube, factor: usize) -> Result<WeatherCube> {
    if factor == 0 {
        return Err(Error::config("coarsening factor must be at least 1"));
    }
    let (h, w) = (cube.height(), cube.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::config(format!(
            "{h}×{w} grid is not divisible by coarsening factor {factor}"
        )));
    }
    let circular: Vec<bool> = cube.bands().iter().map(|b| b == BAND_NAMES[WIND_DIRECTION_BAND]).collect();
    let mut data = Vec::with_capacity(cube.data().len() / (factor * factor));
    let mut mask = CornerMask::empty(h / factor, w / factor);
    for t in 0..cube.frames() {
        let (out, m) = coarsen_frame(cube.frame(t), cube.channels(), h, w, cube.mask(), factor, &circular);
        data.extend(out);
        mask = m;
    }
    WeatherCube::new(cube.bands().to_vec(), cube.timestamps().to_vec(), mask, data)
}

/// Per-band population mean and standard deviation over unmasked pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerStats {
    pub bands: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_normalizer(cube: &WeatherCube) -> Result<NormalizerStats> {
    let mask = cube.mask().as_slice();
    let unmasked = mask.iter().filter(|&&m| !m).count();
    if unmasked == 0 {
        return Err(Error::data("every pixel is masked"));
    }
    let count = (unmasked * cube.frames()) as f64;
    let mut mean = Vec::with_capacity(cube.channels());
    let mut std = Vec::with_capacity(cube.channels());
    for c in 0..cube.channels() {
        let pixels = || {
            (0..cube.frames()).flat_map(move |t| {
                cube.plane(t, c)
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| !m)
                    .map(|(&v, _)| v as f64)
            })
        };
        let mu = pixels().sum::<f64>() / count;
        let var = pixels().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::data(format!(
                "band `{}` is constant (degenerate, std = {sd})",
                cube.bands()[c]
            )));
        }
        mean.push(mu);
        std.push(sd);
    }
    Ok(NormalizerStats {
        bands: cube.bands().to_vec(),
        mean,
        std,
    })
}

/// `(x − μ_c)/σ_c`, then masked pixels set to exactly 0.
pub fn apply_normalizer(cube: &WeatherCube, stats: &NormalizerStats) -> Result<WeatherCube> {
    if stats.mean.len() != cube.channels() || stats.std.len() != cube.channels() {
        return Err(Error::shape(format!(
            "normalizer has {} bands, cube {}",
            stats.mean.len(),
            cube.channels()
        )));
    }
    let mut out = cube.clone();
    let hw = cube.height() * cube.width();
    let mask = cube.mask().as_slice().to_vec();
    for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let c = i % cube.channels();
        let (mu, sd) = (stats.mean[c], stats.std[c]);
        for (v, &m) in plane.iter_mut().zip(&mask) {
            *v = if m { 0.0 } else { ((*v as f64 - mu) / sd) as f32 };
        }
    }
    Ok(out)
}

impl NormalizerStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("band,mean,std\n");
        for i in 0..self.bands.len() {
            s.push_str(&format!("{},{:e},{:e}\n", self.bands[i], self.mean[i], self.std[i]));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("band,mean,std") {
            return Err(Error::data("normalizer file must start with `band,mean,std`"));
        }
        let mut stats = NormalizerStats {
            bands: vec![],
            mean: vec![],
            std: vec![],
        };
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::data(format!("normalizer line {}: bad number `{s}`", i + 2)))
            };
            if parts.len() != 3 {
                return Err(Error::data(format!("normalizer line {}: expected 3 fields", i + 2)));
            }
            stats.bands.push(parts[0].to_string());
            stats.mean.push(num(parts[1])?);
            stats.std.push(num(parts[2])?);
        }
        Ok(stats)
    }
}
