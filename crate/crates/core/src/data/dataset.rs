//! Aligned samples, stacking windows, splits and mini-batch streams.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use super::cube::WeatherCube;
use super::power::{PowerSeries, Source};
use super::time::format_timestamp;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Random stream ids, kept apart so that e.g. changing the batch size never
/// changes the split.
pub const SPLIT_STREAM: u64 = 1 << 32;
pub const BATCH_STREAM: u64 = 2 << 32;

/// Samples excluded at the start of the record in stacked mode.
pub const STACK_LEADING_EXCLUSION: usize = 5;

/// Hour offsets relative to the estimation time, oldest first; each
/// contributes one six-band frame to the input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackWindow {
    offsets: Vec<i64>,
}

impl StackWindow {
    pub fn single() -> Self {
        StackWindow { offsets: vec![0] }
    }

    /// The five hours up to and including the estimation time.
    pub fn stacked() -> Self {
        StackWindow {
            offsets: vec![-4, -3, -2, -1, 0],
        }
    }

    pub fn for_stack(stack: usize) -> Result<Self> {
        match stack {
            1 => Ok(Self::single()),
            5 => Ok(Self::stacked()),
            other => Err(Error::config(format!("stack must be 1 or 5, got {other}"))),
        }
    }

    pub fn from_offsets(offsets: Vec<i64>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::config("stack window needs at least one offset"));
        }
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(format!(
                "stack offsets must be strictly increasing (oldest first): {offsets:?}"
            )));
        }
        Ok(StackWindow { offsets })
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    pub fn frames(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_stacked(&self) -> bool {
        self.offsets.len() > 1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignOptions {
    /// Drop hours flagged as constant-valued (see `flag_constant_runs`).
    pub exclude_flagged: bool,
}

/// Hours present in both the cube and the power series.
#[derive(Clone, Debug)]
pub struct AlignedDataset {
    cube: WeatherCube,
    power: PowerSeries,
    frame_of: Vec<usize>,
    row_of: Vec<usize>,
    dropped: Vec<NaiveDateTime>,
}

/// Samples are the cube hours with solar and wind both reported; the
/// dropped hours are returned for logging.
pub fn align(cube: WeatherCube, power: PowerSeries, options: &AlignOptions) -> Result<AlignedDataset> {
    let mut frame_of = Vec::new();
    let mut row_of = Vec::new();
    let mut dropped = Vec::new();
    for (f, t) in cube.timestamps().iter().enumerate() {
        match power.index_of(t) {
            Some(r) if !power.flags[r].any_missing() && !(options.exclude_flagged && power.flags[r].any_constant()) => {
                frame_of.push(f);
                row_of.push(r);
            }
            _ => dropped.push(*t),
        }
    }
    if frame_of.is_empty() {
        return Err(Error::data("weather frames and power series share no usable hour"));
    }
    for t in &dropped {
        log::info!("align: dropping {} (no usable power report)", format_timestamp(t));
    }
    log::info!("align: {} samples, {} hours dropped", frame_of.len(), dropped.len());
    Ok(AlignedDataset {
        cube,
        power,
        frame_of,
        row_of,
        dropped,
    })
}

impl AlignedDataset {
    pub fn len(&self) -> usize {
        self.frame_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_of.is_empty()
    }

    pub fn cube(&self) -> &WeatherCube {
        &self.cube
    }

    pub fn power(&self) -> &PowerSeries {
        &self.power
    }

    pub fn dropped(&self) -> &[NaiveDateTime] {
        &self.dropped
    }

    pub fn timestamp(&self, idx: usize) -> Result<NaiveDateTime> {
        self.check(idx)?;
        Ok(self.cube.timestamps()[self.frame_of[idx]])
    }

    pub fn index_of(&self, t: &NaiveDateTime) -> Option<usize> {
        let f = self.cube.frame_index(t)?;
        self.frame_of.binary_search(&f).ok()
    }

    fn check(&self, idx: usize) -> Result<()> {
        if idx >= self.len() {
            return Err(Error::data(format!("sample {idx} out of range ({} samples)", self.len())));
        }
        Ok(())
    }

    pub fn target(&self, idx: usize) -> Result<[f64; 2]> {
        self.check(idx)?;
        let r = self.row_of[idx];
        Ok([self.power.solar_mw[r], self.power.wind_mw[r]])
    }

    pub fn target_of(&self, idx: usize, source: Source) -> Result<f64> {
        Ok(self.target(idx)?[source.index()])
    }

    /// Cube frame indices making up sample `idx`, oldest first.
    pub fn window_frames(&self, idx: usize, window: &StackWindow) -> Result<Vec<usize>> {
        self.check(idx)?;
        let t = self.cube.timestamps()[self.frame_of[idx]];
        window
            .offsets()
            .iter()
            .map(|&o| {
                let want = t + Duration::hours(o);
                self.cube.frame_index(&want).ok_or_else(|| {
                    Error::data(format!(
                        "sample {idx} ({}) is ineligible: no frame at {}",
                        format_timestamp(&t),
                        format_timestamp(&want)
                    ))
                })
            })
            .collect()
    }

    pub fn is_eligible(&self, idx: usize, window: &StackWindow) -> bool {
        (!window.is_stacked() || idx >= STACK_LEADING_EXCLUSION) && self.window_frames(idx, window).is_ok()
    }

    /// Sample indices usable with `window`.
    pub fn eligible(&self, window: &StackWindow) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_eligible(i, window)).collect()
    }

    pub fn fill_input(&self, idx: usize, window: &StackWindow, out: &mut [f32]) -> Result<()> {
        let frames = self.window_frames(idx, window)?;
        let n = self.cube.frame_len();
        if out.len() != n * frames.len() {
            return Err(Error::shape("sample buffer has the wrong length"));
        }
        for (k, f) in frames.into_iter().enumerate() {
            out[k * n..(k + 1) * n].copy_from_slice(self.cube.frame(f));
        }
        Ok(())
    }

    pub fn split(&self, seed: u64, window: &StackWindow) -> Result<SplitIndices> {
        split_eligible(self.eligible(window), seed, window.is_stacked())
    }

    pub fn view(&self, window: StackWindow) -> SampleView<'_> {
        SampleView { data: self, window }
    }
}

/// `(input C·k×H×W, target [solar, wind])` for one sample.
pub fn make_sample(data: &AlignedDataset, idx: usize, window: &StackWindow) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let cube = data.cube();
    let c = cube.channels() * window.frames();
    let mut input = vec![0f32; c * cube.height() * cube.width()];
    data.fill_input(idx, window, &mut input)?;
    let [s, w] = data.target(idx)?;
    Ok((
        Tensor::from_vec(&[c, cube.height(), cube.width()], input)?,
        Tensor::from_vec(&[2], vec![s as f32, w as f32])?,
    ))
}

/// Something that can assemble input batches and report targets.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// C, H, W of one input.
    fn input_shape(&self) -> [usize; 3];

    fn target(&self, idx: usize) -> Result<[f64; 2]>;

    fn fill_input(&self, idx: usize, out: &mut [f32]) -> Result<()>;

    /// `(N×C×H×W inputs, N×2 targets)`.
    fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if indices.is_empty() {
            return Err(Error::data("empty batch"));
        }
        let [c, h, w] = self.input_shape();
        let per = c * h * w;
        let mut x = vec![0f32; indices.len() * per];
        let mut y = Vec::with_capacity(indices.len() * 2);
        for (k, &i) in indices.iter().enumerate() {
            self.fill_input(i, &mut x[k * per..(k + 1) * per])?;
            let t = self.target(i)?;
            y.push(t[0] as f32);
            y.push(t[1] as f32);
        }
        Ok((
            Tensor::from_vec(&[indices.len(), c, h, w], x)?,
            Tensor::from_vec(&[indices.len(), 2], y)?,
        ))
    }
}

/// An aligned dataset seen through a stacking window.
#[derive(Clone, Debug)]
pub struct SampleView<'a> {
    data: &'a AlignedDataset,
    window: StackWindow,
}

impl SampleView<'_> {
    pub fn window(&self) -> &StackWindow {
        &self.window
    }

    pub fn dataset(&self) -> &AlignedDataset {
        self.data
    }
}

impl SampleSource for SampleView<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn input_shape(&self) -> [usize; 3] {
        let c = self.data.cube();
        [c.channels() * self.window.frames(), c.height(), c.width()]
    }

    fn target(&self, idx: usize) -> Result<[f64; 2]> {
        self.data.target(idx)
    }

    fn fill_input(&self, idx: usize, out: &mut [f32]) -> Result<()> {
        self.data.fill_input(idx, &self.window, out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub stack_mode: bool,
}

/// `(train, val, test)` sizes: train is ⌈0.8·n⌉, the rest is halved with
/// validation taking the odd sample.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (8 * n).div_ceil(10);
    let rest = n - train;
    let val = rest.div_ceil(2);
    (train, val, rest - val)
}

/// Split of `0..n`; stacked mode leaves out the first five samples.
pub fn split(n: usize, seed: u64, stack_mode: bool) -> Result<SplitIndices> {
    let skip = if stack_mode { STACK_LEADING_EXCLUSION } else { 0 };
    split_eligible((skip.min(n)..n).collect(), seed, stack_mode)
}

pub fn split_eligible(mut eligible: Vec<usize>, seed: u64, stack_mode: bool) -> Result<SplitIndices> {
    if eligible.len() < 10 {
        return Err(Error::data(format!(
            "need at least 10 eligible samples to split, have {}",
            eligible.len()
        )));
    }
    eligible.sort_unstable();
    eligible.dedup();
    let (n_train, n_val, _) = split_sizes(eligible.len());
    Rng::substream(seed, SPLIT_STREAM).shuffle(&mut eligible);
    let mut train = eligible[..n_train].to_vec();
    let mut val = eligible[n_train..n_train + n_val].to_vec();
    let mut test = eligible[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        val,
        test,
        seed,
        stack_mode,
    })
}

impl SplitIndices {
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(usize, &str)> = self
            .train
            .iter()
            .map(|&i| (i, "train"))
            .chain(self.val.iter().map(|&i| (i, "val")))
            .chain(self.test.iter().map(|&i| (i, "test")))
            .collect();
        rows.sort_unstable();
        let mut s = format!(
            "#split seed={} mode={} train={} val={} test={}\nindex,split\n",
            self.seed,
            if self.stack_mode { "stack" } else { "single" },
            self.train.len(),
            self.val.len(),
            self.test.len()
        );
        for (i, name) in rows {
            let _ = writeln!(s, "{i},{name}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("#split"))
            .ok_or_else(|| Error::data("split file must start with `#split`"))?;
        let mut seed = None;
        let mut mode = None;
        let mut counts = [None; 3];
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::data(format!("split header: bad field `{kv}`")))?;
            let num = || v.parse::<usize>().map_err(|_| Error::data(format!("split header: bad {k}")));
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| Error::data("split header: bad seed"))?),
                "mode" => {
                    mode = Some(match v {
                        "stack" => true,
                        "single" => false,
                        _ => return Err(Error::data(format!("split header: unknown mode `{v}`"))),
                    })
                }
                "train" => counts[0] = Some(num()?),
                "val" => counts[1] = Some(num()?),
                "test" => counts[2] = Some(num()?),
                _ => return Err(Error::data(format!("split header: unknown field `{k}`"))),
            }
        }
        if lines.next().map(str::trim) != Some("index,split") {
            return Err(Error::data("split file: second line must be `index,split`"));
        }
        let mut s = SplitIndices {
            train: vec![],
            val: vec![],
            test: vec![],
            seed: seed.ok_or_else(|| Error::data("split header lacks seed"))?,
            stack_mode: mode.ok_or_else(|| Error::data("split header lacks mode"))?,
        };
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::data(format!("split file line {}: `{line}`", n + 3));
            let (i, name) = line.split_once(',').ok_or_else(bad)?;
            let i: usize = i.trim().parse().map_err(|_| bad())?;
            match name.trim() {
                "train" => s.train.push(i),
                "val" => s.val.push(i),
                "test" => s.test.push(i),
                _ => return Err(bad()),
            }
        }
        for (list, want) in [&s.train, &s.val, &s.test].into_iter().zip(counts) {
            if want.is_some_and(|w| w != list.len()) {
                return Err(Error::data("split file counts disagree with its rows"));
            }
        }
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != n {
            return Err(Error::data("split file lists an index twice"));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Errors unless every index is below `n` and eligible.
    pub fn check_against(&self, data: &AlignedDataset, window: &StackWindow) -> Result<()> {
        if self.stack_mode != window.is_stacked() {
            return Err(Error::config(format!(
                "split was made in {} mode but the model uses {} input",
                if self.stack_mode { "stack" } else { "single" },
                if window.is_stacked() { "stacked" } else { "single-frame" }
            )));
        }
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if !data.is_eligible(i, window) {
                return Err(Error::data(format!("split lists ineligible sample {i}")));
            }
        }
        Ok(())
    }
}

/// This epoch's shuffled batches of `indices`; the last may be short.
pub fn batches(indices: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut order = indices.to_vec();
    Rng::substream(seed, BATCH_STREAM + epoch as u64).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cube::{hourly, CornerMask, BAND_NAMES};
    use crate::data::time::parse_timestamp;

    fn dataset(hours: usize, skip: &[usize]) -> AlignedDataset {
        let start = parse_timestamp("2019-01-01T00:00:00").unwrap();
        let ts: Vec<_> = hourly(start, hours)
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, t)| t)
            .collect();
        let n = ts.len();
        let data = (0..n * 6 * 4).map(|i| (i / 24) as f32).collect();
        let cube = WeatherCube::new(
            BAND_NAMES.map(String::from).to_vec(),
            ts,
            CornerMask::empty(2, 2),
            data,
        )
        .unwrap();
        let pts = hourly(start, hours);
        let power = PowerSeries::new(pts, (0..hours).map(|i| i as f64).collect(), vec![1.0; hours]).unwrap();
        align(cube, power, &AlignOptions::default()).unwrap()
    }

    #[test]
    fn paper_split_sizes() {
        assert_eq!(split_sizes(8759), (7008, 876, 875));
        assert_eq!(split_sizes(8754), (7004, 875, 875));
        let s = split(8759, 1, true).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7004, 875, 875));
        assert!(s.train.iter().chain(&s.val).chain(&s.test).all(|&i| i >= 5));
        assert!(split(9, 1, false).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let s = split(40, 3, false).unwrap();
        assert_eq!(SplitIndices::from_text(&s.to_text()).unwrap(), s);
        assert!(s.to_text().starts_with("#split seed=3 mode=single train=32 val=4 test=4\n"));
    }

    #[test]
    fn stacks_are_oldest_first_and_skip_gaps() {
        let d = dataset(12, &[7]);
        let w = StackWindow::stacked();
        let (x, y) = make_sample(&d, 5, &w).unwrap();
        assert_eq!(x.shape(), &[30, 2, 2]);
        // frame k holds value k everywhere
        assert_eq!(x.data()[0], 1.0);
        assert_eq!(x.data()[4 * 24], 5.0);
        assert_eq!(y.data(), &[5.0, 1.0]);
        assert!(make_sample(&d, 3, &w).is_err());
        assert!(make_sample(&d, 4, &w).is_ok());
        // hour 7 is missing: samples at hours 8..=11 straddle it
        let elig = d.eligible(&w);
        assert_eq!(elig, vec![5, 6]);
        assert_eq!(make_sample(&d, 0, &StackWindow::single()).unwrap().0.shape(), &[6, 2, 2]);
    }

    #[test]
    fn batches_deterministic() {
        let idx: Vec<usize> = (0..7008).collect();
        let b = batches(&idx, 16, 0, 0).unwrap();
        assert_eq!(b.len(), 438);
        assert!(b.iter().all(|x| x.len() == 16));
        assert_eq!(b, batches(&idx, 16, 0, 0).unwrap());
        assert_ne!(b, batches(&idx, 16, 0, 1).unwrap());
        let short = batches(&idx[..35], 16, 0, 0).unwrap();
        assert_eq!(short.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 16, 3]);
    }

    #[test]
    fn align_drops_unreported_hours() {
        let start = parse_timestamp("2019-01-01T00:00:00").unwrap();
        let cube = WeatherCube::new(
            vec!["a".into()],
            hourly(start, 4),
            CornerMask::empty(1, 1),
            vec![0.0; 4],
        )
        .unwrap();
        let mut power = PowerSeries::new(hourly(start, 4), vec![1.0; 4], vec![1.0; 4]).unwrap();
        power.flags[2] |= crate::data::QualityFlags::SOLAR_MISSING;
        let d = align(cube.clone(), power, &AlignOptions::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dropped().len(), 1);
        let later = PowerSeries::new(hourly(start + Duration::hours(10), 2), vec![1.0; 2], vec![1.0; 2]).unwrap();
        assert!(align(cube, later, &AlignOptions::default()).is_err());
    }
}
