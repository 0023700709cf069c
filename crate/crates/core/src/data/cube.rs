// WXC1 cube layout (integers u32 little-endian):
//
//   "WXC1" | version | T | C | H | W
//   | C band names (u32 length + UTF-8)
//   | corner mask, H*W bits row-major, least significant bit first,
//     padded to a whole byte
//   | T timestamps (u32 length + ISO-8601)
//   | T*C*H*W f32 LE values in [t][c][h][w] order

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use super::time::{format_timestamp, is_whole_hour, parse_timestamp};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"WXC1";
pub const CUBE_VERSION: u32 = 1;

/// The six surface bands, in channel order.
pub const BAND_NAMES: [&str; 6] = [
    "pressure",
    "temperature",
    "humidity",
    "wind_speed",
    "wind_direction",
    "cloud_cover",
];
pub const BAND_UNITS: [&str; 6] = ["Pa", "degC", "kg/kg", "m/s", "deg", "%"];
pub const WIND_DIRECTION_BAND: usize = 4;

/// Pixels the reprojection left without data; identical for every frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CornerMask {
    height: usize,
    width: usize,
    masked: Vec<bool>,
}

impl CornerMask {
    pub fn empty(height: usize, width: usize) -> Self {
        CornerMask {
            height,
            width,
            masked: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, masked: Vec<bool>) -> Result<Self> {
        if masked.len() != height * width {
            return Err(Error::shape(format!(
                "mask of {} pixels for a {height}×{width} grid",
                masked.len()
            )));
        }
        Ok(CornerMask { height, width, masked })
    }

    /// Right triangles of leg `size` cut from each of the four corners.
    pub fn corner_triangles(height: usize, width: usize, size: usize) -> Self {
        let mut m = Self::empty(height, width);
        for r in 0..height {
            for c in 0..width {
                let near = |d_r: usize, d_c: usize| d_r + d_c < size;
                if near(r, c)
                    || near(r, width - 1 - c)
                    || near(height - 1 - r, c)
                    || near(height - 1 - r, width - 1 - c)
                {
                    m.masked[r * width + c] = true;
                }
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_masked(&self, r: usize, c: usize) -> bool {
        self.masked[r * self.width + c]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.masked
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub(crate) fn set(&mut self, idx: usize) {
        self.masked[idx] = true;
    }

    /// Maximal runs of masked columns per row: `(row, first_col, last_col)`.
    pub fn row_ranges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            let mut c = 0;
            while c < self.width {
                if self.is_masked(r, c) {
                    let start = c;
                    while c + 1 < self.width && self.is_masked(r, c + 1) {
                        c += 1;
                    }
                    out.push((r, start, c));
                }
                c += 1;
            }
        }
        out
    }
}

/// Hourly multi-band weather frames, `[t][c][h][w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherCube {
    channels: usize,
    height: usize,
    width: usize,
    bands: Vec<String>,
    timestamps: Vec<NaiveDateTime>,
    mask: CornerMask,
    data: Vec<f32>,
}

impl WeatherCube {
    pub fn new(
        bands: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        mask: CornerMask,
        data: Vec<f32>,
    ) -> Result<Self> {
        let (channels, height, width) = (bands.len(), mask.height(), mask.width());
        if channels == 0 || height == 0 || width == 0 || timestamps.is_empty() {
            return Err(Error::shape("weather cube needs at least one frame, band and pixel"));
        }
        let expected = timestamps.len() * channels * height * width;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "cube data holds {} values, expected {expected} ({}×{channels}×{height}×{width})",
                data.len(),
                timestamps.len()
            )));
        }
        for (i, t) in timestamps.iter().enumerate() {
            if !is_whole_hour(t) {
                return Err(Error::data(format!(
                    "frame {i}: timestamp {} is not on the hour",
                    format_timestamp(t)
                )));
            }
            if i > 0 && timestamps[i - 1] >= *t {
                return Err(Error::data(format!(
                    "timestamps not strictly increasing at frame {i} ({})",
                    format_timestamp(t)
                )));
            }
        }
        Ok(WeatherCube {
            channels,
            height,
            width,
            bands,
            timestamps,
            mask,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> &[String] {
        &self.bands
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn mask(&self) -> &CornerMask {
        &self.mask
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn plane(&self, t: usize, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        let start = (t * self.channels + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn frame_index(&self, t: &NaiveDateTime) -> Option<usize> {
        self.timestamps.binary_search(t).ok()
    }

    /// Missing hours between consecutive frames: `(after_frame, hours_missing)`.
    pub fn gaps(&self) -> Vec<(usize, i64)> {
        self.timestamps
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let hours = (w[1] - w[0]).num_hours();
                (hours > 1).then_some((i, hours - 1))
            })
            .collect()
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::data(format!("writing cube: {e}"));
        let put = |w: &mut dyn Write, v: usize| -> Result<()> {
            let v = u32::try_from(v).map_err(|_| Error::data("cube extent exceeds u32"))?;
            w.write_all(&v.to_le_bytes()).map_err(io)
        };
        w.write_all(CUBE_MAGIC).map_err(io)?;
        put(w, CUBE_VERSION as usize)?;
        for e in [self.frames(), self.channels, self.height, self.width] {
            put(w, e)?;
        }
        for b in &self.bands {
            put(w, b.len())?;
            w.write_all(b.as_bytes()).map_err(io)?;
        }
        let mut bits = vec![0u8; self.mask.masked.len().div_ceil(8)];
        for (i, &m) in self.mask.masked.iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits).map_err(io)?;
        for t in &self.timestamps {
            let s = format_timestamp(t);
            put(w, s.len())?;
            w.write_all(s.as_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(self.frame_len() * 4);
        for t in 0..self.frames() {
            buf.clear();
            for v in self.frame(t) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let trunc = |e: std::io::Error| Error::data(format!("truncated cube: {e}"));
        let bytes = |n: usize, r: &mut dyn Read| -> Result<Vec<u8>> {
            let mut b = vec![0u8; n];
            r.read_exact(&mut b).map_err(trunc)?;
            Ok(b)
        };
        let magic = bytes(4, r)?;
        if magic != CUBE_MAGIC {
            return Err(Error::data("not a WXC1 cube (bad magic)"));
        }
        let u32_at = |r: &mut dyn Read| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(trunc)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = u32_at(r)?;
        if version != CUBE_VERSION as usize {
            return Err(Error::data(format!("unsupported cube version {version}")));
        }
        let (t, c, h, w) = (u32_at(r)?, u32_at(r)?, u32_at(r)?, u32_at(r)?);
        let read_str = |r: &mut dyn Read| -> Result<String> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(trunc)?;
            let mut s = vec![0u8; u32::from_le_bytes(b) as usize];
            r.read_exact(&mut s).map_err(trunc)?;
            String::from_utf8(s).map_err(|_| Error::data("cube string is not UTF-8"))
        };
        let bands = (0..c).map(|_| read_str(r)).collect::<Result<Vec<_>>>()?;
        let bits = bytes((h * w).div_ceil(8), r)?;
        let masked = (0..h * w).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        let timestamps = (0..t)
            .map(|_| read_str(r).and_then(|s| parse_timestamp(&s)))
            .collect::<Result<Vec<_>>>()?;
        let n = t * c * h * w;
        let raw = bytes(n * 4, r)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(trunc)? != 0 {
            return Err(Error::data("trailing bytes after cube"));
        }
        WeatherCube::new(bands, timestamps, CornerMask::from_vec(h, w, masked)?, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut BufReader::new(file))
    }
}

/// `count` whole hours starting at `start`.
pub fn hourly(start: NaiveDateTime, count: usize) -> Vec<NaiveDateTime> {
    (0..count).map(|i| start + Duration::hours(i as i64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cube() -> WeatherCube {
        let start = parse_timestamp("2019-01-01T00:00:00").unwrap();
        let mut ts = hourly(start, 3);
        ts[2] += Duration::hours(2);
        let mask = CornerMask::corner_triangles(5, 7, 2);
        let data = (0..3 * 6 * 5 * 7).map(|i| i as f32 * 0.5 - 3.0).collect();
        WeatherCube::new(BAND_NAMES.map(String::from).to_vec(), ts, mask, data).unwrap()
    }

    #[test]
    fn round_trip() {
        let cube = sample_cube();
        let mut bytes = Vec::new();
        cube.write(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"WXC1");
        let back = WeatherCube::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, cube);
        assert_eq!(cube.gaps(), vec![(1, 2)]);
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(WeatherCube::read(&mut extra.as_slice()).is_err());
        assert!(WeatherCube::read(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn corner_mask_shape() {
        let m = CornerMask::corner_triangles(6, 6, 2);
        // three pixels per corner
        assert_eq!(m.count(), 12);
        assert!(m.is_masked(0, 0) && m.is_masked(5, 5) && m.is_masked(0, 5) && m.is_masked(5, 0));
        assert!(!m.is_masked(2, 2));
        assert_eq!(m.row_ranges()[0], (0, 0, 1));
    }

    #[test]
    fn rejects_bad_timestamps() {
        let t0 = parse_timestamp("2019-01-01T01:00:00").unwrap();
        let t1 = parse_timestamp("2019-01-01T00:00:00").unwrap();
        let mask = CornerMask::empty(1, 1);
        assert!(WeatherCube::new(vec!["a".into()], vec![t0, t1], mask.clone(), vec![0.0; 2]).is_err());
        let half = parse_timestamp("2019-01-01T00:30:00").unwrap();
        assert!(WeatherCube::new(vec!["a".into()], vec![half], mask, vec![0.0]).is_err());
    }
}
