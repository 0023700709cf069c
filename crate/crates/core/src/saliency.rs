//! Vanilla-gradient saliency: the largest absolute input gradient over the
//! channels at each pixel, for one model output.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{CornerMask, Source};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub source: Source,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub timestamp: Option<String>,
    pub stacked: bool,
}

impl SaliencyMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Pixel indices of the `k` largest values, ties broken by index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

/// `∂ output[0, source] / ∂ input` for a single-sample N=1 batch, evaluated
/// in eval mode with parameters held constant.
pub fn input_gradient<S: Scalar>(model: &Model<S>, input: &Tensor<S>, output_index: usize) -> Result<Tensor<S>> {
    if output_index > 1 {
        return Err(Error::config(format!(
            "output index must be 0 (solar) or 1 (wind), got {output_index}"
        )));
    }
    if input.rank() != 4 || input.shape()[0] != 1 {
        return Err(Error::shape(format!("saliency needs a 1×C×H×W input, got {:?}", input.shape())));
    }
    let mut tape = Tape::frozen_params();
    let x = tape.leaf(input.clone().with_requires_grad(true));
    let out = model.forward_eval(&mut tape, x)?;
    let mut pick = vec![S::zero(); 2];
    pick[output_index] = S::one();
    let selected = tape.mul_const(out, pick)?;
    let scalar = tape.sum_all(selected)?;
    tape.backward(scalar, &Tensor::scalar(S::one()))?;
    let grad = tape
        .grad(x)
        .map(<[S]>::to_vec)
        .unwrap_or_else(|| vec![S::zero(); input.numel()]);
    Tensor::from_vec(input.shape(), grad)
}

pub fn saliency_map<S: Scalar>(model: &Model<S>, input: &Tensor<S>, source: Source) -> Result<SaliencyMap> {
    let g = input_gradient(model, input, source.index())?;
    let (c, h, w) = (g.shape()[1], g.shape()[2], g.shape()[3]);
    let mut values = vec![0.0f64; h * w];
    for ch in 0..c {
        for (p, v) in g.data()[ch * h * w..(ch + 1) * h * w].iter().enumerate() {
            values[p] = values[p].max(v.as_f64().abs());
        }
    }
    Ok(SaliencyMap {
        source,
        height: h,
        width: w,
        values,
        timestamp: None,
        stacked: c > 6,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
}

impl std::str::FromStr for MapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MapFormat::Csv),
            "pgm" => Ok(MapFormat::Pgm),
            other => Err(Error::config(format!("unknown map format `{other}` (csv or pgm)"))),
        }
    }
}

/// `#` metadata lines, then one comma-separated row per image row. Masked
/// pixels are listed as `# masked row first_col-last_col` lines.
pub fn map_to_csv(map: &SaliencyMap, mask: Option<&CornerMask>) -> Result<String> {
    check_finite(map)?;
    let mut s = String::new();
    let _ = writeln!(s, "# source={}", map.source.as_str());
    if let Some(t) = &map.timestamp {
        let _ = writeln!(s, "# timestamp={t}");
    }
    let _ = writeln!(s, "# stacked={}", map.stacked);
    let _ = writeln!(s, "# shape={}x{}", map.height, map.width);
    if let Some(m) = mask {
        for (r, a, b) in m.row_ranges() {
            let _ = writeln!(s, "# masked {r} {a}-{b}");
        }
    }
    for r in 0..map.height {
        let row: Vec<String> = (0..map.width).map(|c| format!("{:e}", map.get(r, c) as f32)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

/// Parses the values written by [`map_to_csv`] (metadata other than the
/// source is not recovered).
pub fn map_from_csv(text: &str) -> Result<SaliencyMap> {
    let mut source = Source::Solar;
    let mut timestamp = None;
    let mut stacked = false;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            if let Some(v) = meta.strip_prefix("source=") {
                source = v.parse()?;
            } else if let Some(v) = meta.strip_prefix("timestamp=") {
                timestamp = Some(v.to_string());
            } else if let Some(v) = meta.strip_prefix("stacked=") {
                stacked = v == "true";
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::data(format!("bad saliency value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let width = rows.first().map(Vec::len).unwrap_or(0);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::data("saliency CSV rows are empty or ragged"));
    }
    Ok(SaliencyMap {
        source,
        height: rows.len(),
        width,
        values: rows.into_iter().flatten().collect(),
        timestamp,
        stacked,
    })
}

/// Binary P5 image; each map is rescaled on its own so its maximum is 255.
pub fn map_to_pgm(map: &SaliencyMap) -> Result<Vec<u8>> {
    check_finite(map)?;
    let max = map.max();
    let mut out = format!(
        "P5\n# saliency source={} per-image rescale max={:e}\n{} {}\n255\n",
        map.source.as_str(),
        max,
        map.width,
        map.height
    )
    .into_bytes();
    out.extend(map.values.iter().map(|&v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

fn check_finite(map: &SaliencyMap) -> Result<()> {
    if map.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("saliency map has non-finite values"));
    }
    Ok(())
}

pub fn export_map(map: &SaliencyMap, path: &Path, format: MapFormat, mask: Option<&CornerMask>) -> Result<()> {
    let bytes = match format {
        MapFormat::Csv => map_to_csv(map, mask)?.into_bytes(),
        MapFormat::Pgm => map_to_pgm(map)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Parameterized;
    use crate::models::ArchitectureSpec;
    use crate::rng::Rng;

    fn small_linear() -> Model<f64> {
        let spec = ArchitectureSpec::linear(6)
            .with_input_size(3, 2)
            .with_fc_plan(vec![5, 4, 3, 2]);
        Model::build(spec, &mut Rng::new(2)).unwrap()
    }

    fn input(seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let v = (0..36).map(|_| rng.normal(0.0, 1.0)).collect();
        Tensor::from_vec(&[1, 6, 3, 2], v).unwrap()
    }

    #[test]
    fn clipped_output_gives_zero_map() {
        let mut model = small_linear();
        // drive the last layer's solar pre-activation strongly negative
        model.visit_params_mut(&mut |name, t| {
            if name == "fc4.bias" {
                t.data_mut()[0] = -1e6;
            }
        });
        let m = saliency_map(&model, &input(1), Source::Solar).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(input_gradient(&model, &input(1), 2).is_err());
    }

    #[test]
    fn non_negative_and_shaped() {
        let model = small_linear();
        let m = saliency_map(&model, &input(3), Source::Wind).unwrap();
        assert_eq!((m.height, m.width), (3, 2));
        assert!(m.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn exports() {
        let zero = SaliencyMap {
            source: Source::Solar,
            height: 2,
            width: 3,
            values: vec![0.0; 6],
            timestamp: Some("2019-05-05T22:00:00".into()),
            stacked: false,
        };
        let pgm = map_to_pgm(&zero).unwrap();
        assert!(pgm.starts_with(b"P5\n"));
        assert!(pgm[pgm.len() - 6..].iter().all(|&b| b == 0));

        let m = SaliencyMap {
            values: vec![0.5, 1.0, 0.25, 3.0e-7, 0.0, 0.125],
            ..zero.clone()
        };
        let pgm = map_to_pgm(&m).unwrap();
        assert_eq!(&pgm[pgm.len() - 6..], &[128, 255, 64, 0, 0, 32]);

        let mask = CornerMask::corner_triangles(2, 3, 1);
        let csv = map_to_csv(&m, Some(&mask)).unwrap();
        assert!(csv.contains("# masked 0 0-0"));
        let back = map_from_csv(&csv).unwrap();
        for (a, b) in back.values.iter().zip(&m.values) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(back.timestamp, m.timestamp);
        let bad = SaliencyMap {
            values: vec![f64::NAN; 6],
            ..zero
        };
        assert!(map_to_pgm(&bad).is_err());
    }
}
