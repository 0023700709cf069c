use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const INPUT_HEIGHT: usize = 115;
pub const INPUT_WIDTH: usize = 108;
pub const BANDS: usize = 6;
pub const OUTPUTS: usize = 2;
pub const BOTTLENECK_BLOCKS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Linear,
    Resnet,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Linear => "linear",
            Family::Resnet => "resnet",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Family::Linear),
            "resnet" => Ok(Family::Resnet),
            other => Err(Error::config(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResnetPlan {
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub block_counts: Vec<usize>,
    pub stage_widths: Vec<usize>,
    /// Ratio of a block's output width to its inner (bottleneck) width.
    pub compression: usize,
    pub pool: usize,
}

impl Default for ResnetPlan {
    fn default() -> Self {
        ResnetPlan {
            stem_width: 32,
            stem_kernel: 7,
            stem_stride: 2,
            block_counts: vec![3, 3, 2, 2],
            stage_widths: vec![64, 128, 256, 512],
            compression: 4,
            pool: 2,
        }
    }
}

/// Architecture descriptor.
///
/// For the linear family `fc_plan` lists every fully connected layer's
/// width (the last is the two outputs). For the ResNet family it lists the
/// head after global pooling, e.g. `[64, 2]` for 512→64→2.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub fc_plan: Vec<usize>,
    pub dropout: f64,
    pub resnet: Option<ResnetPlan>,
}

impl ArchitectureSpec {
    pub fn linear(input_channels: usize) -> Self {
        ArchitectureSpec {
            family: Family::Linear,
            input_channels,
            input_height: INPUT_HEIGHT,
            input_width: INPUT_WIDTH,
            fc_plan: vec![800, 400, 200, OUTPUTS],
            dropout: 0.2,
            resnet: None,
        }
    }

    pub fn resnet(input_channels: usize) -> Self {
        ArchitectureSpec {
            family: Family::Resnet,
            input_channels,
            input_height: INPUT_HEIGHT,
            input_width: INPUT_WIDTH,
            fc_plan: vec![64, OUTPUTS],
            dropout: 0.0,
            resnet: Some(ResnetPlan::default()),
        }
    }

    pub fn for_family(family: Family, input_channels: usize) -> Self {
        match family {
            Family::Linear => Self::linear(input_channels),
            Family::Resnet => Self::resnet(input_channels),
        }
    }

    /// Same architecture on a smaller raster.
    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn with_fc_plan(mut self, plan: Vec<usize>) -> Self {
        self.fc_plan = plan;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn with_resnet_widths(mut self, stem: usize, stages: Vec<usize>) -> Self {
        if let Some(plan) = &mut self.resnet {
            plan.stem_width = stem;
            plan.stage_widths = stages;
        }
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != BANDS && self.input_channels != 5 * BANDS {
            return Err(Error::config(format!(
                "input_channels must be {BANDS} or {}, got {}",
                5 * BANDS,
                self.input_channels
            )));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::config("input extents must be positive"));
        }
        if self.fc_plan.last() != Some(&OUTPUTS) || self.fc_plan.contains(&0) {
            return Err(Error::config(format!(
                "fc_plan must end with {OUTPUTS} outputs and have no zero widths: {:?}",
                self.fc_plan
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        match (self.family, &self.resnet) {
            (Family::Linear, None) => Ok(()),
            (Family::Linear, Some(_)) => Err(Error::config("linear family takes no resnet plan")),
            (Family::Resnet, None) => Err(Error::config("resnet family needs a stage plan")),
            (Family::Resnet, Some(plan)) => {
                if plan.block_counts.iter().sum::<usize>() != BOTTLENECK_BLOCKS {
                    return Err(Error::config(format!(
                        "resnet needs exactly {BOTTLENECK_BLOCKS} bottleneck blocks, plan has {:?}",
                        plan.block_counts
                    )));
                }
                if plan.block_counts.len() != plan.stage_widths.len() || plan.block_counts.contains(&0) {
                    return Err(Error::config("each stage needs a width and at least one block"));
                }
                if plan.compression == 0
                    || plan.stage_widths.iter().any(|&w| w == 0 || w % plan.compression != 0)
                {
                    return Err(Error::config(format!(
                        "stage widths {:?} must be positive multiples of the compression {}",
                        plan.stage_widths, plan.compression
                    )));
                }
                if plan.stem_width == 0 || plan.stem_kernel == 0 || plan.stem_stride == 0 || plan.pool == 0 {
                    return Err(Error::config("stem and pool sizes must be positive"));
                }
                self.resnet_spatial_extents()?;
                Ok(())
            }
        }
    }

    /// Spatial extent entering each stage, checked against the pooling.
    pub fn resnet_spatial_extents(&self) -> Result<Vec<(usize, usize)>> {
        let plan = self
            .resnet
            .as_ref()
            .ok_or_else(|| Error::config("not a resnet spec"))?;
        let pad = plan.stem_kernel / 2;
        let stem = |n: usize| crate::tensor::conv_output_extent(n, plan.stem_kernel, plan.stem_stride, pad);
        let (mut h, mut w) = match (stem(self.input_height), stem(self.input_width)) {
            (Some(h), Some(w)) => (h, w),
            _ => return Err(Error::config("input too small for the stem convolution")),
        };
        let mut out = vec![(h, w)];
        for _ in 1..plan.block_counts.len() {
            if h < plan.pool || w < plan.pool {
                return Err(Error::config(format!(
                    "input {}×{} too small for {} pooled stages",
                    self.input_height,
                    self.input_width,
                    plan.block_counts.len()
                )));
            }
            h = (h - plan.pool) / plan.pool + 1;
            w = (w - plan.pool) / plan.pool + 1;
            out.push((h, w));
        }
        Ok(out)
    }

    /// Trainable parameter count from the layer plan alone, without
    /// allocating any weights.
    pub fn param_count(&self) -> usize {
        match self.family {
            Family::Linear => {
                let mut inputs = self.input_len();
                let mut n = 0;
                for &width in &self.fc_plan {
                    n += inputs * width + width;
                    inputs = width;
                }
                n
            }
            Family::Resnet => {
                let plan = self.resnet.as_ref().expect("validated resnet spec");
                let bn = |c: usize| 2 * c;
                let k = plan.stem_kernel;
                let mut n = self.input_channels * plan.stem_width * k * k + bn(plan.stem_width);
                let mut width = plan.stem_width;
                for (&blocks, &out) in plan.block_counts.iter().zip(&plan.stage_widths) {
                    let mid = out / plan.compression;
                    for b in 0..blocks {
                        let inp = if b == 0 { width } else { out };
                        n += inp * mid + bn(mid);
                        n += mid * mid * 9 + bn(mid);
                        n += mid * out + bn(out);
                        if b == 0 && inp != out {
                            n += inp * out + bn(out);
                        }
                    }
                    width = out;
                }
                for &h in &self.fc_plan {
                    n += width * h + h;
                    width = h;
                }
                n
            }
        }
    }

    /// Canonical `key=value` text, one entry per line, fixed key order.
    pub fn to_canonical_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = format!(
            "family={}\ninput_channels={}\ninput_height={}\ninput_width={}\nfc_plan={}\ndropout={}\n",
            self.family,
            self.input_channels,
            self.input_height,
            self.input_width,
            list(&self.fc_plan),
            self.dropout
        );
        if let Some(p) = &self.resnet {
            s.push_str(&format!(
                "stem_width={}\nstem_kernel={}\nstem_stride={}\nblock_counts={}\nstage_widths={}\ncompression={}\npool={}\n",
                p.stem_width,
                p.stem_kernel,
                p.stem_stride,
                list(&p.block_counts),
                list(&p.stage_widths),
                p.compression,
                p.pool
            ));
        }
        s
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("malformed architecture line `{line}`")))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::data(format!("duplicate architecture key `{k}`")));
            }
        }
        let mut take = |k: &str| {
            map.remove(k)
                .ok_or_else(|| Error::data(format!("architecture key `{k}` missing")))
        };
        let num = |s: String, k: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::data(format!("architecture key `{k}`: bad integer `{s}`")))
        };
        let list = |s: String, k: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::data(format!("architecture key `{k}`: bad list `{s}`")))
                })
                .collect()
        };
        let family: Family = take("family")?.parse()?;
        let input_channels = num(take("input_channels")?, "input_channels")?;
        let input_height = num(take("input_height")?, "input_height")?;
        let input_width = num(take("input_width")?, "input_width")?;
        let fc_plan = list(take("fc_plan")?, "fc_plan")?;
        let dropout_s = take("dropout")?;
        let dropout = dropout_s
            .parse::<f64>()
            .map_err(|_| Error::data(format!("architecture key `dropout`: bad value `{dropout_s}`")))?;
        let resnet = match family {
            Family::Linear => None,
            Family::Resnet => Some(ResnetPlan {
                stem_width: num(take("stem_width")?, "stem_width")?,
                stem_kernel: num(take("stem_kernel")?, "stem_kernel")?,
                stem_stride: num(take("stem_stride")?, "stem_stride")?,
                block_counts: list(take("block_counts")?, "block_counts")?,
                stage_widths: list(take("stage_widths")?, "stage_widths")?,
                compression: num(take("compression")?, "compression")?,
                pool: num(take("pool")?, "pool")?,
            }),
        };
        if let Some(k) = map.keys().next() {
            return Err(Error::data(format!("unknown architecture key `{k}`")));
        }
        let spec = ArchitectureSpec {
            family,
            input_channels,
            input_height,
            input_width,
            fc_plan,
            dropout,
            resnet,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_counts_closed_form() {
        assert_eq!(ArchitectureSpec::linear(6).param_count(), 60_017_802);
        assert_eq!(ArchitectureSpec::linear(30).param_count(), 298_481_802);
    }

    #[test]
    fn resnet_is_smaller_than_linear() {
        for c in [6, 30] {
            let r = ArchitectureSpec::resnet(c);
            r.validate().unwrap();
            assert!(r.param_count() < ArchitectureSpec::linear(c).param_count());
        }
    }

    #[test]
    fn resnet_extents_at_full_size() {
        let e = ArchitectureSpec::resnet(6).resnet_spatial_extents().unwrap();
        assert_eq!(e, vec![(58, 54), (29, 27), (14, 13), (7, 6)]);
    }

    #[test]
    fn rejects_bad_channel_counts_and_block_totals() {
        assert!(ArchitectureSpec::linear(5).validate().is_err());
        let mut r = ArchitectureSpec::resnet(6);
        r.resnet.as_mut().unwrap().block_counts = vec![3, 3, 3, 2];
        assert!(r.validate().is_err());
        assert!(ArchitectureSpec::resnet(6).with_input_size(4, 4).validate().is_err());
    }

    #[test]
    fn canonical_text_round_trip() {
        for spec in [
            ArchitectureSpec::linear(30).with_input_size(12, 10),
            ArchitectureSpec::resnet(6).with_resnet_widths(8, vec![8, 8, 16, 16]),
        ] {
            let text = spec.to_canonical_text();
            assert_eq!(ArchitectureSpec::from_canonical_text(&text).unwrap(), spec);
        }
        assert!(ArchitectureSpec::from_canonical_text("family=linear\nbogus=1\n").is_err());
    }
}
