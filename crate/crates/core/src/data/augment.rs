use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::mask::MaskIndexed;
use super::sample::Sample;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Which geometric and multiscale transforms [`augment`] may apply. Each
/// enabled transform fires with probability 1/2.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugmentPolicy {
    pub hflip: bool,
    pub vflip: bool,
    /// Quarter turns; non-square samples only receive half turns.
    pub rot90: bool,
    /// Downsample-then-upsample factors to choose from (2 and/or 4).
    pub downsample: Vec<usize>,
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn standard() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rot90: true,
            downsample: vec![2, 4],
        }
    }

    pub fn is_none(&self) -> bool {
        *self == Self::none()
    }
}

impl FromStr for AugmentPolicy {
    type Err = Error;

    /// Comma-separated `hflip`, `vflip`, `rot90`, `down2`, `down4`, or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let mut p = Self::none();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match item {
                "none" => {}
                "hflip" => p.hflip = true,
                "vflip" => p.vflip = true,
                "rot90" => p.rot90 = true,
                "down2" => p.downsample.push(2),
                "down4" => p.downsample.push(4),
                other => return Err(Error::Config(format!("unknown augmentation {other:?}"))),
            }
        }
        p.downsample.sort_unstable();
        p.downsample.dedup();
        Ok(p)
    }
}

impl fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.hflip {
            parts.push("hflip".to_string());
        }
        if self.vflip {
            parts.push("vflip".to_string());
        }
        if self.rot90 {
            parts.push("rot90".to_string());
        }
        parts.extend(self.downsample.iter().map(|d| format!("down{d}")));
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

// Applies the same pixel remapping to every image plane and to the mask.
// `src_of(y, x)` gives the source pixel for output pixel (y, x).
fn remap(sample: &Sample, oh: usize, ow: usize, src_of: impl Fn(usize, usize) -> (usize, usize)) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let src = sample.image.data();
    let mut data = Vec::with_capacity(3 * oh * ow);
    for c in 0..3 {
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = src_of(y, x);
                data.push(src[(c * h + sy) * w + sx]);
            }
        }
    }
    let mask = sample.mask.as_ref().map(|m| {
        let mut v = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = src_of(y, x);
                v.push(m.get(sy, sx));
            }
        }
        MaskIndexed::new(oh, ow, v).expect("remapped mask keeps its size")
    });
    Sample {
        id: sample.id.clone(),
        image: Tensor::new(vec![3, oh, ow], data).expect("remapped image keeps its size"),
        mask,
        domain: sample.domain.clone(),
    }
}

pub fn hflip(sample: &Sample) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    remap(sample, h, w, |y, x| (y, w - 1 - x))
}

pub fn vflip(sample: &Sample) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    remap(sample, h, w, |y, x| (h - 1 - y, x))
}

/// Rotates counter-clockwise by `quarter_turns * 90` degrees.
pub fn rot90(sample: &Sample, quarter_turns: usize) -> Sample {
    let mut out = sample.clone();
    for _ in 0..quarter_turns % 4 {
        let (h, w) = (out.height(), out.width());
        out = remap(&out, w, h, |y, x| (x, w - 1 - y));
    }
    out
}

/// Area-averages the image and nearest-samples the mask at `1/factor`
/// scale, then upsamples both back to the original size by replication.
pub fn downsample_roundtrip(sample: &Sample, factor: usize) -> Result<Sample> {
    let (h, w) = (sample.height(), sample.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Config(format!("downsample factor {factor} does not divide {h}x{w}")));
    }
    let src = sample.image.data();
    let area = (factor * factor) as f64;
    let mut data = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for by in 0..h / factor {
            for bx in 0..w / factor {
                let mut sum = 0.0;
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        sum += src[(c * h + y) * w + x];
                    }
                }
                let mean = sum / area;
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        data[(c * h + y) * w + x] = mean;
                    }
                }
            }
        }
    }
    let mask = sample.mask.as_ref().map(|m| {
        let v = (0..h * w)
            .map(|i| m.get((i / w) / factor * factor, (i % w) / factor * factor))
            .collect();
        MaskIndexed::new(h, w, v).expect("mask keeps its size")
    });
    Ok(Sample {
        id: sample.id.clone(),
        image: Tensor::new(vec![3, h, w], data)?,
        mask,
        domain: sample.domain.clone(),
    })
}

/// Applies a seeded random subset of the policy's transforms, identically
/// to image and mask.
pub fn augment(sample: &Sample, seed: u64, policy: &AugmentPolicy) -> Result<Sample> {
    let mut rng = seed::rng(seed, &[0xa06]);
    let mut out = sample.clone();
    if policy.hflip && rng.random_bool(0.5) {
        out = hflip(&out);
    }
    if policy.vflip && rng.random_bool(0.5) {
        out = vflip(&out);
    }
    if policy.rot90 {
        let turns = if out.height() == out.width() {
            rng.random_range(0..4)
        } else {
            2 * rng.random_range(0..2)
        };
        out = rot90(&out, turns);
    }
    let usable: Vec<usize> = policy
        .downsample
        .iter()
        .copied()
        .filter(|&f| f > 1 && out.height().is_multiple_of(f) && out.width().is_multiple_of(f))
        .collect();
    if !usable.is_empty() && rng.random_bool(0.5) {
        let f = usable[rng.random_range(0..usable.len())];
        out = downsample_roundtrip(&out, f)?;
    }
    Ok(out)
}
