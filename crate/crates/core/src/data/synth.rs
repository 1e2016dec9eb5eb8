//! Procedural aerial-like scenes with three fixed domain shifts.
//!
//! Domain A is the clean render. Domain B adds +0.2 brightness and Gaussian
//! texture noise (sigma 0.05). Domain C rotates hue by 40 degrees and scales
//! contrast by 0.8 around mid-grey; its masks are returned separately as
//! [`HiddenTruth`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::domain::DomainTag;
use super::legend::ColorLegend;
use super::mask::MaskIndexed;
use super::sample::{Dataset, HiddenTruth, Sample};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const BRIGHTNESS_SHIFT_B: f64 = 0.2;
pub const NOISE_SIGMA_B: f64 = 0.05;
pub const HUE_ROTATION_C_DEG: f64 = 40.0;
pub const CONTRAST_C: f64 = 0.8;

const TEXTURE_SIGMA: f64 = 0.02;
const COLOR_JITTER: f64 = 0.04;

// Base colors, kept inside [0.1, 0.7] so the B brightness shift rarely clips.
const BASE_COLORS: [[f64; 3]; 6] = [
    [0.62, 0.42, 0.36], // buildings: roofs
    [0.10, 0.36, 0.14], // trees
    [0.66, 0.16, 0.58], // cars
    [0.36, 0.56, 0.22], // low vegetation
    [0.46, 0.46, 0.50], // roads
    [0.60, 0.52, 0.10], // clutter
];

/// Three generated datasets: labelled A and B, unlabelled C, and C's
/// withheld masks.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub a: Dataset,
    pub b: Dataset,
    pub c: Dataset,
    pub hidden_c: HiddenTruth,
}

impl SynthCorpus {
    pub fn datasets(&self) -> [&Dataset; 3] {
        [&self.a, &self.b, &self.c]
    }
}

fn legend_for(num_classes: usize) -> Result<ColorLegend> {
    ColorLegend::aerial(num_classes)
        .map_err(|_| Error::Config(format!("synthetic scenes support 2..=6 classes, got {num_classes}")))
}

fn scene_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> MaskIndexed {
    let class = |c: usize| (c % k) as u8;
    let mut m = vec![class(3); h * w];
    let paint = |m: &mut Vec<u8>, c: u8, inside: &dyn Fn(usize, usize) -> bool| {
        for y in 0..h {
            for x in 0..w {
                if inside(y, x) {
                    m[y * w + x] = c;
                }
            }
        }
    };
    // a road stripe
    let width = rng.random_range(3..=(h / 6).max(3));
    let at = rng.random_range(0..h.saturating_sub(width).max(1));
    if rng.random_bool(0.5) {
        paint(&mut m, class(4), &|y, _| y >= at && y < at + width);
    } else {
        paint(&mut m, class(4), &|_, x| x >= at && x < at + width);
    }
    let shapes = rng.random_range(3..=6);
    for _ in 0..shapes {
        let kind = rng.random_range(0..4);
        let cy = rng.random_range(0..h) as f64;
        let cx = rng.random_range(0..w) as f64;
        match kind {
            0 => {
                let hh = rng.random_range(2.0..(h as f64 / 4.0).max(3.0));
                let hw = rng.random_range(2.0..(w as f64 / 4.0).max(3.0));
                paint(&mut m, class(0), &|y, x| {
                    (y as f64 - cy).abs() <= hh && (x as f64 - cx).abs() <= hw
                });
            }
            1 => {
                let r = rng.random_range(2.0..(h.min(w) as f64 / 5.0).max(3.0));
                paint(&mut m, class(1), &|y, x| {
                    (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r
                });
            }
            2 => {
                let (hh, hw) = if rng.random_bool(0.5) { (1.0, 2.0) } else { (2.0, 1.0) };
                paint(&mut m, class(2), &|y, x| {
                    (y as f64 - cy).abs() <= hh && (x as f64 - cx).abs() <= hw
                });
            }
            _ => {
                let r = rng.random_range(1.0..3.0);
                paint(&mut m, class(5), &|y, x| {
                    (y as f64 - cy).abs() + (x as f64 - cx).abs() <= r
                });
            }
        }
    }
    MaskIndexed::new(h, w, m).expect("scene mask has the requested size")
}

fn render(rng: &mut ChaCha8Rng, mask: &MaskIndexed, k: usize) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let jitter: Vec<[f64; 3]> = (0..k)
        .map(|c| {
            let mut col = BASE_COLORS[c];
            for v in &mut col {
                *v += rng.random_range(-COLOR_JITTER..COLOR_JITTER);
            }
            col
        })
        .collect();
    let texture = Normal::new(0.0, TEXTURE_SIGMA).expect("valid sigma");
    let mut data = vec![0.0; 3 * h * w];
    for (i, &c) in mask.values().iter().enumerate() {
        for ch in 0..3 {
            data[ch * h * w + i] = (jitter[c as usize][ch] + texture.sample(rng)).clamp(0.0, 1.0);
        }
    }
    data
}

fn shift_b(rng: &mut ChaCha8Rng, data: &mut [f64]) {
    let noise = Normal::new(0.0, NOISE_SIGMA_B).expect("valid sigma");
    for v in data {
        *v = (*v + BRIGHTNESS_SHIFT_B + noise.sample(rng)).clamp(0.0, 1.0);
    }
}

fn shift_c(data: &mut [f64], plane: usize) {
    let (s, c) = HUE_ROTATION_C_DEG.to_radians().sin_cos();
    let third = (1.0 - c) / 3.0;
    let root = (1.0f64 / 3.0).sqrt() * s;
    let m = [
        [c + third, third - root, third + root],
        [third + root, c + third, third - root],
        [third - root, third + root, c + third],
    ];
    for i in 0..plane {
        let px = [data[i], data[plane + i], data[2 * plane + i]];
        for (ch, row) in m.iter().enumerate() {
            let rotated = row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
            data[ch * plane + i] = ((rotated - 0.5) * CONTRAST_C + 0.5).clamp(0.0, 1.0);
        }
    }
}

/// Generates `n_per_domain` scenes for each of the domains A, B and C.
pub fn synth_generate(seed: u64, n_per_domain: usize, size: (usize, usize), num_classes: usize) -> Result<SynthCorpus> {
    let (h, w) = size;
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Config(format!("synthetic size {h}x{w} must be positive multiples of 8")));
    }
    let legend = legend_for(num_classes)?;
    let mut per_domain = Vec::new();
    for (d, tag) in [DomainTag::a(), DomainTag::b(), DomainTag::c()].into_iter().enumerate() {
        let mut samples = Vec::with_capacity(n_per_domain);
        for i in 0..n_per_domain {
            let mut rng = seed::rng(seed, &[d as u64, i as u64]);
            let mask = scene_mask(&mut rng, h, w, num_classes);
            let mut data = render(&mut rng, &mask, num_classes);
            match d {
                1 => shift_b(&mut rng, &mut data),
                2 => shift_c(&mut data, h * w),
                _ => {}
            }
            samples.push(Sample {
                id: format!("{}-{i:04}", tag.symbol()),
                image: Tensor::new(vec![3, h, w], data)?,
                mask: Some(mask),
                domain: tag.clone(),
            });
        }
        per_domain.push((tag, samples));
    }
    let (tag_c, c_samples) = per_domain.pop().expect("three domains");
    let (tag_b, b_samples) = per_domain.pop().expect("three domains");
    let (tag_a, a_samples) = per_domain.pop().expect("three domains");

    let mut hidden = BTreeMap::new();
    let c_visible = c_samples
        .into_iter()
        .map(|mut s| {
            hidden.insert(s.id.clone(), s.mask.take().expect("generated with a mask"));
            s
        })
        .collect();

    Ok(SynthCorpus {
        a: Dataset::new("synth-A", tag_a, true, legend.clone(), a_samples)?,
        b: Dataset::new("synth-B", tag_b, true, legend.clone(), b_samples)?,
        c: Dataset::new("synth-C", tag_c, false, legend, c_visible)?,
        hidden_c: HiddenTruth::new(hidden),
    })
}
