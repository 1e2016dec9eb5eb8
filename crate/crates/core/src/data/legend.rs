use image::{Rgb, RgbImage};

use super::mask::{MaskIndexed, IGNORE};
use crate::error::{Error, Result};

/// Default per-channel tolerance when decoding color masks (8 of 255).
pub const DEFAULT_TOLERANCE: u8 = 8;

/// Ordered class names and their mask colors; a class index is its position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorLegend {
    entries: Vec<(String, [u8; 3])>,
}

impl ColorLegend {
    pub fn new(entries: Vec<(String, [u8; 3])>) -> Result<Self> {
        if entries.is_empty() || entries.len() > IGNORE as usize {
            return Err(Error::Config(format!("legend needs 1..=255 classes, got {}", entries.len())));
        }
        for (i, (na, ca)) in entries.iter().enumerate() {
            for (nb, cb) in &entries[i + 1..] {
                if ca == cb {
                    return Err(Error::Config(format!("legend classes {na} and {nb} share color {ca:?}")));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Buildings, trees, cars, low vegetation, roads and clutter.
    pub fn aerial_six() -> Self {
        let e = |n: &str, c: [u8; 3]| (n.to_string(), c);
        Self {
            entries: vec![
                e("Buildings", [0, 0, 255]),
                e("Trees", [0, 255, 0]),
                e("Cars", [255, 255, 0]),
                e("Low vegetation", [0, 255, 255]),
                e("Roads", [255, 255, 255]),
                e("Clutter", [255, 0, 0]),
            ],
        }
    }

    /// The first `k` classes of [`ColorLegend::aerial_six`], `2 <= k <= 6`.
    pub fn aerial(k: usize) -> Result<Self> {
        let full = Self::aerial_six();
        if !(2..=full.len()).contains(&k) {
            return Err(Error::Config(format!("aerial legends have 2..=6 classes, got {k}")));
        }
        Ok(Self {
            entries: full.entries[..k].to_vec(),
        })
    }

    /// Looks a legend up by the name used in dataset manifests:
    /// `aerial2` .. `aerial6`, or `default` for `aerial6`.
    pub fn by_name(name: &str) -> Result<Self> {
        if name == "default" {
            return Ok(Self::aerial_six());
        }
        match name.strip_prefix("aerial").and_then(|k| k.parse().ok()) {
            Some(k) => Self::aerial(k),
            None => Err(Error::Config(format!("unknown legend {name:?}"))),
        }
    }

    /// Manifest name of this legend, if it is one of the built-in ones.
    pub fn builtin_name(&self) -> Option<String> {
        let k = self.len();
        (Self::aerial(k).ok().as_ref() == Some(self)).then(|| format!("aerial{k}"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.entries.get(class).map(|(n, _)| n.as_str())
    }

    pub fn color(&self, class: usize) -> Option<[u8; 3]> {
        self.entries.get(class).map(|(_, c)| *c)
    }

    pub fn class_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    fn check_unambiguous(&self, tolerance: u8) -> Result<()> {
        let reach = 2 * tolerance as i32;
        for (i, (na, ca)) in self.entries.iter().enumerate() {
            for (nb, cb) in &self.entries[i + 1..] {
                let close = ca.iter().zip(cb).all(|(a, b)| (*a as i32 - *b as i32).abs() <= reach);
                if close {
                    return Err(Error::Config(format!(
                        "legend colors of {na} and {nb} are within twice the tolerance {tolerance}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Maps each pixel to the legend entry within `tolerance` on every
    /// channel; unmatched pixels become [`IGNORE`].
    pub fn color_to_index(&self, image: &RgbImage, tolerance: u8) -> Result<MaskIndexed> {
        self.check_unambiguous(tolerance)?;
        let tol = tolerance as i32;
        let values = image
            .pixels()
            .map(|Rgb(p)| {
                self.entries
                    .iter()
                    .position(|(_, c)| c.iter().zip(p).all(|(a, b)| (*a as i32 - *b as i32).abs() <= tol))
                    .map_or(IGNORE, |i| i as u8)
            })
            .collect();
        MaskIndexed::new(image.height() as usize, image.width() as usize, values)
    }

    /// Renders a mask in legend colors; ignored pixels are black.
    pub fn index_to_color(&self, mask: &MaskIndexed) -> Result<RgbImage> {
        mask.validate(self.len())?;
        let mut img = RgbImage::new(mask.width() as u32, mask.height() as u32);
        for (px, &v) in img.pixels_mut().zip(mask.values()) {
            *px = Rgb(self.color(v as usize).unwrap_or([0, 0, 0]));
        }
        Ok(img)
    }
}

impl Default for ColorLegend {
    fn default() -> Self {
        Self::aerial_six()
    }
}
