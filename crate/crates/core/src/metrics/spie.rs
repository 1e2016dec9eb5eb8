use image::RgbImage;

use super::segment::{segment_detect, SegmenterParams};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct SpieReport {
    pub spie: f64,
    pub per_sample: Vec<f64>,
}

impl SpieReport {
    pub fn from_residuals(per_sample: Vec<f64>) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::Contract("SPIE needs at least one sample".into()));
        }
        if let Some(v) = per_sample.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("residual {v} outside [0, 1]")));
        }
        let spie = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        Ok(Self { spie, per_sample })
    }

    pub fn num_samples(&self) -> usize {
        self.per_sample.len()
    }
}

/// Fraction of pixels where the segment boundaries of `a` and `b` disagree.
pub fn residual(a: &RgbImage, b: &RgbImage, params: &SegmenterParams) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Dimension(format!(
            "mask rendering {:?} vs input {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let sa = segment_detect(a, params);
    let sb = segment_detect(b, params);
    let differing = sa.boundary().iter().zip(sb.boundary()).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / sa.boundary().len() as f64)
}

/// Mean boundary disagreement between segmentations of rendered model masks
/// and of the corresponding input images. 0 means identical structure.
pub fn spie(model_masks: &[RgbImage], inputs: &[RgbImage], params: &SegmenterParams) -> Result<SpieReport> {
    if model_masks.len() != inputs.len() {
        return Err(Error::Contract(format!(
            "{} masks for {} inputs",
            model_masks.len(),
            inputs.len()
        )));
    }
    let per_sample = par::map_indexed(inputs.len(), |i| residual(&model_masks[i], &inputs[i], params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    SpieReport::from_residuals(per_sample)
}

/// Relative reduction of `ours` against `base`, in percent, unrounded.
pub fn improvement(base: f64, ours: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::Contract(format!("baseline SPIE must be positive, got {base}")));
    }
    Ok(100.0 * (base - ours) / base)
}

/// [`improvement`] rounded to the nearest whole percent.
pub fn improvement_percent(base: f64, ours: f64) -> Result<i64> {
    Ok(improvement(base, ours)?.round() as i64)
}
