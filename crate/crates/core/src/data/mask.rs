use crate::error::{Error, Result};

/// Reserved mask value excluded from every loss and metric.
pub const IGNORE: u8 = 255;

/// A per-pixel class-index mask in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskIndexed {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl MaskIndexed {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask {height}x{width} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Result<Self> {
        Self::new(height, width, vec![class; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// Fails with a label error if any value is neither `< num_classes` nor [`IGNORE`].
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .values
            .iter()
            .find(|&&v| v != IGNORE && v as usize >= num_classes)
        {
            Some(v) => Err(Error::Label(format!(
                "mask value {v} is outside [0, {num_classes}) and is not the ignore value"
            ))),
            None => Ok(()),
        }
    }

    /// Pixel counts per class; ignored pixels are not counted.
    pub fn histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &v in &self.values {
            if (v as usize) < num_classes {
                h[v as usize] += 1;
            }
        }
        h
    }

    /// Replaces every occurrence of `class` with [`IGNORE`].
    pub fn with_class_ignored(&self, class: u8) -> Self {
        let mut m = self.clone();
        m.values
            .iter_mut()
            .filter(|v| **v == class)
            .for_each(|v| *v = IGNORE);
        m
    }
}
