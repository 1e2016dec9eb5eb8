use crate::data::{MaskIndexed, IGNORE};
use crate::error::{Error, Result};

/// `K x K` pixel counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > IGNORE as usize {
            return Err(Error::Config(format!("confusion matrix needs 1..=255 classes, got {num_classes}")));
        }
        Ok(Self {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Adds every pixel where neither mask holds the ignore value.
    pub fn accumulate(&mut self, predicted: &MaskIndexed, truth: &MaskIndexed) -> Result<()> {
        if (predicted.height(), predicted.width()) != (truth.height(), truth.width()) {
            return Err(Error::Dimension(format!(
                "prediction {}x{} vs truth {}x{}",
                predicted.height(),
                predicted.width(),
                truth.height(),
                truth.width()
            )));
        }
        predicted.validate(self.k)?;
        truth.validate(self.k)?;
        for (&p, &t) in predicted.values().iter().zip(truth.values()) {
            if p != IGNORE && t != IGNORE {
                self.counts[t as usize * self.k + p as usize] += 1;
            }
        }
        Ok(())
    }
}

pub fn confusion_accumulate(mut cm: ConfusionMatrix, predicted: &MaskIndexed, truth: &MaskIndexed) -> Result<ConfusionMatrix> {
    cm.accumulate(predicted, truth)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    /// Class ids scored, in order; excludes `excluded_class`.
    pub classes: Vec<usize>,
    pub per_class_f1: Vec<f64>,
    pub mean_f1: f64,
    pub per_class_iou: Vec<f64>,
    pub mean_iou: f64,
    /// Mean per-class F1, which equals the mean hard Dice coefficient.
    pub dice: f64,
    pub excluded_class: Option<usize>,
}

impl MetricsReport {
    pub fn includes_all_classes(&self) -> bool {
        self.excluded_class.is_none()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Accuracy, per-class F1 and IoU, and their unweighted means.
///
/// The excluded class loses its row and column before scoring. A class
/// that is neither present nor predicted scores 1.
pub fn compute_report(cm: &ConfusionMatrix, exclude_class: Option<usize>) -> Result<MetricsReport> {
    if let Some(c) = exclude_class {
        if c >= cm.k {
            return Err(Error::Config(format!("excluded class {c} outside 0..{}", cm.k)));
        }
    }
    let classes: Vec<usize> = (0..cm.k).filter(|&c| Some(c) != exclude_class).collect();
    if classes.is_empty() {
        return Err(Error::Evaluation("no classes left to score".into()));
    }
    let mut total = 0u64;
    let mut correct = 0u64;
    let mut per_class_f1 = Vec::with_capacity(classes.len());
    let mut per_class_iou = Vec::with_capacity(classes.len());
    for &c in &classes {
        let tp = cm.get(c, c);
        let (mut fp, mut fn_) = (0u64, 0u64);
        for &o in classes.iter().filter(|&&o| o != c) {
            fp += cm.get(o, c);
            fn_ += cm.get(c, o);
            total += cm.get(c, o);
        }
        total += tp;
        correct += tp;
        if tp + fp + fn_ == 0 {
            per_class_f1.push(1.0);
            per_class_iou.push(1.0);
        } else {
            per_class_f1.push((2 * tp) as f64 / (2 * tp + fp + fn_) as f64);
            per_class_iou.push(tp as f64 / (tp + fp + fn_) as f64);
        }
    }
    if total == 0 {
        return Err(Error::Evaluation("confusion matrix is empty".into()));
    }
    let mean_f1 = mean(&per_class_f1);
    Ok(MetricsReport {
        overall_accuracy: correct as f64 / total as f64,
        classes,
        mean_iou: mean(&per_class_iou),
        per_class_f1,
        per_class_iou,
        mean_f1,
        dice: mean_f1,
        excluded_class: exclude_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(values: &[u8], w: usize) -> MaskIndexed {
        MaskIndexed::new(values.len() / w, w, values.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_counts() {
        let m = MaskIndexed::filled(10, 10, 2).unwrap();
        let cm = confusion_accumulate(ConfusionMatrix::new(3).unwrap(), &m, &m).unwrap();
        assert_eq!(cm.get(2, 2), 100);
        assert_eq!(cm.total(), 100);
        let r = compute_report(&cm, None).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert!(r.per_class_f1.iter().chain(&r.per_class_iou).all(|&v| v == 1.0));
    }

    #[test]
    fn ignored_pixels_leave_matrix_unchanged() {
        let m = MaskIndexed::filled(3, 3, IGNORE).unwrap();
        let cm = confusion_accumulate(ConfusionMatrix::new(2).unwrap(), &m, &m).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(compute_report(&cm, None), Err(Error::Evaluation(_))));
    }

    #[test]
    fn two_by_two_hand_case() {
        let truth = mask(&[0, 0, 1, 1], 2);
        let pred = mask(&[0, 1, 1, 1], 2);
        let cm = confusion_accumulate(ConfusionMatrix::new(2).unwrap(), &pred, &truth).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
    }

    #[test]
    fn binary_balanced_matrix() {
        let truth = mask(&[0, 0, 1, 1], 2);
        let pred = mask(&[0, 1, 0, 1], 2);
        let cm = confusion_accumulate(ConfusionMatrix::new(2).unwrap(), &pred, &truth).unwrap();
        let r = compute_report(&cm, None).unwrap();
        assert_eq!(r.overall_accuracy, 0.5);
        assert_eq!(r.per_class_f1, vec![0.5, 0.5]);
        assert!(r.per_class_iou.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn exclusion_drops_row_and_column() {
        let truth = mask(&[0, 1, 2, 2], 2);
        let pred = mask(&[0, 2, 2, 1], 2);
        let cm = confusion_accumulate(ConfusionMatrix::new(3).unwrap(), &pred, &truth).unwrap();
        let r = compute_report(&cm, Some(2)).unwrap();
        assert_eq!(r.classes, vec![0, 1]);
        // remaining pixels: (0,0) only, class 1 neither present nor predicted
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.per_class_iou, vec![1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = MaskIndexed::filled(2, 2, 0).unwrap();
        let b = MaskIndexed::filled(2, 3, 0).unwrap();
        let mut cm = ConfusionMatrix::new(2).unwrap();
        assert!(matches!(cm.accumulate(&a, &b), Err(Error::Dimension(_))));
    }
}
