use crate::loss::LossBreakdown;
use crate::metrics::MetricsReport;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global step index, counting from 0 across epochs.
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_l0: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub mean_total: f64,
    /// Segmentation scores on the held-out labelled split.
    pub heldout: MetricsReport,
    /// Domain-head accuracy on the held-out samples of every dataset.
    pub domain_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// `step,epoch,l0,l1,l2,total`
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,epoch,l0,l1,l2,total\n");
        for s in &self.steps {
            let l = &s.loss;
            out.push_str(&format!("{},{},{},{},{},{}\n", s.step, s.epoch, l.l0, l.l1, l.l2, l.total));
        }
        out
    }

    /// Per-epoch loss means and held-out scores.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from(
            "epoch,l0,l1,l2,total,heldout_accuracy,heldout_mean_f1,heldout_mean_iou,domain_accuracy\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.mean_l0,
                e.mean_l1,
                e.mean_l2,
                e.mean_total,
                e.heldout.overall_accuracy,
                e.heldout.mean_f1,
                e.heldout.mean_iou,
                e.domain_accuracy
            ));
        }
        out
    }

    pub fn steps_in_epoch(&self, epoch: usize) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.epoch == epoch)
    }
}
