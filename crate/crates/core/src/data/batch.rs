use rand::seq::SliceRandom;

use super::sample::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

/// A training batch. Labelled samples come first.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labelled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_labelled()).count()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }
}

/// Splits one epoch into mixed batches.
///
/// Every labelled sample appears exactly once per epoch, in a seeded random
/// order; each batch holds `round(batch_size * labelled_fraction)` of them
/// and fills the rest from a seeded cycle over the unlabelled samples. A
/// short final batch keeps the same proportion.
pub fn make_batches(datasets: &[Dataset], batch_size: usize, labelled_fraction: f64, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(labelled_fraction > 0.0 && labelled_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "labelled fraction {labelled_fraction} outside (0, 1]"
        )));
    }
    let per_batch_labelled = (batch_size as f64 * labelled_fraction).round() as usize;
    if per_batch_labelled == 0 {
        return Err(Error::Config(format!(
            "batch size {batch_size} with labelled fraction {labelled_fraction} leaves no labelled samples"
        )));
    }
    let per_batch_unlabelled = batch_size - per_batch_labelled;

    let labelled: Vec<&Sample> = datasets
        .iter()
        .filter(|d| d.is_labelled())
        .flat_map(|d| d.samples())
        .collect();
    let unlabelled: Vec<&Sample> = datasets
        .iter()
        .filter(|d| !d.is_labelled())
        .flat_map(|d| d.samples())
        .collect();
    if labelled.is_empty() {
        return Err(Error::Config("no labelled samples to batch".into()));
    }
    if per_batch_unlabelled > 0 && unlabelled.is_empty() {
        return Err(Error::Config(
            "batches request unlabelled samples but no unlabelled dataset was given".into(),
        ));
    }

    let mut rng = seed::rng(seed, &[0xba7c]);
    let mut order: Vec<usize> = (0..labelled.len()).collect();
    order.shuffle(&mut rng);

    let mut cycle: Vec<usize> = Vec::new();
    let mut next_unlabelled = |rng: &mut rand_chacha::ChaCha8Rng| {
        if cycle.is_empty() {
            cycle = (0..unlabelled.len()).collect();
            cycle.shuffle(rng);
            cycle.reverse();
        }
        cycle.pop().expect("refilled above")
    };

    let mut batches = Vec::new();
    for chunk in order.chunks(per_batch_labelled) {
        let mut samples: Vec<Sample> = chunk.iter().map(|&i| labelled[i].clone()).collect();
        let extra = if chunk.len() == per_batch_labelled {
            per_batch_unlabelled
        } else {
            (chunk.len() as f64 * per_batch_unlabelled as f64 / per_batch_labelled as f64).round() as usize
        };
        for _ in 0..extra {
            samples.push(unlabelled[next_unlabelled(&mut rng)].clone());
        }
        batches.push(Batch { samples });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_generate;

    fn corpus() -> Vec<Dataset> {
        let c = synth_generate(3, 4, (8, 8), 6).unwrap();
        vec![c.a, c.b, c.c]
    }

    #[test]
    fn half_labelled_batches() {
        let batches = make_batches(&corpus(), 4, 0.5, 1).unwrap();
        assert_eq!(batches.len(), 4);
        for b in &batches {
            assert_eq!(b.len(), 4);
            assert_eq!(b.labelled_count(), 2);
            assert!(b.samples[..2].iter().all(Sample::is_labelled));
        }
    }

    #[test]
    fn full_fraction_is_purely_labelled() {
        let batches = make_batches(&corpus()[..2], 4, 1.0, 1).unwrap();
        assert!(batches.iter().all(|b| b.labelled_count() == b.len()));
        let total: usize = batches.iter().map(Batch::len).sum();
        assert_eq!(total, 8);
    }

    #[test]
    fn every_labelled_sample_once_per_epoch() {
        let batches = make_batches(&corpus(), 3, 0.67, 8).unwrap();
        let mut ids: Vec<&str> = batches
            .iter()
            .flat_map(|b| b.samples.iter().filter(|s| s.is_labelled()).map(|s| s.id.as_str()))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 8);
    }

    #[test]
    fn same_seed_same_stream() {
        let d = corpus();
        let a: Vec<Vec<String>> = make_batches(&d, 4, 0.5, 42)
            .unwrap()
            .iter()
            .map(|b| b.ids().iter().map(|s| s.to_string()).collect())
            .collect();
        let b: Vec<Vec<String>> = make_batches(&d, 4, 0.5, 42)
            .unwrap()
            .iter()
            .map(|b| b.ids().iter().map(|s| s.to_string()).collect())
            .collect();
        assert_eq!(a, b);
        let c = make_batches(&d, 4, 0.5, 43).unwrap();
        assert_ne!(a[0], c[0].ids());
    }

    #[test]
    fn missing_unlabelled_pool_is_a_config_error() {
        let d = corpus();
        assert!(matches!(make_batches(&d[..2], 4, 0.5, 0), Err(Error::Config(_))));
        assert!(matches!(make_batches(&d, 4, 0.0, 0), Err(Error::Config(_))));
    }
}
