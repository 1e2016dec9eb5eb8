use std::collections::BTreeMap;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::log::{EpochRecord, StepRecord, TrainLog};
use crate::data::{augment, make_batches, Batch, Dataset, MaskIndexed, Sample, IGNORE};
use crate::error::{Error, Result};
use crate::loss::{cross_entropy_pixelwise, total_loss, LossBreakdown};
use crate::metrics::{compute_report, ConfusionMatrix, MetricsReport};
use crate::model::{forward, predict_mask, ArchConfig, ModelParams};
use crate::seed;
use crate::tensor::{Graph, Tensor};

const SEED_BATCHES: u64 = 0xba7c;
const SEED_AUGMENT: u64 = 0xa06;
const EVAL_CHUNK: usize = 16;
const PREFETCH: usize = 2;

/// Parameter gradients by name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

/// Stacked images, per-sample masks (`None` when unlabelled) and domain indices.
pub fn batch_inputs(samples: &[Sample]) -> Result<(Tensor, Vec<Option<MaskIndexed>>, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    let x = Tensor::stack(&images)?;
    let truth = samples.iter().map(|s| s.mask.clone()).collect();
    let domains = samples.iter().map(|s| s.domain.index()).collect();
    Ok((x, truth, domains))
}

/// Loss breakdown and parameter gradients for one batch.
pub fn compute_gradients(params: &ModelParams, batch: &Batch, config: &TrainConfig) -> Result<(LossBreakdown, Gradients)> {
    let (x, truth, domains) = batch_inputs(&batch.samples)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let xv = g.constant(x);
    let out = forward(&mut g, &params.arch, &bound, xv, config.domain_loss_mode.encoder_grad_scale())?;
    let (loss, breakdown) = total_loss(&mut g, &out, &truth, &domains, &config.loss_config())?;
    if let Some((term, value)) = breakdown.non_finite_term() {
        return Err(Error::NonFinite { term, value });
    }
    g.backward(loss)?;
    let grads = bound
        .iter()
        .map(|(name, v)| {
            let grad = g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec);
            (name.to_string(), grad)
        })
        .collect();
    Ok((breakdown, grads))
}

/// Forward, loss, backward and one optimizer update. The returned breakdown
/// is the loss before the update. A non-finite term aborts without touching
/// the parameters.
pub fn train_step(
    params: &mut ModelParams,
    batch: &Batch,
    config: &TrainConfig,
    opt: &mut super::optim::OptimizerState,
) -> Result<LossBreakdown> {
    let (breakdown, grads) = compute_gradients(params, batch, config)?;
    opt.apply(params, &grads, config)?;
    Ok(breakdown)
}

/// Splits off `ceil(fraction * n)` samples with the smallest seeded hash of
/// their id. Membership depends only on the ids, not on sample order.
pub fn split_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let n = dataset.len();
    let take = ((fraction * n as f64).ceil() as usize).min(n);
    let mut keyed: Vec<(u64, &str)> = dataset
        .samples()
        .iter()
        .map(|s| (seed::hash_str(seed, &s.id), s.id.as_str()))
        .collect();
    keyed.sort_unstable();
    let held: std::collections::BTreeSet<&str> = keyed[..take].iter().map(|(_, id)| *id).collect();
    let train = dataset.subset(|s| !held.contains(s.id.as_str()));
    let holdout = dataset.subset(|s| held.contains(s.id.as_str()));
    (train, holdout)
}

/// Predicted masks and domain indices, in sample order.
pub fn predict_samples(params: &ModelParams, samples: &[Sample]) -> Result<(Vec<MaskIndexed>, Vec<usize>)> {
    let mut masks = Vec::with_capacity(samples.len());
    let mut domains = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let (x, _, _) = batch_inputs(chunk)?;
        let pred = params.infer(&x)?;
        masks.extend(predict_mask(&pred.seg_logits)?);
        let [n, m] = pred.domain_logits.dims2()?;
        let d = pred.domain_logits.data();
        for s in 0..n {
            let row = &d[s * m..][..m];
            let best = (0..m).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            domains.push(best);
        }
    }
    Ok((masks, domains))
}

/// Segmentation scores of `params` on the labelled samples of `datasets`.
pub fn evaluate_segmentation(
    params: &ModelParams,
    datasets: &[&Dataset],
    exclude_class: Option<usize>,
) -> Result<MetricsReport> {
    let samples: Vec<Sample> = datasets
        .iter()
        .flat_map(|d| d.samples())
        .filter(|s| s.is_labelled())
        .cloned()
        .collect();
    if samples.is_empty() {
        return Err(Error::Contract("evaluation needs labelled samples".into()));
    }
    let (pred, _) = predict_samples(params, &samples)?;
    let mut cm = ConfusionMatrix::new(params.arch.num_classes)?;
    for (p, s) in pred.iter().zip(&samples) {
        cm.accumulate(p, s.mask.as_ref().expect("filtered to labelled"))?;
    }
    compute_report(&cm, exclude_class)
}

/// Share of `samples` whose domain-head argmax equals their tag.
pub fn domain_accuracy(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("domain accuracy needs samples".into()));
    }
    let (_, pred) = predict_samples(params, samples)?;
    let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.domain.index()).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Pixel-weighted mean cross-entropy over the labelled samples, without augmentation.
pub fn mean_cross_entropy(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    let labelled: Vec<Sample> = samples.iter().filter(|s| s.is_labelled()).cloned().collect();
    if labelled.is_empty() {
        return Err(Error::Contract("cross-entropy needs labelled samples".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in labelled.chunks(EVAL_CHUNK) {
        let (x, truth, _) = batch_inputs(chunk)?;
        let masks: Vec<MaskIndexed> = truth.into_iter().map(|m| m.expect("labelled")).collect();
        let pixels: usize = masks.iter().map(|m| m.values().iter().filter(|&&v| v != IGNORE).count()).sum();
        let logits = params.infer(&x)?.seg_logits;
        let mut g = Graph::new();
        let lv = g.constant(logits);
        let ce = cross_entropy_pixelwise(&mut g, lv, &masks, Some(IGNORE))?;
        sum += g.value(ce).item()? * pixels as f64;
        count += pixels;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

fn prepare_batch(batch: &Batch, config: &TrainConfig, epoch: usize, index: usize) -> Result<Batch> {
    if config.augment.is_none() {
        return Ok(batch.clone());
    }
    let samples = batch
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sd = seed::derive(config.seed, &[SEED_AUGMENT, epoch as u64, index as u64, i as u64]);
            augment(s, sd, &config.augment)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { samples })
}

fn check_datasets(datasets: &[Dataset], arch: &ArchConfig) -> Result<()> {
    if !datasets.iter().any(Dataset::is_labelled) {
        return Err(Error::Config("training needs at least one labelled dataset".into()));
    }
    for d in datasets {
        if d.tag().index() >= arch.num_domains {
            return Err(Error::Config(format!(
                "dataset {} has domain {} but the network has {} domain outputs",
                d.name(),
                d.tag(),
                arch.num_domains
            )));
        }
        if d.legend().len() != arch.num_classes {
            return Err(Error::Config(format!(
                "dataset {} has {} classes, network has {}",
                d.name(),
                d.legend().len(),
                arch.num_classes
            )));
        }
    }
    Ok(())
}

/// Trains a fresh network for `config.epochs` epochs.
pub fn train_loop(datasets: &[Dataset], arch: &ArchConfig, config: &TrainConfig) -> Result<(Checkpoint, TrainLog)> {
    continue_training(datasets, Checkpoint::fresh(arch, config)?, config.epochs)
}

/// Runs epochs `checkpoint.epoch .. total_epochs`. Every random choice is
/// derived from the configured seed and the epoch index, so an interrupted
/// run resumed from its checkpoint matches an uninterrupted one exactly.
///
/// The returned log holds the full step history and the epoch records of
/// the epochs run by this call.
pub fn continue_training(datasets: &[Dataset], mut cp: Checkpoint, total_epochs: usize) -> Result<(Checkpoint, TrainLog)> {
    cp.config.epochs = total_epochs;
    let config = cp.config.clone();
    config.validate()?;
    check_datasets(datasets, &cp.params.arch)?;

    let mut train_sets = Vec::with_capacity(datasets.len());
    let mut heldout_labelled = Vec::new();
    let mut heldout_all: Vec<Sample> = Vec::new();
    for d in datasets {
        let (train, held) = split_holdout(d, config.holdout_fraction, config.seed);
        heldout_all.extend(held.samples().iter().cloned());
        if held.is_labelled() && !held.is_empty() {
            heldout_labelled.push(held);
        }
        train_sets.push(train);
    }
    if heldout_labelled.is_empty() {
        return Err(Error::Config("held-out split has no labelled samples".into()));
    }
    let heldout_refs: Vec<&Dataset> = heldout_labelled.iter().collect();

    let mut log = TrainLog {
        steps: cp.history.clone(),
        epochs: Vec::new(),
    };
    for epoch in cp.epoch..total_epochs {
        let batches = make_batches(
            &train_sets,
            config.batch_size,
            config.labelled_fraction,
            seed::derive(config.seed, &[SEED_BATCHES, epoch as u64]),
        )?;
        let mut sums = [0.0; 4];
        // A worker augments batches ahead of the optimizer through a bounded
        // channel; seeds depend only on indices, so results match a serial run.
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = std::sync::mpsc::sync_channel::<Result<Batch>>(PREFETCH);
            let batches = &batches;
            let config = &config;
            scope.spawn(move || {
                for (b, batch) in batches.iter().enumerate() {
                    if tx.send(prepare_batch(batch, config, epoch, b)).is_err() {
                        break;
                    }
                }
            });
            for batch in rx.iter() {
                let loss = train_step(&mut cp.params, &batch?, config, &mut cp.optimizer)?;
                for (acc, v) in sums.iter_mut().zip([loss.l0, loss.l1, loss.l2, loss.total]) {
                    *acc += v;
                }
                let rec = StepRecord {
                    epoch,
                    step: log.steps.len(),
                    loss,
                };
                log.steps.push(rec);
                cp.history.push(rec);
            }
            Ok(())
        })?;
        let n = batches.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            mean_l0: sums[0] / n,
            mean_l1: sums[1] / n,
            mean_l2: sums[2] / n,
            mean_total: sums[3] / n,
            heldout: evaluate_segmentation(&cp.params, &heldout_refs, None)?,
            domain_accuracy: domain_accuracy(&cp.params, &heldout_all)?,
        });
        cp.epoch = epoch + 1;
    }
    Ok((cp, log))
}
