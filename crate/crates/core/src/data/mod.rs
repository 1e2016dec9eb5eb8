//! Datasets, masks, color legends, augmentation, batching and the synthetic
//! domain-shift generator.

pub mod augment;
pub mod batch;
mod domain;
pub mod io;
mod legend;
mod mask;
mod sample;
pub mod synth;

pub use augment::{augment, AugmentPolicy};
pub use batch::{make_batches, Batch};
pub use domain::DomainTag;
pub use legend::{ColorLegend, DEFAULT_TOLERANCE};
pub use mask::{MaskIndexed, IGNORE};
pub use sample::{Dataset, HiddenTruth, Sample};
pub use synth::{synth_generate, SynthCorpus};
