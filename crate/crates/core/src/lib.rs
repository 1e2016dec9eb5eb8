//! Two-headed semantic segmentation trained with a cross-entropy, Dice and
//! domain-misalignment objective over mixed labelled and unlabelled data,
//! plus supervised metrics and the label-free SPIE score.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod par;
pub mod seed;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{Graph, Tensor, Var};
