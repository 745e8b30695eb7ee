//! Spinal cord gray/white matter segmentation with multi-dimensional gated
//! recurrent units, trained with cross-entropy plus (generalized) Dice losses.

pub mod augment;
pub mod error;
pub mod losses;
pub mod mdgru;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
