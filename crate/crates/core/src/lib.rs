// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Detection of exhalation events in exercise audio and estimation of dynamic
//! respiratory rates.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod sp;
pub mod synth;
pub mod tcn;

pub use error::{Error, Result};
