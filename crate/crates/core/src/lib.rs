//! Progressive semantic-visual mutual adaption for generalized zero-shot
//! learning, built on a small reverse-mode autodiff tape.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod dsvtm;
pub mod error;
pub mod evaluator;
pub mod gradprobe;
pub mod head_loss;
pub mod io;
pub mod model;
pub mod nn;
pub mod numcore;
pub mod trainer;

pub use error::{Error, Result};
