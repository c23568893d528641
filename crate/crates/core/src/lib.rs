//! Degradation synthesis, tag-similarity severity scoring, and a conditional
//! state-space super-resolution network, all on the CPU in f64.

pub mod error;
pub mod evalkit;
pub mod fixtures;
pub mod gradsuite;
pub mod imgproc;
pub mod nn;
pub mod ree;
pub mod rng;
pub mod srnet;
pub mod ssm;
pub mod tagging;
pub mod training;

pub use error::{Error, Result};
pub use imgproc::{DegradationSpec, DegradationStep, ImageTensor};
