//! Desk-scale laboratory for studying neural collapse under label bias.
//!
//! The crate trains small MLP classifiers on synthetic subgroup-structured
//! data, optionally injects under-diagnosis label bias (positive samples of a
//! target group relabeled negative), tracks neural-collapse metrics per epoch
//! and per subgroup, probes learned features for residual group information,
//! and compares clean and biased training arms with rank statistics.

pub mod collapse;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod nnet;
pub mod probes;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
