//! Online similarity matching of image-transformation generators.
//!
//! Stimulus streams of shifted or rotated frames are turned into outer-product
//! features and fed to a Hebbian/anti-Hebbian learner whose weight rows, once
//! reshaped, approximate the generator of the transformation. PCA and K-means
//! oracles, a cartoon motion detector with its Hassenstein–Reichardt
//! equivalent, and a small experiment harness sit alongside.

pub mod baselines;
pub mod detector;
pub mod error;
pub mod features;
pub mod generators;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod parallel;
pub mod preprocess;
pub mod stimuli;

pub use error::{Error, Result};
pub use parallel::Execution;
