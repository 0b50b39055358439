//! Numerical laboratory for the stability of saliency explanations under
//! adversarial attacks: small feed-forward classifiers (deterministic and
//! Bayesian), ε-rule relevance heatmaps, FGSM/PGD perturbations, Top-k
//! explanation-robustness metrics, and a reproducible experiment harness.

pub mod attack;
pub mod bayes;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod lrp;
pub mod manifold;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
