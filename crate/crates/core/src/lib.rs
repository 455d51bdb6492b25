//! Counterfactual-fairness laboratory: a causal prior over biased/fair
//! dataset pairs, a hand-crafted benchmark of causal case studies, an
//! in-context transformer trained to predict fair outcomes, fairness metrics,
//! baselines, real-world additive-noise models and the evaluation harness.

pub mod baselines;
pub mod casebench;
pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod prior;
pub mod realworld;
pub mod rng;

pub use data::{Dataset, DatasetMeta, Mode};
pub use error::{Error, Result};
pub use exec::ExecMode;
