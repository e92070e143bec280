//! Counterfactual sample synthesis and training for toy visual question
//! answering models.
//!
//! The crate bundles a small reverse-mode autodiff engine, a synthetic
//! benchmark whose train and test answer priors differ per question type,
//! an attention-based VQA model with an optional question-only branch,
//! gradient-based counterfactual synthesis over objects and words,
//! contrastive training on top of it, and the diagnostic metrics used to
//! compare trained models.

pub mod autodiff;
pub mod css;
pub mod cst;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;

pub use autodiff::{Graph, Tensor, Var};
pub use css::{CounterfactualSample, CssConfig, CfKind};
pub use cst::{CrMode, TrainConfig, Trainer};
pub use dataset::{BenchmarkConfig, Sample, VocabSpec};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use model::{FusionMode, ModelParams};
