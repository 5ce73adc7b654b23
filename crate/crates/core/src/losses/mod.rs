//! Smooth surrogate of `1 − H-AP`, the proxy clustering loss, and their
//! combination, each with exact analytic gradients.
//!
//! The surrogate splits both ranks of every positive `k` by relevance:
//! candidates strictly more relevant than `k` enter the H-rank through a
//! piecewise-linear lower bound of the step function, candidates strictly
//! less relevant (negatives included) enter the rank through a sigmoid-based
//! upper bound. The remaining comparisons use the exact step and carry no
//! gradient. The result is an upper bound of the true loss.

mod clustering;
mod cosine;
mod heaviside;
mod objective;
mod surrogate;

pub use clustering::{clustering_loss, ProxyBank};
pub use cosine::{cosine_scores, CosineHead};
pub use heaviside::{heaviside_lower, heaviside_upper, SmoothHeavisideParams};
pub use objective::{happier_loss, BatchGradients, BatchLabels, HappierConfig};
pub use surrogate::{hap_surrogate, hap_surrogate_parts};

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::taxonomy::TaxonomyError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("no positive candidate")]
    NoPositives,
    #[error("class {class} outside proxy bank of {count}")]
    UnknownClass { class: usize, count: usize },
    #[error("embedding {0} has zero norm")]
    ZeroVector(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Relevance(#[from] TaxonomyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Loss value and its gradients.
///
/// Surrogate losses fill `d_scores`; the clustering loss fills
/// `d_embedding` and `d_proxies`. Unused fields are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossGradients {
    pub value: f64,
    pub d_scores: Vec<f64>,
    pub d_embedding: Vec<f64>,
    pub d_proxies: Vec<Vec<f64>>,
}
