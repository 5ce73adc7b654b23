//! Hierarchical average precision toolkit.
//!
//! - [`taxonomy`]: label trees, per-query level partitions and relevance.
//! - [`metrics`]: exact H-AP, per-level AP, ASI, NDCG, R@k and the
//!   hierarchical precision-recall form of H-AP.
//! - [`losses`]: the smooth H-AP surrogate, the proxy clustering loss and
//!   their weighted combination, with analytic gradients.
//! - [`trainer`]: class-balanced stochastic training of embedding tables or
//!   linear maps under the combined objective.
//! - [`synthgen`]: seeded hierarchical Gaussian mixtures.
//! - [`gradcheck`]: finite-difference verification of every gradient.
//! - [`io`] and [`cli`]: file formats and the `hap` command line.

pub mod cli;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synthgen;
pub mod taxonomy;
pub mod trainer;
