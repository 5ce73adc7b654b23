//! Seeded synthetic hierarchical datasets.
//!
//! Each tree node gets a center: children sit at their parent's center plus
//! an isotropic Gaussian offset scaled by the level's spread. Instances are
//! drawn around leaf centers. A seeded quarter of the leaf classes is held
//! out entirely so evaluation runs on classes never seen in training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("need at least 4 leaf classes for an open-set split, got {0}")]
    TooFewLeaves(usize),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Children per node at each level, coarsest first.
    pub branching: Vec<usize>,
    pub per_leaf: usize,
    pub dim: usize,
    /// Center offset scale per level; strictly decreasing.
    pub level_spread: Vec<f64>,
    /// Spread of instances around their leaf center.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Spreads `1 + (L-1)/2, ..., 1.5, 1` and instance noise 1.5: coarse
    /// groups overlap enough that ignoring them during training costs
    /// coarse-level retrieval quality.
    pub fn new(branching: Vec<usize>, per_leaf: usize, dim: usize, seed: u64) -> Self {
        let depth = branching.len();
        let level_spread = (0..depth).map(|l| 1.0 + 0.5 * (depth - 1 - l) as f64).collect();
        Self { branching, per_leaf, dim, level_spread, noise: 1.5, seed }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.branching.is_empty() || self.branching.contains(&0) {
            return bad("branching factors must be at least 1");
        }
        if self.per_leaf == 0 || self.dim == 0 {
            return bad("per_leaf and dim must be at least 1");
        }
        if self.level_spread.len() != self.branching.len() {
            return bad("one spread per level is required");
        }
        if self.level_spread.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("spreads must be positive");
        }
        if self.level_spread.windows(2).any(|w| w[1] >= w[0]) {
            return bad("spreads must be strictly decreasing");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        let leaves: usize = self.branching.iter().product();
        if leaves < 4 {
            return Err(SynthError::TooFewLeaves(leaves));
        }
        Ok(())
    }
}

/// Generated taxonomy, features and open-set split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub taxonomy: Taxonomy,
    /// One row per instance, aligned with `taxonomy.ids()`.
    pub features: Vec<Vec<f64>>,
    /// Held-out leaf labels, sorted.
    pub holdout_leaves: Vec<String>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws a dataset from `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // breadth-first over levels: (name, center)
    let mut frontier: Vec<(Vec<String>, Vec<f64>)> = vec![(Vec::new(), vec![0.0; spec.dim])];
    for (level, &b) in spec.branching.iter().enumerate() {
        let mut next = Vec::with_capacity(frontier.len() * b);
        for (path, center) in &frontier {
            for c in 0..b {
                let name = match path.last() {
                    Some(parent) => format!("{parent}-{c}"),
                    None => format!("c{c}"),
                };
                let offset = gaussian(&mut rng, spec.dim, spec.level_spread[level]);
                let child: Vec<f64> = center.iter().zip(&offset).map(|(a, o)| a + o).collect();
                let mut child_path = path.clone();
                child_path.push(name);
                next.push((child_path, child));
            }
        }
        frontier = next;
    }

    let mut entries = Vec::with_capacity(frontier.len() * spec.per_leaf);
    let mut features = Vec::with_capacity(entries.capacity());
    for (path, center) in &frontier {
        for _ in 0..spec.per_leaf {
            let id = format!("x{:05}", entries.len());
            let noise = gaussian(&mut rng, spec.dim, spec.noise);
            features.push(center.iter().zip(&noise).map(|(a, o)| a + o).collect());
            entries.push((id, path.clone()));
        }
    }
    let taxonomy = Taxonomy::from_entries(entries)?;

    let mut leaves: Vec<String> = frontier.iter().map(|(p, _)| p.last().unwrap().clone()).collect();
    leaves.shuffle(&mut rng);
    let holdout_count = ((leaves.len() as f64) * 0.25).round().max(1.0) as usize;
    let mut holdout_leaves = leaves[..holdout_count].to_vec();
    holdout_leaves.sort();

    Ok(SynthDataset { taxonomy, features, holdout_leaves })
}
