use serde::{Deserialize, Serialize};

use crate::taxonomy::{RelevancePartition, RelevanceProfile, TaxonomyError};

use super::clustering::{clustering_loss, ProxyBank};
use super::cosine::CosineHead;
use super::heaviside::SmoothHeavisideParams;
use super::surrogate::hap_surrogate_parts;
use super::{LossError, Result};

/// Weighting and shape of the combined objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HappierConfig {
    /// Weight of the clustering term, in `[0, 1]`.
    pub lambda: f64,
    pub heaviside: SmoothHeavisideParams,
    pub relevance: RelevanceProfile,
}

impl Default for HappierConfig {
    fn default() -> Self {
        Self { lambda: 0.1, heaviside: SmoothHeavisideParams::default(), relevance: RelevanceProfile::default() }
    }
}

impl HappierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LossError::InvalidParams(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        self.heaviside.validate()?;
        self.relevance.validate(None)?;
        Ok(())
    }
}

/// Labels of the batch elements: interned label path (coarsest first) and
/// proxy class index.
#[derive(Debug, Clone, Copy)]
pub struct BatchLabels<'a> {
    pub paths: &'a [&'a [u32]],
    pub classes: &'a [usize],
}

impl BatchLabels<'_> {
    fn level(&self, a: usize, b: usize) -> usize {
        self.paths[a].iter().zip(self.paths[b]).take_while(|(x, y)| x == y).count()
    }
}

/// Combined batch loss with gradients on raw embeddings and proxies.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub value: f64,
    /// Mean surrogate over the queries that had positives.
    pub surrogate: f64,
    /// Mean clustering loss over all elements.
    pub clustering: f64,
    pub d_embeddings: Vec<Vec<f64>>,
    pub d_proxies: Vec<Vec<f64>>,
    /// Queries without any in-batch positive.
    pub skipped: usize,
}

/// `(1 − λ) · mean surrogate + λ · mean clustering loss` over a batch in
/// which every element queries all the others.
pub fn happier_loss(
    embeddings: &[Vec<f64>],
    labels: BatchLabels<'_>,
    bank: &ProxyBank,
    cfg: &HappierConfig,
) -> Result<BatchGradients> {
    cfg.validate()?;
    let b = embeddings.len();
    if labels.paths.len() != b || labels.classes.len() != b {
        return Err(LossError::ShapeMismatch("labels and embeddings differ in length".into()));
    }
    let depth = labels.paths.first().map_or(0, |p| p.len());
    if depth == 0 || labels.paths.iter().any(|p| p.len() != depth) {
        return Err(LossError::ShapeMismatch("label paths must share a nonzero depth".into()));
    }
    let head = CosineHead::new(embeddings)?;
    let dim = bank.dim();
    if head.unit.iter().any(|v| v.len() != dim) {
        return Err(LossError::ShapeMismatch(format!("embeddings must have dim {dim}")));
    }

    let lambda = cfg.lambda;
    let mut d_unit = vec![vec![0.0; dim]; b];
    let mut d_proxies = vec![vec![0.0; dim]; bank.len()];

    let mut surrogate_sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut query_grads = Vec::new();
    if lambda < 1.0 {
        for q in 0..b {
            let levels: Vec<usize> = (0..b).filter(|&j| j != q).map(|j| labels.level(q, j)).collect();
            let part = RelevancePartition::from_levels(q.to_string(), depth, levels);
            if !part.has_positives() {
                skipped += 1;
                continue;
            }
            let part = match part.assign_relevance(&cfg.relevance) {
                Ok(p) => p,
                Err(TaxonomyError::EmptyLevelDivision { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let scores = head.scores(q);
            let g = match hap_surrogate_parts(&scores, &part.levels, part.relevance.as_ref().unwrap(), &cfg.heaviside) {
                Ok(g) => g,
                // positives whose relevance is all zero behave as negatives
                Err(LossError::NoPositives) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            surrogate_sum += g.value;
            used += 1;
            query_grads.push((q, g.d_scores));
        }
    } else {
        skipped = b;
    }
    let surrogate = if used > 0 { surrogate_sum / used as f64 } else { 0.0 };
    if used > 0 {
        let scale = (1.0 - lambda) / used as f64;
        for (q, mut d) in query_grads {
            d.iter_mut().for_each(|x| *x *= scale);
            head.accumulate_scores(q, &d, &mut d_unit);
        }
    }

    let mut clustering_sum = 0.0;
    if lambda > 0.0 {
        let scale = lambda / b as f64;
        for i in 0..b {
            let g = clustering_loss(&head.unit[i], labels.classes[i], bank)?;
            clustering_sum += g.value;
            for (d, x) in d_unit[i].iter_mut().zip(&g.d_embedding) {
                *d += scale * x;
            }
            for (dp, gp) in d_proxies.iter_mut().zip(&g.d_proxies) {
                for (d, x) in dp.iter_mut().zip(gp) {
                    *d += scale * x;
                }
            }
        }
    }
    let clustering = if b > 0 { clustering_sum / b as f64 } else { 0.0 };

    let value = if lambda == 0.0 {
        surrogate
    } else if lambda == 1.0 {
        clustering
    } else {
        (1.0 - lambda) * surrogate + lambda * clustering
    };
    Ok(BatchGradients {
        value,
        surrogate,
        clustering,
        d_embeddings: head.backward(&d_unit),
        d_proxies,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::hap_surrogate_parts;

    fn toy() -> (Vec<Vec<f64>>, Vec<Vec<u32>>, Vec<usize>, ProxyBank) {
        let emb = vec![
            vec![1.0, 0.1, 0.0],
            vec![0.9, 0.3, 0.1],
            vec![0.1, 1.0, 0.2],
            vec![0.0, 0.8, 0.5],
            vec![-0.5, 0.1, 1.0],
        ];
        let paths = vec![vec![0, 0], vec![0, 0], vec![0, 1], vec![0, 1], vec![1, 2]];
        let classes = vec![0, 0, 1, 1, 2];
        let bank = ProxyBank::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], 0.1).unwrap();
        (emb, paths, classes, bank)
    }

    #[test]
    fn lambda_endpoints() {
        let (emb, paths, classes, bank) = toy();
        let refs: Vec<&[u32]> = paths.iter().map(Vec::as_slice).collect();
        let labels = BatchLabels { paths: &refs, classes: &classes };

        let cfg0 = HappierConfig { lambda: 0.0, ..Default::default() };
        let g0 = happier_loss(&emb, labels, &bank, &cfg0).unwrap();
        // recompute the mean surrogate directly
        let head = CosineHead::new(&emb).unwrap();
        let mut sum = 0.0;
        let mut used = 0;
        for q in 0..emb.len() {
            let levels: Vec<usize> = (0..emb.len()).filter(|&j| j != q).map(|j| labels.level(q, j)).collect();
            let part = RelevancePartition::from_levels("q", 2, levels);
            if !part.has_positives() {
                continue;
            }
            let part = part.assign_relevance(&cfg0.relevance).unwrap();
            let g = hap_surrogate_parts(&head.scores(q), &part.levels, part.relevance.as_ref().unwrap(), &cfg0.heaviside)
                .unwrap();
            sum += g.value;
            used += 1;
        }
        assert_eq!(g0.value, sum / used as f64);
        assert_eq!(g0.skipped, 1);
        assert!(g0.d_proxies.iter().flatten().all(|&d| d == 0.0));

        let cfg1 = HappierConfig { lambda: 1.0, ..Default::default() };
        let g1 = happier_loss(&emb, labels, &bank, &cfg1).unwrap();
        let mean: f64 = (0..emb.len())
            .map(|i| clustering_loss(&head.unit[i], classes[i], &bank).unwrap().value)
            .sum::<f64>()
            / emb.len() as f64;
        assert_eq!(g1.value, mean);
    }

    #[test]
    fn lambda_out_of_range() {
        let (emb, paths, classes, bank) = toy();
        let refs: Vec<&[u32]> = paths.iter().map(Vec::as_slice).collect();
        let cfg = HappierConfig { lambda: 1.5, ..Default::default() };
        let err = happier_loss(&emb, BatchLabels { paths: &refs, classes: &classes }, &bank, &cfg);
        assert!(matches!(err, Err(LossError::InvalidParams(_))));
    }
}
