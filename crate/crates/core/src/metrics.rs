//! Exact ranking metrics over graded relevance.
//!
//! Everything here works on a [`ScoredRanking`]: one query, its candidates'
//! similarity scores, levels and relevance values. Metrics defined through
//! the Heaviside step use `H(0) = 0`, so tied scores never count as an
//! inversion. Metrics defined on list positions (ASI, R@k, H-P@k) order
//! candidates by descending score and break ties by ascending candidate id.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::taxonomy::RelevancePartition;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("candidate index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("query `{0}` has no positive candidate")]
    NoPositives(String),
    #[error("candidate {0} is a negative")]
    NegativeQuery(usize),
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
    #[error("no query has a positive candidate")]
    AllQueriesEmpty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// One query's candidates with scores, levels and relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRanking {
    pub query_id: String,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub relevance: Vec<f64>,
    pub levels: Vec<usize>,
    pub depth: usize,
}

impl ScoredRanking {
    pub fn new(
        query_id: impl Into<String>,
        ids: Vec<String>,
        scores: Vec<f64>,
        levels: Vec<usize>,
        relevance: Vec<f64>,
        depth: usize,
    ) -> Result<Self> {
        let r = Self { query_id: query_id.into(), ids, scores, relevance, levels, depth };
        r.validate()?;
        Ok(r)
    }

    /// Ranking with generated, zero-padded candidate ids (so id order is
    /// index order).
    pub fn from_parts(scores: Vec<f64>, levels: Vec<usize>, relevance: Vec<f64>, depth: usize) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| format!("{i:06}")).collect();
        Self::new("q", ids, scores, levels, relevance, depth)
    }

    /// Joins scores with an assigned partition.
    pub fn from_partition(part: &RelevancePartition, ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        let relevance = part
            .relevance
            .clone()
            .ok_or_else(|| MetricsError::InvalidRanking("relevance not assigned".into()))?;
        Self::new(part.query.clone(), ids, scores, part.levels.clone(), relevance, part.depth)
    }

    fn validate(&self) -> Result<()> {
        let n = self.scores.len();
        let bad = |m: &str| Err(MetricsError::InvalidRanking(m.to_string()));
        if n == 0 {
            return bad("no candidates");
        }
        if self.ids.len() != n || self.relevance.len() != n || self.levels.len() != n {
            return bad("array lengths differ");
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return bad("non-finite score");
        }
        for (&l, &r) in self.levels.iter().zip(&self.relevance) {
            if l > self.depth {
                return bad("level exceeds depth");
            }
            if !(r.is_finite() && r >= 0.0) {
                return bad("relevance must be finite and non-negative");
            }
            if l == 0 && r != 0.0 {
                return bad("negative candidate with nonzero relevance");
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_positive(&self, k: usize) -> bool {
        self.levels[k] >= 1
    }

    fn positive_mass(&self) -> f64 {
        self.relevance.iter().sum()
    }

    fn require_positives(&self) -> Result<f64> {
        let mass = self.positive_mass();
        if mass > 0.0 {
            Ok(mass)
        } else {
            Err(MetricsError::NoPositives(self.query_id.clone()))
        }
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k < self.len() {
            Ok(())
        } else {
            Err(MetricsError::IndexOutOfRange { index: k, len: self.len() })
        }
    }

    /// Candidate indices by descending score, ties by ascending id.
    pub fn list_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order
    }

    /// `rank(k)` for every candidate: one plus the number of strictly
    /// higher scores.
    fn ranks(&self) -> Vec<usize> {
        let mut sorted = self.scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        self.scores
            .iter()
            .map(|&s| 1 + sorted.partition_point(|&x| x > s))
            .collect()
    }
}

fn heaviside(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `1 + Σ_{j≠k, restrict(j)} H(s_j − s_k)`.
pub fn rank_of(r: &ScoredRanking, k: usize, restrict: impl Fn(usize) -> bool) -> Result<f64> {
    r.check_index(k)?;
    let sk = r.scores[k];
    Ok(1.0
        + (0..r.len())
            .filter(|&j| j != k && restrict(j))
            .map(|j| heaviside(r.scores[j] - sk))
            .sum::<f64>())
}

/// Hierarchical rank of positive candidate `k`.
pub fn h_rank(r: &ScoredRanking, k: usize) -> Result<f64> {
    r.check_index(k)?;
    if !r.is_positive(k) {
        return Err(MetricsError::NegativeQuery(k));
    }
    let (sk, rk) = (r.scores[k], r.relevance[k]);
    let above: f64 = (0..r.len())
        .filter(|&j| j != k && r.is_positive(j))
        .map(|j| rk.min(r.relevance[j]) * heaviside(r.scores[j] - sk))
        .sum();
    Ok(rk + above)
}

/// Hierarchical average precision.
///
/// Positives are walked in descending score order while a running count of
/// already-seen positives per distinct relevance value is kept, so the
/// H-rank sums cost `O(P · V)` for `V` distinct relevance values.
pub fn h_ap(r: &ScoredRanking) -> Result<f64> {
    let mass = r.require_positives()?;
    let ranks = r.ranks();

    let mut values: Vec<f64> = (0..r.len()).filter(|&k| r.is_positive(k)).map(|k| r.relevance[k]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut seen = vec![0usize; values.len()];

    let mut positives: Vec<usize> = (0..r.len()).filter(|&k| r.is_positive(k)).collect();
    positives.sort_by(|&a, &b| r.scores[b].partial_cmp(&r.scores[a]).unwrap_or(Ordering::Equal));

    let mut total = 0.0;
    let mut start = 0;
    while start < positives.len() {
        let s = r.scores[positives[start]];
        let end = start + positives[start..].iter().take_while(|&&k| r.scores[k] == s).count();
        for &k in &positives[start..end] {
            let rk = r.relevance[k];
            let above: f64 = values.iter().zip(&seen).map(|(&v, &c)| rk.min(v) * c as f64).sum();
            total += (rk + above) / ranks[k] as f64;
        }
        for &k in &positives[start..end] {
            let slot = values.partition_point(|&v| v < r.relevance[k]);
            seen[slot] += 1;
        }
        start = end;
    }
    Ok(total / mass)
}

/// Binary AP with `{level ≥ l}` as the positive set.
pub fn ap_level(r: &ScoredRanking, l: usize) -> Result<f64> {
    if l == 0 || l > r.depth {
        return Err(MetricsError::InvalidRanking(format!("level {l} outside 1..={}", r.depth)));
    }
    let ranks = r.ranks();
    let mut pos: Vec<f64> = (0..r.len()).filter(|&k| r.levels[k] >= l).map(|k| r.scores[k]).collect();
    if pos.is_empty() {
        return Err(MetricsError::NoPositives(r.query_id.clone()));
    }
    pos.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let total: f64 = (0..r.len())
        .filter(|&k| r.levels[k] >= l)
        .map(|k| {
            let rank_pos = 1 + pos.partition_point(|&x| x > r.scores[k]);
            rank_pos as f64 / ranks[k] as f64
        })
        .sum();
    Ok(total / pos.len() as f64)
}

/// Hierarchical recall and precision at list position `k` (1-based).
///
/// H-P@k at a zero-relevance position is reported as 0.
pub fn h_pr_at_k(r: &ScoredRanking, k: usize) -> Result<(f64, f64)> {
    let mass = r.require_positives()?;
    if k == 0 || k > r.len() {
        return Err(MetricsError::IndexOutOfRange { index: k, len: r.len() });
    }
    let order = r.list_order();
    Ok(pr_at(r, &order, k, mass))
}

fn pr_at(r: &ScoredRanking, order: &[usize], k: usize, mass: f64) -> (f64, f64) {
    let head = &order[..k];
    let recall = head.iter().map(|&j| r.relevance[j]).sum::<f64>() / mass;
    let rk = r.relevance[order[k - 1]];
    let precision = if rk > 0.0 {
        head.iter().map(|&j| r.relevance[j].min(rk)).sum::<f64>() / (k as f64 * rk)
    } else {
        0.0
    };
    (recall, precision)
}

/// H-AP as the area under the hierarchical precision-recall curve.
///
/// Agrees with [`h_ap`] whenever scores are distinct.
pub fn h_ap_pr_oracle(r: &ScoredRanking) -> Result<f64> {
    let mass = r.require_positives()?;
    let order = r.list_order();
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for k in 1..=r.len() {
        let (recall, precision) = pr_at(r, &order, k, mass);
        if r.relevance[order[k - 1]] > 0.0 {
            area += (recall - prev_recall) * precision;
        }
        prev_recall = recall;
    }
    Ok(area)
}

/// Average set intersection between the predicted and ideal level lists
/// over the first `N` positions, `N` the number of positives.
pub fn asi(r: &ScoredRanking) -> Result<f64> {
    let n = (0..r.len()).filter(|&k| r.is_positive(k)).count();
    if n == 0 {
        return Err(MetricsError::NoPositives(r.query_id.clone()));
    }
    let order = r.list_order();
    let mut ideal: Vec<usize> = r.levels.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));

    let mut predicted_count = vec![0usize; r.depth + 1];
    let mut ideal_count = vec![0usize; r.depth + 1];
    let mut sum = 0.0;
    for i in 0..n {
        predicted_count[r.levels[order[i]]] += 1;
        ideal_count[ideal[i]] += 1;
        let common: usize = predicted_count.iter().zip(&ideal_count).map(|(a, b)| (*a).min(*b)).sum();
        sum += common as f64 / (i + 1) as f64;
    }
    Ok(sum / n as f64)
}

/// NDCG with gain `2^l − 1` and discount `log2(1 + rank(k))`.
pub fn ndcg(r: &ScoredRanking) -> Result<f64> {
    if !(0..r.len()).any(|k| r.is_positive(k)) {
        return Err(MetricsError::NoPositives(r.query_id.clone()));
    }
    let gain = |l: usize| 2f64.powi(l as i32) - 1.0;
    let ranks = r.ranks();
    let dcg: f64 = (0..r.len())
        .filter(|&k| r.is_positive(k))
        .map(|k| gain(r.levels[k]) / (1.0 + ranks[k] as f64).log2())
        .sum();
    let mut ideal = r.levels.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .enumerate()
        .map(|(i, &l)| gain(l) / (2.0 + i as f64).log2())
        .sum();
    // tied scores share the best rank and can push DCG past the ideal
    Ok((dcg / idcg).min(1.0))
}

/// 1 if any of the top-`k` list positions has level ≥ `level`.
pub fn recall_at_k(r: &ScoredRanking, k: usize, level: usize) -> Result<f64> {
    if !r.levels.iter().any(|&l| l >= level) {
        return Err(MetricsError::NoPositives(r.query_id.clone()));
    }
    if k == 0 {
        return Err(MetricsError::IndexOutOfRange { index: 0, len: r.len() });
    }
    let order = r.list_order();
    let hit = order.iter().take(k).any(|&j| r.levels[j] >= level);
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Metrics of one query. Per-level AP and R@k are `None` when the query
/// has no candidate at the required level.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub h_ap: f64,
    pub ap_level: Vec<Option<f64>>,
    pub asi: f64,
    pub ndcg: f64,
    /// Fine-level (`level = L`) recall, one entry per configured k.
    pub recall_at_k: Vec<Option<f64>>,
}

impl QueryMetrics {
    pub fn compute(r: &ScoredRanking, ks: &[usize]) -> Result<Self> {
        let h = h_ap(r)?;
        let ap_level = (1..=r.depth).map(|l| ap_level(r, l).ok()).collect();
        let recall = ks.iter().map(|&k| recall_at_k(r, k, r.depth).ok()).collect();
        Ok(Self {
            query_id: r.query_id.clone(),
            h_ap: h,
            ap_level,
            asi: asi(r)?,
            ndcg: ndcg(r)?,
            recall_at_k: recall,
        })
    }
}

/// Per-query metrics and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub depth: usize,
    pub ks: Vec<usize>,
    pub per_query: Vec<QueryMetrics>,
    pub excluded: usize,
    pub h_ap: f64,
    pub ap_level: Vec<Option<f64>>,
    pub asi: f64,
    pub ndcg: f64,
    pub recall_at_k: Vec<Option<f64>>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn queries(&self) -> usize {
        self.per_query.len()
    }

    fn from_queries(depth: usize, ks: &[usize], per_query: Vec<QueryMetrics>, excluded: usize) -> Result<Self> {
        if per_query.is_empty() {
            return Err(MetricsError::AllQueriesEmpty);
        }
        let ap_level = (0..depth).map(|l| mean(per_query.iter().filter_map(|q| q.ap_level[l]))).collect();
        let recall_at_k = (0..ks.len()).map(|i| mean(per_query.iter().filter_map(|q| q.recall_at_k[i]))).collect();
        Ok(Self {
            depth,
            ks: ks.to_vec(),
            h_ap: mean(per_query.iter().map(|q| q.h_ap)).unwrap(),
            asi: mean(per_query.iter().map(|q| q.asi)).unwrap(),
            ndcg: mean(per_query.iter().map(|q| q.ndcg)).unwrap(),
            ap_level,
            recall_at_k,
            per_query,
            excluded,
        })
    }

    /// Summary document with a fixed key order.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("queries".into(), json!(self.queries()));
        m.insert("excluded".into(), json!(self.excluded));
        m.insert("h_ap".into(), json!(self.h_ap));
        for (l, v) in self.ap_level.iter().enumerate() {
            m.insert(format!("ap_level_{}", l + 1), json!(v));
        }
        m.insert("asi".into(), json!(self.asi));
        m.insert("ndcg".into(), json!(self.ndcg));
        let mut recall = Map::new();
        for (k, v) in self.ks.iter().zip(&self.recall_at_k) {
            recall.insert(k.to_string(), json!(v));
        }
        m.insert("recall_at_k".into(), Value::Object(recall));
        Value::Object(m)
    }
}

/// Evaluates every query and averages over those with positives.
pub fn evaluate_dataset(rankings: &[ScoredRanking], ks: &[usize]) -> Result<MetricsReport> {
    let results: Vec<_> = rankings.iter().map(|r| QueryMetrics::compute(r, ks)).collect();
    merge(rankings, ks, results)
}

/// [`evaluate_dataset`] on a dedicated pool of `threads` workers. The
/// result does not depend on the thread count.
pub fn evaluate_dataset_par(rankings: &[ScoredRanking], ks: &[usize], threads: usize) -> Result<MetricsReport> {
    if threads <= 1 {
        return evaluate_dataset(rankings, ks);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MetricsError::InvalidRanking(format!("thread pool: {e}")))?;
    let results: Vec<_> =
        pool.install(|| rankings.par_iter().map(|r| QueryMetrics::compute(r, ks)).collect());
    merge(rankings, ks, results)
}

fn merge(rankings: &[ScoredRanking], ks: &[usize], results: Vec<Result<QueryMetrics>>) -> Result<MetricsReport> {
    let depth = match rankings.first() {
        Some(r) => r.depth,
        None => return Err(MetricsError::AllQueriesEmpty),
    };
    if rankings.iter().any(|r| r.depth != depth) {
        return Err(MetricsError::InvalidRanking("rankings disagree on depth".into()));
    }
    let mut per_query = Vec::with_capacity(results.len());
    let mut excluded = 0;
    for res in results {
        match res {
            Ok(q) => per_query.push(q),
            Err(MetricsError::NoPositives(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    MetricsReport::from_queries(depth, ks, per_query, excluded)
}
