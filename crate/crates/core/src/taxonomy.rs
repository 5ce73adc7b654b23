//! Label hierarchies and per-query relevance.
//!
//! A [`Taxonomy`] maps instance ids to label paths of uniform depth `L`,
//! coarsest label first. For a query, every candidate is assigned the level
//! of its closest common ancestor with the query (the length of the common
//! path prefix): `0` means no shared node (a negative), `L` means the same
//! leaf. A [`RelevanceProfile`] then turns levels into relevance values.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("empty taxonomy input")]
    EmptyInput,
    #[error("line {line}: expected `id<TAB>path`")]
    MalformedLine { line: usize },
    #[error("line {line}: path has depth {found}, expected {expected}")]
    RaggedDepth { line: usize, expected: usize, found: usize },
    #[error("line {line}: duplicate instance `{id}`")]
    DuplicateInstance { line: usize, id: String },
    #[error("line {line}: node `{node}` at level {level} already appears under a different parent")]
    NonTreeParentage { line: usize, level: usize, node: String },
    #[error("taxonomy needs at least 2 distinct leaf labels, found {0}")]
    TooFewLeaves(usize),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("query `{0}` is listed among its own candidates")]
    QueryInCandidates(String),
    #[error("invalid relevance profile: {0}")]
    InvalidProfile(String),
    #[error("level {level} has nonzero weight but no candidate at or above it")]
    EmptyLevelDivision { level: usize },
}

pub type Result<T> = std::result::Result<T, TaxonomyError>;

/// Label tree of uniform depth. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    depth: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    /// Interned node index per level, one row per instance.
    paths: Vec<Vec<u32>>,
    /// Node names per level, indexed by the interned node index.
    nodes: Vec<Vec<String>>,
}

impl Taxonomy {
    /// Builds a taxonomy from `(id, path)` pairs. Paths list labels coarsest
    /// first. Line numbers in errors are 1-based positions in `entries`.
    pub fn from_entries<I, S, P>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, P)>,
        S: Into<String>,
        P: IntoIterator,
        P::Item: Into<String>,
    {
        let mut depth = None;
        let mut ids = Vec::new();
        let mut index = HashMap::new();
        let mut paths = Vec::new();
        let mut nodes: Vec<Vec<String>> = Vec::new();
        let mut node_index: Vec<HashMap<String, u32>> = Vec::new();
        // (level, node) -> parent node index at level - 1
        let mut parent_of: Vec<Vec<Option<u32>>> = Vec::new();

        for (i, (id, path)) in entries.into_iter().enumerate() {
            let line = i + 1;
            let id: String = id.into();
            let path: Vec<String> = path.into_iter().map(Into::into).collect();
            if id.is_empty() || path.is_empty() || path.iter().any(|p| p.is_empty()) {
                return Err(TaxonomyError::MalformedLine { line });
            }
            let l = *depth.get_or_insert_with(|| {
                nodes = vec![Vec::new(); path.len()];
                node_index = vec![HashMap::new(); path.len()];
                parent_of = vec![Vec::new(); path.len()];
                path.len()
            });
            if path.len() != l {
                return Err(TaxonomyError::RaggedDepth { line, expected: l, found: path.len() });
            }
            if index.contains_key(&id) {
                return Err(TaxonomyError::DuplicateInstance { line, id });
            }

            let mut interned = Vec::with_capacity(l);
            let mut parent: Option<u32> = None;
            for (level, name) in path.into_iter().enumerate() {
                let node = match node_index[level].get(&name) {
                    Some(&n) => {
                        if parent_of[level][n as usize] != parent {
                            return Err(TaxonomyError::NonTreeParentage { line, level: level + 1, node: name });
                        }
                        n
                    }
                    None => {
                        let n = nodes[level].len() as u32;
                        node_index[level].insert(name.clone(), n);
                        nodes[level].push(name);
                        parent_of[level].push(parent);
                        n
                    }
                };
                interned.push(node);
                parent = Some(node);
            }
            index.insert(id.clone(), ids.len());
            ids.push(id);
            paths.push(interned);
        }

        let depth = depth.ok_or(TaxonomyError::EmptyInput)?;
        let leaves = nodes[depth - 1].len();
        if leaves < 2 {
            return Err(TaxonomyError::TooFewLeaves(leaves));
        }
        Ok(Self { depth, ids, index, paths, nodes })
    }

    /// Number of levels `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Instance ids in insertion order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Distinct labels per level, coarsest first.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.nodes.iter().map(Vec::len).collect()
    }

    /// Label path of an instance, coarsest first.
    pub fn path(&self, id: &str) -> Option<Vec<&str>> {
        let i = self.position(id)?;
        Some(self.path_at(i))
    }

    pub fn path_at(&self, i: usize) -> Vec<&str> {
        self.paths[i]
            .iter()
            .enumerate()
            .map(|(level, &n)| self.nodes[level][n as usize].as_str())
            .collect()
    }

    /// Interned node indices of the instance at position `i`, coarsest first.
    pub fn interned_path(&self, i: usize) -> &[u32] {
        &self.paths[i]
    }

    /// Leaf (fine-grained class) index of the instance at position `i`.
    pub fn leaf_at(&self, i: usize) -> usize {
        self.paths[i][self.depth - 1] as usize
    }

    /// Name of leaf node `leaf`.
    pub fn leaf_name(&self, leaf: usize) -> &str {
        &self.nodes[self.depth - 1][leaf]
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes[self.depth - 1].len()
    }

    /// Closest-common-ancestor level between the instances at positions
    /// `a` and `b`.
    pub fn common_level(&self, a: usize, b: usize) -> usize {
        self.paths[a]
            .iter()
            .zip(&self.paths[b])
            .take_while(|(x, y)| x == y)
            .count()
    }

    /// Assigns each candidate its common-ancestor level with the query.
    pub fn build_partition(&self, query: &str, candidates: &[&str]) -> Result<RelevancePartition> {
        let q = self
            .position(query)
            .ok_or_else(|| TaxonomyError::UnknownInstance(query.to_string()))?;
        let mut levels = Vec::with_capacity(candidates.len());
        for &c in candidates {
            if c == query {
                return Err(TaxonomyError::QueryInCandidates(query.to_string()));
            }
            let j = self
                .position(c)
                .ok_or_else(|| TaxonomyError::UnknownInstance(c.to_string()))?;
            levels.push(self.common_level(q, j));
        }
        Ok(RelevancePartition::from_levels(query, self.depth, levels))
    }
}

/// Parses `instance_id<TAB>label/label/...` records, one per line.
///
/// Blank lines are skipped; a trailing `\r` is tolerated. Line numbers in
/// errors refer to the input text.
pub fn parse_taxonomy(text: &str) -> Result<Taxonomy> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let (id, path) = line
            .split_once('\t')
            .ok_or(TaxonomyError::MalformedLine { line: i + 1 })?;
        if path.contains('\t') {
            return Err(TaxonomyError::MalformedLine { line: i + 1 });
        }
        records.push((id.to_string(), path.split('/').map(str::to_string).collect::<Vec<_>>()));
        lines.push(i + 1);
    }
    // renumber record positions back to text lines
    Taxonomy::from_entries(records).map_err(|e| match e {
        TaxonomyError::MalformedLine { line } => TaxonomyError::MalformedLine { line: lines[line - 1] },
        TaxonomyError::RaggedDepth { line, expected, found } => {
            TaxonomyError::RaggedDepth { line: lines[line - 1], expected, found }
        }
        TaxonomyError::DuplicateInstance { line, id } => {
            TaxonomyError::DuplicateInstance { line: lines[line - 1], id }
        }
        TaxonomyError::NonTreeParentage { line, level, node } => {
            TaxonomyError::NonTreeParentage { line: lines[line - 1], level, node }
        }
        other => other,
    })
}

/// Per-query split of the candidates into levels `0..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevancePartition {
    pub query: String,
    pub depth: usize,
    pub levels: Vec<usize>,
    /// `|Ω^(l)|` for `l` in `0..=L`.
    pub level_counts: Vec<usize>,
    /// Set by [`RelevancePartition::assign_relevance`].
    pub relevance: Option<Vec<f64>>,
}

impl RelevancePartition {
    pub fn from_levels(query: impl Into<String>, depth: usize, levels: Vec<usize>) -> Self {
        let mut level_counts = vec![0; depth + 1];
        for &l in &levels {
            assert!(l <= depth, "level {l} exceeds depth {depth}");
            level_counts[l] += 1;
        }
        Self { query: query.into(), depth, levels, level_counts, relevance: None }
    }

    pub fn has_positives(&self) -> bool {
        self.level_counts[1..].iter().any(|&c| c > 0)
    }

    /// Fills in per-candidate relevance according to `profile`.
    pub fn assign_relevance(mut self, profile: &RelevanceProfile) -> Result<Self> {
        let table = profile.level_table(self.depth, &self.level_counts)?;
        self.relevance = Some(self.levels.iter().map(|&l| table[l]).collect());
        Ok(self)
    }

    /// Reports every level pair whose relevance ordering is inverted.
    pub fn validate_relevance(&self) -> Vec<RelevanceWarning> {
        let Some(rel) = &self.relevance else {
            return Vec::new();
        };
        let mut min = vec![f64::INFINITY; self.depth + 1];
        let mut max = vec![f64::NEG_INFINITY; self.depth + 1];
        for (&l, &r) in self.levels.iter().zip(rel) {
            min[l] = min[l].min(r);
            max[l] = max[l].max(r);
        }
        let present: Vec<usize> = (1..=self.depth).filter(|&l| self.level_counts[l] > 0).collect();
        let mut warnings = Vec::new();
        for (i, &hi) in present.iter().enumerate().rev() {
            for &lo in present[..i].iter().rev() {
                if min[hi] <= max[lo] {
                    warnings.push(RelevanceWarning {
                        level_hi: hi,
                        level_lo: lo,
                        min_rel_hi: min[hi],
                        max_rel_lo: max[lo],
                    });
                }
            }
        }
        warnings
    }
}

/// A relevance monotonicity violation between two levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelevanceWarning {
    pub level_hi: usize,
    pub level_lo: usize,
    pub min_rel_hi: f64,
    pub max_rel_lo: f64,
}

/// How levels map to relevance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelevanceProfile {
    /// `(l/L)^alpha / |Ω^(l)|`.
    Alpha { alpha: f64 },
    /// `Σ_{p≤l} w_p / |Ω^{+,p}|`, which makes H-AP the weighted sum of
    /// per-level APs.
    WeightedAp { weights: Vec<f64> },
    /// Fixed value per level, index 0 is the negative level.
    Explicit { table: Vec<f64> },
}

impl Default for RelevanceProfile {
    fn default() -> Self {
        RelevanceProfile::Alpha { alpha: 1.0 }
    }
}

impl RelevanceProfile {
    pub fn alpha(alpha: f64) -> Result<Self> {
        let p = RelevanceProfile::Alpha { alpha };
        p.validate(None)?;
        Ok(p)
    }

    pub fn weighted_ap(weights: Vec<f64>) -> Result<Self> {
        let p = RelevanceProfile::WeightedAp { weights };
        p.validate(None)?;
        Ok(p)
    }

    pub fn explicit(table: Vec<f64>) -> Result<Self> {
        let p = RelevanceProfile::Explicit { table };
        p.validate(None)?;
        Ok(p)
    }

    /// Checks the profile's own invariants, and its arity against `depth`
    /// when given.
    pub fn validate(&self, depth: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(TaxonomyError::InvalidProfile(m));
        match self {
            RelevanceProfile::Alpha { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return bad(format!("alpha must be positive, got {alpha}"));
                }
            }
            RelevanceProfile::WeightedAp { weights } => {
                if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return bad("weights must be positive".into());
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return bad(format!("weights must sum to 1, got {sum}"));
                }
                if let Some(d) = depth {
                    if weights.len() != d {
                        return bad(format!("{} weights for depth {d}", weights.len()));
                    }
                }
            }
            RelevanceProfile::Explicit { table } => {
                if table.is_empty() || table.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return bad("explicit relevance must be non-negative".into());
                }
                if table[0] != 0.0 {
                    return bad("explicit relevance must be 0 at level 0".into());
                }
                if let Some(d) = depth {
                    if table.len() != d + 1 {
                        return bad(format!("{} table entries for depth {d}", table.len()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Relevance of a candidate at each level `0..=L`, given the level
    /// counts of one query.
    pub fn level_table(&self, depth: usize, level_counts: &[usize]) -> Result<Vec<f64>> {
        self.validate(Some(depth))?;
        debug_assert_eq!(level_counts.len(), depth + 1);
        let mut table = vec![0.0; depth + 1];
        match self {
            RelevanceProfile::Alpha { alpha } => {
                for l in 1..=depth {
                    // empty levels keep 0, nothing reads them
                    if level_counts[l] > 0 {
                        let total = (l as f64 / depth as f64).powf(*alpha);
                        table[l] = total / level_counts[l] as f64;
                    }
                }
            }
            RelevanceProfile::WeightedAp { weights } => {
                let mut acc = 0.0;
                for p in 1..=depth {
                    let at_or_above: usize = level_counts[p..].iter().sum();
                    if at_or_above == 0 {
                        if weights[p - 1] != 0.0 && level_counts[1..].iter().any(|&c| c > 0) {
                            return Err(TaxonomyError::EmptyLevelDivision { level: p });
                        }
                        continue;
                    }
                    acc += weights[p - 1] / at_or_above as f64;
                    table[p] = acc;
                }
            }
            RelevanceProfile::Explicit { table: t } => table.copy_from_slice(t),
        }
        Ok(table)
    }
}
