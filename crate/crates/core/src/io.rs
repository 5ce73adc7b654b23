//! Text file formats and atomic writes.
//!
//! - scores: `query_id<TAB>candidate_id<TAB>score`
//! - features and embeddings: `id<TAB>x1,x2,...`
//! - split: one held-out leaf label per line
//!
//! Blank lines are skipped everywhere. Line numbers in errors are 1-based.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::ScoredRanking;
use crate::synthgen::SynthDataset;
use crate::taxonomy::{parse_taxonomy, RelevanceProfile, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: line {line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Taxonomy { path: PathBuf, source: TaxonomyError },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Error position inside one text; the caller attaches the path.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub msg: String,
}

impl LineError {
    fn new(line: usize, msg: impl Into<String>) -> Self {
        Self { line, msg: msg.into() }
    }

    pub fn at(self, path: &Path) -> IoError {
        IoError::Parse { path: path.to_path_buf(), line: self.line, msg: self.msg }
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// Writes through a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |source| IoError::Io { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| IoError::Invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(err)
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    parse_taxonomy(&read_text(path)?).map_err(|source| IoError::Taxonomy { path: path.to_path_buf(), source })
}

/// One query's candidates in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScores {
    pub query: String,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
}

/// Groups score records by query, in order of first appearance.
pub fn parse_scores(text: &str) -> std::result::Result<Vec<QueryScores>, LineError> {
    let mut out: Vec<QueryScores> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (line, rec) in records(text) {
        let fields: Vec<&str> = rec.split('\t').collect();
        if fields.len() != 3 {
            return Err(LineError::new(line, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let score: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| LineError::new(line, format!("bad score {:?}", fields[2])))?;
        if !score.is_finite() {
            return Err(LineError::new(line, "score must be finite"));
        }
        let (q, c) = (fields[0].trim(), fields[1].trim());
        if q.is_empty() || c.is_empty() {
            return Err(LineError::new(line, "empty id"));
        }
        let slot = *index.entry(q.to_string()).or_insert_with(|| {
            out.push(QueryScores { query: q.to_string(), candidates: Vec::new(), scores: Vec::new() });
            out.len() - 1
        });
        let group = &mut out[slot];
        group.candidates.push(c.to_string());
        group.scores.push(score);
    }
    Ok(out)
}

/// Joins score groups with the taxonomy and a relevance profile.
pub fn build_rankings(
    taxonomy: &Taxonomy,
    groups: &[QueryScores],
    profile: &RelevanceProfile,
) -> Result<Vec<ScoredRanking>> {
    profile
        .validate(Some(taxonomy.depth()))
        .map_err(|e| IoError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let ctx = |e: &dyn std::fmt::Display| IoError::Invalid(format!("query {}: {e}", g.query));
        let ids: Vec<&str> = g.candidates.iter().map(String::as_str).collect();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|c| !seen.insert(**c)) {
            return Err(ctx(&format!("candidate {dup} listed twice")));
        }
        let part = taxonomy
            .build_partition(&g.query, &ids)
            .and_then(|p| p.assign_relevance(profile))
            .map_err(|e| ctx(&e))?;
        let r = ScoredRanking::from_partition(&part, g.candidates.clone(), g.scores.clone()).map_err(|e| ctx(&e))?;
        out.push(r);
    }
    Ok(out)
}

/// Parses `id<TAB>comma-separated floats` rows of a common width.
pub fn parse_vectors(text: &str) -> std::result::Result<Vec<(String, Vec<f64>)>, LineError> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (line, rec) in records(text) {
        let (id, values) = rec
            .split_once('\t')
            .ok_or_else(|| LineError::new(line, "expected id<TAB>values"))?;
        let row = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| LineError::new(line, format!("bad value: {e}")))?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(LineError::new(line, "values must be finite"));
        }
        if let Some((_, first)) = out.first() {
            if first.len() != row.len() {
                return Err(LineError::new(line, format!("expected {} values, found {}", first.len(), row.len())));
            }
        }
        out.push((id.trim().to_string(), row));
    }
    Ok(out)
}

/// Inverse of [`parse_vectors`]; floats print in shortest round-trip form.
pub fn format_vectors<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut s = String::new();
    for (id, row) in rows {
        s.push_str(id);
        s.push('\t');
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&x.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn format_taxonomy(t: &Taxonomy) -> String {
    let mut s = String::new();
    for (i, id) in t.ids().iter().enumerate() {
        s.push_str(id);
        s.push('\t');
        s.push_str(&t.path_at(i).join("/"));
        s.push('\n');
    }
    s
}

pub fn parse_split(text: &str) -> Vec<String> {
    records(text).map(|(_, l)| l.trim().to_string()).collect()
}

pub const TAXONOMY_FILE: &str = "taxonomy.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const SPLIT_FILE: &str = "split.txt";

/// Writes the three dataset files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, d: &SynthDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    write_atomic(&dir.join(TAXONOMY_FILE), format_taxonomy(&d.taxonomy).as_bytes())?;
    let rows = d.taxonomy.ids().iter().map(String::as_str).zip(d.features.iter().map(Vec::as_slice));
    write_atomic(&dir.join(FEATURES_FILE), format_vectors(rows).as_bytes())?;
    let mut split = d.holdout_leaves.join("\n");
    split.push('\n');
    write_atomic(&dir.join(SPLIT_FILE), split.as_bytes())
}

/// Reads a dataset directory written by [`write_dataset`]. The features
/// file is optional; when present it must cover every instance.
pub fn read_dataset(dir: &Path) -> Result<SynthDataset> {
    let taxonomy = load_taxonomy(&dir.join(TAXONOMY_FILE))?;
    let split_path = dir.join(SPLIT_FILE);
    let holdout_leaves = parse_split(&read_text(&split_path)?);
    let feat_path = dir.join(FEATURES_FILE);
    let features = if feat_path.exists() {
        let rows = parse_vectors(&read_text(&feat_path)?).map_err(|e| e.at(&feat_path))?;
        let mut features = vec![Vec::new(); taxonomy.len()];
        let mut seen = vec![false; taxonomy.len()];
        for (id, row) in rows {
            let i = taxonomy
                .position(&id)
                .ok_or_else(|| IoError::Invalid(format!("{}: unknown instance {id}", feat_path.display())))?;
            seen[i] = true;
            features[i] = row;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(IoError::Invalid(format!(
                "{}: no features for instance {}",
                feat_path.display(),
                taxonomy.ids()[i]
            )));
        }
        features
    } else {
        Vec::new()
    };
    Ok(SynthDataset { taxonomy, features, holdout_leaves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_grouping() {
        let g = parse_scores("q\ta\t1.5\nr\tb\t2\n\nq\tc\t-1e-3\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].candidates, vec!["a", "c"]);
        assert_eq!(g[0].scores, vec![1.5, -0.001]);
        assert_eq!(g[1].query, "r");
    }

    #[test]
    fn scores_errors() {
        assert_eq!(parse_scores("q\ta\t1\nq\tb\n").unwrap_err().line, 2);
        assert_eq!(parse_scores("q\ta\tx\n").unwrap_err().line, 1);
        assert_eq!(parse_scores("q\ta\tNaN\n").unwrap_err().line, 1);
    }

    #[test]
    fn vectors_roundtrip() {
        let rows = [("a", vec![0.1, -2.0]), ("b", vec![1e-300, 3.25])];
        let text = format_vectors(rows.iter().map(|(i, r)| (*i, r.as_slice())));
        let back = parse_vectors(&text).unwrap();
        assert_eq!(back[0].1, rows[0].1);
        assert_eq!(back[1].1, rows[1].1);
        assert_eq!(parse_vectors("a\t1,2\nb\t1\n").unwrap_err().line, 2);
    }

    #[test]
    fn dataset_roundtrip() {
        let spec = crate::synthgen::SynthSpec::new(vec![2, 2], 3, 4, 5);
        let d = crate::synthgen::generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &d).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn atomic_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
