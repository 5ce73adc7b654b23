//! Class-balanced stochastic training of embeddings under the combined
//! H-AP surrogate and proxy clustering objective.
//!
//! Fine classes listed in the dataset's holdout split never enter a
//! training batch. Linear models are evaluated on the holdout instances;
//! table models have no rows for unseen instances and are evaluated on the
//! training set.

mod config;
mod optim;

pub use config::{ModelConfig, OptimizerConfig, TrainerConfig};
pub use optim::{cosine_lr, OptState};

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use thiserror::Error;

use crate::losses::{happier_loss, BatchLabels, LossError, ProxyBank};
use crate::metrics::{evaluate_dataset, MetricsError, MetricsReport, ScoredRanking};
use crate::synthgen::SynthDataset;
use crate::taxonomy::{RelevancePartition, RelevanceProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    Data(String),
    #[error("need {needed} training classes with instances, have {available}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

/// Everything that changes during training.
#[derive(Debug, Clone)]
pub struct TrainerState {
    /// Row-major: table `n × dim`, linear `dim × in_dim`.
    pub params: Vec<f64>,
    pub bank: ProxyBank,
    pub param_opt: OptState,
    pub proxy_opt: OptState,
    pub epoch: usize,
    pub step: usize,
    pub rng: ChaCha8Rng,
}

/// Loss and learning rate of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub step: usize,
    /// Mean batch loss over the epoch just finished; `None` before training.
    pub train_loss: Option<f64>,
    pub report: MetricsReport,
}

pub fn history_json(history: &[HistoryEntry]) -> Value {
    Value::Array(
        history
            .iter()
            .map(|h| {
                json!({
                    "epoch": h.epoch,
                    "step": h.step,
                    "train_loss": h.train_loss,
                    "metrics": h.report.to_json(),
                })
            })
            .collect(),
    )
}

/// Training-time view of a dataset under one configuration.
#[derive(Debug)]
pub struct Trainer<'a> {
    pub config: TrainerConfig,
    data: &'a SynthDataset,
    /// Taxonomy positions of training instances.
    train: Vec<usize>,
    /// Taxonomy positions used for evaluation.
    eval: Vec<usize>,
    /// Training positions per proxy class.
    by_class: Vec<Vec<usize>>,
    /// Proxy class of each leaf, `None` for held-out leaves.
    class_of_leaf: Vec<Option<usize>>,
    /// Table row of each taxonomy position.
    row_of: Vec<Option<usize>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainerConfig, data: &'a SynthDataset) -> Result<Self> {
        config.validate()?;
        let tax = &data.taxonomy;
        let leaf_index: HashMap<&str, usize> = (0..tax.leaf_count()).map(|l| (tax.leaf_name(l), l)).collect();
        let mut held = vec![false; tax.leaf_count()];
        for name in &data.holdout_leaves {
            let l = *leaf_index
                .get(name.as_str())
                .ok_or_else(|| TrainerError::Data(format!("holdout leaf {name} is not in the taxonomy")))?;
            held[l] = true;
        }

        let mut class_of_leaf = vec![None; tax.leaf_count()];
        let mut by_class: Vec<Vec<usize>> = Vec::new();
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for p in 0..tax.len() {
            let leaf = tax.leaf_at(p);
            if held[leaf] {
                holdout.push(p);
                continue;
            }
            let c = *class_of_leaf[leaf].get_or_insert_with(|| {
                by_class.push(Vec::new());
                by_class.len() - 1
            });
            by_class[c].push(p);
            train.push(p);
        }
        if train.is_empty() {
            return Err(TrainerError::Data("no training instances".into()));
        }

        let mut row_of = vec![None; tax.len()];
        let eval = match config.model {
            ModelConfig::Table { n, .. } => {
                if n != train.len() {
                    return Err(TrainerError::InvalidConfig(format!(
                        "table has {n} rows but the dataset has {} training instances",
                        train.len()
                    )));
                }
                for (r, &p) in train.iter().enumerate() {
                    row_of[p] = Some(r);
                }
                train.clone()
            }
            ModelConfig::Linear { in_dim, .. } => {
                if data.features.len() != tax.len() {
                    return Err(TrainerError::Data("linear model needs a feature row per instance".into()));
                }
                if let Some(row) = data.features.iter().find(|f| f.len() != in_dim) {
                    return Err(TrainerError::InvalidConfig(format!(
                        "in_dim is {in_dim} but features have {} values",
                        row.len()
                    )));
                }
                if holdout.is_empty() {
                    return Err(TrainerError::Data("holdout split is empty".into()));
                }
                holdout
            }
        };
        Ok(Self { config, data, train, eval, by_class, class_of_leaf, row_of })
    }

    pub fn train_positions(&self) -> &[usize] {
        &self.train
    }

    pub fn eval_positions(&self) -> &[usize] {
        &self.eval
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.train.len() / self.config.batch_size).max(1)
    }

    pub fn total_steps(&self) -> usize {
        self.config.epochs * self.steps_per_epoch()
    }

    /// Seeded initial parameters and unit-norm Gaussian proxies.
    pub fn init_state(&self) -> Result<TrainerState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let params: Vec<f64> = match self.config.model {
            ModelConfig::Table { n, dim } => (0..n * dim).map(|_| rng.sample(StandardNormal)).collect(),
            ModelConfig::Linear { in_dim, dim } => {
                let scale = 1.0 / (in_dim as f64).sqrt();
                (0..in_dim * dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        let bank = ProxyBank::random(self.by_class.len(), self.config.model.dim(), self.config.proxy_sigma, &mut rng)?;
        let proxy_len = bank.len() * bank.dim();
        Ok(TrainerState {
            param_opt: OptState::zeros(params.len()),
            proxy_opt: OptState::zeros(proxy_len),
            params,
            bank,
            epoch: 0,
            step: 0,
            rng,
        })
    }

    /// Embedding of the instance at taxonomy position `p`.
    pub fn embed(&self, state: &TrainerState, p: usize) -> Vec<f64> {
        match self.config.model {
            ModelConfig::Table { dim, .. } => {
                let r = self.row_of[p].expect("table models only embed training instances");
                state.params[r * dim..(r + 1) * dim].to_vec()
            }
            ModelConfig::Linear { in_dim, dim } => {
                let x = &self.data.features[p];
                (0..dim)
                    .map(|r| state.params[r * in_dim..(r + 1) * in_dim].iter().zip(x).map(|(w, x)| w * x).sum())
                    .collect()
            }
        }
    }

    /// `batch_size / m_per_class` distinct classes, `m_per_class`
    /// instances each (with replacement only inside classes that are too
    /// small). Returns taxonomy positions.
    pub fn sample_batch(&self, state: &mut TrainerState) -> Result<Vec<usize>> {
        let m = self.config.m_per_class;
        let needed = self.config.batch_size / m;
        if self.by_class.len() < needed {
            return Err(TrainerError::InsufficientClasses { needed, available: self.by_class.len() });
        }
        let rng = &mut state.rng;
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for c in index::sample(rng, self.by_class.len(), needed) {
            let members = &self.by_class[c];
            if members.len() >= m {
                batch.extend(index::sample(rng, members.len(), m).into_iter().map(|i| members[i]));
            } else {
                for _ in 0..m {
                    batch.push(members[rng.random_range(0..members.len())]);
                }
            }
        }
        Ok(batch)
    }

    /// One update at the scheduled learning rate.
    pub fn train_step(&self, state: &mut TrainerState, batch: &[usize]) -> Result<StepOutcome> {
        let lr = cosine_lr(self.config.lr0, state.step, self.total_steps());
        self.step_with_lr(state, batch, lr)
    }

    /// One update at learning rate `lr`. During warmup epochs only the
    /// proxies move.
    pub fn step_with_lr(&self, state: &mut TrainerState, batch: &[usize], lr: f64) -> Result<StepOutcome> {
        let tax = &self.data.taxonomy;
        let emb: Vec<Vec<f64>> = batch.iter().map(|&p| self.embed(state, p)).collect();
        if let Some(i) = emb.iter().position(|v| !v.iter().map(|x| x * x).sum::<f64>().is_finite()) {
            return Err(TrainerError::NonFiniteLoss {
                epoch: state.epoch,
                step: state.step,
                detail: format!("embedding of {} overflowed", tax.ids()[batch[i]]),
            });
        }
        let paths: Vec<&[u32]> = batch.iter().map(|&p| tax.interned_path(p)).collect();
        let classes = batch
            .iter()
            .map(|&p| {
                self.class_of_leaf[tax.leaf_at(p)]
                    .ok_or_else(|| TrainerError::Data(format!("held-out instance {} in a batch", tax.ids()[p])))
            })
            .collect::<Result<Vec<_>>>()?;
        let g = happier_loss(&emb, BatchLabels { paths: &paths, classes: &classes }, &state.bank, &self.config.happier)?;

        let finite = g.value.is_finite()
            && g.d_embeddings.iter().flatten().all(|x| x.is_finite())
            && g.d_proxies.iter().flatten().all(|x| x.is_finite());
        if !finite {
            return Err(TrainerError::NonFiniteLoss {
                epoch: state.epoch,
                step: state.step,
                detail: format!(
                    "value {} (surrogate {}, clustering {}), batch {:?}",
                    g.value,
                    g.surrogate,
                    g.clustering,
                    batch.iter().map(|&p| tax.ids()[p].as_str()).collect::<Vec<_>>()
                ),
            });
        }

        if state.epoch >= self.config.warmup_epochs {
            let grad = self.param_grad(batch, &g.d_embeddings);
            state.param_opt.apply(&self.config.optimizer, &mut state.params, &grad, lr);
        }
        let mut flat: Vec<f64> = state.bank.proxies.concat();
        let grad: Vec<f64> = g.d_proxies.concat();
        state.proxy_opt.apply(&self.config.optimizer, &mut flat, &grad, lr);
        let dim = state.bank.dim();
        for (row, chunk) in state.bank.proxies.iter_mut().zip(flat.chunks(dim)) {
            row.copy_from_slice(chunk);
        }
        state.bank.renormalize();
        state.step += 1;
        Ok(StepOutcome { loss: g.value, lr })
    }

    fn param_grad(&self, batch: &[usize], d_emb: &[Vec<f64>]) -> Vec<f64> {
        let mut grad = vec![0.0; self.config_param_len()];
        match self.config.model {
            ModelConfig::Table { dim, .. } => {
                for (&p, d) in batch.iter().zip(d_emb) {
                    let r = self.row_of[p].expect("training instance has a table row");
                    for (g, x) in grad[r * dim..(r + 1) * dim].iter_mut().zip(d) {
                        *g += x;
                    }
                }
            }
            ModelConfig::Linear { in_dim, .. } => {
                for (&p, d) in batch.iter().zip(d_emb) {
                    let x = &self.data.features[p];
                    for (r, dr) in d.iter().enumerate() {
                        for (g, xc) in grad[r * in_dim..(r + 1) * in_dim].iter_mut().zip(x) {
                            *g += dr * xc;
                        }
                    }
                }
            }
        }
        grad
    }

    fn config_param_len(&self) -> usize {
        match self.config.model {
            ModelConfig::Table { n, dim } => n * dim,
            ModelConfig::Linear { in_dim, dim } => in_dim * dim,
        }
    }

    /// Full retrieval metrics with `α = 1` relevance: every evaluation
    /// instance queries all the others by cosine similarity.
    pub fn evaluate(&self, state: &TrainerState) -> Result<MetricsReport> {
        let tax = &self.data.taxonomy;
        let unit: Vec<Vec<f64>> = self
            .eval
            .iter()
            .map(|&p| {
                let v = self.embed(state, p);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        let profile = RelevanceProfile::default();
        let mut rankings = Vec::with_capacity(self.eval.len());
        for (qi, &q) in self.eval.iter().enumerate() {
            let mut ids = Vec::with_capacity(self.eval.len() - 1);
            let mut scores = Vec::with_capacity(self.eval.len() - 1);
            let mut levels = Vec::with_capacity(self.eval.len() - 1);
            for (ci, &c) in self.eval.iter().enumerate() {
                if ci == qi {
                    continue;
                }
                ids.push(tax.ids()[c].clone());
                scores.push(unit[qi].iter().zip(&unit[ci]).map(|(a, b)| a * b).sum());
                levels.push(tax.common_level(q, c));
            }
            let part = RelevancePartition::from_levels(tax.ids()[q].clone(), tax.depth(), levels)
                .assign_relevance(&profile)
                .map_err(LossError::from)?;
            rankings.push(ScoredRanking::from_partition(&part, ids, scores)?);
        }
        Ok(evaluate_dataset(&rankings, &self.config.eval_ks)?)
    }

    /// Embeddings of every instance the model covers, with ids.
    pub fn embeddings(&self, state: &TrainerState) -> Vec<(String, Vec<f64>)> {
        let tax = &self.data.taxonomy;
        let positions: Vec<usize> = match self.config.model {
            ModelConfig::Table { .. } => self.train.clone(),
            ModelConfig::Linear { .. } => (0..tax.len()).collect(),
        };
        positions.into_iter().map(|p| (tax.ids()[p].clone(), self.embed(state, p))).collect()
    }

    /// Proxies and counters accompanying an embeddings checkpoint.
    pub fn checkpoint_sidecar(&self, state: &TrainerState) -> Value {
        let tax = &self.data.taxonomy;
        let mut classes = vec![String::new(); self.by_class.len()];
        for (leaf, c) in self.class_of_leaf.iter().enumerate() {
            if let Some(c) = c {
                classes[*c] = tax.leaf_name(leaf).to_string();
            }
        }
        json!({
            "epoch": state.epoch,
            "step": state.step,
            "seed": self.config.seed,
            "sigma": state.bank.sigma,
            "classes": classes,
            "proxies": state.bank.proxies,
        })
    }

    /// Trains for the configured epochs, evaluating before the first epoch,
    /// every `eval_every` epochs and after the last.
    pub fn fit(&self) -> Result<(TrainerState, Vec<HistoryEntry>)> {
        let mut state = self.init_state()?;
        let mut history = vec![HistoryEntry { epoch: 0, step: 0, train_loss: None, report: self.evaluate(&state)? }];
        let epochs = self.config.epochs;
        for epoch in 0..epochs {
            let mut sum = 0.0;
            for _ in 0..self.steps_per_epoch() {
                let batch = self.sample_batch(&mut state)?;
                sum += self.train_step(&mut state, &batch)?.loss;
            }
            state.epoch = epoch + 1;
            if state.epoch % self.config.eval_every == 0 || state.epoch == epochs {
                history.push(HistoryEntry {
                    epoch: state.epoch,
                    step: state.step,
                    train_loss: Some(sum / self.steps_per_epoch() as f64),
                    report: self.evaluate(&state)?,
                });
            }
        }
        Ok((state, history))
    }
}

/// [`Trainer::fit`] in one call.
pub fn fit(config: TrainerConfig, data: &SynthDataset) -> Result<(TrainerState, Vec<HistoryEntry>)> {
    Trainer::new(config, data)?.fit()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, SynthSpec};

    fn data() -> SynthDataset {
        generate(&SynthSpec::new(vec![2, 4], 6, 6, 3)).unwrap()
    }

    #[test]
    fn split_is_open_set() {
        let d = data();
        let t = Trainer::new(TrainerConfig::linear(6, 4, 0.01, 1, 8), &d).unwrap();
        let tax = &d.taxonomy;
        for &p in t.train_positions() {
            assert!(!d.holdout_leaves.iter().any(|h| h == tax.leaf_name(tax.leaf_at(p))));
        }
        for &p in t.eval_positions() {
            assert!(d.holdout_leaves.iter().any(|h| h == tax.leaf_name(tax.leaf_at(p))));
        }
        assert_eq!(t.train_positions().len() + t.eval_positions().len(), tax.len());
    }

    #[test]
    fn batches_are_class_balanced() {
        let d = data();
        let mut cfg = TrainerConfig::linear(6, 4, 0.01, 1, 6);
        cfg.m_per_class = 2;
        let t = Trainer::new(cfg, &d).unwrap();
        let mut s = t.init_state().unwrap();
        for _ in 0..20 {
            let b = t.sample_batch(&mut s).unwrap();
            assert_eq!(b.len(), 6);
            let mut counts = HashMap::new();
            for &p in &b {
                *counts.entry(d.taxonomy.leaf_at(p)).or_insert(0) += 1;
            }
            assert_eq!(counts.len(), 3);
            assert!(counts.values().all(|&c| c == 2));
            assert_eq!(b.iter().collect::<std::collections::HashSet<_>>().len(), 6);
        }
    }

    #[test]
    fn too_few_classes() {
        let d = data();
        let t = Trainer::new(TrainerConfig::linear(6, 4, 0.01, 1, 32), &d).unwrap();
        let mut s = t.init_state().unwrap();
        assert_eq!(t.sample_batch(&mut s), Err(TrainerError::InsufficientClasses { needed: 8, available: 6 }));
    }

    #[test]
    fn proxies_stay_unit() {
        let d = data();
        let t = Trainer::new(TrainerConfig::linear(6, 4, 0.05, 1, 8), &d).unwrap();
        let mut s = t.init_state().unwrap();
        for _ in 0..5 {
            let b = t.sample_batch(&mut s).unwrap();
            t.train_step(&mut s, &b).unwrap();
            for p in &s.bank.proxies {
                let n: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn warmup_freezes_parameters() {
        let d = data();
        let mut cfg = TrainerConfig::linear(6, 4, 0.05, 2, 8);
        cfg.warmup_epochs = 1;
        let t = Trainer::new(cfg, &d).unwrap();
        let mut s = t.init_state().unwrap();
        let before = (s.params.clone(), s.bank.clone());
        let b = t.sample_batch(&mut s).unwrap();
        t.train_step(&mut s, &b).unwrap();
        assert_eq!(s.params, before.0);
        assert_ne!(s.bank, before.1);
        s.epoch = 1;
        t.train_step(&mut s, &b).unwrap();
        assert_ne!(s.params, before.0);
    }

    #[test]
    fn table_requires_matching_rows() {
        let d = data();
        let mut cfg = TrainerConfig::linear(6, 4, 0.05, 1, 8);
        cfg.model = ModelConfig::Table { n: 7, dim: 4 };
        assert!(matches!(Trainer::new(cfg, &d), Err(TrainerError::InvalidConfig(_))));
    }

    #[test]
    fn zero_epochs_evaluates_once() {
        let d = data();
        let (s, h) = fit(TrainerConfig::linear(6, 4, 0.05, 0, 8), &d).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(s.step, 0);
        assert_eq!(h[0].train_loss, None);
    }
}
