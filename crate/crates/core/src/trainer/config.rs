use serde::{Deserialize, Serialize};

use crate::losses::HappierConfig;

use super::{Result, TrainerError};

/// Embedding model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// One free row per training instance.
    Table { n: usize, dim: usize },
    /// `v = W x` over the instance features.
    Linear { in_dim: usize, dim: usize },
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match *self {
            ModelConfig::Table { dim, .. } | ModelConfig::Linear { dim, .. } => dim,
        }
    }
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { beta1: beta1(), beta2: beta2(), eps: adam_eps() }
    }
}

fn m_per_class() -> usize {
    4
}
fn eval_every() -> usize {
    1
}
fn proxy_sigma() -> f64 {
    0.05
}
fn eval_ks() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "m_per_class")]
    pub m_per_class: usize,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub happier: HappierConfig,
    #[serde(default = "eval_every")]
    pub eval_every: usize,
    /// Softmax temperature of the proxy bank.
    #[serde(default = "proxy_sigma")]
    pub proxy_sigma: f64,
    /// Cut-offs for fine-level R@k in evaluation reports.
    #[serde(default = "eval_ks")]
    pub eval_ks: Vec<usize>,
}

impl TrainerConfig {
    /// Linear model with Adam, 4 instances per class and defaults elsewhere.
    pub fn linear(in_dim: usize, dim: usize, lr0: f64, epochs: usize, batch_size: usize) -> Self {
        Self {
            model: ModelConfig::Linear { in_dim, dim },
            optimizer: OptimizerConfig::default(),
            lr0,
            epochs,
            batch_size,
            m_per_class: m_per_class(),
            warmup_epochs: 0,
            seed: 0,
            happier: HappierConfig::default(),
            eval_every: eval_every(),
            proxy_sigma: proxy_sigma(),
            eval_ks: eval_ks(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainerError::InvalidConfig(m));
        if self.model.dim() < 2 {
            return bad(format!("embedding dim must be at least 2, got {}", self.model.dim()));
        }
        match self.model {
            ModelConfig::Table { n: 0, .. } => return bad("table needs n >= 1".into()),
            ModelConfig::Linear { in_dim: 0, .. } => return bad("linear model needs in_dim >= 1".into()),
            _ => {}
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 || self.m_per_class == 0 {
            return bad("batch_size and m_per_class must be positive".into());
        }
        if !self.batch_size.is_multiple_of(self.m_per_class) {
            return bad(format!(
                "batch_size {} is not divisible by m_per_class {}",
                self.batch_size, self.m_per_class
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !(self.proxy_sigma.is_finite() && self.proxy_sigma > 0.0) {
            return bad("proxy_sigma must be positive".into());
        }
        if self.eval_ks.contains(&0) {
            return bad("eval_ks entries must be positive".into());
        }
        match self.optimizer {
            OptimizerConfig::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return bad(format!("momentum must lie in [0, 1), got {momentum}"));
            }
            OptimizerConfig::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                return bad("adam needs betas in [0, 1) and eps > 0".into());
            }
            _ => {}
        }
        self.happier.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_defaults() {
        let cfg: TrainerConfig = serde_json::from_str(
            r#"{"model": {"kind": "table", "n": 10, "dim": 4}, "lr0": 0.1, "epochs": 2, "batch_size": 8}"#,
        )
        .unwrap();
        assert_eq!(cfg.m_per_class, 4);
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(cfg.happier.lambda, 0.1);
        cfg.validate().unwrap();
        let back: TrainerConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects() {
        let mut cfg = TrainerConfig::linear(4, 3, 0.1, 1, 8);
        cfg.validate().unwrap();
        cfg.batch_size = 6;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 8;
        cfg.model = ModelConfig::Linear { in_dim: 4, dim: 1 };
        assert!(cfg.validate().is_err());
        cfg.model = ModelConfig::Linear { in_dim: 4, dim: 3 };
        cfg.happier.lambda = 1.5;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<TrainerConfig>(
            r#"{"model": {"kind": "table", "n": 1, "dim": 4}, "lr0": 0.1, "epochs": 2, "batch_size": 8, "bogus": 1}"#
        )
        .is_err());
    }
}
