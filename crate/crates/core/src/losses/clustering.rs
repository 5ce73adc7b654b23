use rand::Rng;
use rand_distr::StandardNormal;

use super::{LossError, LossGradients, Result};

/// One unit-norm proxy per fine-grained class and the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank {
    pub proxies: Vec<Vec<f64>>,
    pub sigma: f64,
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

impl ProxyBank {
    /// Normalizes `proxies` to unit length.
    pub fn new(mut proxies: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(LossError::InvalidParams(format!("sigma must be positive, got {sigma}")));
        }
        let dim = proxies.first().map_or(0, Vec::len);
        for (i, p) in proxies.iter_mut().enumerate() {
            if p.len() != dim {
                return Err(LossError::ShapeMismatch("proxies differ in dimension".into()));
            }
            if !(normalize(p) > 0.0) {
                return Err(LossError::ZeroVector(i));
            }
        }
        Ok(Self { proxies, sigma })
    }

    /// Unit-normalized isotropic Gaussian draws.
    pub fn random<R: Rng + ?Sized>(classes: usize, dim: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        let proxies = (0..classes)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Self::new(proxies, sigma)
    }

    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.proxies.first().map_or(0, Vec::len)
    }

    /// Projects every proxy back onto the unit sphere.
    pub fn renormalize(&mut self) {
        for p in &mut self.proxies {
            normalize(p);
        }
    }
}

/// Softmax cross-entropy of `v` against the proxy of class `y`.
pub fn clustering_loss(v: &[f64], y: usize, bank: &ProxyBank) -> Result<LossGradients> {
    if y >= bank.len() {
        return Err(LossError::UnknownClass { class: y, count: bank.len() });
    }
    if v.len() != bank.dim() {
        return Err(LossError::ShapeMismatch(format!("embedding dim {} vs proxy dim {}", v.len(), bank.dim())));
    }
    let logits: Vec<f64> = bank
        .proxies
        .iter()
        .map(|p| p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / bank.sigma)
        .collect();
    let top = (0..logits.len()).fold(0, |m, i| if logits[i] > logits[m] { i } else { m });
    let max = logits[top];
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, e)| e).sum();
    let sum = 1.0 + rest;
    let value = (max - logits[y]) + rest.ln_1p();

    let mut d_embedding = vec![0.0; v.len()];
    let mut d_proxies = Vec::with_capacity(bank.len());
    for (i, (p, e)) in bank.proxies.iter().zip(&exps).enumerate() {
        let dz = (e / sum - if i == y { 1.0 } else { 0.0 }) / bank.sigma;
        for (d, x) in d_embedding.iter_mut().zip(p) {
            *d += dz * x;
        }
        d_proxies.push(v.iter().map(|x| dz * x).collect());
    }
    Ok(LossGradients { value, d_embedding, d_proxies, ..Default::default() })
}
