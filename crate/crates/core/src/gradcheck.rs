//! Central finite-difference checks of every analytic gradient.
//!
//! Random configurations are drawn from one seeded generator. Score
//! configurations with a pairwise difference near a surrogate breakpoint
//! are redrawn, since a finite-difference step across a jump or kink
//! measures the jump and not the derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::losses::{
    clustering_loss, cosine_scores, happier_loss, hap_surrogate_parts, heaviside_lower, heaviside_upper,
    BatchLabels, HappierConfig, LossError, ProxyBank, SmoothHeavisideParams,
};
use crate::taxonomy::RelevanceProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSettings {
    pub seed: u64,
    pub trials: usize,
    pub eps: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self { seed: 0, trials: 100, eps: 1e-5 }
    }
}

/// Worst relative error of one suite and the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    pub worst: Value,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        Self { name, trials: 0, max_rel_error: 0.0, worst: Value::Null }
    }

    fn record(&mut self, err: f64, config: impl FnOnce() -> Value) {
        self.trials += 1;
        if err > self.max_rel_error || (self.worst.is_null() && err.is_nan()) {
            self.max_rel_error = err;
            self.worst = config();
        }
        if err.is_nan() {
            self.max_rel_error = f64::NAN;
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-6)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = inf(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = inf(&mut analytic.iter().copied()).max(inf(&mut numeric.iter().copied())).max(1e-6);
    diff / scale
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn near_breakpoint(diffs: impl Iterator<Item = f64>, points: &[f64], margin: f64) -> bool {
    let mut diffs = diffs;
    diffs.any(|t| points.iter().any(|&b| (t - b).abs() < margin || (t + b).abs() < margin))
}

fn pair_diffs(scores: &[f64]) -> impl Iterator<Item = f64> + '_ {
    scores.iter().enumerate().flat_map(move |(i, a)| scores[i + 1..].iter().map(move |b| a - b))
}

/// Both step surrogates on every branch.
pub fn check_heaviside(rng: &mut ChaCha8Rng, s: &CheckSettings) -> CheckResult {
    let p = SmoothHeavisideParams::default();
    let mut out = CheckResult::new("heaviside");
    let bps = p.boundaries();
    for _ in 0..s.trials {
        let t = loop {
            let t: f64 = rng.random_range(-0.15..0.15);
            if !near_breakpoint(std::iter::once(t), &bps, 10.0 * s.eps) {
                break t;
            }
        };
        let a = [heaviside_lower(t, &p).1, heaviside_upper(t, &p).1];
        let n = [
            numeric_gradient(&[t], s.eps, |x| heaviside_lower(x[0], &p).0)[0],
            numeric_gradient(&[t], s.eps, |x| heaviside_upper(x[0], &p).0)[0],
        ];
        out.record(relative_error(&a[..1], &n[..1]).max(relative_error(&a[1..], &n[1..])), || json!({ "t": t }));
    }
    out
}

/// Per-query surrogate against its score gradient.
pub fn check_surrogate(rng: &mut ChaCha8Rng, s: &CheckSettings) -> CheckResult {
    let p = SmoothHeavisideParams::default();
    let mut out = CheckResult::new("hap_surrogate");
    let bps = p.boundaries();
    for _ in 0..s.trials {
        let depth = rng.random_range(1..=3usize);
        let n = 12;
        let (levels, relevance) = loop {
            let levels: Vec<usize> = (0..n).map(|_| rng.random_range(0..=depth)).collect();
            if levels.iter().any(|&l| l > 0) {
                let alpha = rng.random_range(0.5..3.0);
                let mut counts = vec![0; depth + 1];
                levels.iter().for_each(|&l| counts[l] += 1);
                let table = RelevanceProfile::Alpha { alpha }.level_table(depth, &counts).expect("alpha table");
                break (levels.clone(), levels.iter().map(|&l| table[l]).collect::<Vec<f64>>());
            }
        };
        let scores = loop {
            let sc: Vec<f64> = (0..n).map(|_| rng.random_range(-0.12..0.12)).collect();
            if !near_breakpoint(pair_diffs(&sc), &bps, 10.0 * s.eps) {
                break sc;
            }
        };
        let g = hap_surrogate_parts(&scores, &levels, &relevance, &p).expect("positives exist");
        let num = numeric_gradient(&scores, s.eps, |x| hap_surrogate_parts(x, &levels, &relevance, &p).unwrap().value);
        out.record(relative_error(&g.d_scores, &num), || {
            json!({ "scores": scores, "levels": levels, "relevance": relevance })
        });
    }
    out
}

/// Clustering loss against both its embedding and proxy gradients.
pub fn check_clustering(rng: &mut ChaCha8Rng, s: &CheckSettings) -> CheckResult {
    let mut out = CheckResult::new("clustering_loss");
    let (classes, dim) = (8, 6);
    for _ in 0..s.trials {
        let sigma = rng.random_range(0.05..1.0);
        let bank = ProxyBank::random(classes, dim, sigma, rng).expect("nonzero proxies");
        let v = gaussian(rng, dim);
        let y = rng.random_range(0..classes);
        let g = clustering_loss(&v, y, &bank).unwrap();
        let num_v = numeric_gradient(&v, s.eps, |x| clustering_loss(x, y, &bank).unwrap().value);
        let flat = bank.proxies.concat();
        let num_p = numeric_gradient(&flat, s.eps, |x| {
            let b = ProxyBank { proxies: x.chunks(dim).map(<[f64]>::to_vec).collect(), sigma };
            clustering_loss(&v, y, &b).unwrap().value
        });
        let err = relative_error(&g.d_embedding, &num_v).max(relative_error(&g.d_proxies.concat(), &num_p));
        out.record(err, || json!({ "v": v, "y": y, "sigma": sigma, "proxies": bank.proxies }));
    }
    out
}

/// Cosine head: `f = Σ c_j s_j` against raw embeddings.
pub fn check_cosine(rng: &mut ChaCha8Rng, s: &CheckSettings) -> CheckResult {
    let mut out = CheckResult::new("cosine_head");
    let (n, dim) = (6, 5);
    for _ in 0..s.trials {
        let emb: Vec<Vec<f64>> = (0..n).map(|_| gaussian(rng, dim)).collect();
        let q = rng.random_range(0..n);
        let c = gaussian(rng, n - 1);
        let (_, back) = cosine_scores(&emb, q).unwrap();
        let analytic = back.backward(&c).concat();
        let num = numeric_gradient(&emb.concat(), s.eps, |x| {
            let rows: Vec<Vec<f64>> = x.chunks(dim).map(<[f64]>::to_vec).collect();
            let (sc, _) = cosine_scores(&rows, q).unwrap();
            sc.iter().zip(&c).map(|(a, b)| a * b).sum()
        });
        out.record(relative_error(&analytic, &num), || json!({ "embeddings": emb, "query": q, "weights": c }));
    }
    out
}

/// Full objective through the cosine head to embeddings and proxies.
pub fn check_happier(rng: &mut ChaCha8Rng, s: &CheckSettings) -> CheckResult {
    let mut out = CheckResult::new("happier_loss");
    let (b, dim, classes) = (16, 8, 8);
    let cfg = HappierConfig::default();
    let bps = cfg.heaviside.boundaries();
    // leaves 0..8 under 4 parents under 2 roots
    let paths: Vec<Vec<u32>> = (0..classes as u32).map(|c| vec![c / 4, c / 2, c]).collect();
    for _ in 0..s.trials {
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let emb = loop {
            let emb: Vec<Vec<f64>> = (0..b).map(|_| gaussian(rng, dim)).collect();
            let (unit, norms): (Vec<Vec<f64>>, Vec<f64>) = emb
                .iter()
                .map(|v| {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    (v.iter().map(|x| x / n).collect(), n)
                })
                .unzip();
            // one coordinate step moves a cosine by at most eps / ‖v‖
            let margin = 20.0 * s.eps / norms.iter().cloned().fold(f64::INFINITY, f64::min);
            let near = (0..b).any(|q| {
                let sc: Vec<f64> = (0..b)
                    .filter(|&j| j != q)
                    .map(|j| unit[q].iter().zip(&unit[j]).map(|(x, y)| x * y).sum())
                    .collect();
                near_breakpoint(pair_diffs(&sc), &bps, margin)
            });
            if !near {
                break emb;
            }
        };
        let bank = ProxyBank::random(classes, dim, 0.05, rng).expect("nonzero proxies");
        let refs: Vec<&[u32]> = labels.iter().map(|&c| paths[c].as_slice()).collect();
        let lab = BatchLabels { paths: &refs, classes: &labels };
        let value = |e: &[Vec<f64>], bank: &ProxyBank| -> Result<f64, LossError> {
            Ok(happier_loss(e, lab, bank, &cfg)?.value)
        };
        let g = happier_loss(&emb, lab, &bank, &cfg).unwrap();
        let num_e = numeric_gradient(&emb.concat(), s.eps, |x| {
            let rows: Vec<Vec<f64>> = x.chunks(dim).map(<[f64]>::to_vec).collect();
            value(&rows, &bank).unwrap()
        });
        let num_p = numeric_gradient(&bank.proxies.concat(), s.eps, |x| {
            let pb = ProxyBank { proxies: x.chunks(dim).map(<[f64]>::to_vec).collect(), sigma: bank.sigma };
            value(&emb, &pb).unwrap()
        });
        let err = relative_error(&g.d_embeddings.concat(), &num_e).max(relative_error(&g.d_proxies.concat(), &num_p));
        out.record(err, || json!({ "embeddings": emb, "classes": labels, "proxies": bank.proxies }));
    }
    out
}

/// Every suite, in a fixed order, from one generator seeded by `s.seed`.
pub fn run_all(s: &CheckSettings) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    vec![
        check_heaviside(&mut rng, s),
        check_surrogate(&mut rng, s),
        check_clustering(&mut rng, s),
        check_cosine(&mut rng, s),
        check_happier(&mut rng, s),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_scale() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        // tiny gradients are compared absolutely against 1e-6
        assert!((relative_error(&[1e-9], &[0.0]) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0], 1e-4, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn small_run_passes() {
        let s = CheckSettings { seed: 7, trials: 5, eps: 1e-5 };
        for r in run_all(&s) {
            assert_eq!(r.trials, 5);
            assert!(r.passed(1e-4), "{} {}", r.name, r.max_rel_error);
        }
    }
}
