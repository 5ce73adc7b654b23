//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use hap_core::gradcheck::{check_clustering, check_cosine, check_surrogate, CheckSettings};
use hap_core::losses::{hap_surrogate, SmoothHeavisideParams};
use hap_core::metrics::{ap_level, h_ap, h_ap_pr_oracle, h_rank, MetricsReport, ScoredRanking};
use hap_core::synthgen::{generate, SynthDataset, SynthSpec};
use hap_core::taxonomy::{RelevancePartition, RelevanceProfile};
use hap_core::trainer::{fit, TrainerConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Random ranking with distinct scores, levels in `0..=depth` and at
/// least one positive.
fn random_ranking(rng: &mut ChaCha8Rng, depth: usize, max_n: usize, profile: &RelevanceProfile) -> ScoredRanking {
    loop {
        let n = rng.random_range(1..=max_n);
        let levels: Vec<usize> = (0..n).map(|_| rng.random_range(0..=depth)).collect();
        if levels.iter().all(|&l| l == 0) {
            continue;
        }
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        scores.shuffle(rng);
        // weighted-AP relevance needs a candidate at every positive level
        let Ok(part) = RelevancePartition::from_levels("q", depth, levels).assign_relevance(profile) else {
            continue;
        };
        let ids = (0..n).map(|i| format!("{i:06}")).collect();
        return ScoredRanking::from_partition(&part, ids, scores).unwrap();
    }
}

/// Textbook binary AP over the sorted list: mean precision at each hit.
fn binary_ap_oracle(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut sum) = (0.0, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1.0;
            sum += hits / (pos + 1) as f64;
        }
    }
    sum / hits
}

fn criterion_1() -> Outcome {
    let top = ScoredRanking::from_parts(vec![2.0, 1.0], vec![2, 3], vec![2.0 / 3.0, 1.0], 3).unwrap();
    let bottom = ScoredRanking::from_parts(vec![2.0, 1.0], vec![1, 3], vec![1.0 / 3.0, 1.0], 3).unwrap();
    let a = h_rank(&top, 1).unwrap();
    let b = h_rank(&bottom, 1).unwrap();
    let pass = a == 5.0 / 3.0 && b == 4.0 / 3.0;
    outcome(
        pass,
        format!("top {a:?} (want {:?}), bottom {b:?} (want {:?}), tolerance 0", 5.0 / 3.0, 4.0 / 3.0),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let profile = RelevanceProfile::default();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let r = random_ranking(&mut rng, 1, 50, &profile);
        let positive: Vec<bool> = r.levels.iter().map(|&l| l > 0).collect();
        worst = worst.max((h_ap(&r).unwrap() - binary_ap_oracle(&r.scores, &positive)).abs());
    }
    let t = start.elapsed();
    outcome(worst <= 1e-12 && t < Duration::from_secs(5), format!("max |diff| {worst:.2e} <= 1e-12, {t:.2?} < 5s"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let depth = rng.random_range(1..=4);
        let profile = RelevanceProfile::alpha(rng.random_range(0.25..4.0)).unwrap();
        let r = random_ranking(&mut rng, depth, 50, &profile);
        worst = worst.max((h_ap(&r).unwrap() - h_ap_pr_oracle(&r).unwrap()).abs());
    }
    let t = start.elapsed();
    outcome(worst <= 1e-12 && t < Duration::from_secs(5), format!("max |diff| {worst:.2e} <= 1e-12, {t:.2?} < 5s"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 500 {
        let depth = rng.random_range(2..=3);
        let raw: Vec<f64> = (0..depth).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let Ok(profile) = RelevanceProfile::weighted_ap(weights.clone()) else { continue };
        let r = random_ranking(&mut rng, depth, 50, &profile);
        let sum: f64 = (1..=depth).map(|l| weights[l - 1] * ap_level(&r, l).unwrap()).sum();
        worst = worst.max((h_ap(&r).unwrap() - sum).abs());
        checked += 1;
    }
    let t = start.elapsed();
    outcome(worst <= 1e-9 && t < Duration::from_secs(5), format!("max |diff| {worst:.2e} <= 1e-9, {t:.2?} < 5s"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let depth = rng.random_range(1..=4);
        let profile = RelevanceProfile::alpha(rng.random_range(0.25..4.0)).unwrap();
        let r = random_ranking(&mut rng, depth, 50, &profile);
        // sort scores by descending relevance
        let mut order: Vec<usize> = (0..r.len()).collect();
        order.sort_by(|&a, &b| r.relevance[b].total_cmp(&r.relevance[a]));
        let mut scores = vec![0.0; r.len()];
        for (pos, &i) in order.iter().enumerate() {
            scores[i] = (r.len() - pos) as f64;
        }
        let sorted = ScoredRanking::new("q", r.ids.clone(), scores, r.levels.clone(), r.relevance.clone(), depth).unwrap();
        worst = worst.max((h_ap(&sorted).unwrap() - 1.0).abs());
    }
    outcome(worst <= 1e-12, format!("max |h_ap - 1| {worst:.2e} <= 1e-12"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = SmoothHeavisideParams::default();
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let depth = rng.random_range(1..=4);
        let profile = RelevanceProfile::alpha(rng.random_range(0.25..4.0)).unwrap();
        let mut r = random_ranking(&mut rng, depth, 30, &profile);
        // scores on the scale of cosine similarities so every branch is hit
        r.scores.iter_mut().for_each(|s| *s = rng.random_range(-1.0..1.0));
        let gap = hap_surrogate(&r, &p).unwrap().value - (1.0 - h_ap(&r).unwrap());
        worst = worst.min(gap);
    }
    outcome(worst >= -1e-12, format!("min surrogate - (1 - h_ap) = {worst:.3e} >= -1e-12"))
}

fn criterion_7() -> Outcome {
    let s = CheckSettings { seed: 7, trials: 100, eps: 1e-5 };
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let start = Instant::now();
    let results = [check_surrogate(&mut rng, &s), check_clustering(&mut rng, &s), check_cosine(&mut rng, &s)];
    let t = start.elapsed();
    let pass = results.iter().all(|r| r.trials == 100 && r.passed(1e-4)) && t < Duration::from_secs(30);
    let detail: Vec<String> = results.iter().map(|r| format!("{} {:.2e}", r.name, r.max_rel_error)).collect();
    outcome(pass, format!("{} <= 1e-4, {t:.2?} < 30s", detail.join(", ")))
}

/// The synthetic dataset of the directional experiments.
fn synthetic() -> SynthDataset {
    generate(&SynthSpec::new(vec![4, 4, 4], 10, 32, 0)).unwrap()
}

/// Linear 32 → 16 model, Adam, 30 epochs of 8 classes × 4 instances,
/// default objective settings.
fn base_config(seed: u64) -> TrainerConfig {
    let mut c = TrainerConfig::linear(32, 16, 0.01, 30, 32);
    c.seed = seed;
    c.eval_every = 30;
    c
}

const SEEDS: [u64; 3] = [0, 1, 2];

/// Final holdout reports averaged over the training seeds:
/// `(h_ap, ap_level_1, ap_level_3)`.
fn mean_final(data: &SynthDataset, tweak: impl Fn(&mut TrainerConfig)) -> (f64, f64, f64) {
    let mut acc = (0.0, 0.0, 0.0);
    for seed in SEEDS {
        let mut cfg = base_config(seed);
        tweak(&mut cfg);
        let (_, history) = fit(cfg, data).unwrap();
        let r: &MetricsReport = &history.last().unwrap().report;
        acc.0 += r.h_ap;
        acc.1 += r.ap_level[0].unwrap();
        acc.2 += r.ap_level[2].unwrap();
    }
    let n = SEEDS.len() as f64;
    (acc.0 / n, acc.1 / n, acc.2 / n)
}

struct Runs {
    happier: (f64, f64, f64),
    happier_time: Duration,
    baseline: (f64, f64, f64),
    lambda0: (f64, f64, f64),
    alpha3: (f64, f64, f64),
}

fn training_runs() -> Runs {
    let data = synthetic();
    let start = Instant::now();
    let happier = mean_final(&data, |_| {});
    let happier_time = start.elapsed();
    let baseline = mean_final(&data, |c| {
        c.happier.lambda = 0.0;
        c.happier.relevance = RelevanceProfile::explicit(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
    });
    let lambda0 = mean_final(&data, |c| c.happier.lambda = 0.0);
    let alpha3 = mean_final(&data, |c| c.happier.relevance = RelevanceProfile::alpha(3.0).unwrap());
    Runs { happier, happier_time, baseline, lambda0, alpha3 }
}

fn criterion_8(r: &Runs) -> Outcome {
    let coarse = 100.0 * (r.happier.1 - r.baseline.1);
    let hap = 100.0 * (r.happier.0 - r.baseline.0);
    let pass = coarse >= 5.0 && hap >= 2.0 && r.happier_time < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "coarse AP {:.4} vs {:.4} (+{coarse:.2} >= 5), H-AP {:.4} vs {:.4} (+{hap:.2} >= 2), {:.2?} < 10min",
            r.happier.1, r.baseline.1, r.happier.0, r.baseline.0, r.happier_time
        ),
    )
}

fn criterion_9(r: &Runs) -> Outcome {
    outcome(r.happier.0 >= r.lambda0.0, format!("H-AP lambda=0.1 {:.4} >= lambda=0 {:.4}", r.happier.0, r.lambda0.0))
}

fn criterion_10(r: &Runs) -> Outcome {
    outcome(r.alpha3.2 >= r.happier.2, format!("fine AP alpha=3 {:.4} >= alpha=1 {:.4}", r.alpha3.2, r.happier.2))
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let bin = env!("CARGO_BIN_EXE_hap");
    let synth = Command::new(bin)
        .args(["synth", "--branching", "4,4,4", "--per-leaf", "10", "--dim", "32", "--seed", "0", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    if !synth.status.success() {
        return outcome(false, format!("synth failed: {}", String::from_utf8_lossy(&synth.stderr)));
    }
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, serde_json::to_string(&base_config(0)).unwrap()).unwrap();
    let mut histories = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = Command::new(bin).arg("train").arg("--config").arg(&cfg).arg("--data").arg(&data).arg("--out").arg(&out).output().unwrap();
        if !o.status.success() {
            return outcome(false, format!("train failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        histories.push(std::fs::read(out.join("history.json")).unwrap());
    }
    let same = histories[0] == histories[1];
    outcome(same, format!("history.json identical across two runs ({} bytes)", histories[0].len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    let runs = training_runs();
    report(8, criterion_8(&runs));
    report(9, criterion_9(&runs));
    report(10, criterion_10(&runs));
    report(11, criterion_11());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
