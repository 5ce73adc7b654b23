//! The `hap` command line: `eval`, `train`, `synth` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure
//! (including a non-finite training loss).

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::gradcheck::{run_all, CheckSettings};
use crate::io;
use crate::metrics::{evaluate_dataset_par, MetricsReport};
use crate::synthgen::{generate, SynthError, SynthSpec};
use crate::taxonomy::RelevanceProfile;
use crate::trainer::{history_json, Trainer, TrainerConfig, TrainerError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hap", version, about = "Hierarchical average precision: evaluation, training and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score rankings against a taxonomy.
    Eval(EvalArgs),
    /// Train an embedding model on a dataset directory.
    Train(TrainArgs),
    /// Write a synthetic hierarchical dataset.
    Synth(SynthArgs),
    /// Finite-difference checks of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// `instance_id<TAB>label/label/...` per line.
    #[arg(long)]
    taxonomy: PathBuf,
    /// `query_id<TAB>candidate_id<TAB>score` per line.
    #[arg(long)]
    scores: PathBuf,
    /// `alpha:A` or `weights:w1,...,wL`.
    #[arg(long, default_value = "alpha:1", value_parser = parse_relevance)]
    relevance: RelevanceProfile,
    /// Cut-offs for fine-level R@k.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    ks: Vec<usize>,
    /// Report JSON destination.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Trainer configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory with taxonomy.tsv, split.txt and (for linear models) features.tsv.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Children per node, coarsest level first.
    #[arg(long, value_delimiter = ',', required = true)]
    branching: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    per_leaf: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instance spread around leaf centers.
    #[arg(long)]
    noise: Option<f64>,
    /// Per-level center spreads, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    level_spread: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn parse_relevance(s: &str) -> Result<RelevanceProfile, String> {
    let (kind, rest) = s.split_once(':').ok_or("expected alpha:A or weights:w1,...,wL")?;
    let profile = match kind {
        "alpha" => {
            let a: f64 = rest.trim().parse().map_err(|e| format!("bad alpha {rest:?}: {e}"))?;
            RelevanceProfile::alpha(a)
        }
        "weights" => {
            let w = rest
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("bad weights {rest:?}: {e}"))?;
            RelevanceProfile::weighted_ap(w)
        }
        other => return Err(format!("unknown relevance kind {other:?}")),
    };
    profile.map_err(|e| e.to_string())
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    msg: String,
}

fn fail(code: i32, msg: impl Display) -> Failure {
    Failure { code, msg: msg.to_string() }
}

fn data_err(e: impl Display) -> Failure {
    fail(EXIT_DATA, e)
}

fn require_file(p: &Path) -> Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(fail(EXIT_DATA, format!("{}: no such file", p.display())))
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Eval(a) => eval_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

fn print_report(r: &MetricsReport) {
    println!("queries {}", r.queries());
    println!("excluded {}", r.excluded);
    println!("h_ap {:.6}", r.h_ap);
    for (l, v) in r.ap_level.iter().enumerate() {
        println!("ap_level_{} {}", l + 1, fmt_opt(*v));
    }
    println!("asi {:.6}", r.asi);
    println!("ndcg {:.6}", r.ndcg);
    for (k, v) in r.ks.iter().zip(&r.recall_at_k) {
        println!("recall_at_{k} {}", fmt_opt(*v));
    }
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v).map_err(data_err)?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes()).map_err(data_err)
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    if a.threads == 0 || a.ks.contains(&0) {
        return Err(fail(EXIT_USAGE, "--threads and --ks entries must be positive"));
    }
    require_file(&a.taxonomy)?;
    require_file(&a.scores)?;
    let taxonomy = io::load_taxonomy(&a.taxonomy).map_err(data_err)?;
    if let RelevanceProfile::WeightedAp { weights } = &a.relevance {
        if weights.len() != taxonomy.depth() {
            return Err(fail(
                EXIT_USAGE,
                format!("--relevance has {} weights but the taxonomy has {} levels", weights.len(), taxonomy.depth()),
            ));
        }
    }
    let groups = io::parse_scores(&io::read_text(&a.scores).map_err(data_err)?).map_err(|e| data_err(e.at(&a.scores)))?;
    let rankings = io::build_rankings(&taxonomy, &groups, &a.relevance).map_err(data_err)?;
    let report = evaluate_dataset_par(&rankings, &a.ks, a.threads).map_err(data_err)?;
    if let Some(out) = &a.out {
        write_json(out, &report.to_json())?;
    }
    print_report(&report);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    require_file(&a.config)?;
    if !a.data.is_dir() {
        return Err(fail(EXIT_DATA, format!("{}: not a directory", a.data.display())));
    }
    let text = io::read_text(&a.config).map_err(data_err)?;
    let config: TrainerConfig =
        serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", a.config.display())))?;
    if !(0.0..=1.0).contains(&config.happier.lambda) {
        return Err(fail(EXIT_USAGE, format!("lambda must lie in [0, 1], got {}", config.happier.lambda)));
    }
    let data = io::read_dataset(&a.data).map_err(data_err)?;
    let trainer = Trainer::new(config, &data).map_err(data_err)?;
    std::fs::create_dir_all(&a.out).map_err(|e| data_err(format!("{}: {e}", a.out.display())))?;

    let (state, history) = trainer.fit().map_err(|e| match e {
        TrainerError::NonFiniteLoss { .. } => fail(EXIT_CHECK, e),
        other => data_err(other),
    })?;
    for h in &history {
        println!(
            "epoch {} step {} loss {} h_ap {:.6} asi {:.6} ndcg {:.6}",
            h.epoch,
            h.step,
            h.train_loss.map_or_else(|| "n/a".to_string(), |l| format!("{l:.6}")),
            h.report.h_ap,
            h.report.asi,
            h.report.ndcg
        );
    }
    write_json(&a.out.join("history.json"), &history_json(&history))?;
    let last = &history.last().expect("history starts with the initial evaluation").report;
    write_json(&a.out.join("report.json"), &last.to_json())?;
    let emb = trainer.embeddings(&state);
    let text = io::format_vectors(emb.iter().map(|(id, v)| (id.as_str(), v.as_slice())));
    io::write_atomic(&a.out.join("embeddings.tsv"), text.as_bytes()).map_err(data_err)?;
    write_json(&a.out.join("checkpoint.json"), &trainer.checkpoint_sidecar(&state))?;
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = SynthSpec::new(a.branching, a.per_leaf, a.dim, a.seed);
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    if let Some(s) = a.level_spread {
        spec.level_spread = s;
    }
    let d = generate(&spec).map_err(|e| match e {
        SynthError::Taxonomy(_) => data_err(e),
        _ => fail(EXIT_USAGE, e),
    })?;
    io::write_dataset(&a.out, &d).map_err(data_err)?;
    println!("instances {}", d.taxonomy.len());
    println!("leaves {}", d.taxonomy.leaf_count());
    println!("holdout_leaves {}", d.holdout_leaves.len());
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<(), Failure> {
    if a.trials == 0 || !(a.eps.is_finite() && a.eps > 0.0) || !(a.tol >= 0.0) {
        return Err(fail(EXIT_USAGE, "--trials and --eps must be positive, --tol non-negative"));
    }
    let results = run_all(&CheckSettings { seed: a.seed, trials: a.trials, eps: a.eps });
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.passed(a.tol);
        println!("{} trials {} max_rel_error {:.3e} {}", r.name, r.trials, r.max_rel_error, if ok { "ok" } else { "FAIL" });
        if !ok {
            eprintln!("replay {} {}", r.name, r.worst);
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(fail(EXIT_CHECK, format!("gradient check above tolerance {}: {}", a.tol, failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relevance_flag() {
        assert_eq!(parse_relevance("alpha:2").unwrap(), RelevanceProfile::Alpha { alpha: 2.0 });
        assert_eq!(
            parse_relevance("weights:0.25,0.75").unwrap(),
            RelevanceProfile::WeightedAp { weights: vec![0.25, 0.75] }
        );
        assert!(parse_relevance("weights:0.5,0.6").is_err());
        assert!(parse_relevance("alpha").is_err());
        assert!(parse_relevance("beta:1").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["hap"]), EXIT_USAGE);
        assert_eq!(run(["hap", "eval", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["hap", "gradcheck", "--trials", "x"]), EXIT_USAGE);
        assert_eq!(run(["hap", "--help"]), EXIT_OK);
    }
}
