//! `vdeval`: reproducible evaluation runs for generative visual-dialogue models.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vdeval_core::{Error, ErrorClass};

use crate::config::{CcaSection, ClusterSection, ConsensusSection, RunConfig};

#[derive(Parser)]
#[command(name = "vdeval", version, about = "Evaluation toolkit for generative visual-dialogue models")]
struct Cli {
    /// TOML run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    error_json: bool,
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a CCA model between question and answer embeddings.
    Fit,
    /// Build per-question reference answer sets (human or automatic).
    BuildRefsets,
    /// Compare reference sets against the human sets: IOU, precision, recall.
    VerifyRefsets,
    /// Rank candidate answers (CCA or nearest neighbours) and report MR, MRR, R@k, NDCG.
    RankEval,
    /// Score generated answers, or a baseline, against reference sets.
    GenEval,
    /// Sample answers with the correlation-weighted generator.
    Generate,
    /// Report how often no candidate is fully relevant and how often the ground truth is irrelevant.
    Audit,
    /// Report mean correlation, spread and size of the correlation clusters.
    ClusterAudit,
    /// Ground-truth rank histogram from a ranks CSV.
    Histogram,
}

#[derive(Args)]
struct Flags {
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Split label of --corpus: train, val or test.
    #[arg(long, global = true)]
    split: Option<String>,
    #[arg(long, global = true)]
    train_corpus: Option<PathBuf>,
    /// Dense relevance annotations for --corpus.
    #[arg(long, global = true)]
    dense: Option<PathBuf>,
    /// Word vectors (text .vec or binary cache).
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Precomputed per-sentence vectors.
    #[arg(long, global = true)]
    ctx_vectors: Option<PathBuf>,
    #[arg(long, global = true)]
    generations: Option<PathBuf>,
    /// Reference sets in the densified JSON format.
    #[arg(long, global = true)]
    refsets: Option<PathBuf>,
    /// Ranks CSV written by rank-eval.
    #[arg(long, global = true)]
    ranks: Option<PathBuf>,
    /// CCA model file (written by fit, read by the other commands).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generations per question.
    #[arg(long, global = true)]
    k_gen: Option<usize>,
    /// Neighbour questions forming the generator's pseudo-candidate set.
    #[arg(long, global = true)]
    neighbours: Option<usize>,
    /// Neighbours averaged by the nearest-neighbour ranker.
    #[arg(long, global = true)]
    k_nn: Option<usize>,
    #[arg(long, global = true, value_parser = ["all-scored", "non-zero"])]
    ndcg_cutoff: Option<String>,
    /// Training pairs for fit.
    #[arg(long, global = true, value_parser = ["gt", "dense", "refsets"])]
    pairing: Option<String>,
    #[arg(long, global = true, value_parser = ["cca", "nn"])]
    ranker: Option<String>,
    /// Score a baseline instead of generations.
    #[arg(long, global = true, value_parser = ["gamma", "gt"])]
    baseline: Option<String>,
    #[arg(long, global = true)]
    model_tag: Option<String>,
    /// Number of canonical components.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Eigenvalue weighting exponent.
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    ridge: Option<f64>,
    #[arg(long, global = true, value_parser = ["sigma", "meanshift", "agglo", "human"])]
    method: Option<String>,
    /// Cluster question correlations, keeping the cluster of this answer.
    #[arg(long, global = true, value_parser = ["gt", "max"])]
    anchor: Option<String>,
    #[arg(long, global = true)]
    bandwidth: Option<f64>,
    #[arg(long, global = true)]
    n_clusters: Option<usize>,
    /// Comma-separated metric names, e.g. cider1,meteor,bleu4,l2_word,cs_ctx.
    #[arg(long, global = true, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[arg(long, global = true)]
    bleu_epsilon: Option<f64>,
}

impl Flags {
    fn into_config(self) -> RunConfig {
        RunConfig {
            corpus: self.corpus,
            split: self.split,
            train_corpus: self.train_corpus,
            dense: self.dense,
            embeddings: self.embeddings,
            ctx_vectors: self.ctx_vectors,
            generations: self.generations,
            refsets: self.refsets,
            ranks: self.ranks,
            model: self.model,
            out: self.out,
            seed: self.seed,
            k_gen: self.k_gen,
            neighbours: self.neighbours,
            k_nn: self.k_nn,
            ndcg_cutoff: self.ndcg_cutoff,
            pairing: self.pairing,
            ranker: self.ranker,
            baseline: self.baseline,
            model_tag: self.model_tag,
            cca: CcaSection {
                k: self.k,
                p: self.p,
                ridge: self.ridge,
            },
            cluster: ClusterSection {
                method: self.method,
                anchor: self.anchor,
                bandwidth: self.bandwidth,
                n_clusters: self.n_clusters,
            },
            consensus: ConsensusSection {
                metrics: self.metrics,
                bleu_epsilon: self.bleu_epsilon,
            },
        }
    }
}

fn run(cli: Cli) -> vdeval_core::Result<()> {
    let flags = cli.flags.into_config();
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?.overlay(&flags),
        None => flags,
    };
    match cli.command {
        Command::Fit => commands::fit(&cfg),
        Command::BuildRefsets => commands::build_refsets(&cfg),
        Command::VerifyRefsets => commands::verify_refsets(&cfg),
        Command::RankEval => commands::rank_eval(&cfg),
        Command::GenEval => commands::gen_eval(&cfg),
        Command::Generate => commands::generate(&cfg),
        Command::Audit => commands::audit(&cfg),
        Command::ClusterAudit => commands::cluster_audit(&cfg),
        Command::Histogram => commands::histogram(&cfg),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn report_error(e: &Error, as_json: bool) {
    if as_json {
        let class = match e.class() {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        };
        let body = serde_json::json!({
            "error": { "class": class, "kind": e.kind(), "message": e.to_string() }
        });
        eprintln!("{body}");
    } else {
        eprintln!("error: {e}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let as_json = cli.error_json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e, as_json);
            ExitCode::from(exit_code(e.class()))
        }
    }
}
