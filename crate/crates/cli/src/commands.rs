use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vdeval_core::cca::{fit_pairs, rank_candidates, CcaModel, CcaParams, Projected};
use vdeval_core::consensus::{
    baseline_report, build_refset_idf, k_sample_report, load_generations, write_generations, Baseline,
    ConsensusReport, Metric, Scorer, Space,
};
use vdeval_core::corpus::{audit_relevance, load_dense_annotations, load_dialogues, Corpus, DenseAnnotation, Split};
use vdeval_core::embed::{open_embedding_table, EmbeddingTable, PrecomputedVectors};
use vdeval_core::generator::{generate_for_rounds, rank_nn_aq, AnswerBank, NnBank, DEFAULT_NEIGHBOURS};
use vdeval_core::pipeline::{embed_corpus, gt_pairs, project_corpus, refset_pairs, EmbeddedCorpus};
use vdeval_core::rankmetrics::{
    histogram_entropy, ndcg_summary, rank_histogram, rank_suite, NdcgCutoff, NdcgSummary, RankRecord, RankSummary,
};
use vdeval_core::refsets::cluster::{mean, population_std};
use vdeval_core::refsets::{
    build_all, build_human_refsets, correlation_cluster_audit, intersection_metrics, load_dense_visdial,
    write_dense_visdial, Anchor, ClusterMethod, Construction, ReferenceSet, RefsetBuilder,
};
use vdeval_core::report::{sha256_hex, Conventions};
use vdeval_core::{Error, Result};

use crate::config::RunConfig;
use crate::output::{write_atomic, Reporter};

/// Agglomerative cluster count when the config leaves it unset.
const DEFAULT_N_CLUSTERS: usize = 5;

fn split_of(cfg: &RunConfig) -> Result<Split> {
    cfg.split.as_deref().unwrap_or("val").parse()
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    load_dialogues(cfg.require(&cfg.corpus, "corpus")?, split_of(cfg)?)
}

fn load_train_corpus(cfg: &RunConfig) -> Result<Corpus> {
    load_dialogues(cfg.require(&cfg.train_corpus, "train-corpus")?, Split::Train)
}

fn load_table(cfg: &RunConfig) -> Result<EmbeddingTable> {
    open_embedding_table(cfg.require(&cfg.embeddings, "embeddings")?)
}

fn load_model(cfg: &RunConfig) -> Result<CcaModel> {
    CcaModel::load(cfg.require(&cfg.model, "model")?)
}

fn load_dense(cfg: &RunConfig, corpus: &Corpus) -> Result<Vec<DenseAnnotation>> {
    load_dense_annotations(cfg.require(&cfg.dense, "dense")?, corpus)
}

fn conventions(cfg: &RunConfig) -> Result<Conventions> {
    let mut c = Conventions::default().with_ndcg_cutoff(ndcg_cutoff(cfg)?);
    if let Some(eps) = cfg.consensus.bleu_epsilon {
        c.bleu_epsilon = eps;
    }
    Ok(c)
}

fn ndcg_cutoff(cfg: &RunConfig) -> Result<NdcgCutoff> {
    match cfg.ndcg_cutoff.as_deref().unwrap_or("all-scored") {
        "all-scored" | "all_scored" => Ok(NdcgCutoff::AllScored),
        "non-zero" | "non_zero" => Ok(NdcgCutoff::NonZero),
        other => Err(Error::Config(format!("unknown ndcg cutoff {other:?}"))),
    }
}

fn cluster_method(cfg: &RunConfig) -> Result<Option<ClusterMethod>> {
    let c = &cfg.cluster;
    Ok(Some(match c.method.as_deref().unwrap_or("sigma") {
        "sigma" => ClusterMethod::Sigma,
        "meanshift" => ClusterMethod::MeanShift { bandwidth: c.bandwidth },
        "agglo" | "agglomerative" => {
            let n = c.n_clusters.unwrap_or(DEFAULT_N_CLUSTERS);
            if n == 0 || n > 99 {
                return Err(Error::Config(format!("n_clusters {n} outside 1..=99")));
            }
            ClusterMethod::Agglomerative { n_clusters: n }
        }
        "human" => return Ok(None),
        other => Err(Error::Config(format!("unknown clustering method {other:?}")))?,
    }))
}

fn anchor(cfg: &RunConfig) -> Result<Option<Anchor>> {
    match cfg.cluster.anchor.as_deref() {
        None => Ok(None),
        Some("gt") => Ok(Some(Anchor::Gt)),
        Some("max") => Ok(Some(Anchor::Max)),
        Some(other) => Err(Error::Config(format!("unknown anchor {other:?}"))),
    }
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn stat(values: &[f64]) -> Stat {
    Stat {
        mean: mean(values),
        std: population_std(values),
    }
}

#[derive(Serialize)]
struct Stat {
    mean: f64,
    std: f64,
}

// ---------------------------------------------------------------- fit

#[derive(Serialize)]
struct FitResult {
    pairing: String,
    num_pairs: usize,
    dims: [usize; 2],
    k: usize,
    p: f64,
    ridge: f64,
    eigenvalues: Vec<f64>,
    raw_eigenvalues: Vec<f64>,
    model_sha256: String,
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let mut rep = Reporter::new("fit", cfg, conventions(cfg)?)?;
    let corpus = match cfg.train_corpus {
        Some(_) => load_train_corpus(cfg)?,
        None => load_corpus(cfg)?,
    };
    let table = load_table(cfg)?;
    let pairing = cfg.pairing.as_deref().unwrap_or("gt");
    let pairs = match pairing {
        "gt" => gt_pairs(&corpus),
        "dense" => {
            let anns = load_dense(cfg, &corpus)?;
            refset_pairs(&corpus, &build_human_refsets(&corpus, &anns)?)?
        }
        "refsets" => {
            let sets = load_dense_visdial(cfg.require(&cfg.refsets, "refsets")?)?;
            refset_pairs(&corpus, &sets)?
        }
        other => return Err(Error::Config(format!("unknown pairing {other:?}"))),
    };
    let embedded = embed_corpus(&corpus, &table)?;
    let params = CcaParams {
        k: cfg.cca.k,
        p: cfg.cca.p.unwrap_or(0.0),
        ridge: cfg.cca.ridge.unwrap_or(CcaParams::default().ridge),
    };
    let mut model = fit_pairs(&embedded.questions, &embedded.answers, &pairs, params)?;
    model.set_embedding_policy(table.policy());
    let model_path = cfg
        .model
        .as_deref()
        .ok_or_else(|| Error::Config("--model is required as the output path".into()))?;
    let text = model.to_json();
    write_atomic(model_path, text.as_bytes())?;
    rep.json(
        "fit.json",
        &FitResult {
            pairing: pairing.to_owned(),
            num_pairs: model.num_pairs(),
            dims: [model.dim(vdeval_core::QUESTION_VIEW), model.dim(vdeval_core::ANSWER_VIEW)],
            k: model.k(),
            p: model.p(),
            ridge: model.ridge(),
            eigenvalues: model.eigenvalues().to_vec(),
            raw_eigenvalues: model.raw_eigenvalues().to_vec(),
            model_sha256: sha256_hex(text.as_bytes()),
        },
    )
}

// ---------------------------------------------------------------- refsets

fn projected(cfg: &RunConfig, corpus: &Corpus) -> Result<(Vec<Projected>, Vec<Projected>)> {
    let model = load_model(cfg)?;
    let table = load_table(cfg)?;
    if let Some(policy) = model.embedding_policy() {
        if *policy != table.policy() {
            log::warn!("embedding table policy differs from the one the model was fitted with");
        }
    }
    project_corpus(&model, &embed_corpus(corpus, &table)?)
}

#[derive(Serialize)]
struct RefsetSummary {
    method: String,
    anchor: Option<Anchor>,
    sets: usize,
    pairs: usize,
    size: Stat,
    degenerate: usize,
    pct_gt_in_cluster: Option<f64>,
    refsets_sha256: String,
}

#[derive(Serialize)]
struct SizeRow {
    image_id: u64,
    round: u8,
    size: usize,
    degenerate: bool,
    gt_in_cluster: Option<bool>,
}

pub fn build_refsets(cfg: &RunConfig) -> Result<()> {
    let mut rep = Reporter::new("build-refsets", cfg, conventions(cfg)?)?;
    let corpus = load_corpus(cfg)?;
    let method = cluster_method(cfg)?;
    let anchor = anchor(cfg)?;
    let sets = match method {
        None => build_human_refsets(&corpus, &load_dense(cfg, &corpus)?)?,
        Some(method) => {
            let (q, a) = projected(cfg, &corpus)?;
            let builder = RefsetBuilder::new(&q, &a);
            build_all(&builder, corpus.rounds(), Construction { method, anchor })?
        }
    };
    if sets.is_empty() {
        return Err(Error::EmptyInput("no rounds to build reference sets for"));
    }
    let mut buf = Vec::new();
    write_dense_visdial(&sets, &mut buf)?;
    rep.raw("refsets.json", &buf)?;
    let sizes: Vec<f64> = sets.iter().map(|s| s.len() as f64).collect();
    let flags: Vec<bool> = sets.iter().filter_map(|s| s.gt_in_cluster).collect();
    rep.json(
        "refsets_report.json",
        &RefsetSummary {
            method: cfg.cluster.method.clone().unwrap_or_else(|| "sigma".into()),
            anchor,
            sets: sets.len(),
            pairs: sets.iter().map(ReferenceSet::len).sum(),
            size: stat(&sizes),
            degenerate: sets.iter().filter(|s| s.degenerate).count(),
            pct_gt_in_cluster: (!flags.is_empty())
                .then(|| 100.0 * flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64),
            refsets_sha256: sha256_hex(&buf),
        },
    )?;
    rep.csv(
        "refsets_sizes.csv",
        sets.iter().map(|s| SizeRow {
            image_id: s.image_id,
            round: s.round,
            size: s.len(),
            degenerate: s.degenerate,
            gt_in_cluster: s.gt_in_cluster,
        }),
    )
}

pub fn verify_refsets(cfg: &RunConfig) -> Result<()> {
    let mut rep = Reporter::new("verify-refsets", cfg, conventions(cfg)?)?;
    let corpus = load_corpus(cfg)?;
    let human = build_human_refsets(&corpus, &load_dense(cfg, &corpus)?)?;
    let auto = load_dense_visdial(cfg.require(&cfg.refsets, "refsets")?)?;
    for s in &auto {
        let round = corpus
            .round(s.key())
            .ok_or_else(|| Error::Join(format!("reference set for unknown round {}", s.key())))?;
        s.check(round)?;
    }
    let report = intersection_metrics(&auto, &human)?;
    rep.json("verify.json", &report)?;
    rep.csv("verify_rounds.csv", report.per_round.iter())
}

// ---------------------------------------------------------------- ranking

#[derive(Serialize)]
struct RankResult {
    ranker: String,
    summary: RankSummary,
    ndcg: Option<NdcgSummary>,
    k_nn: Option<usize>,
    k_nn_clamped: bool,
}

#[derive(Serialize, Deserialize)]
struct RankRow {
    image_id: u64,
    round: u8,
    gt_rank: usize,
}

pub fn rank_eval(cfg: &RunConfig) -> Result<()> {
    use rayon::prelude::*;

    let mut rep = Reporter::new("rank-eval", cfg, conventions(cfg)?)?;
    let corpus = load_corpus(cfg)?;
    let rounds: Vec<_> = corpus.rounds().filter(|r| r.ranked().is_some()).collect();
    if rounds.is_empty() {
        return Err(Error::EmptyInput("corpus has no ranked rounds"));
    }
    let ranker = cfg.ranker.as_deref().unwrap_or("cca");
    let (records, k_nn, clamped) = match ranker {
        "cca" => {
            let (q, a) = projected(cfg, &corpus)?;
            let records = rounds
                .par_iter()
                .map(|r| {
                    let (cands, gt) = r.ranked().expect("filtered");
                    let c: Vec<Projected> = cands.iter().map(|&i| a[i].clone()).collect();
                    RankRecord::new(r.image_id, r.round, &rank_candidates(&q[r.question_idx], &c), gt)
                })
                .collect::<Result<Vec<_>>>()?;
            (records, None, false)
        }
        "nn" => {
            let table = load_table(cfg)?;
            let train = load_train_corpus(cfg)?;
            let pairs: Vec<(&str, &str)> = train
                .rounds()
                .filter_map(|r| r.answer_idx.map(|a| (train.question(r), train.answer(a))))
                .collect();
            let bank = NnBank::from_pairs(&pairs, &table)?;
            let embedded: EmbeddedCorpus = embed_corpus(&corpus, &table)?;
            let k_nn = cfg.k_nn.unwrap_or(DEFAULT_NEIGHBOURS);
            if k_nn > bank.len() {
                log::warn!("k_nn {k_nn} exceeds bank size {}; using {}", bank.len(), bank.len());
            }
            let out = rounds
                .par_iter()
                .map(|r| {
                    let (cands, gt) = r.ranked().expect("filtered");
                    let c: Vec<&[f64]> = cands.iter().map(|&i| embedded.answers[i].as_slice()).collect();
                    let nn = rank_nn_aq(&embedded.questions[r.question_idx], &c, &bank, k_nn)?;
                    Ok((RankRecord::new(r.image_id, r.round, &nn.ranking, gt)?, nn.clamped))
                })
                .collect::<Result<Vec<_>>>()?;
            let clamped = out.iter().any(|o| o.1);
            (out.into_iter().map(|o| o.0).collect(), Some(k_nn), clamped)
        }
        other => return Err(Error::Config(format!("unknown ranker {other:?}"))),
    };
    let summary = rank_suite(&records)?;
    let ndcg = match cfg.dense {
        None => None,
        Some(_) => {
            let anns = load_dense(cfg, &corpus)?;
            let by_key: BTreeMap<_, _> = records.iter().map(|r| ((r.image_id, r.round), r)).collect();
            let joined = anns
                .iter()
                .map(|a| {
                    by_key
                        .get(&(a.image_id, a.round))
                        .map(|r| (r.full_ranking.as_slice(), a.relevance.as_slice()))
                        .ok_or_else(|| Error::Join(format!("no ranking for annotated {}", a.key())))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(ndcg_summary(joined, ndcg_cutoff(cfg)?)?)
        }
    };
    rep.json(
        "rank_report.json",
        &RankResult {
            ranker: ranker.to_owned(),
            summary,
            ndcg,
            k_nn,
            k_nn_clamped: clamped,
        },
    )?;
    rep.csv(
        "ranks.csv",
        records.iter().map(|r| RankRow {
            image_id: r.image_id,
            round: r.round,
            gt_rank: r.gt_rank,
        }),
    )
}

#[derive(Serialize)]
struct HistogramResult {
    count: usize,
    mean_rank: f64,
    entropy_bits: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    rank: usize,
    count: usize,
}

pub fn histogram(cfg: &RunConfig) -> Result<()> {
    let mut rep = Reporter::new("histogram", cfg, conventions(cfg)?)?;
    let path = cfg.require(&cfg.ranks, "ranks")?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let records = reader
        .deserialize::<RankRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            Ok(RankRecord {
                image_id: row.image_id,
                round: row.round,
                gt_rank: row.gt_rank,
                full_ranking: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bins = rank_histogram(&records)?;
    rep.json(
        "histogram.json",
        &HistogramResult {
            count: records.len(),
            mean_rank: records.iter().map(|r| r.gt_rank as f64).sum::<f64>() / records.len() as f64,
            entropy_bits: histogram_entropy(&bins),
        },
    )?;
    rep.csv(
        "histogram.csv",
        bins.iter().enumerate().map(|(i, &count)| HistogramRow { rank: i + 1, count }),
    )
}

// ---------------------------------------------------------------- consensus

#[derive(Serialize)]
struct GenEvalResult {
    input: String,
    model_tag: Option<String>,
    refset_source: String,
    idf_documents: usize,
    aggregation: BTreeMap<String, &'static str>,
    report: ConsensusReport,
}

#[derive(Serialize)]
struct MetricRow {
    metric: String,
    mu: f64,
    sigma: f64,
    gamma: f64,
}

fn metrics(cfg: &RunConfig, word: bool, ctx: bool) -> Result<Vec<Metric>> {
    if let Some(names) = &cfg.consensus.metrics {
        return names.iter().map(|n| n.parse()).collect();
    }
    let mut m = Metric::defaults();
    if !word {
        m.retain(|x| !matches!(x, Metric::L2(Space::Word) | Metric::Cs(Space::Word)));
    }
    if ctx {
        m.push(Metric::L2(Space::Precomputed));
        m.push(Metric::Cs(Space::Precomputed));
    }
    Ok(m)
}

pub fn gen_eval(cfg: &RunConfig) -> Result<()> {
    let conv = conventions(cfg)?;
    let mut rep = Reporter::new("gen-eval", cfg, conv.clone())?;
    let corpus = load_corpus(cfg)?;
    let (refsets, source) = match cfg.refsets {
        Some(_) => (load_dense_visdial(cfg.require(&cfg.refsets, "refsets")?)?, "file"),
        None => (build_human_refsets(&corpus, &load_dense(cfg, &corpus)?)?, "human"),
    };
    let idf = build_refset_idf(&refsets, &corpus)?;
    let table = match cfg.embeddings {
        Some(_) => Some(load_table(cfg)?),
        None => None,
    };
    let ctx = match cfg.ctx_vectors {
        Some(_) => Some(PrecomputedVectors::load(cfg.require(&cfg.ctx_vectors, "ctx-vectors")?)?),
        None => None,
    };
    let metrics = metrics(cfg, table.is_some(), ctx.is_some())?;
    let mut scorer = Scorer::new(Some(&idf));
    scorer.bleu_epsilon = conv.bleu_epsilon;
    if let Some(t) = &table {
        scorer = scorer.with_word_embedder(t);
    }
    if let Some(c) = &ctx {
        scorer = scorer.with_precomputed(c);
    }
    let (input, model_tag, report) = match cfg.baseline.as_deref() {
        Some(b) => {
            let kind = match b {
                "gamma" => Baseline::Gamma,
                "gt" => Baseline::Gt,
                other => return Err(Error::Config(format!("unknown baseline {other:?}"))),
            };
            (
                format!("baseline:{b}"),
                None,
                baseline_report(kind, &refsets, &corpus, &metrics, &scorer)?,
            )
        }
        None => {
            let path = cfg.require(&cfg.generations, "generations")?;
            let gens = load_generations(path)?;
            let mut tags: Vec<&str> = gens.iter().map(|g| g.model_tag.as_str()).collect();
            tags.sort_unstable();
            tags.dedup();
            let report = k_sample_report(&gens, &refsets, &corpus, &metrics, &scorer)?;
            if report.missing_refsets > 0 {
                log::warn!("{} generated rounds have no reference set", report.missing_refsets);
            }
            (format!("generations:{}", file_sha(path)?), Some(tags.join(",")), report)
        }
    };
    rep.json(
        "consensus.json",
        &GenEvalResult {
            input,
            model_tag,
            refset_source: source.to_owned(),
            idf_documents: idf.num_docs(),
            aggregation: metrics.iter().map(|m| (m.to_string(), m.aggregation())).collect(),
            report: report.clone(),
        },
    )?;
    rep.csv(
        "consensus.csv",
        report.metrics.iter().map(|s| MetricRow {
            metric: s.metric.to_string(),
            mu: s.mu,
            sigma: s.sigma,
            gamma: s.gamma,
        }),
    )
}

// ---------------------------------------------------------------- generation

#[derive(Serialize)]
struct GenerateResult {
    rounds: usize,
    k: usize,
    neighbours: usize,
    bank_size: usize,
    uniform_fallbacks: usize,
    generations_sha256: String,
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let mut rep = Reporter::new("generate", cfg, conventions(cfg)?)?;
    let corpus = load_corpus(cfg)?;
    let train = load_train_corpus(cfg)?;
    let model = load_model(cfg)?;
    let table = load_table(cfg)?;
    let (tq, ta) = project_corpus(&model, &embed_corpus(&train, &table)?)?;
    let answered: Vec<_> = train.rounds().filter_map(|r| r.answer_idx.map(|a| (r, a))).collect();
    let bank = AnswerBank::new(
        answered.iter().map(|(r, _)| tq[r.question_idx].clone()).collect(),
        answered.iter().map(|&(_, a)| train.answer(a).to_owned()).collect(),
        answered.iter().map(|&(_, a)| ta[a].clone()).collect(),
    )?;
    let (q, _) = project_corpus(&model, &embed_corpus(&corpus, &table)?)?;
    let rounds: Vec<_> = corpus.rounds().collect();
    let k = cfg.k_gen.unwrap_or(1);
    let neighbours = cfg.neighbours.unwrap_or(DEFAULT_NEIGHBOURS);
    let tag = cfg.model_tag.as_deref().unwrap_or("cca-aq-g");
    let (gens, fallbacks) = generate_for_rounds(&rounds, &q, &bank, k, neighbours, cfg.seed(), tag)?;
    let mut buf = Vec::new();
    write_generations(&gens, &mut buf)?;
    rep.raw("generations.jsonl", &buf)?;
    rep.json(
        "generate.json",
        &GenerateResult {
            rounds: gens.len(),
            k,
            neighbours,
            bank_size: bank.len(),
            uniform_fallbacks: fallbacks,
            generations_sha256: sha256_hex(&buf),
        },
    )
}

// ---------------------------------------------------------------- audits

pub fn audit(cfg: &RunConfig) -> Result<()> {
    let mut rep = Reporter::new("audit", cfg, conventions(cfg)?)?;
    let corpus = load_corpus(cfg)?;
    let anns = load_dense(cfg, &corpus)?;
    rep.json("audit.json", &audit_relevance(&anns, &corpus)?)
}

pub fn cluster_audit(cfg: &RunConfig) -> Result<()> {
    let mut rep = Reporter::new("cluster-audit", cfg, conventions(cfg)?)?;
    let corpus = load_corpus(cfg)?;
    let (q, a) = projected(cfg, &corpus)?;
    let builder = RefsetBuilder::new(&q, &a);
    rep.json("cluster_audit.json", &correlation_cluster_audit(&builder, corpus.rounds())?)
}
