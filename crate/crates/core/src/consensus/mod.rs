//! Consensus scoring of generated answers against reference answer sets.

pub mod bleu;
pub mod cider;
pub mod embedding;
pub mod meteor;
pub mod ngrams;

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RoundKey};
use crate::embed::{tokenize, SentenceEmbedder};
use crate::error::{json_error, Error, Result};
use crate::refsets::ReferenceSet;

pub use bleu::{bleu, DEFAULT_EPSILON as DEFAULT_BLEU_EPSILON};
pub use cider::cider;
pub use embedding::{cosine_similarity, embedding_distance, l2_distance, EmbeddingScore};
pub use meteor::{meteor, MeteorParams};
pub use ngrams::{build_idf, IdfCorpus, MAX_ORDER};

/// Which sentence-vector source an embedding metric reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    /// Mean of word vectors from an embedding table.
    Word,
    /// Vectors supplied per sentence by an external encoder.
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Cider(usize),
    Bleu(usize),
    Meteor,
    L2(Space),
    Cs(Space),
}

impl Metric {
    /// Default metric set: CIDEr 1..4, METEOR, BLEU 1..4, word-space L2 and CS.
    pub fn defaults() -> Vec<Metric> {
        let mut m: Vec<Metric> = (1..=MAX_ORDER).map(Metric::Cider).collect();
        m.push(Metric::Meteor);
        m.extend((1..=MAX_ORDER).map(Metric::Bleu));
        m.push(Metric::L2(Space::Word));
        m.push(Metric::Cs(Space::Word));
        m
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::L2(_))
    }

    fn space(self) -> Option<Space> {
        match self {
            Metric::L2(s) | Metric::Cs(s) => Some(s),
            _ => None,
        }
    }

    /// How scores against several references are combined.
    pub fn aggregation(self) -> &'static str {
        match self {
            Metric::Cider(_) | Metric::L2(_) | Metric::Cs(_) => "mean over references",
            Metric::Meteor => "max over references",
            Metric::Bleu(_) => "clipped counts over references, closest reference length",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let space = |s: &Space| match s {
            Space::Word => "word",
            Space::Precomputed => "ctx",
        };
        match self {
            Metric::Cider(n) => write!(f, "cider{n}"),
            Metric::Bleu(n) => write!(f, "bleu{n}"),
            Metric::Meteor => f.write_str("meteor"),
            Metric::L2(s) => write!(f, "l2_{}", space(s)),
            Metric::Cs(s) => write!(f, "cs_{}", space(s)),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown metric {s:?}"));
        let order = |rest: &str| -> Result<usize> {
            match rest.parse::<usize>() {
                Ok(n) if (1..=MAX_ORDER).contains(&n) => Ok(n),
                _ => Err(bad()),
            }
        };
        let space = |rest: &str| match rest {
            "word" => Ok(Space::Word),
            "ctx" => Ok(Space::Precomputed),
            _ => Err(bad()),
        };
        let s_lower = s.to_ascii_lowercase();
        if s_lower == "meteor" {
            Ok(Metric::Meteor)
        } else if let Some(rest) = s_lower.strip_prefix("cider") {
            order(rest).map(Metric::Cider)
        } else if let Some(rest) = s_lower.strip_prefix("bleu") {
            order(rest).map(Metric::Bleu)
        } else if let Some(rest) = s_lower.strip_prefix("l2_") {
            space(rest).map(Metric::L2)
        } else if let Some(rest) = s_lower.strip_prefix("cs_") {
            space(rest).map(Metric::Cs)
        } else {
            Err(bad())
        }
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> Self {
        m.to_string()
    }
}

/// Sentences with their tokens and whichever vectors the requested metrics need.
struct Prepared {
    tokens: Vec<Vec<String>>,
    word: Vec<Vec<f64>>,
    ctx: Vec<Vec<f64>>,
}

/// Scores sentences against references under a fixed configuration.
#[derive(Clone, Copy)]
pub struct Scorer<'a> {
    pub idf: Option<&'a IdfCorpus>,
    pub word: Option<&'a dyn SentenceEmbedder>,
    pub precomputed: Option<&'a dyn SentenceEmbedder>,
    pub meteor: MeteorParams,
    pub bleu_epsilon: f64,
}

impl<'a> Scorer<'a> {
    pub fn new(idf: Option<&'a IdfCorpus>) -> Self {
        Scorer {
            idf,
            word: None,
            precomputed: None,
            meteor: MeteorParams::default(),
            bleu_epsilon: DEFAULT_BLEU_EPSILON,
        }
    }

    pub fn with_word_embedder(mut self, e: &'a dyn SentenceEmbedder) -> Self {
        self.word = Some(e);
        self
    }

    pub fn with_precomputed(mut self, e: &'a dyn SentenceEmbedder) -> Self {
        self.precomputed = Some(e);
        self
    }

    /// Fails early if a metric needs a resource this scorer lacks.
    pub fn check(&self, metrics: &[Metric]) -> Result<()> {
        for &m in metrics {
            let ok = match m {
                Metric::Cider(_) => self.idf.is_some(),
                Metric::L2(Space::Word) | Metric::Cs(Space::Word) => self.word.is_some(),
                Metric::L2(Space::Precomputed) | Metric::Cs(Space::Precomputed) => {
                    self.precomputed.is_some()
                }
                _ => true,
            };
            if !ok {
                return Err(Error::Config(format!("metric {m} needs a resource that was not supplied")));
            }
        }
        Ok(())
    }

    fn prepare(&self, sentences: &[&str], metrics: &[Metric]) -> Result<Prepared> {
        self.check(metrics)?;
        let need = |s: Space| metrics.iter().any(|m| m.space() == Some(s));
        let vectors = |e: Option<&dyn SentenceEmbedder>, on: bool| -> Result<Vec<Vec<f64>>> {
            match (e, on) {
                (Some(e), true) => sentences.iter().map(|s| e.embed(s)).collect(),
                _ => Ok(Vec::new()),
            }
        };
        Ok(Prepared {
            tokens: sentences.iter().map(|s| tokenize(s)).collect(),
            word: vectors(self.word, need(Space::Word))?,
            ctx: vectors(self.precomputed, need(Space::Precomputed))?,
        })
    }

    fn score_prepared(&self, metric: Metric, cand: &Prepared, ci: usize, refs: &Prepared) -> f64 {
        let tokens = &cand.tokens[ci];
        match metric {
            Metric::Cider(n) => cider(tokens, &refs.tokens, self.idf.expect("checked"), n),
            Metric::Bleu(n) => bleu(tokens, &refs.tokens, n, self.bleu_epsilon),
            Metric::Meteor => meteor(tokens, &refs.tokens, self.meteor),
            Metric::L2(s) | Metric::Cs(s) => {
                let (c, r) = match s {
                    Space::Word => (&cand.word[ci], &refs.word),
                    Space::Precomputed => (&cand.ctx[ci], &refs.ctx),
                };
                let d = embedding_distance(c, r);
                if matches!(metric, Metric::L2(_)) {
                    d.l2
                } else {
                    d.cs
                }
            }
        }
    }

    /// Scores of one candidate against `refs`, one per metric.
    pub fn score(&self, metrics: &[Metric], candidate: &str, refs: &[&str]) -> Result<Vec<f64>> {
        if refs.is_empty() {
            return Err(Error::EmptyInput("reference set"));
        }
        let r = self.prepare(refs, metrics)?;
        let c = self.prepare(&[candidate], metrics)?;
        Ok(metrics
            .iter()
            .map(|&m| self.score_prepared(m, &c, 0, &r))
            .collect())
    }

    /// Best score over members of `refs` used as the candidate against the full set:
    /// the maximum for similarities, the minimum for L2.
    pub fn gamma_baseline(&self, metrics: &[Metric], refs: &[&str]) -> Result<Vec<f64>> {
        if refs.is_empty() {
            return Err(Error::EmptyInput("reference set"));
        }
        let r = self.prepare(refs, metrics)?;
        Ok(metrics
            .iter()
            .map(|&m| {
                let scores = (0..refs.len()).map(|i| self.score_prepared(m, &r, i, &r));
                if m.higher_is_better() {
                    scores.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    scores.fold(f64::INFINITY, f64::min)
                }
            })
            .collect())
    }
}

/// Mean, population standard deviation and maximum.
pub fn k_stats(scores: &[f64]) -> Option<(f64, f64, f64)> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n;
    let gamma = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mu, var.sqrt(), gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAnswerSet {
    pub image_id: u64,
    #[serde(rename = "round_id")]
    pub round: u8,
    pub generations: Vec<String>,
    #[serde(default)]
    pub model_tag: String,
}

impl GeneratedAnswerSet {
    pub fn key(&self) -> RoundKey {
        RoundKey {
            image_id: self.image_id,
            round: self.round,
        }
    }
}

/// One JSON object per line; blank lines are ignored.
pub fn read_generations(reader: impl BufRead, path: &Path) -> Result<Vec<GeneratedAnswerSet>> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let set: GeneratedAnswerSet = serde_json::from_str(&line).map_err(|e| json_error(path, &line, e))?;
        if set.generations.is_empty() {
            return Err(Error::Validation(format!(
                "line {}: round {} has no generations",
                i + 1,
                set.key()
            )));
        }
        if seen.insert(set.key(), i).is_some() {
            return Err(Error::Validation(format!("line {}: duplicate round {}", i + 1, set.key())));
        }
        out.push(set);
    }
    Ok(out)
}

pub fn load_generations(path: impl AsRef<Path>) -> Result<Vec<GeneratedAnswerSet>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_generations(std::io::BufReader::new(f), path)
}

pub fn write_generations(sets: &[GeneratedAnswerSet], mut out: impl Write) -> Result<()> {
    for s in sets {
        let line = serde_json::to_string(s).map_err(|e| Error::Numeric(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<generations>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusReport {
    pub metrics: Vec<MetricSummary>,
    /// Rounds that contributed scores.
    pub rounds: usize,
    /// Rounds whose generations were all empty.
    pub excluded_rounds: usize,
    pub excluded_empty_generations: usize,
    /// Generated rounds with no reference set.
    pub missing_refsets: usize,
}

impl ConsensusReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|s| s.metric == metric)
    }

    /// `metric,mu,sigma,gamma` rows.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "metric,mu,sigma,gamma")?;
        for s in &self.metrics {
            writeln!(out, "{},{},{},{}", s.metric, s.mu, s.sigma, s.gamma)?;
        }
        Ok(())
    }
}

fn reference_strings<'c>(set: &ReferenceSet, corpus: &'c Corpus) -> Vec<&'c str> {
    set.members.iter().map(|&i| corpus.answer(i)).collect()
}

/// Document-frequency table with one document per reference-set member per round.
pub fn build_refset_idf(refsets: &[ReferenceSet], corpus: &Corpus) -> Result<IdfCorpus> {
    let docs: Vec<Vec<String>> = refsets
        .iter()
        .flat_map(|s| s.members.iter().map(|&i| tokenize(corpus.answer(i))))
        .collect();
    build_idf(&docs)
}

struct RoundOutcome {
    /// Per metric (μ, σ, γ); `None` when every generation was empty.
    stats: Option<Vec<(f64, f64, f64)>>,
    empty: usize,
}

fn summarize(metrics: &[Metric], outcomes: &[RoundOutcome], missing: usize) -> Result<ConsensusReport> {
    let kept: Vec<&Vec<(f64, f64, f64)>> = outcomes.iter().filter_map(|o| o.stats.as_ref()).collect();
    if kept.is_empty() {
        return Err(Error::EmptyInput("no round produced a score"));
    }
    let n = kept.len() as f64;
    let summaries = metrics
        .iter()
        .enumerate()
        .map(|(j, &metric)| {
            let (mut mu, mut sigma, mut gamma) = (0.0, 0.0, 0.0);
            for s in &kept {
                mu += s[j].0;
                sigma += s[j].1;
                gamma += s[j].2;
            }
            MetricSummary {
                metric,
                mu: mu / n,
                sigma: sigma / n,
                gamma: gamma / n,
            }
        })
        .collect();
    Ok(ConsensusReport {
        metrics: summaries,
        rounds: kept.len(),
        excluded_rounds: outcomes.len() - kept.len(),
        excluded_empty_generations: outcomes.iter().map(|o| o.empty).sum(),
        missing_refsets: missing,
    })
}

fn index_refsets(refsets: &[ReferenceSet]) -> HashMap<RoundKey, &ReferenceSet> {
    refsets.iter().map(|s| (s.key(), s)).collect()
}

/// Per-round μ/σ/γ over the k generations, averaged over rounds.
/// For L2, γ is still the maximum of the k scores.
pub fn k_sample_report(
    generated: &[GeneratedAnswerSet],
    refsets: &[ReferenceSet],
    corpus: &Corpus,
    metrics: &[Metric],
    scorer: &Scorer<'_>,
) -> Result<ConsensusReport> {
    scorer.check(metrics)?;
    let index = index_refsets(refsets);
    let jobs: Vec<(&GeneratedAnswerSet, &ReferenceSet)> = generated
        .iter()
        .filter_map(|g| index.get(&g.key()).map(|r| (g, *r)))
        .collect();
    let missing = generated.len() - jobs.len();
    let outcomes = jobs
        .par_iter()
        .map(|(g, set)| -> Result<RoundOutcome> {
            let refs = reference_strings(set, corpus);
            let r = scorer.prepare(&refs, metrics)?;
            let kept: Vec<&str> = g
                .generations
                .iter()
                .map(String::as_str)
                .filter(|s| !tokenize(s).is_empty())
                .collect();
            let empty = g.generations.len() - kept.len();
            if kept.is_empty() {
                return Ok(RoundOutcome { stats: None, empty });
            }
            let c = scorer.prepare(&kept, metrics)?;
            let stats = metrics
                .iter()
                .map(|&m| {
                    let scores: Vec<f64> = (0..kept.len())
                        .map(|i| scorer.score_prepared(m, &c, i, &r))
                        .collect();
                    k_stats(&scores).expect("nonempty")
                })
                .collect();
            Ok(RoundOutcome {
                stats: Some(stats),
                empty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(metrics, &outcomes, missing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Best member of the set scored against the set itself.
    Gamma,
    /// The ground-truth answer scored against the set.
    Gt,
}

/// Baseline scores per round, averaged over rounds (σ = 0, γ = μ per round).
pub fn baseline_report(
    kind: Baseline,
    refsets: &[ReferenceSet],
    corpus: &Corpus,
    metrics: &[Metric],
    scorer: &Scorer<'_>,
) -> Result<ConsensusReport> {
    scorer.check(metrics)?;
    let outcomes = refsets
        .par_iter()
        .map(|set| -> Result<RoundOutcome> {
            let refs = reference_strings(set, corpus);
            let scores = match kind {
                Baseline::Gamma => scorer.gamma_baseline(metrics, &refs)?,
                Baseline::Gt => {
                    let gt = corpus
                        .round(set.key())
                        .and_then(|r| r.gt_answer_idx())
                        .ok_or_else(|| Error::Join(format!("round {} has no ground truth", set.key())))?;
                    scorer.score(metrics, corpus.answer(gt), &refs)?
                }
            };
            Ok(RoundOutcome {
                stats: Some(scores.into_iter().map(|s| (s, 0.0, s)).collect()),
                empty: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(metrics, &outcomes, 0)
}
