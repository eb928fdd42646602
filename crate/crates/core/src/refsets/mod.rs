//! Per-question reference answer sets.
//!
//! Human sets come from dense relevance annotations. Automatic sets cluster
//! CCA correlations over a round's candidate list and keep the cluster that
//! holds the anchor answer. Every set is unioned with the ground truth.

pub mod cluster;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::Projected;
use crate::corpus::{Corpus, DenseAnnotation, DialogueRound, RoundKey};
use crate::error::{json_error, Error, Result};

pub use cluster::{ClusterMethod, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefSource {
    H,
    Sigma,
    Meanshift,
    Agglomerative,
}

impl From<ClusterMethod> for RefSource {
    fn from(m: ClusterMethod) -> Self {
        match m {
            ClusterMethod::Sigma => RefSource::Sigma,
            ClusterMethod::MeanShift { .. } => RefSource::Meanshift,
            ClusterMethod::Agglomerative { .. } => RefSource::Agglomerative,
        }
    }
}

/// Which answer a question-anchored construction keeps the cluster of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Gt,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSet {
    pub image_id: u64,
    pub round: u8,
    /// Answer indices, ascending.
    pub members: Vec<usize>,
    pub source: RefSource,
    /// Correlation of each member with the anchor vector, aligned with `members`.
    pub correlations: Option<Vec<f64>>,
    /// Whether the ground truth was in the selected cluster before the final union.
    /// `None` when the ground truth was not among the clustered answers.
    pub gt_in_cluster: Option<bool>,
    pub degenerate: bool,
}

impl ReferenceSet {
    pub fn key(&self) -> RoundKey {
        RoundKey {
            image_id: self.image_id,
            round: self.round,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Checks that the set holds the round's ground truth and only its candidates.
    pub fn check(&self, round: &DialogueRound) -> Result<()> {
        let (cands, gt) = round
            .ranked()
            .ok_or_else(|| Error::Join(format!("{} has no candidates", self.key())))?;
        if !self.members.contains(&cands[gt]) {
            return Err(Error::Validation(format!(
                "{}: reference set lacks the ground truth",
                self.key()
            )));
        }
        if let Some(m) = self.members.iter().find(|m| !cands.contains(m)) {
            return Err(Error::Validation(format!(
                "{}: answer {m} is not a candidate",
                self.key()
            )));
        }
        Ok(())
    }
}

fn ranked(round: &DialogueRound) -> Result<(&[usize], usize)> {
    round.ranked().ok_or_else(|| {
        Error::Contract(format!(
            "{} has no candidate list with a ground truth",
            round.key()
        ))
    })
}

/// `{A : ρ(A) > 0} ∪ {A_gt}`.
pub fn build_human_refset(round: &DialogueRound, annotation: &DenseAnnotation) -> Result<ReferenceSet> {
    let (cands, gt) = ranked(round)?;
    if annotation.key() != round.key() || annotation.relevance.len() != cands.len() {
        return Err(Error::Contract(format!(
            "annotation for {} does not match {}",
            annotation.key(),
            round.key()
        )));
    }
    let mut members: Vec<usize> = cands
        .iter()
        .zip(&annotation.relevance)
        .enumerate()
        .filter(|&(i, (_, &rho))| rho > 0.0 || i == gt)
        .map(|(_, (&a, _))| a)
        .collect();
    members.sort_unstable();
    Ok(ReferenceSet {
        image_id: round.image_id,
        round: round.round,
        members,
        source: RefSource::H,
        correlations: None,
        gt_in_cluster: Some(annotation.relevance[gt] > 0.0),
        degenerate: false,
    })
}

/// Human reference sets for every annotated round, in annotation order.
pub fn build_human_refsets(corpus: &Corpus, annotations: &[DenseAnnotation]) -> Result<Vec<ReferenceSet>> {
    annotations
        .iter()
        .map(|ann| {
            let round = corpus
                .round(ann.key())
                .ok_or_else(|| Error::Join(format!("annotation for unknown {}", ann.key())))?;
            build_human_refset(round, ann)
        })
        .collect()
}

/// Builds automatic sets from centred CCA projections of every question and answer in a corpus.
pub struct RefsetBuilder<'a> {
    questions: &'a [Projected],
    answers: &'a [Projected],
}

impl<'a> RefsetBuilder<'a> {
    /// `questions[i]` / `answers[j]` are the centred projections of corpus question `i` / answer `j`.
    pub fn new(questions: &'a [Projected], answers: &'a [Projected]) -> Self {
        RefsetBuilder { questions, answers }
    }

    /// Σ: correlation band below the best-correlated non-ground-truth answer.
    pub fn build_sigma(&self, round: &DialogueRound) -> Result<ReferenceSet> {
        self.build_answer_anchored(round, ClusterMethod::Sigma)
    }

    /// M: mean-shift cluster holding the best-correlated non-ground-truth answer.
    pub fn build_meanshift(&self, round: &DialogueRound, bandwidth: Option<f64>) -> Result<ReferenceSet> {
        self.build_answer_anchored(round, ClusterMethod::MeanShift { bandwidth })
    }

    /// G: agglomerative cluster holding the best-correlated non-ground-truth answer.
    pub fn build_agglomerative(&self, round: &DialogueRound, n_clusters: usize) -> Result<ReferenceSet> {
        if n_clusters == 0 || n_clusters > 99 {
            return Err(Error::Config(format!(
                "n_clusters {n_clusters} outside 1..=99"
            )));
        }
        self.build_answer_anchored(round, ClusterMethod::Agglomerative { n_clusters })
    }

    /// Clusters the correlations between the ground truth and every other candidate,
    /// keeps the cluster of the most correlated one and adds the ground truth.
    pub fn build_answer_anchored(&self, round: &DialogueRound, method: ClusterMethod) -> Result<ReferenceSet> {
        let (cands, gt) = ranked(round)?;
        let gt_vec = self.answer(cands[gt])?;
        let others: Vec<usize> = (0..cands.len()).filter(|&i| i != gt).collect();
        let corrs = others
            .iter()
            .map(|&i| Ok(gt_vec.cosine(self.answer(cands[i])?)))
            .collect::<Result<Vec<f64>>>()?;
        let anchor = argmax(&corrs);
        let sel = cluster::select(&corrs, method, anchor)?;

        let mut chosen: BTreeMap<usize, f64> = sel
            .members
            .iter()
            .map(|&j| (cands[others[j]], corrs[j]))
            .collect();
        chosen.insert(cands[gt], gt_vec.cosine(gt_vec));
        Ok(self.finish(round, chosen, method.into(), None, sel.degenerate))
    }

    /// Clusters question-to-candidate correlations over the full candidate list and keeps the
    /// cluster of the ground truth (`Anchor::Gt`) or of the best-correlated answer (`Anchor::Max`).
    pub fn build_from_question(
        &self,
        round: &DialogueRound,
        anchor: Anchor,
        method: ClusterMethod,
    ) -> Result<ReferenceSet> {
        let (cands, gt) = ranked(round)?;
        let q = self
            .questions
            .get(round.question_idx)
            .ok_or_else(|| Error::Contract(format!("no projection for question {}", round.question_idx)))?;
        let corrs = cands
            .iter()
            .map(|&a| Ok(q.cosine(self.answer(a)?)))
            .collect::<Result<Vec<f64>>>()?;
        let anchor_pos = match anchor {
            Anchor::Gt => gt,
            Anchor::Max => argmax(&corrs),
        };
        let sel = cluster::select(&corrs, method, anchor_pos)?;
        let gt_in_cluster = sel.members.contains(&gt);
        let mut chosen: BTreeMap<usize, f64> =
            sel.members.iter().map(|&i| (cands[i], corrs[i])).collect();
        chosen.insert(cands[gt], corrs[gt]);
        Ok(self.finish(round, chosen, method.into(), Some(gt_in_cluster), sel.degenerate))
    }

    fn answer(&self, idx: usize) -> Result<&Projected> {
        self.answers
            .get(idx)
            .ok_or_else(|| Error::Contract(format!("no projection for answer {idx}")))
    }

    fn finish(
        &self,
        round: &DialogueRound,
        chosen: BTreeMap<usize, f64>,
        source: RefSource,
        gt_in_cluster: Option<bool>,
        degenerate: bool,
    ) -> ReferenceSet {
        let (members, correlations) = chosen.into_iter().unzip();
        ReferenceSet {
            image_id: round.image_id,
            round: round.round,
            members,
            source,
            correlations: Some(correlations),
            gt_in_cluster,
            degenerate,
        }
    }
}

/// First position of the largest value.
fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Which reference-set construction to run over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub method: ClusterMethod,
    /// `None` clusters ground-truth-to-candidate correlations; `Some` clusters question correlations.
    pub anchor: Option<Anchor>,
}

/// Builds one set per ranked round, in corpus order.
pub fn build_all<'r>(
    builder: &RefsetBuilder<'_>,
    rounds: impl IntoIterator<Item = &'r DialogueRound>,
    construction: Construction,
) -> Result<Vec<ReferenceSet>> {
    let rounds: Vec<&DialogueRound> = rounds.into_iter().filter(|r| r.ranked().is_some()).collect();
    rounds
        .par_iter()
        .map(|r| match construction.anchor {
            None => builder.build_answer_anchored(r, construction.method),
            Some(a) => builder.build_from_question(r, a, construction.method),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Stat {
        Stat {
            mean: cluster::mean(values),
            std: cluster::population_std(values),
        }
    }

    fn of_optional(values: &[f64]) -> Option<Stat> {
        (!values.is_empty()).then(|| Stat::of(values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundIntersection {
    pub image_id: u64,
    pub round: u8,
    pub intersection: usize,
    pub union: usize,
    pub size: usize,
    pub human_size: usize,
    /// Percentages.
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub corr_mean: Option<f64>,
    pub corr_std: Option<f64>,
    pub gt_in_cluster: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionReport {
    pub rounds: usize,
    /// Sets on either side without a partner.
    pub skipped: usize,
    pub iou: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub size: Stat,
    pub human_size: Stat,
    pub corr_mean: Option<Stat>,
    pub corr_std: Option<Stat>,
    pub pct_gt_in_cluster: Option<f64>,
    pub per_round: Vec<RoundIntersection>,
}

/// IOU, precision, recall and size of automatic sets against human sets joined on round.
pub fn intersection_metrics(auto_sets: &[ReferenceSet], human_sets: &[ReferenceSet]) -> Result<IntersectionReport> {
    let human: HashMap<RoundKey, &ReferenceSet> = human_sets.iter().map(|h| (h.key(), h)).collect();
    let mut per_round = Vec::new();
    for c in auto_sets {
        let Some(h) = human.get(&c.key()) else { continue };
        if c.is_empty() || h.is_empty() {
            return Err(Error::Validation(format!("{}: empty reference set", c.key())));
        }
        let inter = c.members.iter().filter(|m| h.members.binary_search(m).is_ok()).count();
        let union = c.len() + h.len() - inter;
        let (corr_mean, corr_std) = match &c.correlations {
            Some(cs) if !cs.is_empty() => (Some(cluster::mean(cs)), Some(cluster::population_std(cs))),
            _ => (None, None),
        };
        per_round.push(RoundIntersection {
            image_id: c.image_id,
            round: c.round,
            intersection: inter,
            union,
            size: c.len(),
            human_size: h.len(),
            iou: 100.0 * inter as f64 / union as f64,
            precision: 100.0 * inter as f64 / c.len() as f64,
            recall: 100.0 * inter as f64 / h.len() as f64,
            corr_mean,
            corr_std,
            gt_in_cluster: c.gt_in_cluster,
        });
    }
    if per_round.is_empty() {
        return Err(Error::EmptyInput("no automatic set joins a human set"));
    }
    let skipped = auto_sets.len() + human_sets.len() - 2 * per_round.len();
    if skipped > 0 {
        log::warn!("{skipped} reference sets had no partner and were skipped");
    }
    let col = |f: fn(&RoundIntersection) -> f64| per_round.iter().map(f).collect::<Vec<f64>>();
    let corr_means: Vec<f64> = per_round.iter().filter_map(|r| r.corr_mean).collect();
    let corr_stds: Vec<f64> = per_round.iter().filter_map(|r| r.corr_std).collect();
    let contained: Vec<bool> = per_round.iter().filter_map(|r| r.gt_in_cluster).collect();
    Ok(IntersectionReport {
        rounds: per_round.len(),
        skipped,
        iou: Stat::of(&col(|r| r.iou)),
        precision: Stat::of(&col(|r| r.precision)),
        recall: Stat::of(&col(|r| r.recall)),
        size: Stat::of(&col(|r| r.size as f64)),
        human_size: Stat::of(&col(|r| r.human_size as f64)),
        corr_mean: Stat::of_optional(&corr_means),
        corr_std: Stat::of_optional(&corr_stds),
        pct_gt_in_cluster: (!contained.is_empty())
            .then(|| 100.0 * contained.iter().filter(|&&b| b).count() as f64 / contained.len() as f64),
        per_round,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterAudit {
    pub rounds: usize,
    pub mean_correlation: f64,
    pub mean_correlation_std: f64,
    pub mean_size: f64,
}

/// Corpus-wide averages of the Σ cluster's mean correlation, correlation spread and size.
pub fn correlation_cluster_audit<'r>(
    builder: &RefsetBuilder<'_>,
    rounds: impl IntoIterator<Item = &'r DialogueRound>,
) -> Result<ClusterAudit> {
    let sets = build_all(
        builder,
        rounds,
        Construction {
            method: ClusterMethod::Sigma,
            anchor: None,
        },
    )?;
    if sets.is_empty() {
        return Err(Error::EmptyInput("no ranked rounds to audit"));
    }
    let n = sets.len() as f64;
    let (mut m, mut s, mut z) = (0.0, 0.0, 0.0);
    for set in &sets {
        let cs = set.correlations.as_deref().unwrap_or_default();
        m += cluster::mean(cs);
        s += cluster::population_std(cs);
        z += set.len() as f64;
    }
    Ok(ClusterAudit {
        rounds: sets.len(),
        mean_correlation: m / n,
        mean_correlation_std: s / n,
        mean_size: z / n,
    })
}

#[derive(Serialize, Deserialize)]
struct DenseRecord {
    image_id: u64,
    round_id: u8,
    ref_answer_idxs: Vec<usize>,
    source: RefSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    correlations: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_in_cluster: Option<bool>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    degenerate: bool,
}

/// Writes the densified dataset: a JSON list with one record per reference set.
pub fn write_dense_visdial(sets: &[ReferenceSet], out: impl Write) -> Result<()> {
    let records: Vec<DenseRecord> = sets
        .iter()
        .map(|s| DenseRecord {
            image_id: s.image_id,
            round_id: s.round,
            ref_answer_idxs: s.members.clone(),
            source: s.source,
            correlations: s.correlations.clone(),
            gt_in_cluster: s.gt_in_cluster,
            degenerate: s.degenerate,
        })
        .collect();
    serde_json::to_writer(out, &records).map_err(|e| Error::Schema(e.to_string()))
}

pub fn parse_dense_visdial(text: &str) -> Result<Vec<ReferenceSet>> {
    let records: Vec<DenseRecord> = serde_json::from_str(text).map_err(|e| json_error("", text, e))?;
    records
        .into_iter()
        .map(|r| {
            let mut members = r.ref_answer_idxs;
            if members.is_empty() {
                return Err(Error::Validation(format!(
                    "image {} round {}: empty reference set",
                    r.image_id, r.round_id
                )));
            }
            if let Some(c) = &r.correlations {
                if c.len() != members.len() {
                    return Err(Error::Schema(format!(
                        "image {} round {}: {} correlations for {} members",
                        r.image_id,
                        r.round_id,
                        c.len(),
                        members.len()
                    )));
                }
            }
            let correlations = match r.correlations {
                Some(c) => {
                    let mut paired: Vec<(usize, f64)> = members.iter().copied().zip(c).collect();
                    paired.sort_by_key(|p| p.0);
                    members = paired.iter().map(|p| p.0).collect();
                    Some(paired.into_iter().map(|p| p.1).collect())
                }
                None => {
                    members.sort_unstable();
                    None
                }
            };
            Ok(ReferenceSet {
                image_id: r.image_id,
                round: r.round_id,
                members,
                source: r.source,
                correlations,
                gt_in_cluster: r.gt_in_cluster,
                degenerate: r.degenerate,
            })
        })
        .collect()
}

pub fn load_dense_visdial(path: impl AsRef<Path>) -> Result<Vec<ReferenceSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dense_visdial(&text).map_err(|e| match e {
        Error::Parse { offset, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            offset,
            message,
        },
        other => other,
    })
}
