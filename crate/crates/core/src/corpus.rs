//! VisDial v1.0 dialogue data, dense relevance annotations and the relevance audit.
//!
//! Loaded data is immutable. Rounds are addressed by `(image_id, round)` with
//! 1-based round numbers. Test-split rounds may lack a ground truth or a
//! candidate list, so both are optional on [`DialogueRound`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{json_error, Error, Result};

/// Number of candidate answers attached to every ranked round.
pub const CANDIDATES_PER_ROUND: usize = 100;
/// Maximum number of question/answer exchanges per dialogue.
pub const MAX_ROUNDS: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Join key for a single question in the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RoundKey {
    pub image_id: u64,
    pub round: u8,
}

impl fmt::Display for RoundKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "image {} round {}", self.image_id, self.round)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueRound {
    pub image_id: u64,
    /// 1-based.
    pub round: u8,
    pub question_idx: usize,
    /// Index of the annotator answer; absent on unanswered test rounds.
    pub answer_idx: Option<usize>,
    /// The 100 candidate answer indices, when the round is ranked.
    pub candidate_idxs: Option<Vec<usize>>,
    /// Position of the ground truth inside `candidate_idxs`.
    pub gt_index: Option<usize>,
}

impl DialogueRound {
    pub fn key(&self) -> RoundKey {
        RoundKey {
            image_id: self.image_id,
            round: self.round,
        }
    }

    pub fn is_answered(&self) -> bool {
        self.answer_idx.is_some()
    }

    /// Answer index of the ground truth, when the round has candidates and a ground truth.
    pub fn gt_answer_idx(&self) -> Option<usize> {
        match (&self.candidate_idxs, self.gt_index) {
            (Some(c), Some(g)) => c.get(g).copied(),
            _ => None,
        }
    }

    /// Candidates and ground-truth position, for rounds usable in ranking and reference-set construction.
    pub fn ranked(&self) -> Option<(&[usize], usize)> {
        match (&self.candidate_idxs, self.gt_index) {
            (Some(c), Some(g)) => Some((c.as_slice(), g)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub image_id: u64,
    pub caption: String,
    pub rounds: Vec<DialogueRound>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub split: Split,
    pub questions: Vec<String>,
    pub answers: Vec<String>,
    pub dialogues: Vec<Dialogue>,
    version: Option<String>,
    index: HashMap<RoundKey, (usize, usize)>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split
            && self.questions == other.questions
            && self.answers == other.answers
            && self.dialogues == other.dialogues
    }
}

impl Corpus {
    /// Builds a corpus from parts, checking every invariant the loader checks.
    pub fn new(
        split: Split,
        questions: Vec<String>,
        answers: Vec<String>,
        dialogues: Vec<Dialogue>,
    ) -> Result<Self> {
        let mut corpus = Corpus {
            split,
            questions,
            answers,
            dialogues,
            version: None,
            index: HashMap::new(),
        };
        corpus.validate_and_index()?;
        Ok(corpus)
    }

    fn validate_and_index(&mut self) -> Result<()> {
        let mut images = HashSet::new();
        let mut index = HashMap::new();
        for (d, dialogue) in self.dialogues.iter().enumerate() {
            if !images.insert(dialogue.image_id) {
                return Err(Error::Schema(format!(
                    "image {} appears more than once",
                    dialogue.image_id
                )));
            }
            for (r, round) in dialogue.rounds.iter().enumerate() {
                check_round(round, self.questions.len(), self.answers.len())?;
                if round.image_id != dialogue.image_id {
                    return Err(Error::Schema(format!(
                        "{} stored under image {}",
                        round.key(),
                        dialogue.image_id
                    )));
                }
                if index.insert(round.key(), (d, r)).is_some() {
                    return Err(Error::Schema(format!("duplicate {}", round.key())));
                }
            }
        }
        self.index = index;
        Ok(())
    }

    pub fn round(&self, key: RoundKey) -> Option<&DialogueRound> {
        self.index
            .get(&key)
            .map(|&(d, r)| &self.dialogues[d].rounds[r])
    }

    /// All rounds in file order.
    pub fn rounds(&self) -> impl Iterator<Item = &DialogueRound> {
        self.dialogues.iter().flat_map(|d| d.rounds.iter())
    }

    pub fn num_rounds(&self) -> usize {
        self.index.len()
    }

    pub fn question(&self, round: &DialogueRound) -> &str {
        &self.questions[round.question_idx]
    }

    pub fn answer(&self, idx: usize) -> &str {
        &self.answers[idx]
    }

    /// Serializes back to the VisDial v1.0 layout.
    pub fn to_json(&self) -> Result<String> {
        let raw = RawFile {
            version: self.version.clone(),
            split: Some(self.split.to_string()),
            data: RawData {
                questions: self.questions.clone(),
                answers: self.answers.clone(),
                dialogs: self
                    .dialogues
                    .iter()
                    .map(|d| RawDialog {
                        image_id: d.image_id,
                        caption: d.caption.clone(),
                        dialog: d
                            .rounds
                            .iter()
                            .map(|r| RawRound {
                                question: r.question_idx,
                                answer: r.answer_idx,
                                answer_options: r.candidate_idxs.clone(),
                                gt_index: r.gt_index,
                                round_id: Some(r.round),
                            })
                            .collect(),
                    })
                    .collect(),
            },
        };
        serde_json::to_string(&raw).map_err(|e| Error::Schema(e.to_string()))
    }
}

fn check_round(round: &DialogueRound, n_questions: usize, n_answers: usize) -> Result<()> {
    let key = round.key();
    if round.round == 0 || round.round > MAX_ROUNDS {
        return Err(Error::Schema(format!(
            "{key}: round number outside 1..={MAX_ROUNDS}"
        )));
    }
    if round.question_idx >= n_questions {
        return Err(Error::Schema(format!(
            "{key}: question index {} out of range ({n_questions} questions)",
            round.question_idx
        )));
    }
    if let Some(a) = round.answer_idx {
        if a >= n_answers {
            return Err(Error::Schema(format!(
                "{key}: answer index {a} out of range ({n_answers} answers)"
            )));
        }
    }
    if let Some(cands) = &round.candidate_idxs {
        if cands.len() != CANDIDATES_PER_ROUND {
            return Err(Error::Schema(format!(
                "{key}: answer_options has {} entries, expected {CANDIDATES_PER_ROUND}",
                cands.len()
            )));
        }
        let mut seen = HashSet::with_capacity(cands.len());
        for &c in cands {
            if c >= n_answers {
                return Err(Error::Schema(format!(
                    "{key}: answer option {c} out of range ({n_answers} answers)"
                )));
            }
            if !seen.insert(c) {
                return Err(Error::Schema(format!("{key}: duplicate answer option {c}")));
            }
        }
        if let Some(g) = round.gt_index {
            if g >= cands.len() {
                return Err(Error::Schema(format!("{key}: gt_index {g} out of range")));
            }
            if let Some(a) = round.answer_idx {
                if cands[g] != a {
                    return Err(Error::Schema(format!(
                        "{key}: answer {a} differs from answer_options[gt_index] = {}",
                        cands[g]
                    )));
                }
            }
        }
    } else if round.gt_index.is_some() {
        return Err(Error::Schema(format!(
            "{key}: gt_index given without answer_options"
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    data: RawData,
}

#[derive(Serialize, Deserialize)]
struct RawData {
    questions: Vec<String>,
    answers: Vec<String>,
    dialogs: Vec<RawDialog>,
}

#[derive(Serialize, Deserialize)]
struct RawDialog {
    image_id: u64,
    #[serde(default)]
    caption: String,
    dialog: Vec<RawRound>,
}

#[derive(Serialize, Deserialize)]
struct RawRound {
    question: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer_options: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    round_id: Option<u8>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a VisDial v1.0 dialogue file.
pub fn load_dialogues(path: impl AsRef<Path>, split: Split) -> Result<Corpus> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_dialogues(&text, split).map_err(|e| match e {
        Error::Parse { offset, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            offset,
            message,
        },
        other => other,
    })
}

/// Parses VisDial v1.0 JSON from memory. Parse errors carry an empty path.
pub fn parse_dialogues(text: &str, split: Split) -> Result<Corpus> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| json_error("", text, e))?;
    let mut dialogues = Vec::with_capacity(raw.data.dialogs.len());
    for dialog in raw.data.dialogs {
        let rounds = dialog
            .dialog
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let round = match r.round_id {
                    Some(id) => id,
                    None => u8::try_from(i + 1).map_err(|_| {
                        Error::Schema(format!("image {}: too many rounds", dialog.image_id))
                    })?,
                };
                Ok(DialogueRound {
                    image_id: dialog.image_id,
                    round,
                    question_idx: r.question,
                    answer_idx: r.answer,
                    candidate_idxs: r.answer_options,
                    gt_index: r.gt_index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        dialogues.push(Dialogue {
            image_id: dialog.image_id,
            caption: dialog.caption,
            rounds,
        });
    }
    let mut corpus = Corpus {
        split,
        questions: raw.data.questions,
        answers: raw.data.answers,
        dialogues,
        version: raw.version,
        index: HashMap::new(),
    };
    corpus.validate_and_index()?;
    Ok(corpus)
}

/// Human relevance scores for one round, aligned with its candidate list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseAnnotation {
    pub image_id: u64,
    pub round: u8,
    pub relevance: Vec<f64>,
}

impl DenseAnnotation {
    pub fn key(&self) -> RoundKey {
        RoundKey {
            image_id: self.image_id,
            round: self.round,
        }
    }
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: u64,
    round_id: u8,
    #[serde(alias = "relevance")]
    gt_relevance: Vec<f64>,
}

/// Loads dense annotations and joins each record to its corpus round.
pub fn load_dense_annotations(
    path: impl AsRef<Path>,
    corpus: &Corpus,
) -> Result<Vec<DenseAnnotation>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let raw: Vec<RawAnnotation> =
        serde_json::from_str(&text).map_err(|e| json_error(path, &text, e))?;
    let annotations = join_annotations(raw, corpus)?;
    log::info!(
        "joined {} dense annotations from {}",
        annotations.len(),
        path.display()
    );
    Ok(annotations)
}

/// Parses dense annotations from memory.
pub fn parse_dense_annotations(text: &str, corpus: &Corpus) -> Result<Vec<DenseAnnotation>> {
    let raw: Vec<RawAnnotation> =
        serde_json::from_str(text).map_err(|e| json_error("", text, e))?;
    join_annotations(raw, corpus)
}

fn join_annotations(raw: Vec<RawAnnotation>, corpus: &Corpus) -> Result<Vec<DenseAnnotation>> {
    let mut seen = HashSet::with_capacity(raw.len());
    raw.into_iter()
        .map(|r| {
            let key = RoundKey {
                image_id: r.image_id,
                round: r.round_id,
            };
            if !seen.insert(key) {
                return Err(Error::Validation(format!("duplicate annotation for {key}")));
            }
            let round = corpus
                .round(key)
                .ok_or_else(|| Error::Join(format!("annotation for unknown {key}")))?;
            let cands = round
                .candidate_idxs
                .as_ref()
                .ok_or_else(|| Error::Join(format!("annotated {key} has no candidate list")))?;
            if r.gt_relevance.len() != cands.len() {
                return Err(Error::Schema(format!(
                    "{key}: {} relevance values for {} candidates",
                    r.gt_relevance.len(),
                    cands.len()
                )));
            }
            if let Some(bad) = r
                .gt_relevance
                .iter()
                .find(|v| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::Validation(format!(
                    "{key}: relevance {bad} outside [0, 1]"
                )));
            }
            Ok(DenseAnnotation {
                image_id: r.image_id,
                round: r.round_id,
                relevance: r.gt_relevance,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub annotated_rounds: usize,
    /// Rounds whose highest relevance is below 1.
    pub no_relevance_one: usize,
    /// Rounds whose ground truth has relevance 0.
    pub gt_irrelevant: usize,
    pub pct_no_relevance_one: f64,
    pub pct_gt_irrelevant: f64,
}

/// Counts annotated rounds with no fully-agreed answer and rounds whose ground truth was judged irrelevant.
pub fn audit_relevance(annotations: &[DenseAnnotation], corpus: &Corpus) -> Result<AuditReport> {
    if annotations.is_empty() {
        return Err(Error::EmptyInput("no dense annotations to audit"));
    }
    let mut no_one = 0;
    let mut gt_zero = 0;
    for ann in annotations {
        let round = corpus
            .round(ann.key())
            .ok_or_else(|| Error::Join(format!("annotation for unknown {}", ann.key())))?;
        let gt = round
            .gt_index
            .ok_or_else(|| Error::Join(format!("annotated {} has no ground truth", ann.key())))?;
        let max = ann.relevance.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max < 1.0 {
            no_one += 1;
        }
        if ann.relevance[gt] == 0.0 {
            gt_zero += 1;
        }
    }
    let n = annotations.len();
    Ok(AuditReport {
        annotated_rounds: n,
        no_relevance_one: no_one,
        gt_irrelevant: gt_zero,
        pct_no_relevance_one: 100.0 * no_one as f64 / n as f64,
        pct_gt_irrelevant: 100.0 * gt_zero as f64 / n as f64,
    })
}
