//! Baseline answer producers: correlation-weighted sampling (CCA-AQ-G) and
//! nearest-neighbour ranking (NN-AQ).

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cca::Projected;
use crate::consensus::GeneratedAnswerSet;
use crate::corpus::{DialogueRound, RoundKey};
use crate::embed::SentenceEmbedder;
use crate::error::{Error, Result};
use crate::rankmetrics::Ranking;

/// Neighbour questions whose answers form the pseudo-candidate set.
pub const DEFAULT_NEIGHBOURS: usize = 100;

/// Train questions paired with their ground-truth answers, in CCA space.
#[derive(Debug, Clone)]
pub struct AnswerBank {
    questions: Vec<Projected>,
    answers: Vec<String>,
    answer_vecs: Vec<Projected>,
}

impl AnswerBank {
    /// `questions[i]` is answered by `answers[i]`, whose answer-view projection is `answer_vecs[i]`.
    pub fn new(questions: Vec<Projected>, answers: Vec<String>, answer_vecs: Vec<Projected>) -> Result<Self> {
        if questions.is_empty() {
            return Err(Error::EmptyInput("answer bank"));
        }
        if questions.len() != answers.len() || answers.len() != answer_vecs.len() {
            return Err(Error::Contract(format!(
                "answer bank parts differ in length: {} questions, {} answers, {} answer vectors",
                questions.len(),
                answers.len(),
                answer_vecs.len()
            )));
        }
        Ok(AnswerBank {
            questions,
            answers,
            answer_vecs,
        })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn answer(&self, i: usize) -> &str {
        &self.answers[i]
    }

    /// Bank indices of the `n` train questions most correlated with `question`, best first.
    pub fn neighbours(&self, question: &Projected, n: usize) -> Vec<usize> {
        let ranking = Ranking::by_descending(self.questions.iter().map(|q| question.cosine(q)).collect());
        ranking.order.into_iter().take(n.max(1)).collect()
    }

    /// Sampling weights `max(corr, 0)` of the neighbours' answers against the question.
    /// Falls back to uniform weights when none is positive; the flag reports the fallback.
    pub fn sampling_weights(&self, question: &Projected, neighbours: &[usize]) -> (Vec<f64>, bool) {
        let w: Vec<f64> = neighbours
            .iter()
            .map(|&i| question.cosine(&self.answer_vecs[i]).max(0.0))
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            (w, false)
        } else {
            (vec![1.0; neighbours.len()], true)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub answers: Vec<String>,
    /// Bank indices the answers were drawn from.
    pub drawn: Vec<usize>,
    pub uniform_fallback: bool,
}

/// Mixes a run seed with a round key into an independent per-question seed.
pub fn derive_seed(seed: u64, key: RoundKey) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(seed ^ splitmix(key.image_id)) ^ u64::from(key.round))
}

/// Draws `k` answers with replacement from the neighbours' answers, in proportion to
/// their clipped correlation with the question.
pub fn generate_cca_aq_g(
    question: &Projected,
    bank: &AnswerBank,
    k: usize,
    neighbours: usize,
    seed: u64,
) -> Result<Generation> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let pool = bank.neighbours(question, neighbours);
    let (weights, uniform_fallback) = bank.sampling_weights(question, &pool);
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn: Vec<usize> = (0..k).map(|_| pool[dist.sample(&mut rng)]).collect();
    Ok(Generation {
        answers: drawn.iter().map(|&i| bank.answers[i].clone()).collect(),
        drawn,
        uniform_fallback,
    })
}

/// Runs the sampler on every round; `questions` is indexed by corpus question index.
/// Returns the generations and the number of rounds that fell back to uniform sampling.
pub fn generate_for_rounds(
    rounds: &[&DialogueRound],
    questions: &[Projected],
    bank: &AnswerBank,
    k: usize,
    neighbours: usize,
    seed: u64,
    model_tag: &str,
) -> Result<(Vec<GeneratedAnswerSet>, usize)> {
    let out = rounds
        .par_iter()
        .map(|r| {
            let q = questions
                .get(r.question_idx)
                .ok_or_else(|| Error::Contract(format!("no projection for question {}", r.question_idx)))?;
            let g = generate_cca_aq_g(q, bank, k, neighbours, derive_seed(seed, r.key()))?;
            Ok((
                GeneratedAnswerSet {
                    image_id: r.image_id,
                    round: r.round,
                    generations: g.answers,
                    model_tag: model_tag.to_owned(),
                },
                g.uniform_fallback,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let fallbacks = out.iter().filter(|(_, f)| *f).count();
    Ok((out.into_iter().map(|(g, _)| g).collect(), fallbacks))
}

/// Raw (non-CCA) sentence vectors of train questions and their answers.
#[derive(Debug, Clone)]
pub struct NnBank {
    questions: Vec<Vec<f64>>,
    answers: Vec<Vec<f64>>,
}

impl NnBank {
    pub fn new(questions: Vec<Vec<f64>>, answers: Vec<Vec<f64>>) -> Result<Self> {
        if questions.is_empty() {
            return Err(Error::EmptyInput("nearest-neighbour bank"));
        }
        if questions.len() != answers.len() {
            return Err(Error::Contract(format!(
                "{} questions but {} answers",
                questions.len(),
                answers.len()
            )));
        }
        Ok(NnBank { questions, answers })
    }

    /// Embeds paired question/answer strings.
    pub fn from_pairs(pairs: &[(&str, &str)], embedder: &dyn SentenceEmbedder) -> Result<Self> {
        let (q, a): (Vec<_>, Vec<_>) = pairs
            .par_iter()
            .map(|(q, a)| Ok((embedder.embed(q)?, embedder.embed(a)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        NnBank::new(q, a)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Mean answer vector of the `k_nn` questions nearest to `question` in L2.
    pub fn canonical_answer(&self, question: &[f64], k_nn: usize) -> Vec<f64> {
        let dist = Ranking::by_ascending(
            self.questions
                .iter()
                .map(|q| crate::consensus::l2_distance(question, q))
                .collect(),
        );
        let k = k_nn.clamp(1, self.len());
        let mut mean = vec![0.0; self.answers[0].len()];
        for &i in &dist.order[..k] {
            for (m, a) in mean.iter_mut().zip(&self.answers[i]) {
                *m += a;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k as f64);
        mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnRanking {
    pub ranking: Ranking,
    pub k_used: usize,
    pub clamped: bool,
}

/// Ranks candidates by ascending L2 distance to the canonical answer of the question's neighbours.
pub fn rank_nn_aq<C: AsRef<[f64]>>(question: &[f64], candidates: &[C], bank: &NnBank, k_nn: usize) -> Result<NnRanking> {
    if k_nn == 0 {
        return Err(Error::Config("k_nn must be at least 1".into()));
    }
    let clamped = k_nn > bank.len();
    if clamped {
        log::debug!("k_nn {k_nn} exceeds bank size {}; using {}", bank.len(), bank.len());
    }
    let canonical = bank.canonical_answer(question, k_nn);
    let scores = candidates
        .iter()
        .map(|c| crate::consensus::l2_distance(&canonical, c.as_ref()))
        .collect();
    Ok(NnRanking {
        ranking: Ranking::by_ascending(scores),
        k_used: k_nn.min(bank.len()),
        clamped,
    })
}
