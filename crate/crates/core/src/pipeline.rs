//! Corpus-level glue: embedding every sentence, choosing training pairs, projecting.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{CcaModel, Projected, ANSWER_VIEW, QUESTION_VIEW};
use crate::corpus::Corpus;
use crate::embed::SentenceEmbedder;
use crate::error::{Error, Result};
use crate::refsets::ReferenceSet;

/// Sentence vectors for every question and answer string of a corpus, by corpus index.
#[derive(Debug, Clone)]
pub struct EmbeddedCorpus {
    pub questions: Vec<Vec<f64>>,
    pub answers: Vec<Vec<f64>>,
}

pub fn embed_corpus(corpus: &Corpus, embedder: &dyn SentenceEmbedder) -> Result<EmbeddedCorpus> {
    let embed = |texts: &[String]| -> Result<Vec<Vec<f64>>> {
        texts.par_iter().map(|t| embedder.embed(t)).collect()
    };
    Ok(EmbeddedCorpus {
        questions: embed(&corpus.questions)?,
        answers: embed(&corpus.answers)?,
    })
}

/// Which (question, answer) pairs a model is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Every answered round with its ground-truth answer.
    Gt,
    /// Every round with each member of its reference set.
    Refsets,
}

/// Distinct (question index, answer index) pairs, sorted.
pub fn gt_pairs(corpus: &Corpus) -> Vec<(usize, usize)> {
    corpus
        .rounds()
        .filter_map(|r| r.answer_idx.map(|a| (r.question_idx, a)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Distinct (question, member) pairs of the given reference sets, sorted.
pub fn refset_pairs(corpus: &Corpus, refsets: &[ReferenceSet]) -> Result<Vec<(usize, usize)>> {
    let mut pairs = BTreeSet::new();
    for s in refsets {
        let round = corpus
            .round(s.key())
            .ok_or_else(|| Error::Join(format!("reference set for unknown round {}", s.key())))?;
        pairs.extend(s.members.iter().map(|&m| (round.question_idx, m)));
    }
    Ok(pairs.into_iter().collect())
}

/// Centred CCA embeddings of every question (question view) and answer (answer view).
pub fn project_corpus(model: &CcaModel, embedded: &EmbeddedCorpus) -> Result<(Vec<Projected>, Vec<Projected>)> {
    let questions = embedded
        .questions
        .par_iter()
        .map(|q| model.centred(q, QUESTION_VIEW))
        .collect::<Result<Vec<_>>>()?;
    let answers = embedded
        .answers
        .par_iter()
        .map(|a| model.centred(a, ANSWER_VIEW))
        .collect::<Result<Vec<_>>>()?;
    Ok((questions, answers))
}
