//! Unigram-alignment METEOR with exact and stem matching.

use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// Search nodes explored per sentence pair before settling for the best alignment found.
const SEARCH_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

pub fn stem(word: &str) -> String {
    stemmer().stem(word).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Alignment {
    pub exact: usize,
    pub stem: usize,
    pub chunks: usize,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.exact + self.stem
    }

    /// Lexicographic preference: more exact matches, then more stem matches, then fewer chunks.
    fn better_than(&self, other: &Alignment) -> bool {
        (self.exact, self.stem, std::cmp::Reverse(self.chunks))
            > (other.exact, other.stem, std::cmp::Reverse(other.chunks))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Exact,
    Stem,
}

struct Search {
    /// Per candidate position: (reference position, kind), exact first.
    options: Vec<Vec<(usize, Kind)>>,
    /// Suffix counts of positions with an exact / any option.
    rem_exact: Vec<usize>,
    rem_any: Vec<usize>,
    used: Vec<bool>,
    best: Option<Alignment>,
    nodes: usize,
}

impl Search {
    fn run(&mut self, i: usize, prev: Option<usize>, cur: Alignment) {
        self.nodes += 1;
        if i == self.options.len() {
            if self.best.is_none_or(|b| cur.better_than(&b)) {
                self.best = Some(cur);
            }
            return;
        }
        if let Some(b) = self.best {
            if self.nodes > SEARCH_BUDGET {
                return;
            }
            // chunks never decrease, so this bound is optimistic in every component
            let bound = Alignment {
                exact: cur.exact + self.rem_exact[i],
                stem: cur.stem + self.rem_any[i],
                chunks: cur.chunks,
            };
            if !bound.better_than(&b) {
                return;
            }
        }

        let mut opts: Vec<(usize, Kind)> = self.options[i]
            .iter()
            .copied()
            .filter(|&(j, _)| !self.used[j])
            .collect();
        // extending the current chunk first makes the first complete alignment a good one
        opts.sort_by_key(|&(j, kind)| {
            (
                kind == Kind::Stem,
                prev.is_none_or(|p| p + 1 != j),
                j,
            )
        });
        for (j, kind) in opts {
            let mut next = cur;
            match kind {
                Kind::Exact => next.exact += 1,
                Kind::Stem => next.stem += 1,
            }
            if prev.is_none_or(|p| p + 1 != j) {
                next.chunks += 1;
            }
            self.used[j] = true;
            self.run(i + 1, Some(j), next);
            self.used[j] = false;
        }
        self.run(i + 1, None, cur);
    }
}

/// Best alignment between candidate and reference unigrams.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let cand_stems: Vec<String> = candidate.iter().map(|w| stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    let options: Vec<Vec<(usize, Kind)>> = candidate
        .iter()
        .zip(&cand_stems)
        .map(|(w, s)| {
            let mut o: Vec<(usize, Kind)> = reference
                .iter()
                .enumerate()
                .filter(|(_, r)| *r == w)
                .map(|(j, _)| (j, Kind::Exact))
                .collect();
            o.extend(
                reference
                    .iter()
                    .zip(&ref_stems)
                    .enumerate()
                    .filter(|(_, (r, rs))| *r != w && *rs == s)
                    .map(|(j, _)| (j, Kind::Stem)),
            );
            o
        })
        .collect();
    let n = options.len();
    let mut rem_exact = vec![0; n + 1];
    let mut rem_any = vec![0; n + 1];
    for i in (0..n).rev() {
        rem_exact[i] = rem_exact[i + 1] + usize::from(options[i].iter().any(|o| o.1 == Kind::Exact));
        rem_any[i] = rem_any[i + 1] + usize::from(!options[i].is_empty());
    }
    let mut search = Search {
        options,
        rem_exact,
        rem_any,
        used: vec![false; reference.len()],
        best: None,
        nodes: 0,
    };
    search.run(0, None, Alignment::default());
    search.best.unwrap_or_default()
}

/// METEOR against one reference.
pub fn meteor_single(candidate: &[String], reference: &[String], params: MeteorParams) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(candidate, reference);
    let m = a.matches();
    if m == 0 {
        return 0.0;
    }
    let precision = m as f64 / candidate.len() as f64;
    let recall = m as f64 / reference.len() as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    // a complete, single-chunk alignment is unfragmented
    let frag = if m == candidate.len() && m == reference.len() && a.chunks == 1 {
        0.0
    } else {
        a.chunks as f64 / m as f64
    };
    let penalty = params.gamma * frag.powf(params.beta);
    fmean * (1.0 - penalty)
}

/// METEOR against several references: the best single-reference score.
pub fn meteor<R: AsRef<[String]>>(candidate: &[String], refs: &[R], params: MeteorParams) -> f64 {
    refs.iter()
        .map(|r| meteor_single(candidate, r.as_ref(), params))
        .fold(0.0, f64::max)
}
