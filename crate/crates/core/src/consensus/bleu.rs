use std::collections::HashMap;

use super::ngrams::{ngram_counts, MAX_ORDER};

/// Count substituted for a zero clipped match count.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Sentence BLEU-n with clipped precisions, closest-reference brevity penalty and
/// add-epsilon smoothing. Orders longer than the candidate are left out of the geometric mean.
pub fn bleu<R: AsRef<[String]>>(candidate: &[String], refs: &[R], n: usize, epsilon: f64) -> f64 {
    let c = candidate.len();
    if c == 0 || refs.is_empty() {
        return 0.0;
    }
    let orders = n.clamp(1, MAX_ORDER).min(c);
    let mut log_sum = 0.0;
    for m in 1..=orders {
        let cand = ngram_counts(candidate, m);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in refs {
            for (g, k) in ngram_counts(r.as_ref(), m) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = (c + 1 - m) as f64;
        let matched = if clipped == 0 { epsilon } else { clipped as f64 };
        log_sum += (matched / total).ln();
    }
    let closest = refs
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c > closest {
        1.0
    } else {
        (1.0 - closest as f64 / c as f64).exp()
    };
    (bp * (log_sum / orders as f64).exp()).min(1.0)
}
