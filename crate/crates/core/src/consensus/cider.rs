use std::collections::BTreeMap;

use super::ngrams::{ngram_counts, IdfCorpus, MAX_ORDER};

fn tfidf<'a>(tokens: &'a [String], m: usize, idf: &IdfCorpus) -> (BTreeMap<&'a [String], f64>, f64) {
    let vec: BTreeMap<&[String], f64> = ngram_counts(tokens, m)
        .into_iter()
        .map(|(g, c)| (g, c as f64 * idf.idf(g)))
        .collect();
    let norm = vec.values().map(|v| v * v).sum::<f64>().sqrt();
    (vec, norm)
}

/// Cosine of the tf-idf `m`-gram vectors of `candidate` and `reference`; 0 when either is zero.
pub fn ngram_cosine(candidate: &[String], reference: &[String], m: usize, idf: &IdfCorpus) -> f64 {
    let (c, cn) = tfidf(candidate, m, idf);
    let (r, rn) = tfidf(reference, m, idf);
    cosine(&c, cn, &r, rn)
}

fn cosine(c: &BTreeMap<&[String], f64>, cn: f64, r: &BTreeMap<&[String], f64>, rn: f64) -> f64 {
    if cn == 0.0 || rn == 0.0 {
        return 0.0;
    }
    let dot: f64 = c
        .iter()
        .filter_map(|(g, v)| r.get(g).map(|w| v * w))
        .sum();
    (dot / (cn * rn)).clamp(0.0, 1.0)
}

/// CIDEr-n: per-order tf-idf cosines averaged over references, then over orders `1..=n`.
pub fn cider<R: AsRef<[String]>>(candidate: &[String], refs: &[R], idf: &IdfCorpus, n: usize) -> f64 {
    let n = n.clamp(1, MAX_ORDER);
    if candidate.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for m in 1..=n {
        let (c, cn) = tfidf(candidate, m, idf);
        let per_ref: f64 = refs
            .iter()
            .map(|r| {
                let (rv, rn) = tfidf(r.as_ref(), m, idf);
                cosine(&c, cn, &rv, rn)
            })
            .sum();
        total += per_ref / refs.len() as f64;
    }
    total / n as f64
}
