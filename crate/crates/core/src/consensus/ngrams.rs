use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest n-gram order tracked.
pub const MAX_ORDER: usize = 4;

/// Counts of the `n`-grams of `tokens`, keyed by token slices in sorted order.
pub fn ngram_counts<S: Ord>(tokens: &[S], n: usize) -> BTreeMap<&[S], usize> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Document frequencies of 1..=4-grams over a reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdfCorpus {
    #[serde(skip)]
    df: Vec<HashMap<Vec<String>, u32>>,
    num_docs: usize,
}

impl IdfCorpus {
    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn df(&self, gram: &[String]) -> u32 {
        match gram.len() {
            0 => 0,
            n if n > MAX_ORDER => 0,
            n => self.df[n - 1].get(gram).copied().unwrap_or(0),
        }
    }

    /// `ln(N / max(1, df))`; unseen n-grams get the maximal weight `ln N`.
    pub fn idf(&self, gram: &[String]) -> f64 {
        (self.num_docs as f64).ln() - f64::from(self.df(gram).max(1)).ln()
    }

    /// Number of distinct n-grams stored for order `n`.
    pub fn vocabulary(&self, n: usize) -> usize {
        self.df.get(n.wrapping_sub(1)).map_or(0, HashMap::len)
    }
}

/// Builds document frequencies, one document per reference answer.
pub fn build_idf<D: AsRef<[String]>>(docs: &[D]) -> Result<IdfCorpus> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("no reference documents for idf"));
    }
    let mut df: Vec<HashMap<Vec<String>, u32>> = vec![HashMap::new(); MAX_ORDER];
    for doc in docs {
        let tokens = doc.as_ref();
        for (n, table) in df.iter_mut().enumerate() {
            let seen: HashSet<&[String]> = tokens.windows(n + 1).collect();
            for gram in seen {
                *table.entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
    }
    Ok(IdfCorpus {
        df,
        num_docs: docs.len(),
    })
}
