//! Fingerprints of the conventions that affect reported numbers.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::consensus::{MeteorParams, DEFAULT_BLEU_EPSILON};
use crate::rankmetrics::NdcgCutoff;

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Conventions that change numeric results. Two reports are comparable when their fingerprints agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conventions {
    pub covariance_normalization: &'static str,
    pub std_convention: &'static str,
    pub sign_rule: &'static str,
    pub ndcg_cutoff: NdcgCutoff,
    pub sigma_band: &'static str,
    pub meanshift_bandwidth: &'static str,
    pub idf: &'static str,
    pub idf_documents: &'static str,
    pub cider_aggregation: &'static str,
    pub cider_variant: &'static str,
    pub meteor: MeteorParams,
    pub meteor_matcher: &'static str,
    pub meteor_aggregation: &'static str,
    pub meteor_fragmentation: &'static str,
    pub bleu_epsilon: f64,
    pub bleu_orders: &'static str,
    pub embedding_aggregation: &'static str,
    pub sampler: &'static str,
    pub empty_generations: &'static str,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            covariance_normalization: "1/(N-1)",
            std_convention: "population",
            sign_rule: "first entry above 1e-12 of the column max is positive",
            ndcg_cutoff: NdcgCutoff::default(),
            sigma_band: "[C_anchor - std, C_anchor]",
            meanshift_bandwidth: "silverman 1.06 * std * n^(-1/5)",
            idf: "ln(N) - ln(max(1, df))",
            idf_documents: "one per reference-set member per round",
            cider_aggregation: "mean over references, then over orders",
            cider_variant: "plain tf-idf cosine, no length penalty, no scaling",
            meteor: MeteorParams::default(),
            meteor_matcher: "exact then snowball english stem",
            meteor_aggregation: "max over references",
            meteor_fragmentation: "0 for a complete single-chunk alignment, else chunks/matches",
            bleu_epsilon: DEFAULT_BLEU_EPSILON,
            bleu_orders: "orders above candidate length dropped",
            embedding_aggregation: "mean over references",
            sampler: "with replacement, weights max(corr, 0), uniform fallback",
            empty_generations: "excluded and counted",
        }
    }
}

impl Conventions {
    pub fn with_ndcg_cutoff(mut self, cutoff: NdcgCutoff) -> Self {
        self.ndcg_cutoff = cutoff;
        self
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("conventions serialize").as_bytes())
    }
}
