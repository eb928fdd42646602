//! Run configuration: a TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vdeval_core::report::sha256_hex;
use vdeval_core::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcaSection {
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub method: Option<String>,
    pub anchor: Option<String>,
    pub bandwidth: Option<f64>,
    pub n_clusters: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSection {
    pub metrics: Option<Vec<String>>,
    pub bleu_epsilon: Option<f64>,
}

/// Every setting a command may read. Unset fields fall back to per-command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub split: Option<String>,
    pub train_corpus: Option<PathBuf>,
    pub dense: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub ctx_vectors: Option<PathBuf>,
    pub generations: Option<PathBuf>,
    pub refsets: Option<PathBuf>,
    pub ranks: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Output directory; not part of the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k_gen: Option<usize>,
    pub neighbours: Option<usize>,
    pub k_nn: Option<usize>,
    pub ndcg_cutoff: Option<String>,
    pub pairing: Option<String>,
    pub ranker: Option<String>,
    pub baseline: Option<String>,
    pub model_tag: Option<String>,
    #[serde(default)]
    pub cca: CcaSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub consensus: ConsensusSection,
}

macro_rules! overlay {
    ($dst:expr, $src:expr; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.corpus,
            &mut cfg.train_corpus,
            &mut cfg.dense,
            &mut cfg.embeddings,
            &mut cfg.ctx_vectors,
            &mut cfg.generations,
            &mut cfg.refsets,
            &mut cfg.ranks,
            &mut cfg.model,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Fields set in `flags` replace the ones here.
    pub fn overlay(mut self, flags: &RunConfig) -> Self {
        overlay!(self, flags; corpus, split, train_corpus, dense, embeddings, ctx_vectors, generations,
            refsets, ranks, model, out, seed, k_gen, neighbours, k_nn, ndcg_cutoff, pairing, ranker,
            baseline, model_tag);
        overlay!(self.cca, flags.cca; k, p, ridge);
        overlay!(self.cluster, flags.cluster; method, anchor, bandwidth, n_clusters);
        overlay!(self.consensus, flags.consensus; metrics, bleu_epsilon);
        self
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        let p = value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("--{flag} is required for this command")))?;
        if !p.exists() {
            return Err(Error::Config(format!("--{flag}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "corpus = \"val.json\"\nseed = 3\n[cca]\np = 0.5\n").unwrap();
        let file = RunConfig::load(&path).unwrap();
        assert_eq!(file.corpus.as_deref(), Some(dir.path().join("val.json").as_path()));
        let flags = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = file.overlay(&flags);
        assert_eq!(cfg.seed(), 9);
        assert_eq!(cfg.cca.p, Some(0.5));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "corpuss = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn out_dir_does_not_change_hash() {
        let a = RunConfig {
            out: Some("a".into()),
            ..Default::default()
        };
        let b = RunConfig {
            out: Some("b".into()),
            ..Default::default()
        };
        assert_eq!(a.hash(), b.hash());
    }
}
