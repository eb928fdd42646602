//! Tokenization, word-vector tables and the sentence-embedding policy.
//!
//! A sentence vector is the mean of the word vectors of its first
//! [`MAX_SENTENCE_TOKENS`] tokens. Padding positions never count in the
//! denominator; out-of-vocabulary tokens count as zero vectors under
//! [`OovPolicy::Zero`] and are dropped under [`OovPolicy::Skip`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_SENTENCE_TOKENS: usize = 16;

const CACHE_MAGIC: &[u8; 8] = b"VDEVEMB\0";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    #[default]
    Zero,
    Skip,
}

/// Everything that determines how text becomes a sentence vector.
/// Stored in models and reports so runs can be compared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingPolicy {
    pub tokenizer: String,
    pub max_tokens: usize,
    pub oov: OovPolicy,
    pub pads_counted: bool,
    pub dim: usize,
}

impl EmbeddingPolicy {
    pub fn new(dim: usize, oov: OovPolicy) -> Self {
        EmbeddingPolicy {
            tokenizer: "lowercase+strip-unicode-P+whitespace/v1".to_owned(),
            max_tokens: MAX_SENTENCE_TOKENS,
            oov,
            pads_counted: false,
            dim,
        }
    }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}+").expect("static regex"))
}

/// Lowercases, replaces Unicode punctuation with word boundaries and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    punctuation()
        .replace_all(&lower, " ")
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Word vectors stored contiguously, `dim` floats per word.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    oov_policy: OovPolicy,
    duplicates: usize,
}

impl EmbeddingTable {
    pub fn from_words<I, S>(dim: usize, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::Contract("embedding dimension must be positive".into()));
        }
        let mut table = EmbeddingTable {
            dim,
            index: HashMap::new(),
            data: Vec::new(),
            oov_policy: OovPolicy::default(),
            duplicates: 0,
        };
        for (i, (word, vector)) in words.into_iter().enumerate() {
            if vector.len() != dim {
                return Err(Error::Format {
                    line: i + 1,
                    message: format!("vector has {} values, expected {dim}", vector.len()),
                });
            }
            table.insert(word.into(), &vector);
        }
        if table.is_empty() {
            return Err(Error::EmptyInput("embedding table has no words"));
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, vector: &[f32]) {
        if self.index.contains_key(&word) {
            self.duplicates += 1;
            return;
        }
        self.index.insert(word, self.index.len());
        self.data.extend_from_slice(vector);
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    /// Number of repeated words dropped at load time (first occurrence wins).
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn policy(&self) -> EmbeddingPolicy {
        EmbeddingPolicy::new(self.dim, self.oov_policy)
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Writes the versioned binary cache format.
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let mut words: Vec<(&String, &usize)> = self.index.iter().collect();
        words.sort_by_key(|&(_, &i)| i);
        w.write_all(CACHE_MAGIC).map_err(io)?;
        w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(words.len() as u64).to_le_bytes()).map_err(io)?;
        for (word, &i) in words {
            w.write_all(&(word.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(word.as_bytes()).map_err(io)?;
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Schema(format!(
                "{} is not an embedding cache",
                path.display()
            )));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != CACHE_VERSION {
            return Err(Error::Schema(format!(
                "embedding cache version {version}, expected {CACHE_VERSION}"
            )));
        }
        let dim = read_u32(&mut r).map_err(io)? as usize;
        let mut count = [0u8; 8];
        r.read_exact(&mut count).map_err(io)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut words = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut r).map_err(io)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes).map_err(io)?;
            let word = String::from_utf8(bytes)
                .map_err(|e| Error::Schema(format!("embedding cache word: {e}")))?;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(io)?;
                vector.push(f32::from_le_bytes(b));
            }
            words.push((word, vector));
        }
        EmbeddingTable::from_words(dim, words)
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Loads a `.vec`-style text table: optional `count dim` header, then `word v1 .. v_dim` rows.
pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_embedding_table(BufReader::new(file))?;
    if table.duplicates() > 0 {
        log::warn!(
            "{}: {} duplicate words ignored",
            path.display(),
            table.duplicates()
        );
    }
    Ok(table)
}

/// Loads the binary cache or the text format, whichever the file starts with.
pub fn open_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut head = [0u8; 8];
    let is_cache = File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| &head == CACHE_MAGIC)
        .unwrap_or(false);
    if is_cache {
        EmbeddingTable::load_binary(path)
    } else {
        load_embedding_table(path)
    }
}

pub fn read_embedding_table(reader: impl BufRead) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut expected_count = None;
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if lineno == 1 && rest.len() == 1 {
            if let (Ok(count), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                dim = Some(d);
                expected_count = Some(count);
                continue;
            }
        }
        let vector = rest
            .iter()
            .map(|v| v.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::Format {
                line: lineno,
                message: format!("bad number: {e}"),
            })?;
        let d = *dim.get_or_insert(vector.len());
        if vector.len() != d || d == 0 {
            return Err(Error::Format {
                line: lineno,
                message: format!("vector has {} values, expected {d}", vector.len()),
            });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable {
            dim: d,
            index: HashMap::new(),
            data: Vec::new(),
            oov_policy: OovPolicy::default(),
            duplicates: 0,
        });
        t.insert(word.to_owned(), &vector);
    }
    let table = table.ok_or(Error::EmptyInput("embedding file has no vectors"))?;
    if let Some(count) = expected_count {
        if count != table.len() + table.duplicates() {
            log::warn!(
                "embedding header announces {count} rows, found {}",
                table.len() + table.duplicates()
            );
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub values: Vec<f64>,
    /// Number of tokens in the denominator of the mean (at most 16).
    pub token_count: usize,
}

/// Averages the word vectors of the first 16 tokens.
pub fn embed_sentence<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> SentenceVector {
    let mut sum = vec![0.0f64; table.dim()];
    let mut count = 0usize;
    for token in tokens.iter().take(MAX_SENTENCE_TOKENS) {
        match table.get(token.as_ref()) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += f64::from(*x);
                }
                count += 1;
            }
            None if table.oov_policy() == OovPolicy::Zero => count += 1,
            None => {}
        }
    }
    if count > 0 {
        let n = count as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    SentenceVector {
        values: sum,
        token_count: count,
    }
}

/// Maps a sentence to a fixed-length vector.
pub trait SentenceEmbedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

impl SentenceEmbedder for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(embed_sentence(&tokenize(text), self).values)
    }
}

/// Sentence vectors computed elsewhere (e.g. a contextual encoder), keyed by the exact sentence.
///
/// Text format: a `count dim` header line, then one `sentence<TAB>v1 .. v_dim` line per entry.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PrecomputedVectors {
    pub fn new(dim: usize) -> Self {
        PrecomputedVectors {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, sentence: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Contract(format!(
                "vector has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(sentence.into(), vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l.map_err(|e| Error::Format {
                line: 1,
                message: e.to_string(),
            })?,
            None => return Err(Error::EmptyInput("sentence-vector file is empty")),
        };
        let mut head = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(_count)), Some(Ok(dim)), None) = (head.next(), head.next(), head.next())
        else {
            return Err(Error::Format {
                line: 1,
                message: "expected header `count dim`".into(),
            });
        };
        let mut out = PrecomputedVectors::new(dim);
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Format {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            let (sentence, values) = line.rsplit_once('\t').ok_or_else(|| Error::Format {
                line: lineno,
                message: "expected `sentence<TAB>values`".into(),
            })?;
            let vector = values
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format {
                    line: lineno,
                    message: format!("bad number: {e}"),
                })?;
            if vector.len() != dim {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("vector has {} values, expected {dim}", vector.len()),
                });
            }
            out.vectors.insert(sentence.to_owned(), vector);
        }
        Ok(out)
    }
}

impl SentenceEmbedder for PrecomputedVectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| Error::MissingVector(text.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[(&str, [f32; 3])]) -> EmbeddingTable {
        EmbeddingTable::from_words(3, rows.iter().map(|(w, v)| (*w, v.to_vec()))).unwrap()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Is it sunny?"), ["is", "it", "sunny"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("About 2 years old"), ["about", "2", "years", "old"]);
        assert_eq!(tokenize("yes, it's «big»!"), ["yes", "it", "s", "big"]);
    }

    #[test]
    fn text_table_with_and_without_header() {
        let plain = "cat 1 2 3\ndog 4 5 6\n";
        let t1 = read_embedding_table(plain.as_bytes()).unwrap();
        assert_eq!(t1.len(), 2);
        assert_eq!(t1.dim(), 3);
        let t2 = read_embedding_table(format!("2 3\n{plain}").as_bytes()).unwrap();
        assert_eq!(t2.len(), 2);
        assert_eq!(t1.get("dog"), t2.get("dog"));
        assert_eq!(t1.get("cat"), Some(&[1.0f32, 2.0, 3.0][..]));
    }

    #[test]
    fn short_row_is_a_format_error_at_its_line() {
        let err = read_embedding_table("cat 1 2 3\ndog 4 5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn duplicates_keep_first() {
        let t = read_embedding_table("a 1 1\na 2 2\nb 3 3\n".as_bytes()).unwrap();
        assert_eq!(t.duplicates(), 1);
        assert_eq!(t.get("a"), Some(&[1.0f32, 1.0][..]));
    }

    #[test]
    fn binary_cache_roundtrip() {
        let t = table(&[("cat", [1.0, 2.0, 3.0]), ("dog", [-1.0, 0.5, 0.25])]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        t.save_binary(&path).unwrap();
        let back = EmbeddingTable::load_binary(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("dog"), t.get("dog"));
    }

    #[test]
    fn sentence_mean_cases() {
        let t = table(&[("a", [1.0, 2.0, 3.0]), ("b", [3.0, 0.0, -1.0])]);
        assert_eq!(embed_sentence(&["a"], &t).values, vec![1.0, 2.0, 3.0]);
        assert_eq!(embed_sentence(&["a", "b"], &t).values, vec![2.0, 1.0, 1.0]);

        let empty: [&str; 0] = [];
        let v = embed_sentence(&empty, &t);
        assert_eq!(v.values, vec![0.0; 3]);
        assert_eq!(v.token_count, 0);

        // an OOV token counts as a zero vector by default
        assert_eq!(embed_sentence(&["a", "zzz"], &t).values, vec![0.5, 1.0, 1.5]);
        let skip = t.clone().with_oov_policy(OovPolicy::Skip);
        assert_eq!(embed_sentence(&["a", "zzz"], &skip).values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn truncates_to_sixteen_tokens() {
        let words: Vec<(String, Vec<f32>)> = (0..20)
            .map(|i| (format!("w{i}"), vec![i as f32, (i * i) as f32, 1.0]))
            .collect();
        let t = EmbeddingTable::from_words(3, words.clone()).unwrap();
        let tokens: Vec<String> = words.iter().map(|(w, _)| w.clone()).collect();
        let got = embed_sentence(&tokens, &t);

        // oracle: slice first, then average
        let mut oracle = [0.0f64; 3];
        for (_, v) in &words[..16] {
            for (o, x) in oracle.iter_mut().zip(v) {
                *o += f64::from(*x) / 16.0;
            }
        }
        assert_eq!(got.token_count, 16);
        for (g, o) in got.values.iter().zip(oracle) {
            assert!((g - o).abs() < 1e-12);
        }
    }

    #[test]
    fn precomputed_lookup() {
        let text = "2 2\nhello world\t1 0\nno\t0 1\n";
        let p = PrecomputedVectors::read(text.as_bytes()).unwrap();
        assert_eq!(p.embed("hello world").unwrap(), vec![1.0, 0.0]);
        assert!(matches!(p.embed("nope"), Err(Error::MissingVector(s)) if s == "nope"));
    }

    proptest! {
        #[test]
        fn permutation_invariant_up_to_sixteen(seed in 0u64..1000, n in 1usize..=16) {
            let words: Vec<(String, Vec<f32>)> = (0..n)
                .map(|i| (format!("w{i}"), vec![(seed as f32 + i as f32).sin(), i as f32, 0.5]))
                .collect();
            let t = EmbeddingTable::from_words(3, words.clone()).unwrap();
            let fwd: Vec<String> = words.iter().map(|(w, _)| w.clone()).collect();
            let mut rev = fwd.clone();
            rev.rotate_left(seed as usize % n);
            rev.reverse();
            let a = embed_sentence(&fwd, &t).values;
            let b = embed_sentence(&rev, &t).values;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn scaling_token_vectors_scales_output(c in -4.0f32..4.0, n in 1usize..24) {
            let base: Vec<(String, Vec<f32>)> = (0..n)
                .map(|i| (format!("w{i}"), vec![i as f32 * 0.25, 1.0 - i as f32, 2.0]))
                .collect();
            let scaled: Vec<(String, Vec<f32>)> = base
                .iter()
                .map(|(w, v)| (w.clone(), v.iter().map(|x| x * c).collect()))
                .collect();
            let tokens: Vec<String> = base.iter().map(|(w, _)| w.clone()).collect();
            let a = embed_sentence(&tokens, &EmbeddingTable::from_words(3, base).unwrap()).values;
            let b = embed_sentence(&tokens, &EmbeddingTable::from_words(3, scaled).unwrap()).values;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * f64::from(c) - y).abs() < 1e-4 * (1.0 + y.abs()));
            }
        }
    }
}
