//! Two-view canonical correlation analysis.
//!
//! The fit solves the symmetric-definite generalized eigenproblem
//! `A v = λ B v` with
//!
//! ```text
//! A = | 0    C12 |      B = | C11 + εI      0     |
//!     | C21  0   |          |    0      C22 + εI  |
//! ```
//!
//! where `Cij` are the (1/(N−1)-normalized) inter- and intra-view
//! covariances and `ε` is the ridge. The top `k` eigenvectors, normalized so
//! that `vᵀ B v = 1`, are split into per-view projections `W1`, `W2`.
//! Each eigenvector's sign is fixed by making its first non-negligible entry
//! positive.
//!
//! Embeddings are `φ(x) = D_λ^p Wᵀ x`; correlations are cosines between
//! embeddings centred on the train-set mean embedding of each view.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingPolicy;
use crate::error::{json_error, Error, Result};
use crate::rankmetrics::Ranking;

/// Rows processed per covariance update.
const CHUNK_ROWS: usize = 2048;
/// Entries below this fraction of a column's largest magnitude are skipped when fixing signs.
const SIGN_EPS: f64 = 1e-12;
/// Smallest admissible eigenvalue of a regularized intra-view covariance, relative to its largest.
const SINGULAR_RTOL: f64 = 1e-13;

const MODEL_FORMAT: &str = "vdeval-cca";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    First,
    Second,
}

impl View {
    fn idx(self) -> usize {
        match self {
            View::First => 0,
            View::Second => 1,
        }
    }
}

/// View holding question embeddings in an answer-question model.
pub const QUESTION_VIEW: View = View::First;
/// View holding answer embeddings in an answer-question model.
pub const ANSWER_VIEW: View = View::Second;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaParams {
    /// Number of retained components; `None` keeps `min(n1, n2)`.
    pub k: Option<usize>,
    /// Exponent applied to the eigenvalues when embedding.
    pub p: f64,
    pub ridge: f64,
}

impl Default for CcaParams {
    fn default() -> Self {
        CcaParams {
            k: None,
            p: 0.0,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    weights: [DMatrix<f64>; 2],
    eigenvalues: Vec<f64>,
    raw_eigenvalues: Vec<f64>,
    scale: Vec<f64>,
    p: f64,
    ridge: f64,
    train_means: [Vec<f64>; 2],
    num_pairs: usize,
    policy: Option<EmbeddingPolicy>,
}

/// A train-mean-centred embedding with its cached norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    values: Vec<f64>,
    norm: f64,
}

impl Projected {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Projected { values, norm }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// True when the centred embedding is the zero vector, i.e. its correlations are undefined.
    pub fn is_degenerate(&self) -> bool {
        self.norm < f64::MIN_POSITIVE
    }

    /// Cosine similarity; 0 when either side is degenerate.
    pub fn cosine(&self, other: &Projected) -> f64 {
        if self.is_degenerate() || other.is_degenerate() {
            return 0.0;
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        (dot / (self.norm * other.norm)).clamp(-1.0, 1.0)
    }
}

fn check_dims<V: AsRef<[f64]>>(bank: &[V], view: usize) -> Result<usize> {
    let dim = bank
        .first()
        .map(|v| v.as_ref().len())
        .ok_or_else(|| Error::Contract(format!("view {view} has no vectors")))?;
    if dim == 0 {
        return Err(Error::Contract(format!("view {view} vectors are empty")));
    }
    if let Some((i, v)) = bank
        .iter()
        .enumerate()
        .find(|(_, v)| v.as_ref().len() != dim)
    {
        return Err(Error::Contract(format!(
            "view {view} vector {i} has length {}, expected {dim}",
            v.as_ref().len()
        )));
    }
    if let Some(i) = bank
        .iter()
        .position(|v| v.as_ref().iter().any(|x| !x.is_finite()))
    {
        return Err(Error::Contract(format!(
            "view {view} vector {i} has non-finite entries"
        )));
    }
    Ok(dim)
}

/// Fits on paired observations `(view1[i], view2[i])`.
pub fn fit<V1, V2>(view1: &[V1], view2: &[V2], params: CcaParams) -> Result<CcaModel>
where
    V1: AsRef<[f64]>,
    V2: AsRef<[f64]>,
{
    if view1.len() != view2.len() {
        return Err(Error::Contract(format!(
            "paired views differ in length: {} vs {}",
            view1.len(),
            view2.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..view1.len()).map(|i| (i, i)).collect();
    fit_pairs(view1, view2, &pairs, params)
}

/// Fits on index pairs into two vector banks, so repeated sentences are stored once.
pub fn fit_pairs<V1, V2>(
    bank1: &[V1],
    bank2: &[V2],
    pairs: &[(usize, usize)],
    params: CcaParams,
) -> Result<CcaModel>
where
    V1: AsRef<[f64]>,
    V2: AsRef<[f64]>,
{
    if pairs.len() < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 paired observations, got {}",
            pairs.len()
        )));
    }
    let n1 = check_dims(bank1, 1)?;
    let n2 = check_dims(bank2, 2)?;
    if let Some(&(a, b)) = pairs
        .iter()
        .find(|&&(a, b)| a >= bank1.len() || b >= bank2.len())
    {
        return Err(Error::Contract(format!("pair ({a}, {b}) out of range")));
    }
    let k = params.k.unwrap_or(n1.min(n2));
    if k == 0 || k > n1.min(n2) {
        return Err(Error::Contract(format!(
            "k = {k} must lie in 1..={}",
            n1.min(n2)
        )));
    }
    if !(params.ridge >= 0.0 && params.ridge.is_finite()) {
        return Err(Error::Contract(format!("ridge {} must be >= 0", params.ridge)));
    }
    if !params.p.is_finite() {
        return Err(Error::Contract("p must be finite".into()));
    }

    let n = pairs.len();
    let mean1 = pair_mean(bank1, pairs.iter().map(|p| p.0), n1);
    let mean2 = pair_mean(bank2, pairs.iter().map(|p| p.1), n2);

    let mut c11 = DMatrix::<f64>::zeros(n1, n1);
    let mut c22 = DMatrix::<f64>::zeros(n2, n2);
    let mut c12 = DMatrix::<f64>::zeros(n1, n2);
    for chunk in pairs.chunks(CHUNK_ROWS) {
        let x1 = centred_rows(bank1, chunk.iter().map(|p| p.0), &mean1);
        let x2 = centred_rows(bank2, chunk.iter().map(|p| p.1), &mean2);
        c11 += x1.tr_mul(&x1);
        c22 += x2.tr_mul(&x2);
        c12 += x1.tr_mul(&x2);
    }
    let denom = (n - 1) as f64;
    c11 /= denom;
    c22 /= denom;
    c12 /= denom;
    for i in 0..n1 {
        c11[(i, i)] += params.ridge;
    }
    for i in 0..n2 {
        c22[(i, i)] += params.ridge;
    }
    // symmetrize away round-off from the chunked products
    let c11 = (&c11 + c11.transpose()) * 0.5;
    let c22 = (&c22 + c22.transpose()) * 0.5;

    let (values, vectors) = solve_generalized(&c11, &c22, &c12)?;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = &order[..k];

    let mut w1 = DMatrix::<f64>::zeros(n1, k);
    let mut w2 = DMatrix::<f64>::zeros(n2, k);
    let mut raw_eigenvalues = Vec::with_capacity(k);
    for (j, &col) in top.iter().enumerate() {
        let mut v = vectors.column(col).clone_owned();
        canonicalize_sign(v.as_mut_slice());
        w1.column_mut(j).copy_from(&v.rows(0, n1));
        w2.column_mut(j).copy_from(&v.rows(n1, n2));
        raw_eigenvalues.push(values[col]);
    }
    if w1.iter().chain(w2.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite projection weights".into()));
    }
    let eigenvalues: Vec<f64> = raw_eigenvalues.iter().map(|l| l.clamp(0.0, 1.0)).collect();
    let scale = eigen_scale(&eigenvalues, params.p);
    let train_means = [
        scaled_tr_mul(&w1, &scale, &mean1),
        scaled_tr_mul(&w2, &scale, &mean2),
    ];
    Ok(CcaModel {
        weights: [w1, w2],
        eigenvalues,
        raw_eigenvalues,
        scale,
        p: params.p,
        ridge: params.ridge,
        train_means,
        num_pairs: n,
        policy: None,
    })
}

fn pair_mean<V: AsRef<[f64]>>(
    bank: &[V],
    idx: impl Iterator<Item = usize>,
    dim: usize,
) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for i in idx {
        for (s, x) in sum.iter_mut().zip(bank[i].as_ref()) {
            *s += x;
        }
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    sum
}

fn centred_rows<V: AsRef<[f64]>>(
    bank: &[V],
    idx: impl ExactSizeIterator<Item = usize>,
    mean: &[f64],
) -> DMatrix<f64> {
    let rows = idx.len();
    let mut m = DMatrix::<f64>::zeros(rows, mean.len());
    for (r, i) in idx.enumerate() {
        for (c, (x, mu)) in bank[i].as_ref().iter().zip(mean).enumerate() {
            m[(r, c)] = x - mu;
        }
    }
    m
}

/// Returns eigenvalues and B-orthonormal eigenvectors (as columns) of the block problem.
fn solve_generalized(
    c11: &DMatrix<f64>,
    c22: &DMatrix<f64>,
    c12: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let l1 = cholesky_checked(c11, 1)?;
    let l2 = cholesky_checked(c22, 2)?;
    let (n1, n2) = (c11.nrows(), c22.nrows());
    let n = n1 + n2;

    let mut l = DMatrix::<f64>::zeros(n, n);
    l.view_mut((0, 0), (n1, n1)).copy_from(&l1);
    l.view_mut((n1, n1), (n2, n2)).copy_from(&l2);
    let mut a = DMatrix::<f64>::zeros(n, n);
    a.view_mut((0, n1), (n1, n2)).copy_from(c12);
    a.view_mut((n1, 0), (n2, n1)).copy_from(&c12.transpose());

    // reduced = L⁻¹ A L⁻ᵀ
    let left = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let reduced = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let reduced = (&reduced + reduced.transpose()) * 0.5;

    let eig = SymmetricEigen::new(reduced);
    // v = L⁻ᵀ y
    let vectors = l
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or_else(|| Error::Numeric("back-substitution failed".into()))?;
    Ok((eig.eigenvalues.iter().copied().collect(), vectors))
}

fn cholesky_checked(c: &DMatrix<f64>, view: usize) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    // a NaN eigenvalue compares as unordered and counts as singular
    let well_conditioned = matches!(min.partial_cmp(&(SINGULAR_RTOL * max)), Some(std::cmp::Ordering::Greater));
    if !well_conditioned {
        return Err(Error::Singular {
            view,
            min_eigenvalue: min,
        });
    }
    c.clone()
        .cholesky()
        .map(|ch| ch.l())
        .ok_or(Error::Singular {
            view,
            min_eigenvalue: min,
        })
}

/// Makes the first entry whose magnitude exceeds `SIGN_EPS · max|v|` positive.
pub fn canonicalize_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > SIGN_EPS * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn eigen_scale(eigenvalues: &[f64], p: f64) -> Vec<f64> {
    eigenvalues.iter().map(|l| l.powf(p)).collect()
}

fn scaled_tr_mul(w: &DMatrix<f64>, scale: &[f64], x: &[f64]) -> Vec<f64> {
    (0..w.ncols())
        .map(|j| {
            let dot: f64 = w.column(j).iter().zip(x).map(|(a, b)| a * b).sum();
            scale[j] * dot
        })
        .collect()
}

impl CcaModel {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self, view: View) -> usize {
        self.weights[view.idx()].nrows()
    }

    /// Eigenvalues (canonical correlations), sorted non-increasing and clamped to [0, 1].
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalues as returned by the solver, before clamping.
    pub fn raw_eigenvalues(&self) -> &[f64] {
        &self.raw_eigenvalues
    }

    pub fn weights(&self, view: View) -> &DMatrix<f64> {
        &self.weights[view.idx()]
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn train_mean(&self, view: View) -> &[f64] {
        &self.train_means[view.idx()]
    }

    pub fn embedding_policy(&self) -> Option<&EmbeddingPolicy> {
        self.policy.as_ref()
    }

    pub fn set_embedding_policy(&mut self, policy: EmbeddingPolicy) {
        self.policy = Some(policy);
    }

    /// `D_λ^p Wᵀ x` for a vector from `view`.
    pub fn project(&self, x: &[f64], view: View) -> Result<Vec<f64>> {
        let w = &self.weights[view.idx()];
        if x.len() != w.nrows() {
            return Err(Error::Contract(format!(
                "vector of length {} for view with dimension {}",
                x.len(),
                w.nrows()
            )));
        }
        Ok(scaled_tr_mul(w, &self.scale, x))
    }

    /// Projection centred on the train-set mean projection of `view`.
    pub fn centred(&self, x: &[f64], view: View) -> Result<Projected> {
        let mut phi = self.project(x, view)?;
        for (v, m) in phi.iter_mut().zip(&self.train_means[view.idx()]) {
            *v -= m;
        }
        Ok(Projected::new(phi))
    }

    /// Cosine of the centred projections of `x1` (from `view1`) and `x2` (from `view2`).
    pub fn correlate(&self, x1: &[f64], view1: View, x2: &[f64], view2: View) -> Result<f64> {
        Ok(self.centred(x1, view1)?.cosine(&self.centred(x2, view2)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { offset, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                offset,
                message,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            k: self.k(),
            p: self.p,
            ridge: self.ridge,
            num_pairs: self.num_pairs,
            eigenvalues: self.eigenvalues.clone(),
            raw_eigenvalues: self.raw_eigenvalues.clone(),
            w1: rows(&self.weights[0]),
            w2: rows(&self.weights[1]),
            train_means: self.train_means.clone(),
            embedding_policy: self.policy.clone(),
        };
        serde_json::to_string(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| json_error("", text, e))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        let w1 = from_rows(&file.w1, file.k)?;
        let w2 = from_rows(&file.w2, file.k)?;
        if file.eigenvalues.len() != file.k
            || file.train_means[0].len() != file.k
            || file.train_means[1].len() != file.k
        {
            return Err(Error::Schema("model file dimensions disagree".into()));
        }
        Ok(CcaModel {
            scale: eigen_scale(&file.eigenvalues, file.p),
            weights: [w1, w2],
            eigenvalues: file.eigenvalues,
            raw_eigenvalues: file.raw_eigenvalues,
            p: file.p,
            ridge: file.ridge,
            train_means: file.train_means,
            num_pairs: file.num_pairs,
            policy: file.embedding_policy,
        })
    }
}

/// Orders candidates by descending correlation with the question (stable on ties).
pub fn rank_candidates(question: &Projected, candidates: &[Projected]) -> Ranking {
    Ranking::by_descending(candidates.iter().map(|c| question.cosine(c)).collect())
}

impl CcaModel {
    /// Ranks raw candidate answer vectors against a raw question vector.
    pub fn rank(&self, question: &[f64], candidates: &[&[f64]]) -> Result<Ranking> {
        let q = self.centred(question, QUESTION_VIEW)?;
        let cands = candidates
            .iter()
            .map(|c| self.centred(c, ANSWER_VIEW))
            .collect::<Result<Vec<_>>>()?;
        Ok(rank_candidates(&q, &cands))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    k: usize,
    p: f64,
    ridge: f64,
    num_pairs: usize,
    eigenvalues: Vec<f64>,
    raw_eigenvalues: Vec<f64>,
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    train_means: [Vec<f64>; 2],
    embedding_policy: Option<EmbeddingPolicy>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], k: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Schema("projection matrix rows must have k entries".into()));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        k,
        rows.iter().flatten().copied(),
    ))
}

/// Applies `A v − λ B v` for a fitted eigenpair; used by residual checks.
pub fn eigen_residual(
    c11: &DMatrix<f64>,
    c22: &DMatrix<f64>,
    c12: &DMatrix<f64>,
    v1: &DVector<f64>,
    v2: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let r1 = c12 * v2 - c11 * v1 * lambda;
    let r2 = c12.transpose() * v1 - c22 * v2 * lambda;
    (r1.norm_squared() + r2.norm_squared()).sqrt()
}
