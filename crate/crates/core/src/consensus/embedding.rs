use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddingScore {
    pub l2: f64,
    pub cs: f64,
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity; 0 if either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean L2 distance and mean cosine similarity from the candidate to each reference.
pub fn embedding_distance<R: AsRef<[f64]>>(candidate: &[f64], refs: &[R]) -> EmbeddingScore {
    if refs.is_empty() {
        return EmbeddingScore {
            l2: f64::NAN,
            cs: f64::NAN,
        };
    }
    let n = refs.len() as f64;
    let (l2, cs) = refs.iter().fold((0.0, 0.0), |(l, c), r| {
        (
            l + l2_distance(candidate, r.as_ref()),
            c + cosine_similarity(candidate, r.as_ref()),
        )
    });
    EmbeddingScore {
        l2: l2 / n,
        cs: cs / n,
    }
}
