#[path = "support/oracle.rs"]
mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdeval_core::cca::{fit, CcaParams, ANSWER_VIEW, QUESTION_VIEW};

/// Largest absolute gap between fitted and oracle eigenpairs.
fn max_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = rng.gen_range(2..=16);
    let d2 = rng.gen_range(2..=16);
    let (x1, x2) = oracle::random_views(&mut rng, 200, d1, d2);
    let k = d1.min(d2);
    let ridge = 1e-8;
    let model = fit(&x1, &x2, CcaParams { k: Some(k), p: 0.0, ridge }).unwrap();
    let (vals, vecs) = oracle::cca_oracle(&x1, &x2, ridge, k);
    let w1 = model.weights(QUESTION_VIEW);
    let w2 = model.weights(ANSWER_VIEW);
    let mut gap: f64 = 0.0;
    for j in 0..k {
        gap = gap.max((model.raw_eigenvalues()[j] - vals[j]).abs());
        for r in 0..d1 {
            gap = gap.max((w1[(r, j)] - vecs[j][r]).abs());
        }
        for r in 0..d2 {
            gap = gap.max((w2[(r, j)] - vecs[j][d1 + r]).abs());
        }
    }
    gap
}

#[test]
fn matches_jacobi_oracle_on_random_problems() {
    for seed in 0..20 {
        let gap = max_gap(seed);
        assert!(gap < 1e-8, "seed {seed}: gap {gap:e}");
    }
}

#[test]
fn oracle_recovers_a_known_spectrum() {
    // diagonal symmetric matrix with a single rotation applied
    let (c, s) = (0.6f64, 0.8f64);
    let a = vec![
        vec![c * c * 3.0 + s * s * 1.0, c * s * (3.0 - 1.0)],
        vec![c * s * (3.0 - 1.0), s * s * 3.0 + c * c * 1.0],
    ];
    let (mut vals, _) = oracle::jacobi_eigen(a);
    vals.sort_by(f64::total_cmp);
    assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
}
