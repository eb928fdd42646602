//! Brute-force reference implementations used only by tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, p);
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let mut t = zeros(a[0].len(), a.len());
    for (i, row) in a.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            t[j][i] = x;
        }
    }
    t
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
/// Returns eigenvalues and eigenvectors as columns of the second result.
pub fn jacobi_eigen(mut a: Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut v = zeros(n, n);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Symmetric inverse square root via Jacobi.
pub fn inv_sqrt(m: &Mat) -> Mat {
    let (vals, vecs) = jacobi_eigen(m.clone());
    let n = m.len();
    let mut out = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|k| vecs[i][k] * vecs[j][k] / vals[k].sqrt()).sum();
        }
    }
    out
}

pub fn covariance(x: &Mat, y: &Mat) -> Mat {
    let n = x.len();
    let mx: Vec<f64> = (0..x[0].len()).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let my: Vec<f64> = (0..y[0].len()).map(|j| y.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = zeros(mx.len(), my.len());
    for (rx, ry) in x.iter().zip(y) {
        for i in 0..mx.len() {
            for j in 0..my.len() {
                c[i][j] += (rx[i] - mx[i]) * (ry[j] - my[j]);
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

pub fn flip_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12 * max) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Top-`k` generalized eigenpairs of the CCA block problem, computed through
/// `B^{-1/2} A B^{-1/2}` with Jacobi rotations. Eigenvectors are returned
/// stacked `[w1; w2]`, B-normalized and sign-fixed.
pub fn cca_oracle(x1: &Mat, x2: &Mat, ridge: f64, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n1, n2) = (x1[0].len(), x2[0].len());
    let n = n1 + n2;
    let mut c11 = covariance(x1, x1);
    let mut c22 = covariance(x2, x2);
    let c12 = covariance(x1, x2);
    for i in 0..n1 {
        c11[i][i] += ridge;
    }
    for i in 0..n2 {
        c22[i][i] += ridge;
    }
    let mut a = zeros(n, n);
    let mut b = zeros(n, n);
    for i in 0..n1 {
        for j in 0..n2 {
            a[i][n1 + j] = c12[i][j];
            a[n1 + j][i] = c12[i][j];
        }
        for j in 0..n1 {
            b[i][j] = c11[i][j];
        }
    }
    for i in 0..n2 {
        for j in 0..n2 {
            b[n1 + i][n1 + j] = c22[i][j];
        }
    }
    let bh = inv_sqrt(&b);
    let m = matmul(&matmul(&bh, &a), &bh);
    let (vals, vecs) = jacobi_eigen(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    let mut out_vals = Vec::new();
    let mut out_vecs = Vec::new();
    for &c in &order[..k] {
        let y: Vec<f64> = (0..n).map(|r| vecs[r][c]).collect();
        let mut v: Vec<f64> = (0..n).map(|r| (0..n).map(|s| bh[r][s] * y[s]).sum()).collect();
        flip_sign(&mut v);
        out_vals.push(vals[c]);
        out_vecs.push(v);
    }
    (out_vals, out_vecs)
}

/// Two views sharing a few latent factors plus noise; rows are observations.
pub fn random_views(rng: &mut ChaCha8Rng, n: usize, d1: usize, d2: usize) -> (Mat, Mat) {
    let latent = 3;
    let l1: Mat = (0..latent).map(|_| (0..d1).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let l2: Mat = (0..latent).map(|_| (0..d2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut x1 = zeros(n, d1);
    let mut x2 = zeros(n, d2);
    for i in 0..n {
        let z: Vec<f64> = (0..latent).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for j in 0..d1 {
            x1[i][j] = (0..latent).map(|t| z[t] * l1[t][j]).sum::<f64>() + 0.5 * rng.gen_range(-1.0..1.0);
        }
        for j in 0..d2 {
            x2[i][j] = (0..latent).map(|t| z[t] * l2[t][j]).sum::<f64>() + 0.5 * rng.gen_range(-1.0..1.0);
        }
    }
    (x1, x2)
}
