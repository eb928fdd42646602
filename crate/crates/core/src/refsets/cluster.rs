//! Scalar clustering of correlation values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean-shift iterations stop when the mode moves less than this fraction of the bandwidth.
const SHIFT_STOP: f64 = 1e-3;
const SHIFT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ClusterMethod {
    /// Band `[c_anchor − σ, c_anchor]` with σ the population standard deviation.
    Sigma,
    /// Flat-kernel mean shift; `None` picks Silverman's bandwidth.
    MeanShift { bandwidth: Option<f64> },
    /// Average-linkage agglomerative clustering into `n_clusters`.
    Agglomerative { n_clusters: usize },
}

/// Positions selected from a correlation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub members: Vec<usize>,
    /// Set when clustering had nothing to separate (zero spread, too few values).
    pub degenerate: bool,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n).
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Silverman's rule of thumb, `1.06 σ n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    1.06 * population_std(values) * (values.len() as f64).powf(-0.2)
}

/// Returns the positions in the cluster that contains `anchor`.
pub fn select(values: &[f64], method: ClusterMethod, anchor: usize) -> Result<Selection> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no correlations to cluster"));
    }
    if anchor >= values.len() {
        return Err(Error::Contract(format!(
            "anchor {anchor} outside {} values",
            values.len()
        )));
    }
    match method {
        ClusterMethod::Sigma => Ok(sigma_band(values, values[anchor])),
        ClusterMethod::MeanShift { bandwidth } => {
            let bw = match bandwidth {
                Some(b) if !(b > 0.0 && b.is_finite()) => {
                    return Err(Error::Config(format!("mean-shift bandwidth {b} must be > 0")))
                }
                Some(b) => b,
                None => silverman_bandwidth(values),
            };
            if bw <= 0.0 {
                // zero spread: every value is one mode
                return Ok(Selection {
                    members: (0..values.len()).collect(),
                    degenerate: true,
                });
            }
            let labels = mean_shift(values, bw);
            Ok(Selection {
                members: same_label(&labels, anchor),
                degenerate: false,
            })
        }
        ClusterMethod::Agglomerative { n_clusters } => {
            if n_clusters == 0 {
                return Err(Error::Config("agglomerative n_clusters must be >= 1".into()));
            }
            let distinct = distinct_count(values);
            let degenerate = n_clusters > distinct;
            if degenerate {
                log::warn!(
                    "{n_clusters} clusters requested for {distinct} distinct values; extra clusters are singletons"
                );
            }
            let labels = agglomerative_average(values, n_clusters.min(values.len()));
            Ok(Selection {
                members: same_label(&labels, anchor),
                degenerate,
            })
        }
    }
}

/// Values inside `[top − σ, top]`; every value when σ = 0.
pub fn sigma_band(values: &[f64], top: f64) -> Selection {
    let sigma = population_std(values);
    if sigma == 0.0 {
        return Selection {
            members: (0..values.len()).collect(),
            degenerate: true,
        };
    }
    let lo = top - sigma;
    Selection {
        members: values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= lo && v <= top)
            .map(|(i, _)| i)
            .collect(),
        degenerate: false,
    }
}

fn same_label(labels: &[usize], anchor: usize) -> Vec<usize> {
    let target = labels[anchor];
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == target)
        .map(|(i, _)| i)
        .collect()
}

fn distinct_count(values: &[f64]) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.len()
}

/// Flat-kernel mean shift seeded at every value.
///
/// Converged modes are visited by decreasing support and a mode is kept only
/// if no stronger mode lies within one bandwidth. Each value joins its
/// nearest kept mode.
pub fn mean_shift(values: &[f64], bandwidth: f64) -> Vec<usize> {
    let mut modes: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &seed in values {
        let mut centre = seed;
        for _ in 0..SHIFT_MAX_ITER {
            let (sum, count) = values
                .iter()
                .filter(|&&v| (v - centre).abs() <= bandwidth)
                .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
            let next = sum / count as f64;
            let moved = (next - centre).abs();
            centre = next;
            if moved < SHIFT_STOP * bandwidth {
                break;
            }
        }
        let support = values
            .iter()
            .filter(|&&v| (v - centre).abs() <= bandwidth)
            .count();
        modes.push((centre, support));
    }
    modes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let mut kept: Vec<f64> = Vec::new();
    for (centre, _) in modes {
        if kept.iter().all(|k| (k - centre).abs() > bandwidth) {
            kept.push(centre);
        }
    }
    values
        .iter()
        .map(|&v| {
            kept.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
                .expect("at least one mode")
        })
        .collect()
}

/// Average-linkage agglomerative clustering of scalars.
///
/// On a line, average-linkage clusters stay contiguous in sorted order and
/// the linkage between neighbouring clusters is the gap between their means,
/// so only adjacent clusters are ever merged. Ties merge the leftmost pair.
pub fn agglomerative_average(values: &[f64], n_clusters: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    // (sum, members in sorted order)
    let mut clusters: Vec<(f64, Vec<usize>)> =
        order.iter().map(|&i| (values[i], vec![i])).collect();
    let target = n_clusters.max(1);
    while clusters.len() > target {
        let best = (0..clusters.len() - 1)
            .min_by(|&a, &b| {
                let gap = |j: usize| {
                    let (s0, m0) = &clusters[j];
                    let (s1, m1) = &clusters[j + 1];
                    s1 / m1.len() as f64 - s0 / m0.len() as f64
                };
                gap(a).total_cmp(&gap(b)).then(a.cmp(&b))
            })
            .expect("at least two clusters");
        let (s, m) = clusters.remove(best + 1);
        clusters[best].0 += s;
        clusters[best].1.extend(m);
    }
    let mut labels = vec![0usize; values.len()];
    for (label, (_, members)) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = label;
        }
    }
    labels
}
