//! Rank-based evaluation: MR, MRR, R@k, NDCG and the ground-truth rank histogram.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::CANDIDATES_PER_ROUND;
use crate::error::{Error, Result};

/// Candidates ordered best-first, with the score each one received.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// `order[r]` is the candidate position placed at rank `r + 1`.
    pub order: Vec<usize>,
    /// Scores by candidate position.
    pub scores: Vec<f64>,
}

impl Ranking {
    /// Sorts candidates by descending score; ties keep the original candidate order.
    pub fn by_descending(scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        Ranking { order, scores }
    }

    /// Sorts candidates by ascending score (distances); ties keep the original order.
    pub fn by_ascending(scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        Ranking { order, scores }
    }

    /// 1-based rank of the candidate at `position`.
    pub fn rank_of(&self, position: usize) -> Option<usize> {
        self.order.iter().position(|&p| p == position).map(|r| r + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub image_id: u64,
    pub round: u8,
    pub gt_rank: usize,
    pub full_ranking: Vec<usize>,
}

impl RankRecord {
    pub fn new(image_id: u64, round: u8, ranking: &Ranking, gt_position: usize) -> Result<Self> {
        let gt_rank = ranking.rank_of(gt_position).ok_or_else(|| {
            Error::Contract(format!("ground truth {gt_position} missing from ranking"))
        })?;
        Ok(RankRecord {
            image_id,
            round,
            gt_rank,
            full_ranking: ranking.order.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub count: usize,
    pub mr: f64,
    pub mrr: f64,
    /// Percentages.
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

pub fn rank_suite(records: &[RankRecord]) -> Result<RankSummary> {
    let ranks: Vec<usize> = records.iter().map(|r| r.gt_rank).collect();
    rank_suite_from_ranks(&ranks)
}

pub fn rank_suite_from_ranks(ranks: &[usize]) -> Result<RankSummary> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("no ranks to summarize"));
    }
    if ranks.contains(&0) {
        return Err(Error::Contract("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(RankSummary {
        count: ranks.len(),
        mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        r1: recall(1),
        r5: recall(5),
        r10: recall(10),
    })
}

/// How many top-ranked positions enter DCG@m.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdcgCutoff {
    /// m = number of candidates carrying a relevance score (the whole candidate list).
    #[default]
    AllScored,
    /// m = number of candidates with relevance > 0.
    NonZero,
}

/// NDCG@m of `ranking` (candidate positions, best first) against per-candidate `relevance`.
pub fn ndcg(ranking: &[usize], relevance: &[f64], cutoff: NdcgCutoff) -> Result<f64> {
    if ranking.len() != relevance.len() {
        return Err(Error::Contract(format!(
            "ranking has {} entries for {} relevance scores",
            ranking.len(),
            relevance.len()
        )));
    }
    let m = match cutoff {
        NdcgCutoff::AllScored => relevance.len(),
        NdcgCutoff::NonZero => relevance.iter().filter(|&&r| r > 0.0).count(),
    };
    let mut ideal = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let ideal_dcg = dcg(ideal.iter().copied().take(m));
    if ideal_dcg <= 0.0 {
        return Err(Error::UndefinedNdcg);
    }
    let got = dcg(ranking.iter().take(m).map(|&p| relevance[p]));
    Ok(got / ideal_dcg)
}

fn dcg(relevances: impl Iterator<Item = f64>) -> f64 {
    relevances
        .enumerate()
        .map(|(i, rel)| rel / ((i + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdcgSummary {
    pub mean: f64,
    pub evaluated: usize,
    /// Rounds skipped because no candidate was relevant.
    pub undefined: usize,
}

/// Averages NDCG over rounds, excluding (and counting) rounds where it is undefined.
pub fn ndcg_summary<'a>(
    rounds: impl IntoIterator<Item = (&'a [usize], &'a [f64])>,
    cutoff: NdcgCutoff,
) -> Result<NdcgSummary> {
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut undefined = 0;
    for (ranking, relevance) in rounds {
        match ndcg(ranking, relevance, cutoff) {
            Ok(v) => {
                sum += v;
                evaluated += 1;
            }
            Err(Error::UndefinedNdcg) => undefined += 1,
            Err(e) => return Err(e),
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyInput("no round with a defined NDCG"));
    }
    Ok(NdcgSummary {
        mean: sum / evaluated as f64,
        evaluated,
        undefined,
    })
}

/// Counts of ground-truth ranks; `bins[b - 1]` holds rank `b`.
pub fn rank_histogram(records: &[RankRecord]) -> Result<Vec<usize>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no ranks for histogram"));
    }
    let mut bins = vec![0usize; CANDIDATES_PER_ROUND];
    for r in records {
        if r.gt_rank == 0 || r.gt_rank > bins.len() {
            return Err(Error::Contract(format!(
                "rank {} outside 1..={}",
                r.gt_rank,
                bins.len()
            )));
        }
        bins[r.gt_rank - 1] += 1;
    }
    Ok(bins)
}

pub fn write_histogram_csv(bins: &[usize], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "rank,count")?;
    for (i, c) in bins.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, c)?;
    }
    Ok(())
}

/// Shannon entropy in bits of the normalized histogram.
pub fn histogram_entropy(bins: &[usize]) -> f64 {
    let total: usize = bins.iter().sum();
    if total == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(rank: usize) -> RankRecord {
        RankRecord {
            image_id: 0,
            round: 1,
            gt_rank: rank,
            full_ranking: vec![],
        }
    }

    #[test]
    fn perfect_ranks() {
        let s = rank_suite_from_ranks(&[1, 1, 1]).unwrap();
        assert_eq!((s.mr, s.mrr, s.r1, s.r10), (1.0, 1.0, 100.0, 100.0));
    }

    #[test]
    fn low_rank_bias_example() {
        let split: Vec<usize> = [1; 5].into_iter().chain([10; 5]).collect();
        let a = rank_suite_from_ranks(&split).unwrap();
        let b = rank_suite_from_ranks(&[2; 10]).unwrap();
        assert!((a.mrr - 0.55).abs() < 1e-12);
        assert!((b.mrr - 0.5).abs() < 1e-12);
        assert!(a.mrr > b.mrr && a.r1 > b.r1);
        // recall at 5 and 10 do not favour the split model
        assert_eq!((a.r5, b.r5), (50.0, 100.0));
        assert_eq!((a.r10, b.r10), (100.0, 100.0));
        assert!(a.mr > b.mr);
    }

    #[test]
    fn empty_suite_is_an_error() {
        assert!(matches!(rank_suite(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn ranking_ties_are_stable() {
        let r = Ranking::by_descending(vec![0.5; 100]);
        assert_eq!(r.rank_of(37), Some(38));
        let r = Ranking::by_descending(vec![0.1, 0.9, 0.5]);
        assert_eq!(r.order, vec![1, 2, 0]);
    }

    #[test]
    fn ndcg_ideal_and_worked_example() {
        let rel = [1.0, 0.5, 0.0];
        assert_eq!(ndcg(&[0, 1, 2], &rel, NdcgCutoff::AllScored).unwrap(), 1.0);
        // candidate 0 at rank 2, candidate 1 at rank 3, candidate 2 at rank 1
        let got = ndcg(&[2, 0, 1], &rel, NdcgCutoff::AllScored).unwrap();
        assert!((got - 0.6696).abs() < 1e-4, "{got}");
        let nz = ndcg(&[2, 0, 1], &rel, NdcgCutoff::NonZero).unwrap();
        let expect = (1.0 / 3f64.log2()) / (1.0 + 0.5 / 3f64.log2());
        assert!((nz - expect).abs() < 1e-12);
    }

    #[test]
    fn ndcg_all_zero_is_undefined() {
        assert!(matches!(
            ndcg(&[0, 1], &[0.0, 0.0], NdcgCutoff::AllScored),
            Err(Error::UndefinedNdcg)
        ));
        let rankings = [vec![0, 1], vec![1, 0]];
        let rels = [vec![0.0, 0.0], vec![1.0, 0.0]];
        let s = ndcg_summary(
            rankings.iter().map(Vec::as_slice).zip(rels.iter().map(Vec::as_slice)),
            NdcgCutoff::AllScored,
        )
        .unwrap();
        assert_eq!((s.evaluated, s.undefined), (1, 1));
    }

    #[test]
    fn histogram_counts() {
        let bins = rank_histogram(&[record(1), record(1), record(7)]).unwrap();
        assert_eq!(bins[0], 2);
        assert_eq!(bins[6], 1);
        assert_eq!(bins.iter().sum::<usize>(), 3);
        let mut csv = Vec::new();
        write_histogram_csv(&bins, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("rank,count\n1,2\n"));
        assert_eq!(text.lines().count(), 101);
    }

    #[test]
    fn flat_histogram_has_more_entropy() {
        let flat = vec![10usize; 100];
        let mut skewed = vec![0usize; 100];
        skewed[0] = 900;
        skewed[1] = 100;
        assert!(histogram_entropy(&flat) > histogram_entropy(&skewed));
        assert!((histogram_entropy(&flat) - 100f64.log2()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ndcg_bounded(rel in proptest::collection::vec(0.0f64..=1.0, 2..30), seed in any::<u64>()) {
            prop_assume!(rel.iter().any(|&r| r > 0.0));
            let mut order: Vec<usize> = (0..rel.len()).collect();
            let mut s = seed;
            for i in (1..order.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            for cutoff in [NdcgCutoff::AllScored, NdcgCutoff::NonZero] {
                let v = ndcg(&order, &rel, cutoff).unwrap();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn mrr_dominates_inverse_mr(ranks in proptest::collection::vec(1usize..=100, 1..200)) {
            let s = rank_suite_from_ranks(&ranks).unwrap();
            prop_assert!(s.mrr + 1e-12 >= 1.0 / s.mr);
        }

        #[test]
        fn histogram_conserves_records(ranks in proptest::collection::vec(1usize..=100, 1..200)) {
            let records: Vec<RankRecord> = ranks.iter().map(|&r| record(r)).collect();
            prop_assert_eq!(rank_histogram(&records).unwrap().iter().sum::<usize>(), ranks.len());
        }
    }
}
