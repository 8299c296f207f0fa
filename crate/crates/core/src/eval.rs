//! Top-K ranking and Recall/nDCG over the cold, warm and all bundle
//! populations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SplitName;
use crate::dataset::{DatasetSplits, Holdout};
use crate::error::{Error, Result};
use crate::model::FusedEmbeddings;

/// Top-`k` candidates by descending score, ties broken by ascending index.
/// Returns fewer than `k` entries when there are not enough candidates.
pub fn rank_topk(scores: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut c: Vec<usize> = candidates.to_vec();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < c.len() {
        c.select_nth_unstable_by(k, cmp);
        c.truncate(k);
    }
    c.sort_by(cmp);
    c
}

/// `|top-K ∩ relevant| / |relevant|`; `relevant` must be sorted.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|b| relevant.binary_search(b).is_ok())
        .count();
    hits as f64 / relevant.len() as f64
}

/// DCG@K with gain `1/log₂(rank+1)` over the ideal DCG for
/// `min(|relevant|, K)` hits.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, b)| relevant.binary_search(b).is_ok())
        .map(|(i, _)| gain(i + 1))
        .sum();
    let idcg: f64 = (1..=relevant.len().min(k)).map(gain).sum();
    dcg / idcg
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub recall: f64,
    pub ndcg: f64,
}

/// Metrics per split and cut-off. A split with no evaluable users is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cold: Option<BTreeMap<String, MetricPair>>,
    pub warm: Option<BTreeMap<String, MetricPair>>,
    pub all: Option<BTreeMap<String, MetricPair>>,
    pub users_evaluated: BTreeMap<String, usize>,
    /// Cut-offs larger than the candidate list of at least one user.
    pub k_exceeds_candidates: BTreeMap<String, Vec<usize>>,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

impl EvalReport {
    pub fn split(&self, s: SplitName) -> Option<&BTreeMap<String, MetricPair>> {
        match s {
            SplitName::Cold => self.cold.as_ref(),
            SplitName::Warm => self.warm.as_ref(),
            SplitName::All => self.all.as_ref(),
        }
    }

    pub fn metric(&self, s: SplitName, k: usize) -> Option<MetricPair> {
        self.split(s).and_then(|m| m.get(&k.to_string()).copied())
    }
}

/// Whether bundle `b` belongs to the candidate population of `split`.
pub fn in_population(splits: &DatasetSplits, split: SplitName, b: usize) -> bool {
    match split {
        SplitName::Cold => splits.is_cold(b),
        SplitName::Warm => splits.is_warm(b),
        SplitName::All => splits.is_cold(b) || splits.is_warm(b),
    }
}

/// A user's candidates and held-out positives within one population.
#[derive(Clone, Debug, PartialEq)]
pub struct UserTask {
    pub user: usize,
    pub candidates: Vec<usize>,
    pub relevant: Vec<usize>,
}

/// Users with at least one held-out positive inside the population.
pub fn user_tasks(splits: &DatasetSplits, holdout: Holdout, split: SplitName, mask_train: bool) -> Vec<UserTask> {
    let population: Vec<usize> = (0..splits.n_bundles())
        .filter(|&b| in_population(splits, split, b))
        .collect();
    let held = splits.holdout(holdout);
    let train = &splits.ub_train;
    (0..held.n_left())
        .filter_map(|u| {
            let relevant: Vec<usize> = held
                .neighbors(u)
                .iter()
                .map(|&b| b as usize)
                .filter(|&b| in_population(splits, split, b))
                .collect();
            if relevant.is_empty() {
                return None;
            }
            let candidates = population
                .iter()
                .copied()
                .filter(|&b| !(mask_train && train.contains(u, b)))
                .collect();
            Some(UserTask {
                user: u,
                candidates,
                relevant,
            })
        })
        .collect()
}

/// Mean metrics over `tasks` for each cut-off; the second value lists cut-offs
/// that exceeded some user's candidate count.
pub fn score_tasks(fused: &FusedEmbeddings, tasks: &[UserTask], ks: &[usize]) -> (BTreeMap<String, MetricPair>, Vec<usize>) {
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let n_bundles = fused.bundles.rows();
    let per_user: Vec<(Vec<MetricPair>, usize)> = tasks
        .par_iter()
        .map(|t| {
            let mut scores = vec![0.0; n_bundles];
            for &b in &t.candidates {
                scores[b] = fused.score(t.user, b);
            }
            let ranked = rank_topk(&scores, &t.candidates, k_max);
            let m = ks
                .iter()
                .map(|&k| MetricPair {
                    recall: recall_at_k(&ranked, &t.relevant, k),
                    ndcg: ndcg_at_k(&ranked, &t.relevant, k),
                })
                .collect();
            (m, t.candidates.len())
        })
        .collect();
    let mut sums = vec![MetricPair { recall: 0.0, ndcg: 0.0 }; ks.len()];
    let mut exceeded = vec![false; ks.len()];
    for (m, n_cand) in &per_user {
        for (i, p) in m.iter().enumerate() {
            sums[i].recall += p.recall;
            sums[i].ndcg += p.ndcg;
            exceeded[i] |= ks[i] > *n_cand;
        }
    }
    let n = per_user.len().max(1) as f64;
    let table = ks
        .iter()
        .zip(&sums)
        .map(|(k, s)| {
            (
                k.to_string(),
                MetricPair {
                    recall: s.recall / n,
                    ndcg: s.ndcg / n,
                },
            )
        })
        .collect();
    let over = ks.iter().zip(&exceeded).filter(|(_, &e)| e).map(|(&k, _)| k).collect();
    (table, over)
}

/// Evaluates fused embeddings on the requested splits.
pub fn evaluate(
    fused: &FusedEmbeddings,
    splits: &DatasetSplits,
    holdout: Holdout,
    which: &[SplitName],
    ks: &[usize],
    mask_train: bool,
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("cut-offs must be positive".into()));
    }
    if fused.bundles.rows() != splits.n_bundles() || fused.users.rows() != splits.ub_train.n_left() {
        return Err(Error::Mismatch("embeddings do not match dataset entity counts".into()));
    }
    let mut report = EvalReport {
        cold: None,
        warm: None,
        all: None,
        users_evaluated: BTreeMap::new(),
        k_exceeds_candidates: BTreeMap::new(),
        config_hash: String::new(),
        checkpoint_hash: String::new(),
    };
    for &s in which {
        let tasks = user_tasks(splits, holdout, s, mask_train);
        report.users_evaluated.insert(s.as_str().into(), tasks.len());
        if tasks.is_empty() {
            log::warn!("split {} has no users with held-out positives", s.as_str());
            continue;
        }
        let (table, over) = score_tasks(fused, &tasks, ks);
        if !over.is_empty() {
            report.k_exceeds_candidates.insert(s.as_str().into(), over);
        }
        match s {
            SplitName::Cold => report.cold = Some(table),
            SplitName::Warm => report.warm = Some(table),
            SplitName::All => report.all = Some(table),
        }
    }
    Ok(report)
}

/// Monte-Carlo estimate of Recall@K under uniformly random rankings of the
/// same candidate lists.
pub fn random_recall(tasks: &[UserTask], k: usize, trials: usize, seed: u64) -> f64 {
    if tasks.is_empty() || trials == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        for t in tasks {
            let mut c = t.candidates.clone();
            c.shuffle(&mut rng);
            total += recall_at_k(&c, &t.relevant, k);
        }
    }
    total / (trials * tasks.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_index() {
        let s = [0.5, 0.9, 0.5, 0.1];
        assert_eq!(rank_topk(&s, &[3, 2, 1, 0], 3), vec![1, 0, 2]);
        assert_eq!(rank_topk(&s, &[0, 1], 5), vec![1, 0]);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(recall_at_k(&[4, 1, 2], &[1, 7], 3), 0.5);
        assert_eq!(ndcg_at_k(&[1], &[1], 1), 1.0);
        assert!((ndcg_at_k(&[5, 6, 1], &[1], 3) - 0.5).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&[5, 6], &[1], 2), 0.0);
    }
}
