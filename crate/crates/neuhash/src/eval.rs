//! Ranking metrics over per-user test lists and the per-user analysis series.
//!
//! NDCG uses graded gains `2^rating - 1` with a `log2(position + 1)`
//! discount, normalized by the ideal ordering of the user's own test
//! multiset. MRR is the reciprocal rank of the first occurrence of the
//! user's maximum rating.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::corpus::{Dataset, Rating, Split};
use crate::error::{Error, Result};
use crate::hashindex::{rank_items, CodeBook, HashCode};
use crate::par::map_chunks;
use crate::rng::{stream, stream_rng};

pub fn ndcg_at_k(ranked_ratings: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    if ranked_ratings.is_empty() {
        return Err(Error::Argument("ranking must be non-empty".into()));
    }
    let dcg = dcg_at_k(ranked_ratings, k);
    let mut ideal = ranked_ratings.to_vec();
    ideal.sort_unstable_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg / idcg)
}

fn dcg_at_k(ratings: &[f64], k: usize) -> f64 {
    ratings
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, &r)| (r.exp2() - 1.0) / ((pos + 2) as f64).log2())
        .sum()
}

/// Reciprocal rank of the first item carrying the maximum rating.
pub fn mrr(ranked_ratings: &[f64]) -> f64 {
    if ranked_ratings.is_empty() {
        return 0.0;
    }
    let max = ranked_ratings.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rank = ranked_ratings.iter().position(|&r| r == max).unwrap_or(0) + 1;
    1.0 / rank as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerUserMetrics {
    pub user: u32,
    /// Aligned with the `ks` of the report.
    pub ndcg: Vec<f64>,
    pub mrr: f64,
    /// Mean training-set rating count over all items this user rated.
    pub avg_item_popularity: f64,
    /// Total number of items the user rated in the dataset.
    pub num_items: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    /// Mean NDCG@k over evaluated users, aligned with `ks`.
    pub ndcg: Vec<f64>,
    pub mrr: f64,
    pub evaluated_users: usize,
    /// Users whose test set was empty.
    pub skipped_users: usize,
    pub per_user: Vec<PerUserMetrics>,
}

impl MetricsReport {
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }
}

/// Ranks each user's test items by Hamming distance and averages the
/// metrics. Item popularity is counted on the training ratings only.
pub fn evaluate(
    codebook: &CodeBook,
    split: &Split,
    dataset: &Dataset,
    ks: &[usize],
    threads: usize,
) -> Result<MetricsReport> {
    evaluate_ratings(codebook, &split.test, &split.train, dataset, ks, threads)
}

/// Metric core shared by test evaluation and validation scoring.
pub fn evaluate_ratings(
    codebook: &CodeBook,
    eval_set: &[Rating],
    train_set: &[Rating],
    dataset: &Dataset,
    ks: &[usize],
    threads: usize,
) -> Result<MetricsReport> {
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::Argument("ks must be non-empty and >= 1".into()));
    }

    let mut train_pop = vec![0u32; dataset.num_items()];
    for r in train_set {
        if let Some(c) = train_pop.get_mut(r.item as usize) {
            *c += 1;
        }
    }

    // Group the evaluation ratings per user.
    let mut by_user: Vec<(u32, Vec<(u32, f64)>)> = Vec::new();
    for r in eval_set {
        match by_user.last_mut() {
            Some((u, items)) if *u == r.user => items.push((r.item, r.rating)),
            _ => by_user.push((r.user, vec![(r.item, r.rating)])),
        }
    }
    // `eval_set` is sorted in stored splits; stay correct if it is not.
    if by_user.windows(2).any(|w| w[0].0 >= w[1].0) {
        let mut map: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
        for r in eval_set {
            map.entry(r.user).or_default().push((r.item, r.rating));
        }
        by_user = map.into_iter().collect();
        by_user.sort_unstable_by_key(|(u, _)| *u);
    }

    let total_users: std::collections::HashSet<u32> =
        eval_set.iter().map(|r| r.user).collect();
    let skipped_users = total_users.len() - by_user.len();

    let per_user_chunks: Vec<Result<Vec<PerUserMetrics>>> =
        map_chunks(&by_user, threads, |_, chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            for (user, items) in chunk {
                let user_words = codebook.user_code(*user).map_err(|_| {
                    Error::Index(format!("no code for user {user}"))
                })?;
                let user_code = HashCode::from_words(codebook.m(), user_words.to_vec())?;
                let candidates: Vec<u32> = items.iter().map(|&(i, _)| i).collect();
                let ranked = rank_items(&user_code, codebook, &candidates)
                    .map_err(|e| match e {
                        Error::Index(what) => Error::Index(format!("no code for {what}")),
                        other => other,
                    })?;
                let rating_of: HashMap<u32, f64> = items.iter().copied().collect();
                let ranked_ratings: Vec<f64> =
                    ranked.iter().map(|id| rating_of[id]).collect();
                let ndcg = ks
                    .iter()
                    .map(|&k| ndcg_at_k(&ranked_ratings, k))
                    .collect::<Result<Vec<f64>>>()?;
                let dataset_items = dataset.user_ratings(*user);
                let avg_pop = if dataset_items.is_empty() {
                    0.0
                } else {
                    dataset_items
                        .iter()
                        .map(|r| train_pop[r.item as usize] as f64)
                        .sum::<f64>()
                        / dataset_items.len() as f64
                };
                out.push(PerUserMetrics {
                    user: *user,
                    ndcg,
                    mrr: mrr(&ranked_ratings),
                    avg_item_popularity: avg_pop,
                    num_items: dataset_items.len() as u32,
                });
            }
            Ok(out)
        });

    let mut per_user = Vec::with_capacity(by_user.len());
    for chunk in per_user_chunks {
        per_user.extend(chunk?);
    }

    let n = per_user.len().max(1) as f64;
    let ndcg: Vec<f64> = (0..ks.len())
        .map(|i| per_user.iter().map(|p| p.ndcg[i]).sum::<f64>() / n)
        .collect();
    let mrr_mean = per_user.iter().map(|p| p.mrr).sum::<f64>() / n;
    Ok(MetricsReport {
        ks,
        ndcg,
        mrr: mrr_mean,
        evaluated_users: per_user.len(),
        skipped_users,
        per_user,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKey {
    AvgItemPopularity,
    NumItems,
}

impl SeriesKey {
    pub fn label(&self) -> &'static str {
        match self {
            SeriesKey::AvgItemPopularity => "avg_item_popularity",
            SeriesKey::NumItems => "num_items",
        }
    }

    fn value(&self, p: &PerUserMetrics) -> f64 {
        match self {
            SeriesKey::AvgItemPopularity => p.avg_item_popularity,
            SeriesKey::NumItems => p.num_items as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub position: usize,
    pub key_value: f64,
    pub ndcg10: f64,
}

/// Users sorted ascending by `key`; the value at position t is the mean
/// NDCG@10 over a window of users centered at t, truncated at the
/// boundaries. A window at least as large as the user count collapses every
/// position to the global mean.
pub fn user_series(
    report: &MetricsReport,
    key: SeriesKey,
    window: usize,
) -> Result<Vec<SeriesPoint>> {
    if window == 0 {
        return Err(Error::Argument("window must be >= 1".into()));
    }
    let k10 = report
        .ks
        .iter()
        .position(|&k| k == 10)
        .ok_or_else(|| Error::Argument("series needs NDCG@10 in the report".into()))?;
    let mut users: Vec<(f64, u32, f64)> = report
        .per_user
        .iter()
        .map(|p| (key.value(p), p.user, p.ndcg[k10]))
        .collect();
    users.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let n = users.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if window >= n {
        let mean = users.iter().map(|u| u.2).sum::<f64>() / n as f64;
        return Ok(users
            .into_iter()
            .enumerate()
            .map(|(position, (key_value, _, _))| SeriesPoint { position, key_value, ndcg10: mean })
            .collect());
    }
    let left = (window - 1) / 2;
    let right = window - 1 - left;
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(left);
            let hi = (t + right + 1).min(n);
            let mean = users[lo..hi].iter().map(|u| u.2).sum::<f64>() / (hi - lo) as f64;
            SeriesPoint { position: t, key_value: users[t].0, ndcg10: mean }
        })
        .collect())
}

/// Monte-Carlo expectation of NDCG@k under uniformly random rankings of the
/// given per-user rating lists; `draws` permutations per user. Returns the
/// mean and its standard error.
pub fn random_ranking_ndcg(
    rating_lists: &[Vec<f64>],
    k: usize,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if rating_lists.is_empty() || draws == 0 {
        return Err(Error::Argument("need at least one list and one draw".into()));
    }
    let mut rng = stream_rng(seed, stream::BENCH);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for list in rating_lists {
        if list.is_empty() {
            continue;
        }
        let mut scratch = list.clone();
        for _ in 0..draws {
            scratch.shuffle(&mut rng);
            let v = ndcg_at_k(&scratch, k)?;
            sum += v;
            sum_sq += v * v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Argument("all rating lists were empty".into()));
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    Ok((mean, (var / count as f64).sqrt()))
}

pub fn write_metrics_csv(
    report: &MetricsReport,
    method: &str,
    split_label: &str,
    m: usize,
    path: &Path,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "method,split,m,k,value")?;
    for (i, &k) in report.ks.iter().enumerate() {
        writeln!(w, "{method},{split_label},{m},{k},{}", report.ndcg[i])?;
    }
    writeln!(w, "{method},{split_label},{m},mrr,{}", report.mrr)?;
    w.flush()?;
    Ok(())
}

pub fn write_series_csv(series: &[SeriesPoint], key: SeriesKey, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "position,{},ndcg10", key.label())?;
    for p in series {
        writeln!(w, "{},{},{}", p.position, p.key_value, p.ndcg10)?;
    }
    w.flush()?;
    Ok(())
}
