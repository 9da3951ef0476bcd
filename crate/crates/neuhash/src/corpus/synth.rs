//! Synthetic ratings-with-reviews generator.
//!
//! Content words are drawn from latent topics and each rating is a noisy
//! function of the user's topic affinity against the item's topic mixture,
//! so a content-aware model has real structure to recover. A configurable
//! fraction of items are content twins: their aggregated review text is a
//! verbatim copy of another item's, which makes their TF-IDF rows identical.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{stream, stream_rng};

use super::RatingEvent;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub vocab: usize,
    pub topics: usize,
    /// Ratings per user, drawn uniformly from `ratings_per_user ± 25%`.
    pub ratings_per_user: usize,
    /// Words per review before stopword padding.
    pub review_words: usize,
    /// Fraction of items whose content duplicates another item's exactly.
    pub twin_fraction: f64,
    /// Fraction of (user, item) pairs emitted twice with an older timestamp.
    pub duplicate_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 300,
            items: 150,
            vocab: 400,
            topics: 8,
            ratings_per_user: 40,
            review_words: 12,
            twin_fraction: 0.04,
            duplicate_fraction: 0.01,
            seed: 0,
        }
    }
}

const FILLER: &[&str] = &["the", "and", "was", "this", "with", "for"];

fn normalized_mixture(rng: &mut ChaCha8Rng, topics: usize, boost: &[usize]) -> Vec<f64> {
    let mut mix: Vec<f64> = (0..topics).map(|_| -(rng.random::<f64>().max(1e-12)).ln()).collect();
    for &b in boost {
        mix[b] *= 8.0;
    }
    let sum: f64 = mix.iter().sum();
    mix.iter_mut().for_each(|v| *v /= sum);
    mix
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let mut t = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        t -= w;
        if t <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Generates deduplicatable rating events with review texts.
pub fn generate(cfg: &SynthConfig) -> Vec<RatingEvent> {
    assert!(cfg.users > 0 && cfg.items > 0 && cfg.topics > 0 && cfg.vocab >= cfg.topics);
    let mut rng = stream_rng(cfg.seed, stream::SYNTH);
    let words_per_topic = cfg.vocab / cfg.topics;

    let item_mix: Vec<Vec<f64>> = (0..cfg.items)
        .map(|_| {
            let primary = rng.random_range(0..cfg.topics);
            normalized_mixture(&mut rng, cfg.topics, &[primary])
        })
        .collect();
    let user_affinity: Vec<Vec<f64>> = (0..cfg.users)
        .map(|_| {
            let a = rng.random_range(0..cfg.topics);
            let b = rng.random_range(0..cfg.topics);
            normalized_mixture(&mut rng, cfg.topics, &[a, b])
        })
        .collect();

    // Mild popularity skew; items keep enough ratings to survive filtering.
    let item_weight: Vec<f64> = (0..cfg.items).map(|i| 1.0 - 0.6 * i as f64 / cfg.items as f64).collect();

    // Rating graph: per user, a set of distinct items scored by affinity and
    // quantized to 1..5 through per-user quantiles, then perturbed.
    struct Edge {
        user: usize,
        item: usize,
        rating: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    for user in 0..cfg.users {
        let lo = cfg.ratings_per_user - cfg.ratings_per_user / 4;
        let hi = cfg.ratings_per_user + cfg.ratings_per_user / 4;
        let count = rng.random_range(lo..=hi).min(cfg.items);
        let mut chosen = std::collections::HashSet::new();
        while chosen.len() < count {
            chosen.insert(sample_index(&mut rng, &item_weight));
        }
        let mut scored: Vec<(f64, usize)> = chosen
            .into_iter()
            .map(|item| {
                let s: f64 = user_affinity[user]
                    .iter()
                    .zip(&item_mix[item])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + 0.002 * rng.random::<f64>();
                (s, item)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = scored.len();
        for (pos, (_, item)) in scored.into_iter().enumerate() {
            let mut rating = 1 + (pos * 5) / n.max(1);
            if rng.random::<f64>() < 0.1 {
                rating = (rating as i64 + if rng.random::<bool>() { 1 } else { -1 })
                    .clamp(1, 5) as usize;
            }
            edges.push(Edge { user, item, rating: rating as f64 });
        }
    }

    // Review text per item, one chunk per rating event of that item.
    let review = |rng: &mut ChaCha8Rng, item: usize| -> String {
        let mut words = Vec::with_capacity(cfg.review_words + 3);
        for _ in 0..cfg.review_words {
            let topic = sample_index(rng, &item_mix[item]);
            let w = topic * words_per_topic + rng.random_range(0..words_per_topic);
            words.push(format!("w{w:05}"));
        }
        for _ in 0..3 {
            words.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
        }
        words.shuffle(rng);
        words.join(" ")
    };

    let mut per_item_events: Vec<Vec<usize>> = vec![Vec::new(); cfg.items];
    for (idx, e) in edges.iter().enumerate() {
        per_item_events[e.item].push(idx);
    }
    let mut texts: Vec<Option<String>> = vec![None; edges.len()];
    let mut aggregated: Vec<String> = vec![String::new(); cfg.items];
    let twin_every = if cfg.twin_fraction > 0.0 {
        (1.0 / cfg.twin_fraction).round() as usize
    } else {
        usize::MAX
    };
    for item in 0..cfg.items {
        let is_twin = item > 0 && twin_every != usize::MAX && item % twin_every == 0;
        if is_twin {
            // Copy the previous item's aggregated text onto the first event;
            // the TF-IDF rows of the two items come out identical.
            aggregated[item] = aggregated[item - 1].clone();
            if let Some(&first) = per_item_events[item].first() {
                texts[first] = Some(aggregated[item].clone());
            }
        } else {
            let mut parts = Vec::new();
            for &idx in &per_item_events[item] {
                let t = review(&mut rng, item);
                parts.push(t.clone());
                texts[idx] = Some(t);
            }
            aggregated[item] = parts.join(" ");
        }
    }

    let mut events: Vec<RatingEvent> = edges
        .iter()
        .enumerate()
        .map(|(idx, e)| RatingEvent {
            user_id: format!("user{:05}", e.user),
            item_id: format!("item{:05}", e.item),
            rating: e.rating,
            timestamp: 1_000_000 + idx as i64,
            review_text: texts[idx].clone(),
        })
        .collect();

    // Stale duplicates: an earlier timestamp and a different rating, which
    // deduplication must discard in favour of the row above.
    let dup_count = (events.len() as f64 * cfg.duplicate_fraction) as usize;
    for k in 0..dup_count {
        let src = &events[k * 7 % events.len()];
        events.push(RatingEvent {
            user_id: src.user_id.clone(),
            item_id: src.item_id.clone(),
            rating: (src.rating as i64 % 5 + 1) as f64,
            timestamp: src.timestamp - 500_000,
            review_text: None,
        });
    }
    events
}

/// Writes events as headerless TSV: user, item, rating, timestamp, review.
pub fn write_tsv(events: &[RatingEvent], path: &std::path::Path) -> crate::error::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            e.user_id,
            e.item_id,
            e.rating,
            e.timestamp,
            e.review_text.as_deref().unwrap_or("")
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_content, core_filter, dedup_latest, stopwords};

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig { users: 50, items: 30, ..Default::default() };
        assert_eq!(generate(&cfg), generate(&cfg));
    }

    #[test]
    fn generated_corpus_survives_preprocessing_with_twins() {
        let cfg = SynthConfig { users: 120, items: 60, twin_fraction: 0.1, ..Default::default() };
        let events = dedup_latest(generate(&cfg));
        let ds = core_filter(&events, 20, 20).unwrap();
        assert!(ds.num_users() > 50);
        assert!(ds.num_items() > 30);
        let (ds, _) = build_content(ds, &events, 8000, &stopwords::default_stopwords()).unwrap();
        // At least one twin pair survives with bit-identical content rows.
        let twins = (0..ds.num_items())
            .flat_map(|a| (0..a).map(move |b| (a, b)))
            .filter(|&(a, b)| {
                ds.content[a].nnz() > 0 && ds.content[a] == ds.content[b]
            })
            .count();
        assert!(twins > 0, "expected at least one surviving twin pair");
    }
}
