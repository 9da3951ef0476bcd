//! Ratings ingestion, iterative core filtering, TF-IDF content vectors and
//! the train/validation/test splits.

pub mod stopwords;
pub mod store;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// One raw rating row. Multiple events per (user, item) are allowed here and
/// collapsed to the latest timestamp by [`dedup_latest`].
#[derive(Debug, Clone, PartialEq)]
pub struct RatingEvent {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
    pub review_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Tsv,
    Csv,
}

/// Dense-id rating triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
}

/// Sparse row of a CSR-style matrix; indices are strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub word: String,
    pub idf: f64,
}

/// The preprocessed corpus: dense user/item ids, rating triples, per-item
/// TF-IDF content rows and the vocabulary they index into.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub user_index: HashMap<String, u32>,
    pub item_index: HashMap<String, u32>,
    /// Sorted by (user, item).
    pub ratings: Vec<Rating>,
    /// One row per item; empty until content is built. Rows may be all-zero.
    pub content: Vec<SparseVec>,
    pub vocab: Vec<VocabEntry>,
    pub max_rating: f64,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn has_content(&self) -> bool {
        !self.vocab.is_empty()
    }

    /// Overrides the rating scale ceiling; every stored rating must fit.
    pub fn set_max_rating(&mut self, max_rating: f64) -> Result<()> {
        if max_rating <= 0.0 {
            return Err(Error::Argument("max_rating must be positive".into()));
        }
        if let Some(r) = self.ratings.iter().find(|r| r.rating > max_rating) {
            return Err(Error::Argument(format!(
                "rating {} exceeds max_rating {max_rating}",
                r.rating
            )));
        }
        self.max_rating = max_rating;
        Ok(())
    }

    /// Ratings of one user as a contiguous slice (ratings are sorted).
    pub fn user_ratings(&self, user: u32) -> &[Rating] {
        let start = self.ratings.partition_point(|r| r.user < user);
        let end = self.ratings.partition_point(|r| r.user <= user);
        &self.ratings[start..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    InMatrix,
    OutOfMatrix,
}

/// Disjoint train/validation/test rating sets. In out-of-matrix splits the
/// item sets behind the three parts are themselves disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    pub train: Vec<Rating>,
    pub validation: Vec<Rating>,
    pub test: Vec<Rating>,
    pub train_fraction: Option<f64>,
    pub seed: u64,
}

/// Reads rating rows from a TSV/CSV file with columns
/// user_id, item_id, rating, timestamp, review_text (optional, quoted).
/// A header row is skipped if the rating column does not parse.
pub fn load_ratings(path: &Path, format: FileFormat) -> Result<Vec<RatingEvent>> {
    let delimiter = match format {
        FileFormat::Tsv => b'\t',
        FileFormat::Csv => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|_| Error::MissingInput(path.display().to_string()))?;

    let mut events = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(row_idx as u64 + 1),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(row_idx as u64 + 1);
        if record.len() < 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected at least 4 columns, got {}", record.len()),
            });
        }
        let rating_field = record.get(2).unwrap_or("");
        let rating = match rating_field.parse::<f64>() {
            Ok(r) => r,
            Err(_) if row_idx == 0 && rating_field.eq_ignore_ascii_case("rating") => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line,
                    message: format!("bad rating value {rating_field:?}"),
                })
            }
        };
        if !rating.is_finite() || rating <= 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("rating must be positive and finite, got {rating}"),
            });
        }
        let timestamp = record.get(3).unwrap_or("").parse::<i64>().map_err(|_| Error::Parse {
            line,
            message: format!("bad timestamp {:?}", record.get(3).unwrap_or("")),
        })?;
        let review = record.get(4).filter(|s| !s.is_empty()).map(|s| s.to_string());
        events.push(RatingEvent {
            user_id: record.get(0).unwrap_or("").to_string(),
            item_id: record.get(1).unwrap_or("").to_string(),
            rating,
            timestamp,
            review_text: review,
        });
    }
    if events.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Ok(events)
}

/// Collapses repeated (user, item) events to the one with the latest
/// timestamp (later file position wins a timestamp tie). Output keeps the
/// original file order of the surviving events.
pub fn dedup_latest(events: Vec<RatingEvent>) -> Vec<RatingEvent> {
    let mut best: HashMap<(String, String), usize> = HashMap::new();
    for (idx, ev) in events.iter().enumerate() {
        let key = (ev.user_id.clone(), ev.item_id.clone());
        match best.get(&key) {
            Some(&prev) if events[prev].timestamp > ev.timestamp => {}
            _ => {
                best.insert(key, idx);
            }
        }
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    let mut keep_iter = keep.into_iter().peekable();
    events
        .into_iter()
        .enumerate()
        .filter_map(|(idx, ev)| {
            if keep_iter.peek() == Some(&idx) {
                keep_iter.next();
                Some(ev)
            } else {
                None
            }
        })
        .collect()
}

/// Iteratively removes users with fewer than `min_user` ratings and items
/// with fewer than `min_item` ratings until both constraints hold, then
/// assigns dense ids (sorted by original id string).
pub fn core_filter(events: &[RatingEvent], min_user: usize, min_item: usize) -> Result<Dataset> {
    let mut alive: Vec<bool> = vec![true; events.len()];
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for (ev, &a) in events.iter().zip(&alive) {
            if a {
                *user_counts.entry(ev.user_id.as_str()).or_insert(0) += 1;
                *item_counts.entry(ev.item_id.as_str()).or_insert(0) += 1;
            }
        }
        let mut changed = false;
        for (ev, a) in events.iter().zip(alive.iter_mut()) {
            if *a
                && (user_counts[ev.user_id.as_str()] < min_user
                    || item_counts[ev.item_id.as_str()] < min_item)
            {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let survivors: Vec<&RatingEvent> =
        events.iter().zip(&alive).filter(|(_, &a)| a).map(|(ev, _)| ev).collect();
    if survivors.is_empty() {
        return Err(Error::EmptyAfterFilter { min_user, min_item });
    }

    let mut user_ids: Vec<String> =
        survivors.iter().map(|ev| ev.user_id.clone()).collect::<HashSet<_>>().into_iter().collect();
    let mut item_ids: Vec<String> =
        survivors.iter().map(|ev| ev.item_id.clone()).collect::<HashSet<_>>().into_iter().collect();
    user_ids.sort_unstable();
    item_ids.sort_unstable();
    let user_index: HashMap<String, u32> =
        user_ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    let item_index: HashMap<String, u32> =
        item_ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();

    let mut ratings: Vec<Rating> = survivors
        .iter()
        .map(|ev| Rating {
            user: user_index[&ev.user_id],
            item: item_index[&ev.item_id],
            rating: ev.rating,
        })
        .collect();
    ratings.sort_unstable_by_key(|r| (r.user, r.item));
    let max_rating = ratings.iter().map(|r| r.rating).fold(f64::MIN, f64::max);

    Ok(Dataset {
        user_ids,
        item_ids,
        user_index,
        item_index,
        ratings,
        content: Vec::new(),
        vocab: Vec::new(),
        max_rating,
    })
}

/// Lowercases, splits on non-alphanumeric characters and drops tokens
/// shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_string())
        .collect()
}

/// Aggregates each item's review texts, removes stopwords, computes smoothed
/// TF-IDF over the `vocab_size` highest-document-frequency words and
/// L2-normalizes each row. Items whose text vanishes keep an all-zero row;
/// the count of such items is returned alongside the dataset.
pub fn build_content(
    mut dataset: Dataset,
    events: &[RatingEvent],
    vocab_size: usize,
    stopword_set: &HashSet<String>,
) -> Result<(Dataset, usize)> {
    if vocab_size == 0 {
        return Err(Error::Argument("vocab_size must be >= 1".into()));
    }
    let num_items = dataset.num_items();

    // Token counts per item over the aggregated review text.
    let mut item_tokens: Vec<HashMap<String, u32>> = vec![HashMap::new(); num_items];
    for ev in events {
        let (Some(&item), Some(text)) =
            (dataset.item_index.get(&ev.item_id), ev.review_text.as_ref())
        else {
            continue;
        };
        if !dataset.user_index.contains_key(&ev.user_id) {
            continue;
        }
        for tok in tokenize(text) {
            if !stopword_set.contains(&tok) {
                *item_tokens[item as usize].entry(tok).or_insert(0) += 1;
            }
        }
    }

    // Document frequency, then vocabulary selection by (df desc, word asc).
    let mut df: HashMap<&str, u32> = HashMap::new();
    for counts in &item_tokens {
        for word in counts.keys() {
            *df.entry(word.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u32)> = df.iter().map(|(w, &d)| (*w, d)).collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(vocab_size);

    let n_docs = num_items as f64;
    let vocab: Vec<VocabEntry> = ranked
        .iter()
        .map(|&(word, d)| VocabEntry {
            word: word.to_string(),
            idf: ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0,
        })
        .collect();
    let vocab_pos: HashMap<&str, u32> =
        vocab.iter().enumerate().map(|(i, e)| (e.word.as_str(), i as u32)).collect();

    let mut empty_items = 0usize;
    let mut content = Vec::with_capacity(num_items);
    for counts in &item_tokens {
        let mut entries: Vec<(u32, f64)> = counts
            .iter()
            .filter_map(|(word, &tf)| {
                vocab_pos.get(word.as_str()).map(|&vid| (vid, tf as f64 * vocab[vid as usize].idf))
            })
            .collect();
        entries.sort_unstable_by_key(|&(vid, _)| vid);
        let norm = entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        } else {
            empty_items += 1;
        }
        content.push(SparseVec {
            indices: entries.iter().map(|&(i, _)| i).collect(),
            values: entries.iter().map(|&(_, v)| v).collect(),
        });
    }

    dataset.content = content;
    dataset.vocab = vocab;
    Ok((dataset, empty_items))
}

/// Per user: shuffle the rated items, send `test_ratio` of them to test,
/// then move `val_fraction` of the remaining training pool to validation.
pub fn split_in_matrix(
    dataset: &Dataset,
    test_ratio: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(0.0..1.0).contains(&test_ratio) {
        return Err(Error::Argument(format!("test_ratio must be in [0, 1), got {test_ratio}")));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Argument(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    let mut rng = stream_rng(seed, stream::SPLIT);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for user in 0..dataset.num_users() as u32 {
        let mut rated: Vec<Rating> = dataset.user_ratings(user).to_vec();
        rated.shuffle(&mut rng);
        let n_test = (rated.len() as f64 * test_ratio).floor() as usize;
        let pool = rated.split_off(n_test);
        test.extend(rated);
        let n_val = (pool.len() as f64 * val_fraction).floor() as usize;
        validation.extend_from_slice(&pool[..n_val]);
        train.extend_from_slice(&pool[n_val..]);
    }
    for part in [&mut train, &mut validation, &mut test] {
        part.sort_unstable_by_key(|r| (r.user, r.item));
    }
    Ok(Split { kind: SplitKind::InMatrix, train, validation, test, train_fraction: None, seed })
}

/// Marks `floor(n * fraction)` positions of `0..n`, spread evenly.
fn stripe_select(n: usize, fraction: f64) -> Vec<bool> {
    (0..n)
        .map(|j| ((j + 1) as f64 * fraction).floor() > (j as f64 * fraction).floor())
        .collect()
}

/// Out-of-matrix (cold-start) split over items.
///
/// Items are ordered by descending rating count (count ties in seeded random
/// order) and dealt alternately into a training pool and the test set, so
/// both sides cover the popularity spectrum. `val_fraction` of the pool is
/// striped off as validation. The pool remainder is then walked in a
/// five-stride order and the training set takes a prefix proportional to
/// `train_fraction / 0.5`; validation and test are therefore identical for
/// every fraction under one seed, and smaller fractions yield training item
/// sets nested inside larger ones.
pub fn split_out_of_matrix(
    dataset: &Dataset,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Argument(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    let mut rng = stream_rng(seed, stream::SPLIT);

    let mut counts = vec![0u32; dataset.num_items()];
    for r in &dataset.ratings {
        counts[r.item as usize] += 1;
    }
    let mut order: Vec<u32> = (0..dataset.num_items() as u32).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| std::cmp::Reverse(counts[i as usize]));

    let test_mask = stripe_select(order.len(), 0.5);
    let mut pool: Vec<u32> = Vec::new();
    let mut test_items: Vec<u32> = Vec::new();
    for (pos, &item) in order.iter().enumerate() {
        if test_mask[pos] {
            test_items.push(item);
        } else {
            pool.push(item);
        }
    }

    let val_mask = stripe_select(pool.len(), val_fraction);
    let mut val_items: Vec<u32> = Vec::new();
    let mut remainder: Vec<u32> = Vec::new();
    for (pos, &item) in pool.iter().enumerate() {
        if val_mask[pos] {
            val_items.push(item);
        } else {
            remainder.push(item);
        }
    }

    const STRIDES: usize = 5;
    let mut strided: Vec<u32> = Vec::with_capacity(remainder.len());
    for s in 0..STRIDES {
        strided.extend(remainder.iter().skip(s).step_by(STRIDES));
    }
    let take = ((remainder.len() as f64 * train_fraction / 0.5).round() as usize)
        .min(remainder.len());
    let train_items: HashSet<u32> = strided[..take].iter().copied().collect();
    let val_set: HashSet<u32> = val_items.into_iter().collect();
    let test_set: HashSet<u32> = test_items.into_iter().collect();

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for r in &dataset.ratings {
        if train_items.contains(&r.item) {
            train.push(*r);
        } else if val_set.contains(&r.item) {
            validation.push(*r);
        } else if test_set.contains(&r.item) {
            test.push(*r);
        }
    }
    debug_assert!(train.iter().all(|r| !test_set.contains(&r.item)));

    Ok(Split {
        kind: SplitKind::OutOfMatrix,
        train,
        validation,
        test,
        train_fraction: Some(train_fraction),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn event(u: &str, i: &str, r: f64, t: i64, text: Option<&str>) -> RatingEvent {
        RatingEvent {
            user_id: u.into(),
            item_id: i.into(),
            rating: r,
            timestamp: t,
            review_text: text.map(|s| s.into()),
        }
    }

    /// Every pair of users rates every item; enough density to survive any
    /// small-core filter.
    fn clique_events(users: usize, items: usize) -> Vec<RatingEvent> {
        let mut out = Vec::new();
        for u in 0..users {
            for i in 0..items {
                out.push(event(
                    &format!("u{u}"),
                    &format!("i{i}"),
                    ((u + i) % 5 + 1) as f64,
                    (u * items + i) as i64,
                    None,
                ));
            }
        }
        out
    }

    #[test]
    fn load_ratings_keeps_distinct_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.tsv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "u1\ti1\t5\t100\tgreat stuff").unwrap();
        writeln!(f, "u1\ti2\t3\t101\t").unwrap();
        writeln!(f, "u2\ti1\t4\t102\tok").unwrap();
        drop(f);
        let events = load_ratings(&path, FileFormat::Tsv).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[1].review_text, None);
    }

    #[test]
    fn dedup_keeps_latest_timestamp() {
        let events = vec![
            event("u", "i", 2.0, 10, None),
            event("u", "i", 5.0, 20, None),
            event("u", "j", 1.0, 5, None),
        ];
        let deduped = dedup_latest(events);
        assert_eq!(deduped.len(), 2);
        let ui = deduped.iter().find(|e| e.item_id == "i").unwrap();
        assert_eq!(ui.timestamp, 20);
        assert_eq!(ui.rating, 5.0);
    }

    #[test]
    fn load_ratings_names_bad_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.tsv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "u1\ti1\t5\t100\tok").unwrap();
        writeln!(f, "u1\ti2\tabc\t101\tbad").unwrap();
        drop(f);
        match load_ratings(&path, FileFormat::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_ratings_rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        std::fs::File::create(&path).unwrap();
        assert!(matches!(load_ratings(&path, FileFormat::Tsv), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn core_filter_is_identity_on_dense_data() {
        let events = clique_events(3, 3);
        let ds = core_filter(&events, 2, 2).unwrap();
        assert_eq!(ds.num_users(), 3);
        assert_eq!(ds.num_items(), 3);
        assert_eq!(ds.ratings.len(), 9);
    }

    #[test]
    fn core_filter_cascade_can_empty() {
        // u_a rates {i1, i2}; u_b rates {i1}; dropping u_b starves i1, then
        // u_a, then i2: nothing survives.
        let events = vec![
            event("a", "i1", 5.0, 1, None),
            event("a", "i2", 5.0, 2, None),
            event("b", "i1", 5.0, 3, None),
        ];
        match core_filter(&events, 2, 2) {
            Err(Error::EmptyAfterFilter { .. }) => {}
            other => panic!("expected empty-after-filter, got {other:?}"),
        }
    }

    #[test]
    fn core_filter_is_fixed_point() {
        let mut events = clique_events(4, 4);
        // One extra sparse user and item; both get removed.
        events.push(event("z", "i0", 1.0, 99, None));
        events.push(event("u0", "zz", 1.0, 98, None));
        let ds = core_filter(&events, 3, 3).unwrap();
        assert_eq!(ds.num_users(), 4);
        assert_eq!(ds.num_items(), 4);
        // Re-running on the surviving events changes nothing.
        let surviving: Vec<RatingEvent> = events
            .iter()
            .filter(|e| {
                ds.user_index.contains_key(&e.user_id) && ds.item_index.contains_key(&e.item_id)
            })
            .cloned()
            .collect();
        let again = core_filter(&surviving, 3, 3).unwrap();
        assert_eq!(again.ratings, ds.ratings);
    }

    #[test]
    fn build_content_stopword_only_item_gets_zero_row() {
        let mut events = clique_events(2, 2);
        for ev in events.iter_mut() {
            ev.review_text = Some(if ev.item_id == "i0" {
                "the and of".to_string()
            } else {
                "splendid espresso".to_string()
            });
        }
        let ds = core_filter(&events, 2, 2).unwrap();
        let (ds, warnings) = build_content(ds, &events, 8000, &stopwords::default_stopwords()).unwrap();
        assert_eq!(warnings, 1);
        let i0 = ds.item_index["i0"] as usize;
        assert_eq!(ds.content[i0].nnz(), 0);
    }

    #[test]
    fn build_content_disjoint_single_words() {
        let mut events = clique_events(2, 2);
        for ev in events.iter_mut() {
            ev.review_text =
                Some(if ev.item_id == "i0" { "alpha".to_string() } else { "beta".to_string() });
        }
        let ds = core_filter(&events, 2, 2).unwrap();
        let (ds, _) = build_content(ds, &events, 2, &stopwords::default_stopwords()).unwrap();
        for row in &ds.content {
            assert_eq!(row.nnz(), 1);
            assert!((row.values[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn build_content_matches_scripted_tfidf() {
        // Three items with known term/document frequencies. The expected
        // weights re-derive tf * (ln((1+N)/(1+df)) + 1) by hand.
        let mut events = clique_events(3, 3);
        for ev in events.iter_mut() {
            ev.review_text = Some(match (ev.user_id.as_str(), ev.item_id.as_str()) {
                (_, "i0") => "apple apple banana".to_string(),
                (_, "i1") => "banana cherry".to_string(),
                (_, "i2") => "cherry cherry cherry durian".to_string(),
            });
        }
        // Only the first event per item carries the text, so tf counts are
        // not multiplied by the number of raters.
        let mut seen = HashSet::new();
        for ev in events.iter_mut() {
            if !seen.insert(ev.item_id.clone()) {
                ev.review_text = None;
            }
        }
        let ds = core_filter(&events, 3, 3).unwrap();
        let (ds, _) = build_content(ds, &events, 8000, &stopwords::default_stopwords()).unwrap();

        let n = 3.0;
        let idf = |df: f64| ((1.0 + n) / (1.0 + df)).ln() + 1.0;
        // i0: apple tf=2 df=1, banana tf=1 df=2.
        let raw = [2.0 * idf(1.0), 1.0 * idf(2.0)];
        let norm = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        let i0 = &ds.content[ds.item_index["i0"] as usize];
        let vocab_of = |w: &str| ds.vocab.iter().position(|e| e.word == w).unwrap() as u32;
        let apple = i0.indices.iter().position(|&v| v == vocab_of("apple")).unwrap();
        let banana = i0.indices.iter().position(|&v| v == vocab_of("banana")).unwrap();
        assert!((i0.values[apple] - raw[0] / norm).abs() < 1e-12);
        assert!((i0.values[banana] - raw[1] / norm).abs() < 1e-12);
        let l2: f64 = i0.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((l2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn in_matrix_split_halves_per_user() {
        let events = clique_events(3, 20);
        let ds = core_filter(&events, 1, 1).unwrap();
        let split = split_in_matrix(&ds, 0.5, 0.0, 7).unwrap();
        for user in 0..3u32 {
            let t = split.test.iter().filter(|r| r.user == user).count();
            let tr = split.train.iter().filter(|r| r.user == user).count();
            assert_eq!(t, 10);
            assert_eq!(tr, 10);
        }
        assert!(split.validation.is_empty());
    }

    #[test]
    fn in_matrix_split_is_deterministic_and_partitions() {
        let events = clique_events(4, 25);
        let ds = core_filter(&events, 1, 1).unwrap();
        let a = split_in_matrix(&ds, 0.5, 0.15, 42).unwrap();
        let b = split_in_matrix(&ds, 0.5, 0.15, 42).unwrap();
        assert_eq!(a, b);
        let total = a.train.len() + a.validation.len() + a.test.len();
        assert_eq!(total, ds.ratings.len());
        let mut all: Vec<(u32, u32)> = a
            .train
            .iter()
            .chain(&a.validation)
            .chain(&a.test)
            .map(|r| (r.user, r.item))
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total);
    }

    #[test]
    fn out_of_matrix_stripes_by_popularity() {
        // Rating counts 100, 90, 10, 9 over four items: the training pool
        // must take one of the two popular and one of the two rare items.
        let mut events = Vec::new();
        let counts = [("i_a", 100), ("i_b", 90), ("i_c", 10), ("i_d", 9)];
        for (item, n) in counts {
            for u in 0..n {
                events.push(event(&format!("u{u}"), item, 3.0, u as i64, None));
            }
        }
        let ds = core_filter(&events, 1, 1).unwrap();
        let split = split_out_of_matrix(&ds, 0.5, 0.0, 3).unwrap();
        let train_items: HashSet<u32> = split.train.iter().map(|r| r.item).collect();
        let popular = [ds.item_index["i_a"], ds.item_index["i_b"]];
        let rare = [ds.item_index["i_c"], ds.item_index["i_d"]];
        assert_eq!(popular.iter().filter(|i| train_items.contains(i)).count(), 1);
        assert_eq!(rare.iter().filter(|i| train_items.contains(i)).count(), 1);
    }

    #[test]
    fn out_of_matrix_test_items_identical_across_fractions() {
        let events = clique_events(6, 40);
        let ds = core_filter(&events, 1, 1).unwrap();
        let full = split_out_of_matrix(&ds, 0.5, 0.15, 11).unwrap();
        let small = split_out_of_matrix(&ds, 0.1, 0.15, 11).unwrap();
        let items = |rs: &[Rating]| -> HashSet<u32> { rs.iter().map(|r| r.item).collect() };
        assert_eq!(items(&full.test), items(&small.test));
        assert_eq!(items(&full.validation), items(&small.validation));
        assert!(items(&small.train).is_subset(&items(&full.train)));
        // Item-disjointness between train and test.
        assert!(items(&full.train).is_disjoint(&items(&full.test)));
    }
}
