//! On-disk layout for datasets and splits.
//!
//! A dataset directory holds `ratings.bin` (dense-id u32/u32/f64 triples),
//! `content.bin` (CSR row offsets, column indices, weights), `vocab.txt`
//! (word TAB idf per line), `users.txt`, `items.txt` and `manifest.json`.
//! A split directory holds `train.bin`, `validation.bin`, `test.bin` in the
//! same triple format plus `manifest.json`. All binary fields little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Rating, Split, SplitKind, SparseVec, VocabEntry};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_users: usize,
    pub num_items: usize,
    pub num_ratings: usize,
    pub vocab_size: usize,
    pub content_nnz: usize,
    pub max_rating: f64,
    pub empty_content_items: usize,
    pub stopword_list_hash: String,
    /// The effective run configuration, echoed verbatim.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub kind: SplitKind,
    pub seed: u64,
    pub train_fraction: Option<f64>,
    pub num_train: usize,
    pub num_validation: usize,
    pub num_test: usize,
    pub config: serde_json::Value,
}

fn write_triples(path: &Path, ratings: &[Rating]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in ratings {
        w.write_all(&r.user.to_le_bytes())?;
        w.write_all(&r.item.to_le_bytes())?;
        w.write_all(&r.rating.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_triples(path: &Path) -> Result<Vec<Rating>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|_| Error::MissingInput(path.display().to_string()))?
        .read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("file length {} is not a multiple of 16", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| Rating {
            user: u32::from_le_bytes(c[0..4].try_into().unwrap()),
            item: u32::from_le_bytes(c[4..8].try_into().unwrap()),
            rating: f64::from_le_bytes(c[8..16].try_into().unwrap()),
        })
        .collect())
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let r = BufReader::new(
        File::open(path).map_err(|_| Error::MissingInput(path.display().to_string()))?,
    );
    Ok(r.lines().collect::<std::io::Result<_>>()?)
}

pub fn save_dataset(dir: &Path, dataset: &Dataset, manifest: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_triples(&dir.join("ratings.bin"), &dataset.ratings)?;

    let mut w = BufWriter::new(File::create(dir.join("content.bin"))?);
    let nnz: usize = dataset.content.iter().map(|r| r.nnz()).sum();
    w.write_all(&(dataset.content.len() as u64).to_le_bytes())?;
    w.write_all(&(nnz as u64).to_le_bytes())?;
    let mut offset = 0u64;
    w.write_all(&offset.to_le_bytes())?;
    for row in &dataset.content {
        offset += row.nnz() as u64;
        w.write_all(&offset.to_le_bytes())?;
    }
    for row in &dataset.content {
        for idx in &row.indices {
            w.write_all(&idx.to_le_bytes())?;
        }
    }
    for row in &dataset.content {
        for v in &row.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;

    write_lines(
        &dir.join("vocab.txt"),
        dataset.vocab.iter().map(|e| format!("{}\t{}", e.word, e.idf)),
    )?;
    write_lines(&dir.join("users.txt"), dataset.user_ids.iter().cloned())?;
    write_lines(&dir.join("items.txt"), dataset.item_ids.iter().cloned())?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest).unwrap())?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_dataset_manifest(dir)?;
    let user_ids = read_lines(&dir.join("users.txt"))?;
    let item_ids = read_lines(&dir.join("items.txt"))?;
    let ratings = read_triples(&dir.join("ratings.bin"))?;

    let vocab_path = dir.join("vocab.txt");
    let vocab: Vec<VocabEntry> = read_lines(&vocab_path)?
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            let (word, idf) = line.split_once('\t').ok_or_else(|| Error::Format {
                path: vocab_path.display().to_string(),
                message: format!("line {} has no tab separator", i + 1),
            })?;
            Ok(VocabEntry {
                word: word.to_string(),
                idf: idf.parse().map_err(|_| Error::Format {
                    path: vocab_path.display().to_string(),
                    message: format!("bad idf on line {}", i + 1),
                })?,
            })
        })
        .collect::<Result<_>>()?;

    let content_path = dir.join("content.bin");
    let mut bytes = Vec::new();
    File::open(&content_path)
        .map_err(|_| Error::MissingInput(content_path.display().to_string()))?
        .read_to_end(&mut bytes)?;
    let bad = |message: String| Error::Format { path: content_path.display().to_string(), message };
    let take_u64 = |pos: &mut usize| -> Result<u64> {
        let end = *pos + 8;
        if end > bytes.len() {
            return Err(bad("truncated file".into()));
        }
        let v = u64::from_le_bytes(bytes[*pos..end].try_into().unwrap());
        *pos = end;
        Ok(v)
    };
    let mut pos = 0usize;
    let rows = take_u64(&mut pos)? as usize;
    let nnz = take_u64(&mut pos)? as usize;
    let mut offsets = Vec::with_capacity(rows + 1);
    for _ in 0..=rows {
        offsets.push(take_u64(&mut pos)? as usize);
    }
    let expected = pos + nnz * 4 + nnz * 8;
    if offsets.last() != Some(&nnz) || bytes.len() != expected {
        return Err(bad("inconsistent CSR header".into()));
    }
    let idx_base = pos;
    let val_base = pos + nnz * 4;
    let mut content = Vec::with_capacity(rows);
    for r in 0..rows {
        let (s, e) = (offsets[r], offsets[r + 1]);
        let indices = (s..e)
            .map(|k| u32::from_le_bytes(bytes[idx_base + k * 4..idx_base + k * 4 + 4].try_into().unwrap()))
            .collect();
        let values = (s..e)
            .map(|k| f64::from_le_bytes(bytes[val_base + k * 8..val_base + k * 8 + 8].try_into().unwrap()))
            .collect();
        content.push(SparseVec { indices, values });
    }

    let user_index: HashMap<String, u32> =
        user_ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    let item_index: HashMap<String, u32> =
        item_ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    Ok(Dataset {
        user_ids,
        item_ids,
        user_index,
        item_index,
        ratings,
        content,
        vocab,
        max_rating: manifest.max_rating,
    })
}

pub fn load_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::MissingInput(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn save_split(dir: &Path, split: &Split, config: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_triples(&dir.join("train.bin"), &split.train)?;
    write_triples(&dir.join("validation.bin"), &split.validation)?;
    write_triples(&dir.join("test.bin"), &split.test)?;
    let manifest = SplitManifest {
        kind: split.kind,
        seed: split.seed,
        train_fraction: split.train_fraction,
        num_train: split.train.len(),
        num_validation: split.validation.len(),
        num_test: split.test.len(),
        config,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<Split> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::MissingInput(path.display().to_string()))?;
    let manifest: SplitManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(Split {
        kind: manifest.kind,
        train: read_triples(&dir.join("train.bin"))?,
        validation: read_triples(&dir.join("validation.bin"))?,
        test: read_triples(&dir.join("test.bin"))?,
        train_fraction: manifest.train_fraction,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{core_filter, stopwords, build_content};

    #[test]
    fn dataset_roundtrip_is_exact() {
        let mut events = Vec::new();
        for u in 0..3 {
            for i in 0..3 {
                events.push(crate::corpus::RatingEvent {
                    user_id: format!("u{u}"),
                    item_id: format!("i{i}"),
                    rating: (i + 1) as f64,
                    timestamp: (u * 3 + i) as i64,
                    review_text: Some(format!("word{i} word{i} shared")),
                });
            }
        }
        let ds = core_filter(&events, 2, 2).unwrap();
        let (ds, warnings) =
            build_content(ds, &events, 100, &stopwords::default_stopwords()).unwrap();
        let manifest = DatasetManifest {
            num_users: ds.num_users(),
            num_items: ds.num_items(),
            num_ratings: ds.ratings.len(),
            vocab_size: ds.vocab.len(),
            content_nnz: ds.content.iter().map(|r| r.nnz()).sum(),
            max_rating: ds.max_rating,
            empty_content_items: warnings,
            stopword_list_hash: stopwords::stopword_list_hash(stopwords::STOPWORDS),
            config: serde_json::json!({}),
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, &manifest).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, ds);
    }

    #[test]
    fn split_roundtrip_is_exact() {
        let split = Split {
            kind: SplitKind::OutOfMatrix,
            train: vec![Rating { user: 0, item: 1, rating: 4.5 }],
            validation: vec![],
            test: vec![Rating { user: 1, item: 0, rating: 2.0 }],
            train_fraction: Some(0.3),
            seed: 9,
        };
        let dir = tempfile::tempdir().unwrap();
        save_split(dir.path(), &split, serde_json::json!({"seed": 9})).unwrap();
        assert_eq!(load_split(dir.path()).unwrap(), split);
    }

    #[test]
    fn missing_artifact_is_named() {
        let dir = tempfile::tempdir().unwrap();
        match load_split(dir.path()) {
            Err(Error::MissingInput(p)) => assert!(p.contains("manifest.json")),
            other => panic!("expected missing-input, got {other:?}"),
        }
    }
}
