//! Versioned binary checkpoint: every tensor with a shape header, the loss
//! hyperparameters and the run seed. All fields little-endian, f64 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::{Hyper, ItemEncoder, ItemModel, ModelParams, Variant};

const MAGIC: &[u8; 4] = b"NHCF";
const VERSION: u32 = 1;

struct TensorBlock {
    name: String,
    rows: u64,
    cols: u64,
    data: Vec<f64>,
}

fn tensor_blocks(params: &ModelParams) -> Vec<TensorBlock> {
    let mat_block = |name: &str, m: &Mat| TensorBlock {
        name: name.to_string(),
        rows: m.rows() as u64,
        cols: m.cols() as u64,
        data: m.as_slice().to_vec(),
    };
    let vec_block = |name: &str, v: &[f64]| TensorBlock {
        name: name.to_string(),
        rows: 1,
        cols: v.len() as u64,
        data: v.to_vec(),
    };
    let mut blocks = vec![mat_block("user_embedding", &params.user_embedding)];
    match &params.item_model {
        ItemModel::ContentAware { encoder, word_embedding, word_bias } => {
            blocks.push(mat_block("enc_w1", &encoder.w1));
            blocks.push(vec_block("enc_b1", &encoder.b1));
            blocks.push(mat_block("enc_w2", &encoder.w2));
            blocks.push(vec_block("enc_b2", &encoder.b2));
            blocks.push(mat_block("enc_w3", &encoder.w3));
            blocks.push(vec_block("enc_b3", &encoder.b3));
            blocks.push(vec_block("word_importance", &encoder.word_importance));
            blocks.push(mat_block("word_embedding", word_embedding));
            blocks.push(vec_block("word_bias", word_bias));
        }
        ItemModel::NoContent { item_embedding } => {
            blocks.push(mat_block("item_embedding", item_embedding));
        }
    }
    blocks
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    hyper: &Hyper,
    seed: u64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match params.variant() {
        Variant::ContentAware => 0u8,
        Variant::NoContent => 1u8,
    }])?;
    w.write_all(&(params.code_bits as u64).to_le_bytes())?;
    let blocks = tensor_blocks(params);
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for b in &blocks {
        w.write_all(&(b.name.len() as u16).to_le_bytes())?;
        w.write_all(b.name.as_bytes())?;
        w.write_all(&b.rows.to_le_bytes())?;
        w.write_all(&b.cols.to_le_bytes())?;
        for v in &b.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for v in [hyper.alpha, hyper.noise_var, hyper.anneal_factor, hyper.kl_weight] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&seed.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Hyper, u64)> {
    let bad = |message: &str| Error::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let mut r = BufReader::new(
        File::open(path).map_err(|_| Error::MissingInput(path.display().to_string()))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    if read_u32(&mut r)? != VERSION {
        return Err(bad("unsupported version"));
    }
    let mut variant_byte = [0u8; 1];
    r.read_exact(&mut variant_byte)?;
    let variant = match variant_byte[0] {
        0 => Variant::ContentAware,
        1 => Variant::NoContent,
        _ => return Err(bad("unknown variant byte")),
    };
    let code_bits = read_u64(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not utf-8"))?;
        let rows = read_u64(&mut r)?;
        let cols = read_u64(&mut r)?;
        let mut data = vec![0.0f64; (rows * cols) as usize];
        for v in data.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        blocks.push(TensorBlock { name, rows, cols, data });
    }
    let hyper = Hyper {
        alpha: read_f64(&mut r)?,
        noise_var: read_f64(&mut r)?,
        anneal_factor: read_f64(&mut r)?,
        kl_weight: read_f64(&mut r)?,
    };
    let seed = read_u64(&mut r)?;

    let take_mat = |name: &str| -> Result<Mat> {
        let b = blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        Ok(Mat::from_vec(b.rows as usize, b.cols as usize, b.data.clone()))
    };
    let take_vec = |name: &str| -> Result<Vec<f64>> {
        let b = blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        Ok(b.data.clone())
    };

    let item_model = match variant {
        Variant::ContentAware => ItemModel::ContentAware {
            encoder: ItemEncoder {
                w1: take_mat("enc_w1")?,
                b1: take_vec("enc_b1")?,
                w2: take_mat("enc_w2")?,
                b2: take_vec("enc_b2")?,
                w3: take_mat("enc_w3")?,
                b3: take_vec("enc_b3")?,
                word_importance: take_vec("word_importance")?,
            },
            word_embedding: take_mat("word_embedding")?,
            word_bias: take_vec("word_bias")?,
        },
        Variant::NoContent => ItemModel::NoContent { item_embedding: take_mat("item_embedding")? },
    };
    let params =
        ModelParams { code_bits, user_embedding: take_mat("user_embedding")?, item_model };
    Ok((params, hyper, seed))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    #[test]
    fn checkpoint_roundtrip_both_variants() {
        let dims = ModelDims {
            code_bits: 8,
            num_users: 4,
            num_items: 5,
            vocab: 12,
            hidden1: 6,
            hidden2: 7,
        };
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::ContentAware, Variant::NoContent] {
            let params = ModelParams::init(&dims, variant, 3).unwrap();
            let hyper = Hyper { alpha: 0.01, noise_var: 0.5, anneal_factor: 0.999, kl_weight: 1.0 };
            let path = dir.path().join("ckpt.bin");
            save_checkpoint(&path, &params, &hyper, 99).unwrap();
            let (loaded, h2, seed) = load_checkpoint(&path).unwrap();
            assert_eq!(loaded, params);
            assert_eq!(h2, hyper);
            assert_eq!(seed, 99);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
