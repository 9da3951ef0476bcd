//! Model parameters, encoders, decoders and the training loss.
//!
//! Item codes come from a two-layer content encoder ending in per-bit
//! Bernoulli probabilities; user codes come from a sigmoid over an embedding
//! row. Codes are sampled against a threshold vector `mu` (uniform draws in
//! training, fixed 0.5 at inference, which makes encoding deterministic and
//! lets cold-start items be encoded exactly like seen ones). Backpropagation
//! crosses the sampling step with a straight-through surrogate: forward uses
//! the sampled bits, backward treats the bit as `2q - 1`.
//!
//! The per-example loss is
//!
//! `rating + kl_weight * (KL_user + KL_item) + alpha * (content + kl_weight * KL_item)`
//!
//! where `rating` is the squared error between the scaled rating and the
//! code inner product, `content` is the negative log-softmax of the observed
//! vocabulary words, and both decoders see Gaussian-noised codes during
//! training. Batch reduction is the arithmetic mean.

pub mod checkpoint;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Rating, SparseVec};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, sigmoid, Mat};
use crate::par::map_chunks;
use crate::rng::{stream, stream_rng};

/// Probabilities are clamped to this band before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Item codes are a function of item content only.
    ContentAware,
    /// Ablation: item codes come from an item embedding, like user codes.
    NoContent,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content_aware" | "content-aware" => Ok(Variant::ContentAware),
            "no_content" | "no-content" => Ok(Variant::NoContent),
            other => Err(Error::Argument(format!("unknown variant {other:?}"))),
        }
    }
}

/// Two-layer ReLU encoder from a content row to per-bit probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEncoder {
    /// First layer, stored input-major: row w holds the `hidden1` weights
    /// fed by vocabulary entry w. Logical shape is `hidden1 x vocab`.
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// Second layer, `hidden2 x hidden1`.
    pub w2: Mat,
    pub b2: Vec<f64>,
    /// Output layer, `code_bits x hidden2`.
    pub w3: Mat,
    pub b3: Vec<f64>,
    /// Per-word scaling of the content input; the content decoder applies
    /// the same weights to its logits.
    pub word_importance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ItemModel {
    ContentAware {
        encoder: ItemEncoder,
        /// `vocab x code_bits`; row w is the decoder embedding of word w.
        word_embedding: Mat,
        word_bias: Vec<f64>,
    },
    NoContent {
        /// `num_items x code_bits`.
        item_embedding: Mat,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub code_bits: usize,
    /// `num_users x code_bits`.
    pub user_embedding: Mat,
    pub item_model: ItemModel,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelDims {
    pub code_bits: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub vocab: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl ModelParams {
    /// Encoder weights: symmetric uniform scaled by fan-in and fan-out.
    /// Embeddings and importance weights: N(0, 0.01^2). Biases: zero.
    pub fn init(dims: &ModelDims, variant: Variant, seed: u64) -> Result<ModelParams> {
        if dims.code_bits == 0 || dims.num_users == 0 {
            return Err(Error::Argument("code_bits and num_users must be >= 1".into()));
        }
        let mut rng = stream_rng(seed, stream::INIT);
        let mut normal = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            Mat::from_fn(rows, cols, |_, _| {
                0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            })
        };
        let user_embedding = normal(dims.num_users, dims.code_bits, &mut rng);
        let item_model = match variant {
            Variant::NoContent => {
                if dims.num_items == 0 {
                    return Err(Error::Argument("num_items must be >= 1".into()));
                }
                ItemModel::NoContent { item_embedding: normal(dims.num_items, dims.code_bits, &mut rng) }
            }
            Variant::ContentAware => {
                if dims.vocab == 0 || dims.hidden1 == 0 || dims.hidden2 == 0 {
                    return Err(Error::Argument("vocab and hidden sizes must be >= 1".into()));
                }
                let mut glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize,
                                  rng: &mut ChaCha8Rng| {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Mat::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 * bound - bound)
                };
                let encoder = ItemEncoder {
                    w1: glorot(dims.vocab, dims.hidden1, dims.vocab, dims.hidden1, &mut rng),
                    b1: vec![0.0; dims.hidden1],
                    w2: glorot(dims.hidden2, dims.hidden1, dims.hidden1, dims.hidden2, &mut rng),
                    b2: vec![0.0; dims.hidden2],
                    w3: glorot(dims.code_bits, dims.hidden2, dims.hidden2, dims.code_bits, &mut rng),
                    b3: vec![0.0; dims.code_bits],
                    word_importance: (0..dims.vocab)
                        .map(|_| {
                            0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                        })
                        .collect(),
                };
                ItemModel::ContentAware {
                    encoder,
                    word_embedding: normal(dims.vocab, dims.code_bits, &mut rng),
                    word_bias: vec![0.0; dims.vocab],
                }
            }
        };
        Ok(ModelParams { code_bits: dims.code_bits, user_embedding, item_model })
    }

    pub fn variant(&self) -> Variant {
        match self.item_model {
            ItemModel::ContentAware { .. } => Variant::ContentAware,
            ItemModel::NoContent { .. } => Variant::NoContent,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_embedding.rows()
    }

    pub fn vocab(&self) -> Option<usize> {
        match &self.item_model {
            ItemModel::ContentAware { word_bias, .. } => Some(word_bias.len()),
            ItemModel::NoContent { .. } => None,
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        let zero_mat = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        let item_model = match &self.item_model {
            ItemModel::ContentAware { encoder, word_embedding, word_bias } => {
                ItemModel::ContentAware {
                    encoder: ItemEncoder {
                        w1: zero_mat(&encoder.w1),
                        b1: vec![0.0; encoder.b1.len()],
                        w2: zero_mat(&encoder.w2),
                        b2: vec![0.0; encoder.b2.len()],
                        w3: zero_mat(&encoder.w3),
                        b3: vec![0.0; encoder.b3.len()],
                        word_importance: vec![0.0; encoder.word_importance.len()],
                    },
                    word_embedding: zero_mat(word_embedding),
                    word_bias: vec![0.0; word_bias.len()],
                }
            }
            ItemModel::NoContent { item_embedding } => {
                ItemModel::NoContent { item_embedding: zero_mat(item_embedding) }
            }
        };
        ModelParams {
            code_bits: self.code_bits,
            user_embedding: zero_mat(&self.user_embedding),
            item_model,
        }
    }

    /// All tensors as named flat slices, in a fixed order shared with the
    /// optimizer state and the checkpoint format.
    pub fn flat_tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> =
            vec![("user_embedding", self.user_embedding.as_slice())];
        match &self.item_model {
            ItemModel::ContentAware { encoder, word_embedding, word_bias } => {
                out.push(("enc_w1", encoder.w1.as_slice()));
                out.push(("enc_b1", &encoder.b1));
                out.push(("enc_w2", encoder.w2.as_slice()));
                out.push(("enc_b2", &encoder.b2));
                out.push(("enc_w3", encoder.w3.as_slice()));
                out.push(("enc_b3", &encoder.b3));
                out.push(("word_importance", &encoder.word_importance));
                out.push(("word_embedding", word_embedding.as_slice()));
                out.push(("word_bias", word_bias));
            }
            ItemModel::NoContent { item_embedding } => {
                out.push(("item_embedding", item_embedding.as_slice()));
            }
        }
        out
    }

    pub fn flat_tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> =
            vec![("user_embedding", self.user_embedding.as_mut_slice())];
        match &mut self.item_model {
            ItemModel::ContentAware { encoder, word_embedding, word_bias } => {
                out.push(("enc_w1", encoder.w1.as_mut_slice()));
                out.push(("enc_b1", &mut encoder.b1));
                out.push(("enc_w2", encoder.w2.as_mut_slice()));
                out.push(("enc_b2", &mut encoder.b2));
                out.push(("enc_w3", encoder.w3.as_mut_slice()));
                out.push(("enc_b3", &mut encoder.b3));
                out.push(("word_importance", &mut encoder.word_importance));
                out.push(("word_embedding", word_embedding.as_mut_slice()));
                out.push(("word_bias", word_bias));
            }
            ItemModel::NoContent { item_embedding } => {
                out.push(("item_embedding", item_embedding.as_mut_slice()));
            }
        }
        out
    }

    fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, dst), (_, src)) in self.flat_tensors_mut().into_iter().zip(other.flat_tensors()) {
            axpy(scale, src, dst);
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, t) in self.flat_tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }
}

/// Loss hyperparameters for one step. `noise_var` is the current annealed
/// variance, owned and decayed by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub alpha: f64,
    pub noise_var: f64,
    pub anneal_factor: f64,
    pub kl_weight: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { alpha: 0.001, noise_var: 1.0, anneal_factor: 0.9999, kl_weight: 1.0 }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::Argument("alpha must be >= 0".into()));
        }
        if self.noise_var < 0.0 {
            return Err(Error::Argument("noise_var must be >= 0".into()));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return Err(Error::Argument("anneal_factor must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One sampled code: per-bit probabilities, the sampled bits, and the
/// thresholds that produced them. `z[j] = +1` iff `q[j] > mu[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSamples {
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuMode {
    Train,
    Infer,
}

/// Thresholds for code sampling: i.i.d. uniform draws in training, all 0.5
/// at inference so codes are deterministic.
pub fn sample_mu(m: usize, mode: MuMode, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match mode {
        MuMode::Infer => vec![0.5; m],
        MuMode::Train => (0..m).map(|_| rng.random::<f64>()).collect(),
    }
}

/// `2 * ceil(q - mu) - 1` for q, mu in [0, 1]: +1 exactly when q > mu.
#[inline]
fn sample_bits(q: &[f64], mu: &[f64]) -> Vec<f64> {
    q.iter().zip(mu).map(|(&qj, &mj)| if qj > mj { 1.0 } else { -1.0 }).collect()
}

fn encoder_of(params: &ModelParams) -> Result<&ItemEncoder> {
    match &params.item_model {
        ItemModel::ContentAware { encoder, .. } => Ok(encoder),
        ItemModel::NoContent { .. } => {
            Err(Error::Argument("content encoding requires the content-aware variant".into()))
        }
    }
}

/// Forward pass of the item encoder; also returns the hidden activations so
/// the backward pass can reuse them.
fn item_encoder_forward(
    enc: &ItemEncoder,
    content: &SparseVec,
    code_bits: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let vocab = enc.word_importance.len();
    let h2 = enc.b2.len();
    if enc.w3.rows() != code_bits {
        return Err(Error::Shape(format!(
            "encoder emits {} bits, model expects {code_bits}",
            enc.w3.rows()
        )));
    }
    let mut l1 = enc.b1.clone();
    for (&w, &v) in content.indices.iter().zip(&content.values) {
        if w as usize >= vocab {
            return Err(Error::Shape(format!(
                "content index {w} out of vocabulary (size {vocab})"
            )));
        }
        axpy(v * enc.word_importance[w as usize], enc.w1.row(w as usize), &mut l1);
    }
    for v in l1.iter_mut() {
        *v = v.max(0.0);
    }
    let mut l2 = vec![0.0; h2];
    for r in 0..h2 {
        l2[r] = (enc.b2[r] + dot(enc.w2.row(r), &l1)).max(0.0);
    }
    let mut q = vec![0.0; code_bits];
    for r in 0..code_bits {
        q[r] = sigmoid(enc.b3[r] + dot(enc.w3.row(r), &l2));
    }
    Ok((l1, l2, q))
}

/// Encodes an item from its content row.
pub fn encode_item(content: &SparseVec, params: &ModelParams, mu: &[f64]) -> Result<CodeSamples> {
    if mu.len() != params.code_bits {
        return Err(Error::Shape(format!(
            "mu has {} entries, code has {} bits",
            mu.len(),
            params.code_bits
        )));
    }
    let enc = encoder_of(params)?;
    let (_, _, q) = item_encoder_forward(enc, content, params.code_bits)?;
    let z = sample_bits(&q, mu);
    Ok(CodeSamples { q, z, mu: mu.to_vec() })
}

/// Encodes an item from its embedding row (no-content variant).
pub fn encode_item_id(item: u32, params: &ModelParams, mu: &[f64]) -> Result<CodeSamples> {
    let ItemModel::NoContent { item_embedding } = &params.item_model else {
        return Err(Error::Argument("embedding lookup requires the no-content variant".into()));
    };
    if item as usize >= item_embedding.rows() {
        return Err(Error::Index(format!(
            "item {item} (embedding has {} rows)",
            item_embedding.rows()
        )));
    }
    if mu.len() != params.code_bits {
        return Err(Error::Shape("mu length differs from code_bits".into()));
    }
    let q: Vec<f64> = item_embedding.row(item as usize).iter().map(|&a| sigmoid(a)).collect();
    let z = sample_bits(&q, mu);
    Ok(CodeSamples { q, z, mu: mu.to_vec() })
}

/// Encodes a user from their embedding row.
pub fn encode_user(user: u32, params: &ModelParams, mu: &[f64]) -> Result<CodeSamples> {
    if user as usize >= params.user_embedding.rows() {
        return Err(Error::Index(format!(
            "user {user} (embedding has {} rows)",
            params.user_embedding.rows()
        )));
    }
    if mu.len() != params.code_bits {
        return Err(Error::Shape("mu length differs from code_bits".into()));
    }
    let q: Vec<f64> = params.user_embedding.row(user as usize).iter().map(|&a| sigmoid(a)).collect();
    let z = sample_bits(&q, mu);
    Ok(CodeSamples { q, z, mu: mu.to_vec() })
}

#[inline]
fn clamp_prob(q: f64) -> f64 {
    q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// KL divergence between independent Bernoulli(q_j) bits and Bernoulli(p).
pub fn kl_bernoulli(q: &[f64], p: f64) -> f64 {
    q.iter()
        .map(|&qj| {
            let qj = clamp_prob(qj);
            qj * (qj / p).ln() + (1.0 - qj) * ((1.0 - qj) / (1.0 - p)).ln()
        })
        .sum()
}

/// d/dq of one KL term, zero where the clamp saturates.
#[inline]
fn kl_grad(q: f64, p: f64) -> f64 {
    if q <= PROB_CLAMP || q >= 1.0 - PROB_CLAMP {
        0.0
    } else {
        (q / (1.0 - q)).ln() - (p / (1.0 - p)).ln()
    }
}

/// Maps a rating in (0, max_rating] onto [-m, m], the range of the code
/// inner product: `2m * R / max_rating - m`.
pub fn scale_rating(rating: f64, max_rating: f64, code_bits: usize) -> Result<f64> {
    if max_rating <= 0.0 {
        return Err(Error::Argument(format!("max_rating must be positive, got {max_rating}")));
    }
    let m = code_bits as f64;
    Ok(2.0 * m * rating / max_rating - m)
}

/// Squared error between the scaled rating and the code inner product.
pub fn rating_loss(z_user: &[f64], z_item: &[f64], scaled_rating: f64) -> f64 {
    let d = scaled_rating - dot(z_item, z_user);
    d * d
}

/// Negative sum of log-softmax scores of the observed words, softmax taken
/// over the whole vocabulary. Empty content rows contribute zero.
pub fn content_loss(z_item: &[f64], content: &SparseVec, params: &ModelParams) -> Result<f64> {
    let ItemModel::ContentAware { encoder, word_embedding, word_bias } = &params.item_model else {
        return Err(Error::Argument("content loss requires the content-aware variant".into()));
    };
    if content.nnz() == 0 {
        return Ok(0.0);
    }
    let vocab = word_bias.len();
    let mut logits = vec![0.0; vocab];
    for w in 0..vocab {
        logits[w] =
            encoder.word_importance[w] * dot(z_item, word_embedding.row(w)) + word_bias[w];
    }
    let lse = log_sum_exp(&logits);
    Ok(content
        .indices
        .iter()
        .map(|&w| lse - logits[w as usize])
        .sum())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `z + eps * sigma2` with standard normal `eps`, freshly drawn per call.
pub fn add_noise(z: &[f64], sigma2: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    z.iter()
        .map(|&v| {
            let eps: f64 = StandardNormal.sample(rng);
            v + eps * sigma2
        })
        .collect()
}

/// Frozen per-example randomness for one training step: sampling thresholds
/// for both codes plus the decoder noise draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleNoise {
    pub mu_user: Vec<f64>,
    pub mu_item: Vec<f64>,
    pub eps_user: Vec<f64>,
    pub eps_item: Vec<f64>,
}

/// Draws the full randomness for a batch up front; the parallel gradient
/// pass then never touches the RNG, so results do not depend on scheduling.
pub fn draw_batch_noise(count: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<ExampleNoise> {
    (0..count)
        .map(|_| ExampleNoise {
            mu_user: sample_mu(m, MuMode::Train, rng),
            mu_item: sample_mu(m, MuMode::Train, rng),
            eps_user: (0..m).map(|_| StandardNormal.sample(rng)).collect(),
            eps_item: (0..m).map(|_| StandardNormal.sample(rng)).collect(),
        })
        .collect()
}

/// Batch-mean loss components. `total` already applies `alpha` and
/// `kl_weight`; the other fields are unweighted means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub rating: f64,
    pub kl_user: f64,
    pub kl_item: f64,
    pub content: f64,
    pub examples: usize,
}

/// Reusable per-worker buffers.
struct Scratch {
    l2_grad: Vec<f64>,
    l1_grad: Vec<f64>,
    logits: Vec<f64>,
    dots: Vec<f64>,
}

impl Scratch {
    fn new(params: &ModelParams) -> Scratch {
        let (h1, h2, vocab) = match &params.item_model {
            ItemModel::ContentAware { encoder, .. } => {
                (encoder.b1.len(), encoder.b2.len(), encoder.word_importance.len())
            }
            ItemModel::NoContent { .. } => (0, 0, 0),
        };
        Scratch {
            l2_grad: vec![0.0; h2],
            l1_grad: vec![0.0; h1],
            logits: vec![0.0; vocab],
            dots: vec![0.0; vocab],
        }
    }
}

/// Mean loss and its exact gradient over a batch, one Monte-Carlo code
/// sample per example, with the straight-through rule at the sampling step.
pub fn loss_and_grads(
    batch: &[Rating],
    dataset: &Dataset,
    params: &ModelParams,
    hyper: &Hyper,
    rng: &mut ChaCha8Rng,
    threads: usize,
) -> Result<(LossBreakdown, ModelParams)> {
    let noise = draw_batch_noise(batch.len(), params.code_bits, rng);
    loss_and_grads_with_noise(batch, dataset, params, hyper, &noise, threads)
}

/// Same as [`loss_and_grads`] but with caller-supplied randomness, which
/// makes individual steps exactly reproducible.
pub fn loss_and_grads_with_noise(
    batch: &[Rating],
    dataset: &Dataset,
    params: &ModelParams,
    hyper: &Hyper,
    noise: &[ExampleNoise],
    threads: usize,
) -> Result<(LossBreakdown, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Argument("batch must be non-empty".into()));
    }
    if noise.len() != batch.len() {
        return Err(Error::Shape("noise entries must match batch length".into()));
    }
    hyper.validate()?;
    if params.variant() == Variant::ContentAware && !dataset.has_content() {
        return Err(Error::Argument("content-aware model needs dataset content".into()));
    }

    struct ChunkOut {
        grads: ModelParams,
        rating: f64,
        kl_user: f64,
        kl_item: f64,
        content: f64,
    }

    let eff_alpha = match params.variant() {
        Variant::ContentAware => hyper.alpha,
        Variant::NoContent => 0.0,
    };
    let chunk_results: Vec<Result<ChunkOut>> = map_chunks(batch, threads, |offset, chunk| {
        let mut out = ChunkOut {
            grads: params.zeros_like(),
            rating: 0.0,
            kl_user: 0.0,
            kl_item: 0.0,
            content: 0.0,
        };
        let mut scratch = Scratch::new(params);
        for (k, example) in chunk.iter().enumerate() {
            let idx = offset + k;
            let parts = backward_example(
                example,
                dataset,
                params,
                hyper,
                &noise[idx],
                &mut out.grads,
                &mut scratch,
            )?;
            let total = parts.0
                + hyper.kl_weight * (parts.1 + parts.2)
                + eff_alpha * (parts.3 + hyper.kl_weight * parts.2);
            if !total.is_finite() {
                return Err(Error::Numeric { example: idx });
            }
            out.rating += parts.0;
            out.kl_user += parts.1;
            out.kl_item += parts.2;
            out.content += parts.3;
        }
        Ok(out)
    });

    let mut grads = params.zeros_like();
    let mut sums = LossBreakdown::default();
    for res in chunk_results {
        let chunk = res?;
        grads.add_scaled(&chunk.grads, 1.0);
        sums.rating += chunk.rating;
        sums.kl_user += chunk.kl_user;
        sums.kl_item += chunk.kl_item;
        sums.content += chunk.content;
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    sums.rating *= inv;
    sums.kl_user *= inv;
    sums.kl_item *= inv;
    sums.content *= inv;
    sums.examples = batch.len();
    sums.total = sums.rating
        + hyper.kl_weight * (sums.kl_user + sums.kl_item)
        + eff_alpha * (sums.content + hyper.kl_weight * sums.kl_item);
    Ok((sums, grads))
}

/// Forward and backward for one example; accumulates raw (unaveraged)
/// gradients and returns (rating, kl_user, kl_item, content) losses.
#[allow(clippy::too_many_arguments)]
fn backward_example(
    example: &Rating,
    dataset: &Dataset,
    params: &ModelParams,
    hyper: &Hyper,
    noise: &ExampleNoise,
    grads: &mut ModelParams,
    scratch: &mut Scratch,
) -> Result<(f64, f64, f64, f64)> {
    let m = params.code_bits;
    let user = example.user as usize;
    if user >= params.user_embedding.rows() {
        return Err(Error::Index(format!("user {user} out of range")));
    }
    let sigma2 = hyper.noise_var;

    // User code.
    let q_user: Vec<f64> = params.user_embedding.row(user).iter().map(|&a| sigmoid(a)).collect();
    let z_user = sample_bits(&q_user, &noise.mu_user);
    let zt_user: Vec<f64> =
        z_user.iter().zip(&noise.eps_user).map(|(&z, &e)| z + e * sigma2).collect();

    // Item code, via content encoder or embedding lookup.
    enum ItemFwd<'a> {
        Content { l1: Vec<f64>, l2: Vec<f64>, content: &'a SparseVec },
        Embedding,
    }
    let (q_item, item_fwd) = match &params.item_model {
        ItemModel::ContentAware { encoder, .. } => {
            let content = dataset
                .content
                .get(example.item as usize)
                .ok_or_else(|| Error::Index(format!("item {} has no content row", example.item)))?;
            let (l1, l2, q) = item_encoder_forward(encoder, content, m)?;
            (q, ItemFwd::Content { l1, l2, content })
        }
        ItemModel::NoContent { item_embedding } => {
            if example.item as usize >= item_embedding.rows() {
                return Err(Error::Index(format!("item {} out of range", example.item)));
            }
            let q: Vec<f64> =
                item_embedding.row(example.item as usize).iter().map(|&a| sigmoid(a)).collect();
            (q, ItemFwd::Embedding)
        }
    };
    let z_item = sample_bits(&q_item, &noise.mu_item);
    let zt_item: Vec<f64> =
        z_item.iter().zip(&noise.eps_item).map(|(&z, &e)| z + e * sigma2).collect();

    // Rating decoder.
    let r_hat = scale_rating(example.rating, dataset.max_rating, m)?;
    let d = r_hat - dot(&zt_item, &zt_user);
    let loss_rating = d * d;
    let kl_user = kl_bernoulli(&q_user, 0.5);
    let kl_item = kl_bernoulli(&q_item, 0.5);

    let g_zt_user: Vec<f64> = zt_item.iter().map(|&v| -2.0 * d * v).collect();
    let mut g_zt_item: Vec<f64> = zt_user.iter().map(|&v| -2.0 * d * v).collect();

    // Content decoder: softmax over the vocabulary, observed words as the
    // targets. The loss is reported even when alpha is zero; only the
    // gradient path is skipped then.
    let mut loss_content = 0.0;
    if let (
        ItemModel::ContentAware { encoder, word_embedding, word_bias },
        ItemFwd::Content { content, .. },
    ) = (&params.item_model, &item_fwd)
    {
        if content.nnz() > 0 {
            let vocab = word_bias.len();
            for w in 0..vocab {
                scratch.dots[w] = dot(&zt_item, word_embedding.row(w));
                scratch.logits[w] =
                    encoder.word_importance[w] * scratch.dots[w] + word_bias[w];
            }
            let lse = log_sum_exp(&scratch.logits);
            for &w in &content.indices {
                loss_content += lse - scratch.logits[w as usize];
            }

            if hyper.alpha != 0.0 {
                let ItemModel::ContentAware {
                    encoder: g_enc,
                    word_embedding: g_eword,
                    word_bias: g_bword,
                } = &mut grads.item_model
                else {
                    unreachable!("gradient shape follows params shape");
                };
                // dL/dlogit_w = alpha * (|observed| * p_w - 1{w observed});
                // logits are rewritten in place with these values.
                let observed = content.nnz() as f64;
                for w in 0..vocab {
                    let p = (scratch.logits[w] - lse).exp();
                    scratch.logits[w] = hyper.alpha * observed * p;
                }
                for &w in &content.indices {
                    scratch.logits[w as usize] -= hyper.alpha;
                }
                for w in 0..vocab {
                    let gl = scratch.logits[w];
                    let imp = encoder.word_importance[w];
                    axpy(gl * imp, word_embedding.row(w), &mut g_zt_item);
                    axpy(gl * imp, &zt_item, g_eword.row_mut(w));
                    g_enc.word_importance[w] += gl * scratch.dots[w];
                    g_bword[w] += gl;
                }
            }
        }
    }

    // Straight-through: d z / d q := 2; noise is additive so d zt / d z = 1.
    let kl_item_weight = match params.variant() {
        Variant::ContentAware => hyper.kl_weight * (1.0 + hyper.alpha),
        Variant::NoContent => hyper.kl_weight,
    };
    let g_q_user: Vec<f64> = g_zt_user
        .iter()
        .zip(&q_user)
        .map(|(&g, &q)| 2.0 * g + hyper.kl_weight * kl_grad(q, 0.5))
        .collect();
    let g_q_item: Vec<f64> = g_zt_item
        .iter()
        .zip(&q_item)
        .map(|(&g, &q)| 2.0 * g + kl_item_weight * kl_grad(q, 0.5))
        .collect();

    // Sigmoid, then into the embeddings / encoder.
    let g_a_user: Vec<f64> =
        g_q_user.iter().zip(&q_user).map(|(&g, &q)| g * q * (1.0 - q)).collect();
    axpy(1.0, &g_a_user, grads.user_embedding.row_mut(user));

    let g_a_item: Vec<f64> =
        g_q_item.iter().zip(&q_item).map(|(&g, &q)| g * q * (1.0 - q)).collect();

    match (&params.item_model, &mut grads.item_model, item_fwd) {
        (ItemModel::NoContent { .. }, ItemModel::NoContent { item_embedding: g_emb }, _) => {
            axpy(1.0, &g_a_item, g_emb.row_mut(example.item as usize));
        }
        (
            ItemModel::ContentAware { encoder, .. },
            ItemModel::ContentAware { encoder: g_enc, .. },
            ItemFwd::Content { l1, l2, content },
        ) => {
            let h1 = encoder.b1.len();
            let h2 = encoder.b2.len();
            // Output layer.
            scratch.l2_grad[..h2].fill(0.0);
            for r in 0..m {
                let g = g_a_item[r];
                g_enc.b3[r] += g;
                axpy(g, &l2, g_enc.w3.row_mut(r));
                axpy(g, encoder.w3.row(r), &mut scratch.l2_grad);
            }
            // Hidden layer 2 (ReLU mask from the kept activations).
            scratch.l1_grad[..h1].fill(0.0);
            for r in 0..h2 {
                if l2[r] > 0.0 {
                    let g = scratch.l2_grad[r];
                    g_enc.b2[r] += g;
                    axpy(g, &l1, g_enc.w2.row_mut(r));
                    axpy(g, encoder.w2.row(r), &mut scratch.l1_grad);
                }
            }
            // Hidden layer 1 and the sparse input.
            for j in 0..h1 {
                if l1[j] <= 0.0 {
                    scratch.l1_grad[j] = 0.0;
                }
            }
            for (g, &l1g) in g_enc.b1.iter_mut().zip(scratch.l1_grad.iter()) {
                *g += l1g;
            }
            for (&w, &cv) in content.indices.iter().zip(&content.values) {
                let wi = w as usize;
                let x = cv * encoder.word_importance[wi];
                axpy(x, &scratch.l1_grad[..h1], g_enc.w1.row_mut(wi));
                g_enc.word_importance[wi] +=
                    cv * dot(encoder.w1.row(wi), &scratch.l1_grad[..h1]);
            }
        }
        _ => unreachable!("gradient shape follows params shape"),
    }

    Ok((loss_rating, kl_user, kl_item, loss_content))
}
