//! Adam training loop with geometric noise annealing and best-validation
//! checkpoint selection, plus deterministic code inference.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Rating, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_ratings;
use crate::hashindex::{CodeBook, HashCode};
use crate::model::{
    encode_item, encode_item_id, encode_user, loss_and_grads, Hyper, ModelDims, ModelParams,
    MuMode, Variant,
};
use crate::par::map_chunks;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Weight of the content reconstruction objective.
    pub alpha: f64,
    pub noise_var_init: f64,
    /// Multiplicative decay applied to the noise variance after every batch.
    pub noise_decay: f64,
    pub kl_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Epochs between validation evaluations.
    pub eval_every: usize,
    pub code_bits: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub variant: Variant,
    /// Worker count for batch gradients and inference; 0 = auto, 1 = serial.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0005,
            batch_size: 2000,
            max_epochs: 30,
            alpha: 0.001,
            noise_var_init: 1.0,
            noise_decay: 0.9999,
            kl_weight: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            eval_every: 1,
            code_bits: 32,
            hidden1: 1000,
            hidden2: 1000,
            variant: Variant::ContentAware,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(Error::Argument("noise_decay must be in (0, 1]".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Argument("eval_every must be >= 1".into()));
        }
        if self.alpha < 0.0 || self.noise_var_init < 0.0 {
            return Err(Error::Argument("alpha and noise_var_init must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_rating: f64,
    pub loss_kl_user: f64,
    pub loss_kl_item: f64,
    pub loss_content: f64,
    /// Noise variance after the epoch's batches.
    pub sigma2: f64,
    pub val_ndcg10: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "epoch,loss_total,loss_rating,loss_kl_user,loss_kl_item,loss_content,sigma2,val_ndcg10,seconds"
        )?;
        for e in &self.epochs {
            let val = e.val_ndcg10.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.loss_total,
                e.loss_rating,
                e.loss_kl_user,
                e.loss_kl_item,
                e.loss_content,
                e.sigma2,
                val,
                e.seconds
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First/second moment accumulators, aligned with the model's flat tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new_like(params: &ModelParams) -> AdamState {
        let shapes: Vec<usize> = params.flat_tensors().iter().map(|(_, t)| t.len()).collect();
        AdamState {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    let grad_tensors = grads.flat_tensors();
    let mut param_tensors = params.flat_tensors_mut();
    if param_tensors.len() != state.m.len()
        || param_tensors
            .iter()
            .zip(&grad_tensors)
            .zip(&state.m)
            .any(|(((_, p), (_, g)), m)| p.len() != g.len() || p.len() != m.len())
    {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (idx, (_, p)) in param_tensors.iter_mut().enumerate() {
        let g = grad_tensors[idx].1;
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub best_val_ndcg10: Option<f64>,
}

/// Training failure that still carries the history recorded so far.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub history: TrainHistory,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Error {
        f.error
    }
}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> TrainFailure {
        TrainFailure { error, history: TrainHistory::default() }
    }
}

/// Trains on `split.train`, evaluating NDCG@10 on `split.validation` every
/// `eval_every` epochs and returning the checkpoint with the best recorded
/// validation score (the final parameters if validation never ran).
pub fn train(
    split: &Split,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainFailure> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(TrainFailure::from(Error::Argument("training set is empty".into())));
    }
    if cfg.variant == Variant::ContentAware && !dataset.has_content() {
        return Err(TrainFailure::from(Error::Argument(
            "content-aware training needs dataset content".into(),
        )));
    }
    for r in split.train.iter().chain(&split.validation) {
        if r.user as usize >= dataset.num_users() || r.item as usize >= dataset.num_items() {
            return Err(TrainFailure::from(Error::Index(format!(
                "split references user {} / item {} outside the dataset",
                r.user, r.item
            ))));
        }
    }

    let dims = ModelDims {
        code_bits: cfg.code_bits,
        num_users: dataset.num_users(),
        num_items: dataset.num_items(),
        vocab: dataset.vocab.len(),
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
    };
    let mut params = ModelParams::init(&dims, cfg.variant, cfg.seed)?;
    let mut adam = AdamState::new_like(&params);
    let mut shuffle_rng = stream_rng(cfg.seed, stream::SHUFFLE);
    let mut noise_rng = stream_rng(cfg.seed, stream::NOISE);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut batches_done: u64 = 0;
    let sigma2_at = |k: u64| cfg.noise_var_init * cfg.noise_decay.powi(k as i32);

    let mut order: Vec<u32> = (0..split.train.len() as u32).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 5];
        let mut examples = 0usize;
        for batch_ids in order.chunks(cfg.batch_size) {
            let batch: Vec<Rating> =
                batch_ids.iter().map(|&i| split.train[i as usize]).collect();
            let hyper = Hyper {
                alpha: cfg.alpha,
                noise_var: sigma2_at(batches_done),
                anneal_factor: cfg.noise_decay,
                kl_weight: cfg.kl_weight,
            };
            let step = loss_and_grads(&batch, dataset, &params, &hyper, &mut noise_rng, cfg.threads);
            let (loss, grads) = match step {
                Ok(ok) => ok,
                Err(e) => return Err(TrainFailure { error: e, history }),
            };
            if let Err(e) = adam_step(
                &mut params,
                &grads,
                &mut adam,
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_epsilon,
            ) {
                return Err(TrainFailure { error: e, history });
            }
            batches_done += 1;
            let w = loss.examples as f64;
            sums[0] += loss.total * w;
            sums[1] += loss.rating * w;
            sums[2] += loss.kl_user * w;
            sums[3] += loss.kl_item * w;
            sums[4] += loss.content * w;
            examples += loss.examples;
        }

        let should_eval = epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs;
        let val_ndcg10 = if should_eval && !split.validation.is_empty() {
            let book = match infer_all_codes(&params, dataset, cfg.threads) {
                Ok(b) => b,
                Err(e) => return Err(TrainFailure { error: e, history }),
            };
            let report = match evaluate_ratings(
                &book,
                &split.validation,
                &split.train,
                dataset,
                &[10],
                cfg.threads,
            ) {
                Ok(r) => r,
                Err(e) => return Err(TrainFailure { error: e, history }),
            };
            report.ndcg_at(10)
        } else {
            None
        };
        if let Some(score) = val_ndcg10 {
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, params.clone()));
            }
        }

        let inv = 1.0 / examples.max(1) as f64;
        history.epochs.push(EpochRecord {
            epoch,
            loss_total: sums[0] * inv,
            loss_rating: sums[1] * inv,
            loss_kl_user: sums[2] * inv,
            loss_kl_item: sums[3] * inv,
            loss_content: sums[4] * inv,
            sigma2: sigma2_at(batches_done),
            val_ndcg10,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let (best_val, params) = match best {
        Some((score, p)) => (Some(score), p),
        None => (None, params),
    };
    Ok(TrainOutput { params, history, best_val_ndcg10: best_val })
}

/// Deterministic codes (thresholds fixed at 0.5) for the given users and
/// items; unlisted ids keep all-zero codes. In the content-aware variant
/// item codes come from content alone, so items unseen in training encode
/// exactly like seen ones.
pub fn infer_codes(
    params: &ModelParams,
    dataset: &Dataset,
    users: &[u32],
    items: &[u32],
    threads: usize,
) -> Result<CodeBook> {
    let m = params.code_bits;
    let mut book = CodeBook::zeroed(m, dataset.num_users(), dataset.num_items())?;
    let mu = vec![0.5; m];

    let user_chunks: Vec<Result<Vec<(u32, HashCode)>>> =
        map_chunks(users, threads, |_, chunk| {
            chunk
                .iter()
                .map(|&u| {
                    let samples = encode_user(u, params, &mu)?;
                    Ok((u, HashCode::pack(&samples.z)?))
                })
                .collect()
        });
    for chunk in user_chunks {
        for (u, code) in chunk? {
            book.set_user(u, &code)?;
        }
    }

    let item_chunks: Vec<Result<Vec<(u32, HashCode)>>> =
        map_chunks(items, threads, |_, chunk| {
            chunk
                .iter()
                .map(|&i| {
                    let samples = match params.variant() {
                        Variant::ContentAware => {
                            let content = dataset.content.get(i as usize).ok_or_else(|| {
                                Error::Index(format!("item {i} has no content row"))
                            })?;
                            encode_item(content, params, &mu)?
                        }
                        Variant::NoContent => encode_item_id(i, params, &mu)?,
                    };
                    Ok((i, HashCode::pack(&samples.z)?))
                })
                .collect()
        });
    for chunk in item_chunks {
        for (i, code) in chunk? {
            book.set_item(i, &code)?;
        }
    }
    Ok(book)
}

/// [`infer_codes`] over every user and item in the dataset.
pub fn infer_all_codes(
    params: &ModelParams,
    dataset: &Dataset,
    threads: usize,
) -> Result<CodeBook> {
    let users: Vec<u32> = (0..dataset.num_users() as u32).collect();
    let items: Vec<u32> = (0..dataset.num_items() as u32).collect();
    infer_codes(params, dataset, &users, &items, threads)
}
