//! Training: smoothed-KL loss, Adam with clipping, the teacher-forced step,
//! deterministic batching, metrics logging and checkpoints.

mod adam;
mod checkpoint;
mod loss;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecSpec, PAD};
use crate::net::{forward_train, ModelConfig, ModelParams, NetError};

pub use adam::{adam_step_slice, adam_update, global_norm, AdamState, UpdateStats, ADAM_EPS, BETA1, BETA2};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{loss_kl, smoothed_target, LossOutput};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch has no non-PAD targets")]
    EmptyBatch,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in {tensor} at index {index}")]
    NonFiniteGradient { tensor: String, index: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("metrics log: {0}")]
    Log(#[from] std::io::Error),
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    #[serde(default = "default_total")]
    pub total_steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    3e-4
}
fn default_warmup() -> u64 {
    100
}
fn default_total() -> u64 {
    1000
}
fn default_batch() -> usize {
    8
}
fn default_smoothing() -> f64 {
    0.1
}
fn default_clip() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            warmup_steps: default_warmup(),
            total_steps: default_total(),
            batch_size: default_batch(),
            label_smoothing: default_smoothing(),
            grad_clip_norm: default_clip(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::InvalidConfig(format!(
                "label smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "gradient clip norm must be non-negative, got {}",
                self.grad_clip_norm
            )));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr` over `warmup_steps`, then constant.
/// `step` is 1-based.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    if config.warmup_steps == 0 || step >= config.warmup_steps {
        config.lr
    } else {
        config.lr * step as f64 / config.warmup_steps as f64
    }
}

/// Per-step training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Mean per-token loss of the batch before the update.
    pub loss: f64,
    pub lr: f64,
    /// Number of target tokens that contributed to the loss.
    pub tokens: usize,
    /// Sequences dropped because they exceed the context window.
    pub skipped: usize,
    pub grad_norm: f64,
    pub tokens_per_sec: f64,
}

/// Deterministic batch order: consecutive epochs, each a fresh permutation
/// seeded by `(seed, epoch)`. Stateless, so resuming at any step yields the
/// same batches as an uninterrupted run.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    batch_size: usize,
    seed: u64,
    cache: Option<(u64, Vec<usize>)>,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        BatchSampler {
            len,
            batch_size,
            seed,
            cache: None,
        }
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cache.as_ref().map(|c| c.0) != Some(epoch) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(mix(self.seed, epoch, 0x5EED));
            let mut perm: Vec<usize> = (0..self.len).collect();
            perm.shuffle(&mut rng);
            self.cache = Some((epoch, perm));
        }
        &self.cache.as_ref().unwrap().1
    }

    /// Indices of the batch consumed at 1-based `step`.
    pub fn batch(&mut self, step: u64) -> Vec<usize> {
        if self.len == 0 {
            return Vec::new();
        }
        let start = (step.saturating_sub(1)) * self.batch_size as u64;
        (0..self.batch_size as u64)
            .map(|j| {
                let p = start + j;
                let epoch = p / self.len as u64;
                let within = (p % self.len as u64) as usize;
                self.permutation(epoch)[within]
            })
            .collect()
    }
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE5_E9B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes `{step, loss, lr, tokens_per_sec}` JSON lines.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(out: W) -> Self {
        MetricsLog { out }
    }

    pub fn log(&mut self, r: &StepReport) -> std::io::Result<()> {
        let line = serde_json::json!({
            "step": r.step,
            "loss": r.loss,
            "lr": r.lr,
            "tokens_per_sec": r.tokens_per_sec,
        });
        writeln!(self.out, "{line}")?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Model, optimizer state and step counter for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: ModelParams<f32>,
    pub opt: AdamState<f32>,
    pub config: TrainConfig,
    step: u64,
    skipped_total: usize,
}

impl Trainer {
    /// Fresh run: parameters initialized from `train.seed`.
    pub fn new(model: &ModelConfig, train: TrainConfig) -> Result<Self, TrainError> {
        train.validate()?;
        let params = ModelParams::init(model, train.seed)?;
        let opt = AdamState::new(&params);
        Ok(Trainer {
            params,
            opt,
            config: train,
            step: 0,
            skipped_total: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        ckpt.train_config.validate()?;
        Ok(Trainer {
            params: ckpt.params,
            opt: ckpt.opt,
            config: ckpt.train_config,
            step: ckpt.step,
            skipped_total: 0,
        })
    }

    pub fn checkpoint(&self, codec: CodecSpec, run_config: Option<serde_json::Value>) -> Checkpoint {
        Checkpoint {
            model_config: self.params.config.clone(),
            train_config: self.config.clone(),
            codec,
            step: self.step,
            params: self.params.clone(),
            opt: self.opt.clone(),
            run_config,
        }
    }

    /// Completed update steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Over-length sequences skipped so far in this session.
    pub fn skipped_total(&self) -> usize {
        self.skipped_total
    }

    /// One teacher-forced forward/backward/update over `batch`. Trailing PAD
    /// is trimmed per sequence; inputs are `seq[..m-1]`, targets `seq[1..m]`.
    pub fn train_step<S: AsRef<[u32]> + Sync>(&mut self, batch: &[S]) -> Result<StepReport, TrainError> {
        let started = Instant::now();
        let step = self.step + 1;
        let cfg = &self.params.config;
        let mut skipped = 0;
        let mut work: Vec<(usize, &[u32])> = Vec::with_capacity(batch.len());
        for (i, s) in batch.iter().enumerate() {
            let s = s.as_ref();
            let m = s.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
            if m < 2 {
                continue;
            }
            if m - 1 > cfg.context_len {
                log::warn!(
                    "step {step}: skipping sequence {i} of length {m} (context {})",
                    cfg.context_len
                );
                skipped += 1;
                continue;
            }
            if let Some(&bad) = s[..m].iter().find(|&&t| t as usize >= cfg.vocab_size) {
                return Err(TrainError::InvalidInput(format!(
                    "token {bad} outside vocabulary {}",
                    cfg.vocab_size
                )));
            }
            work.push((i, &s[..m]));
        }
        self.skipped_total += skipped;
        let count: usize = work.iter().map(|(_, s)| s[1..].iter().filter(|&&t| t != PAD).count()).sum();
        if count == 0 {
            return Err(TrainError::EmptyBatch);
        }
        let scale = 1.0 / count as f64;
        let eps = self.config.label_smoothing;
        let seed = self.config.seed;
        let params = &self.params;
        let per_seq: Vec<Result<(f64, ModelParams<f32>), TrainError>> = work
            .par_iter()
            .map(|&(i, s)| {
                let ids: Vec<usize> = s[..s.len() - 1].iter().map(|&t| t as usize).collect();
                let targets: Vec<usize> = s[1..].iter().map(|&t| t as usize).collect();
                let mask: Vec<bool> = s[1..].iter().map(|&t| t != PAD).collect();
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(mix(seed, step, i as u64));
                let (logits, tape) = forward_train(params, &ids, &mut rng)?;
                let (sum, d) = loss::kl_sum(&logits, &targets, &mask, eps, scale)?;
                let mut g = params.zeros_like();
                tape.backward_into(&d, &mut g)?;
                Ok((sum, g))
            })
            .collect();
        // fixed-order reduction keeps results independent of thread count
        let mut total = 0.0;
        let mut grads: Option<ModelParams<f32>> = None;
        for r in per_seq {
            let (sum, g) = r?;
            total += sum;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.add_assign(&g),
            }
        }
        let grads = grads.expect("non-empty work list");
        let lr = lr_schedule(step, &self.config);
        let stats = adam_update(&mut self.params, &grads, &mut self.opt, lr, self.config.grad_clip_norm)?;
        self.step = step;
        let secs = started.elapsed().as_secs_f64();
        let inputs: usize = work.iter().map(|(_, s)| s.len() - 1).sum();
        Ok(StepReport {
            step,
            loss: total / count as f64,
            lr,
            tokens: count,
            skipped,
            grad_norm: stats.grad_norm,
            tokens_per_sec: if secs > 0.0 { inputs as f64 / secs } else { 0.0 },
        })
    }

    /// Token-weighted mean teacher-forced loss over `data` without updating
    /// anything. Over-length and empty sequences are ignored.
    pub fn eval_loss<S: AsRef<[u32]> + Sync>(&self, data: &[S]) -> Result<f64, TrainError> {
        let cfg = &self.params.config;
        let eps = self.config.label_smoothing;
        let params = &self.params;
        let sums: Vec<Result<(f64, usize), TrainError>> = data
            .par_iter()
            .map(|s| {
                let s = s.as_ref();
                let m = s.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
                if m < 2 || m - 1 > cfg.context_len {
                    return Ok((0.0, 0));
                }
                let ids: Vec<usize> = s[..m - 1].iter().map(|&t| t as usize).collect();
                let targets: Vec<usize> = s[1..m].iter().map(|&t| t as usize).collect();
                let mask: Vec<bool> = s[1..m].iter().map(|&t| t != PAD).collect();
                let (logits, _) = crate::net::forward(params, &ids)?;
                let (sum, _) = loss::kl_sum(&logits, &targets, &mask, eps, 0.0)?;
                Ok((sum, mask.iter().filter(|&&b| b).count()))
            })
            .collect();
        let mut total = 0.0;
        let mut count = 0;
        for r in sums {
            let (s, c) = r?;
            total += s;
            count += c;
        }
        if count == 0 {
            return Err(TrainError::EmptyBatch);
        }
        Ok(total / count as f64)
    }

    /// Trains on batches drawn from `data` until `until_step` is reached or
    /// `on_step` returns `false`. Returns the reports of the steps taken.
    pub fn fit<S, C>(&mut self, data: &[S], until_step: u64, mut on_step: C) -> Result<Vec<StepReport>, TrainError>
    where
        S: AsRef<[u32]> + Sync,
        C: FnMut(&StepReport) -> bool,
    {
        if data.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let mut sampler = BatchSampler::new(data.len(), self.config.batch_size, self.config.seed);
        let mut reports = Vec::new();
        while self.step < until_step {
            let idx = sampler.batch(self.step + 1);
            let batch: Vec<&[u32]> = idx.iter().map(|&i| data[i].as_ref()).collect();
            let r = self.train_step(&batch)?;
            let go = on_step(&r);
            reports.push(r);
            if !go {
                break;
            }
        }
        Ok(reports)
    }
}
