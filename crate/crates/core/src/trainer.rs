//! The pre-training loop: sample pairs, encode, score with InfoNCE, update
//! the query encoder with Adam, then maintain the key encoder and queue.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrast::{
    e2e_step, moco_step, ContrastConfig, ContrastError, EncoderPair, Mechanism, MocoQueue,
};
use crate::gin::{encode, forward, EncoderError, GinConfig, GinParams, PreparedInstance};
use crate::graph::Graph;
use crate::optim::{adam_step, clip_gradients, AdamConfig, AdamState, LrSchedule};
use crate::sampler::{make_batch, sample_pair, CorpusIndex, Provenance, RwrConfig, SamplerError};
use crate::seeding::{self, purpose};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error("non-finite loss {loss} at step {step} (batch sources: {sources:?})")]
    Diverged {
        step: u64,
        loss: f64,
        sources: Vec<Provenance>,
    },
    #[error("{0}")]
    Sink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub rwr: RwrConfig,
    pub gin: GinConfig,
    pub contrast: ContrastConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub clip_norm: f64,
    pub checkpoint_interval: u64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self::moco()
    }
}

impl PretrainConfig {
    /// Full-scale MoCo hyper-parameters.
    pub fn moco() -> Self {
        Self {
            rwr: RwrConfig::default(),
            gin: GinConfig::default(),
            contrast: ContrastConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 32,
            total_steps: 75_000,
            warmup_steps: 7_500,
            peak_lr: 0.005,
            clip_norm: 1.0,
            checkpoint_interval: 5_000,
            seed: 0,
        }
    }

    /// Full-scale end-to-end hyper-parameters (in-batch dictionary of 1023).
    pub fn e2e() -> Self {
        let mut cfg = Self::moco();
        cfg.batch_size = 1024;
        cfg.contrast.dictionary_size = 1023;
        cfg.contrast.mechanism = Mechanism::E2e;
        cfg
    }

    /// Desk-scale MoCo profile: 2,000 steps, warmup 200, dictionary 256,
    /// subgraphs capped at 64 vertices.
    ///
    /// Dropout is off and the peak learning rate is 0.002: with dropout 0.5
    /// inside every MLP the encoder stops separating structural roles, and
    /// 0.005 reached after only 200 warmup steps is unstable across seeds.
    pub fn desk() -> Self {
        let mut cfg = Self::moco();
        cfg.total_steps = 2_000;
        cfg.warmup_steps = 200;
        cfg.peak_lr = 0.002;
        cfg.checkpoint_interval = 500;
        cfg.contrast.dictionary_size = 256;
        cfg.gin.dropout = 0.0;
        cfg.rwr.max_set_size = 64;
        cfg.rwr.step_budget = 4 * 64;
        cfg
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.rwr.seed = seed;
        self
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let cfg_err = |e: String| TrainError::Config(e);
        self.rwr.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.gin.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.contrast.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.schedule().validate().map_err(cfg_err)?;
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(cfg_err(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        match self.contrast.mechanism {
            Mechanism::Moco if self.batch_size > self.contrast.dictionary_size => Err(cfg_err(format!(
                "batch_size {} exceeds dictionary_size {}",
                self.batch_size, self.contrast.dictionary_size
            ))),
            Mechanism::E2e if self.batch_size < 2 => {
                Err(cfg_err("end-to-end training needs batch_size >= 2".into()))
            }
            Mechanism::E2e if self.contrast.dictionary_size != self.batch_size - 1 => Err(cfg_err(format!(
                "end-to-end dictionary_size must equal batch_size - 1 ({}), got {}",
                self.batch_size - 1,
                self.contrast.dictionary_size
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm_scale: f64,
}

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: PretrainConfig,
    pub pair: EncoderPair,
    /// Covers the query encoder only; the key encoder moves by momentum.
    pub adam: AdamState,
    pub queue: Option<MocoQueue>,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: PretrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let query = GinParams::init(config.gin, config.seed);
        let adam = AdamState::new(&query.tensors);
        let queue = match config.contrast.mechanism {
            Mechanism::Moco => {
                let mut rng = seeding::stream(config.seed, &[purpose::INIT_QUEUE]);
                Some(MocoQueue::random(
                    config.contrast.dictionary_size,
                    config.gin.out_dim,
                    &mut rng,
                ))
            }
            Mechanism::E2e => None,
        };
        Ok(Self {
            config,
            pair: EncoderPair::new(query),
            adam,
            queue,
            step: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// Runs one optimization step.
    pub fn train_step(&mut self, corpus: &[Graph]) -> Result<StepReport, TrainError> {
        self.step_inner(corpus, true)
    }

    /// Computes the loss on the next batch without touching parameters or
    /// optimizer state. The queue still receives the batch keys and the step
    /// counter advances, so repeated calls see fresh batches.
    pub fn observe_step(&mut self, corpus: &[Graph]) -> Result<StepReport, TrainError> {
        self.step_inner(corpus, false)
    }

    fn step_inner(&mut self, corpus: &[Graph], update: bool) -> Result<StepReport, TrainError> {
        let cfg = self.config;
        let step = self.step;
        let batch = make_batch(corpus, cfg.batch_size, &cfg.rwr, step)?;
        let b = batch.len();
        let d = cfg.gin.out_dim;

        let mut query_runs = Vec::with_capacity(b);
        let mut queries = Tensor::zeros(b, d);
        for (i, s) in batch.queries.iter().enumerate() {
            let inst = PreparedInstance::from_subgraph(s, &cfg.gin)?;
            let mut rng = seeding::stream(cfg.seed, &[purpose::DROPOUT_QUERY, step, i as u64]);
            let run = forward(&self.pair.query, &inst, true, &mut rng)?;
            queries.row_mut(i).copy_from_slice(run.graph_rep());
            query_runs.push(run);
        }

        let mut key_runs = Vec::new();
        let mut keys = Tensor::zeros(b, d);
        for (i, s) in batch.positive_keys.iter().enumerate() {
            let inst = PreparedInstance::from_subgraph(s, &cfg.gin)?;
            let mut rng = seeding::stream(cfg.seed, &[purpose::DROPOUT_KEY, step, i as u64]);
            match cfg.contrast.mechanism {
                // the momentum encoder runs in evaluation mode (no dropout)
                Mechanism::Moco => {
                    let enc = encode(&self.pair.key, &inst, false, &mut rng)?;
                    keys.row_mut(i).copy_from_slice(&enc.graph_rep);
                }
                Mechanism::E2e => {
                    let run = forward(&self.pair.query, &inst, true, &mut rng)?;
                    keys.row_mut(i).copy_from_slice(run.graph_rep());
                    key_runs.push(run);
                }
            }
        }

        let tau = cfg.contrast.temperature;
        let loss = match (&mut self.queue, cfg.contrast.mechanism) {
            (Some(queue), Mechanism::Moco) => moco_step(&queries, &keys, queue, tau)?,
            _ => e2e_step(&queries, &keys, tau)?,
        };
        if !loss.loss.is_finite() {
            return Err(TrainError::Diverged {
                step,
                loss: loss.loss,
                sources: batch.queries.iter().map(|s| s.source).collect(),
            });
        }

        let lr = cfg.schedule().lr_at(step);
        if !update {
            self.step += 1;
            return Ok(StepReport {
                step,
                loss: loss.loss,
                lr,
                grad_norm_scale: 1.0,
            });
        }

        let mut grads = self.pair.query.zeros_like();
        for (i, run) in query_runs.iter().enumerate() {
            for (acc, g) in grads.iter_mut().zip(run.backward(loss.grad_queries.row(i))) {
                acc.add_assign(&g);
            }
        }
        if let Some(grad_keys) = &loss.grad_keys {
            for (i, run) in key_runs.iter().enumerate() {
                for (acc, g) in grads.iter_mut().zip(run.backward(grad_keys.row(i))) {
                    acc.add_assign(&g);
                }
            }
        }

        let scale = clip_gradients(&mut grads, cfg.clip_norm);
        adam_step(&mut self.pair.query.tensors, &grads, &mut self.adam, lr, &cfg.adam);
        match cfg.contrast.mechanism {
            Mechanism::Moco => self.pair.momentum_update(cfg.contrast.momentum),
            // shared parameters: the key tower is the query tower
            Mechanism::E2e => self.pair.key = self.pair.query.clone(),
        }
        self.step += 1;
        Ok(StepReport {
            step,
            loss: loss.loss,
            lr,
            grad_norm_scale: scale,
        })
    }

    /// Trains until `total_steps`, calling `on_step` after every step.
    pub fn run<F>(&mut self, corpus: &[Graph], mut on_step: F) -> Result<(), TrainError>
    where
        F: FnMut(&StepReport, &Trainer) -> Result<(), TrainError>,
    {
        while !self.is_finished() {
            let report = self.train_step(corpus)?;
            on_step(&report, self)?;
        }
        Ok(())
    }
}

/// Runs a full pre-training job and returns the final state.
pub fn pretrain<F>(corpus: &[Graph], config: PretrainConfig, mut sink: F) -> Result<Trainer, TrainError>
where
    F: FnMut(&StepReport),
{
    if corpus.is_empty() {
        return Err(SamplerError::EmptyCorpus.into());
    }
    let mut trainer = Trainer::new(config)?;
    trainer.run(corpus, |r, _| {
        sink(r);
        Ok(())
    })?;
    Ok(trainer)
}

/// Fraction of trials in which a query ranks its own positive key above
/// `negatives` keys from other instances. Queries use the query encoder and
/// keys the key encoder, both in evaluation mode.
///
/// Negatives for each trial are drawn without replacement from a pool of
/// `4 · negatives` freshly sampled instances, excluding the trial's own ego.
pub fn instance_discrimination_accuracy(
    pair: &EncoderPair,
    corpus: &[Graph],
    rwr: &RwrConfig,
    negatives: usize,
    trials: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if trials == 0 {
        return Ok(0.0);
    }
    let index = CorpusIndex::new(corpus)?;
    let gin = &pair.query.config;
    let eval_rwr = RwrConfig { seed, ..*rwr };
    let mut dummy = seeding::stream(seed, &[purpose::EVAL]);

    let pool_size = (4 * negatives).max(negatives + 1);
    let mut pool = Vec::with_capacity(pool_size);
    for j in 0..pool_size as u64 {
        let (_, k) = sample_pair(corpus, &index, &eval_rwr, u64::MAX, j)?;
        let inst = PreparedInstance::from_subgraph(&k, gin)?;
        let rep = encode(&pair.key, &inst, false, &mut dummy)?.graph_rep;
        pool.push((k.source, rep));
    }

    let mut hits = 0usize;
    for t in 0..trials as u64 {
        let (q, k) = sample_pair(corpus, &index, &eval_rwr, u64::MAX - 1, t)?;
        let q_rep = encode(&pair.query, &PreparedInstance::from_subgraph(&q, gin)?, false, &mut dummy)?.graph_rep;
        let k_rep = encode(&pair.key, &PreparedInstance::from_subgraph(&k, gin)?, false, &mut dummy)?.graph_rep;
        let positive = dot(&q_rep, &k_rep);

        let candidates: Vec<usize> = (0..pool.len()).filter(|&j| pool[j].0 != q.source).collect();
        let take = negatives.min(candidates.len());
        let mut rng = seeding::stream(seed, &[purpose::EVAL, t]);
        let best_negative = index::sample(&mut rng, candidates.len(), take)
            .into_iter()
            .map(|j| dot(&q_rep, &pool[candidates[j]].1))
            .fold(f64::NEG_INFINITY, f64::max);
        if positive > best_negative {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}
