//! Masked-reconstruction pretraining.
//!
//! Each epoch shuffles the data; every instance draws a masking strategy
//! and a mask from its own seed stream, so a run is reproducible and does
//! not depend on how batches are split into micro-batches or threads.

pub mod loss;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{loss_weights, reconstruction_loss, LossError, LossReport, Reconstruction};

use crate::dataio::{ChannelGroup, DataError, Dataset, NormStats, PixelSample};
use crate::downstream::{macro_f1, predict, fit_probe, DownstreamError, ProbeSpec, ProbeTarget};
use crate::masking::{build_mask, draw_strategy, mask_budget, MaskError, MaskPlan, MaskStrategy};
use crate::model::{Checkpoint, Model, ModelConfig, ModelError};
use crate::numcore::{adamw_step, cosine_lr, default_warmup, AdamWConfig, Gradients, Graph, NumError, OptimizerState, ParamStore, SeedTree};
use crate::tokenizer::{token_slots, TokenSlot};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Downstream(#[from] DownstreamError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Instances per forward/backward pass; gradients are summed over the
    /// micro-batches of a batch before the optimizer step.
    pub micro_batch: usize,
    pub mask_ratio: f64,
    pub lambda: f64,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    /// Warmup steps; `None` uses [`default_warmup`].
    pub warmup_steps: Option<usize>,
    pub seed: u64,
    pub strategies: Vec<MaskStrategy>,
    pub model: ModelConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            batch_size: 256,
            micro_batch: 32,
            mask_ratio: 0.75,
            lambda: 2.0,
            lr_max: 1e-3,
            weight_decay: 0.05,
            betas: (0.9, 0.95),
            warmup_steps: None,
            seed: 0,
            strategies: MaskStrategy::ALL.to_vec(),
            model: ModelConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.micro_batch == 0 {
            return bad("epochs, batch size and micro-batch must be positive");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(MaskError::Ratio(self.mask_ratio).into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be >= 0");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.strategies.is_empty() {
            return Err(MaskError::NoStrategies.into());
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr_base: self.lr_max, weight_decay: self.weight_decay, beta1: self.betas.0, beta2: self.betas.1, eps: 1e-8 }
    }
}

/// One instance with its mask.
#[derive(Clone, Debug)]
pub struct MaskedInstance<'a> {
    pub sample: &'a PixelSample,
    pub slots: Vec<TokenSlot>,
    pub plan: MaskPlan,
}

impl<'a> MaskedInstance<'a> {
    /// Draws a strategy and a mask from `seeds`.
    pub fn draw(sample: &'a PixelSample, ratio: f64, strategies: &[MaskStrategy], seeds: SeedTree) -> Result<Self, MaskError> {
        let slots = token_slots(sample);
        let mut rng = seeds.rng();
        let strategy = draw_strategy(&mut rng, strategies)?;
        let maskable = slots.iter().filter(|s| s.maskable()).count();
        let budget = mask_budget(ratio, maskable);
        let plan = if budget == 0 || budget >= maskable {
            MaskPlan::empty(strategy)
        } else {
            build_mask(&slots, ratio, strategy, &mut rng)?
        };
        Ok(MaskedInstance { sample, slots, plan })
    }

    /// `(continuous scalars, categorical tokens)` under the mask.
    pub fn counts(&self) -> (usize, usize) {
        let mut out = (0, 0);
        for &i in &self.plan.masked {
            let g = self.slots[i].group;
            if g.is_categorical() {
                out.1 += 1;
            } else {
                out.0 += g.width();
            }
        }
        out
    }
}

/// Summed errors and gradients of `w_se * SE + w_ce * CE` over a group of
/// instances.
struct PartialLoss {
    se: f64,
    ce: f64,
    grads: Gradients<f32>,
}

fn micro_batch_loss(
    model: &Model,
    params: &ParamStore<f32>,
    items: &[MaskedInstance<'_>],
    w_se: f64,
    w_ce: f64,
) -> Result<PartialLoss, TrainError> {
    let samples: Vec<&PixelSample> = items.iter().map(|m| m.sample).collect();
    let visible: Vec<Vec<usize>> = items.iter().map(|m| m.plan.visible(m.slots.len())).collect();
    let masked: Vec<Vec<usize>> = items.iter().map(|m| m.plan.masked.clone()).collect();
    let mut g = Graph::<f32>::new();
    let enc = model.encode_batch(&mut g, params, &samples, Some(&visible))?;
    let heads = model.decode_batch(&mut g, params, &enc, &masked)?;
    let mut parts = Vec::new();
    let (mut se, mut ce) = (0.0, 0.0);
    for h in &heads {
        if h.group == ChannelGroup::Dw {
            let labels: Vec<usize> = h.tokens.iter().map(|&(s, i)| items[s].sample.dw[items[s].slots[i].timestep.expect("dynamic")] as usize).collect();
            let v = g.cross_entropy_sum(h.values, &labels);
            ce += g.value(v).item() as f64;
            parts.push((v, w_ce as f32));
        } else {
            let mut target = Vec::with_capacity(h.tokens.len() * h.group.width());
            for &(s, i) in &h.tokens {
                target.extend(crate::tokenizer::slot_values(items[s].sample, &items[s].slots[i])?);
            }
            let v = g.squared_error_sum(h.values, &target);
            se += g.value(v).item() as f64;
            parts.push((v, w_se as f32));
        }
    }
    let grads = if parts.is_empty() {
        Gradients::empty(params.len())
    } else {
        let loss = g.weighted_sum(&parts);
        g.backward(loss)?
    };
    Ok(PartialLoss { se, ce, grads })
}

/// Loss and parameter gradients of one batch, normalized with the counts
/// of the whole batch. Micro-batches run in parallel and are summed in
/// order.
pub fn batch_gradients(
    model: &Model,
    params: &ParamStore<f32>,
    batch: &[MaskedInstance<'_>],
    lambda: f64,
    micro_batch: usize,
) -> Result<(Gradients<f32>, LossReport), TrainError> {
    let (n_cont, n_cat) = batch.iter().map(MaskedInstance::counts).fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    let (w_se, w_ce) = loss_weights(n_cont, n_cat, lambda);
    let parts: Vec<PartialLoss> = batch
        .par_chunks(micro_batch.max(1))
        .map(|items| micro_batch_loss(model, params, items, w_se, w_ce))
        .collect::<Result<_, _>>()?;
    let mut grads = Gradients::empty(params.len());
    let (mut se, mut ce) = (0.0, 0.0);
    for p in &parts {
        grads.accumulate(&p.grads);
        se += p.se;
        ce += p.ce;
    }
    Ok((grads, LossReport::from_sums(se, ce, n_cont, n_cat, lambda)))
}

/// Per-epoch record of a pretraining run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Epoch-level masked losses: summed errors over all batches divided by
    /// the epoch's counts.
    pub loss: LossReport,
    pub lr_last: f64,
    pub val_f1: Option<f64>,
}

/// Optional side channels of a run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions<'a> {
    /// Labeled data for the per-epoch probe.
    pub validation: Option<&'a Dataset>,
    /// Directory for epoch checkpoints and `history.csv`.
    pub out_dir: Option<PathBuf>,
    /// Epoch checkpoints kept besides `best.ckpt`.
    pub keep_last: usize,
    /// Return after this many epochs. The schedule still spans
    /// `cfg.epochs`, so the run is an exact prefix of the full one.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochReport>,
    /// Epoch of the best checkpoint (highest validation F1, else lowest
    /// loss).
    pub best_epoch: usize,
}

pub fn pretrain(ds: &Dataset, norm: NormStats, cfg: &PretrainConfig) -> Result<PretrainResult, TrainError> {
    pretrain_with(ds, norm, cfg, &RunOptions::default())
}

/// Pretrains on `ds`, which must already be normalized with `norm`.
pub fn pretrain_with(ds: &Dataset, norm: NormStats, cfg: &PretrainConfig, opts: &RunOptions<'_>) -> Result<PretrainResult, TrainError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(DataError::Invalid("empty pretraining set".into()).into());
    }
    let root = SeedTree::new(cfg.seed);
    let mut ckpt = Checkpoint::init(cfg.model, norm, cfg.seed)?;
    let model = ckpt.model()?;
    let mut opt = OptimizerState::new(&ckpt.params, cfg.adamw());
    let steps = cfg.steps_per_epoch(ds.len());
    let total_steps = steps * cfg.epochs;
    let warmup = cfg.warmup_steps.unwrap_or_else(|| default_warmup(total_steps));
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history: Vec<EpochReport> = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut step = 0;
    for epoch in 0..opts.stop_after.map_or(cfg.epochs, |n| n.min(cfg.epochs)) {
        order.shuffle(&mut root.named("shuffle").child(epoch as u64).rng());
        let mask_seeds = root.named("mask").child(epoch as u64);
        let (mut se, mut ce, mut n_cont, mut n_cat) = (0.0, 0.0, 0, 0);
        let mut lr = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<MaskedInstance> = idx
                .par_iter()
                .map(|&i| MaskedInstance::draw(&ds.samples[i], cfg.mask_ratio, &cfg.strategies, mask_seeds.child(i as u64)))
                .collect::<Result<_, _>>()?;
            let (grads, rep) = batch_gradients(&model, &ckpt.params, &batch, cfg.lambda, cfg.micro_batch)?;
            if !rep.total.is_finite() || !grads.all_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            lr = cosine_lr(step, total_steps, warmup, cfg.lr_max);
            adamw_step(&mut ckpt.params, &grads, &mut opt, lr)?;
            step += 1;
            se += rep.mse * rep.n_cont as f64;
            ce += rep.ce * rep.n_cat as f64;
            n_cont += rep.n_cont;
            n_cat += rep.n_cat;
        }
        let loss = LossReport::from_sums(se, ce, n_cont, n_cat, cfg.lambda);
        let val_f1 = opts.validation.map(|v| validate_probe(&ckpt, v)).transpose()?;
        log::info!("epoch {epoch}: mse {:.4} ce {:.4} total {:.4} val_f1 {val_f1:?}", loss.mse, loss.ce, loss.total);
        history.push(EpochReport { epoch, loss, lr_last: lr, val_f1 });
        let score = val_f1.unwrap_or(-loss.total);
        let improved = best.is_none_or(|(_, s)| score > s);
        if improved {
            best = Some((epoch, score));
        }
        if let Some(dir) = &opts.out_dir {
            save_epoch(dir, &ckpt, epoch, improved, opts.keep_last)?;
            write_history(dir.join("history.csv"), &history)?;
        }
    }
    Ok(PretrainResult { checkpoint: ckpt, history, best_epoch: best.map_or(0, |b| b.0) })
}

pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.ckpt"))
}

fn save_epoch(dir: &Path, ckpt: &Checkpoint, epoch: usize, best: bool, keep_last: usize) -> Result<(), TrainError> {
    ckpt.save(epoch_checkpoint_path(dir, epoch))?;
    if best {
        ckpt.save(dir.join("best.ckpt"))?;
    }
    if let Some(old) = epoch.checked_sub(keep_last.max(1)) {
        let p = epoch_checkpoint_path(dir, old);
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    mse: f64,
    ce: f64,
    n_cont: usize,
    n_cat: usize,
    total: f64,
    lr_last: f64,
    val_f1: Option<f64>,
}

/// Writes the loss history as CSV: `epoch,mse,ce,n_cont,n_cat,total,lr_last,val_f1`.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochReport]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for h in history {
        let l = h.loss;
        w.serialize(HistoryRow { epoch: h.epoch, mse: l.mse, ce: l.ce, n_cont: l.n_cont, n_cat: l.n_cat, total: l.total, lr_last: h.lr_last, val_f1: h.val_f1 })?;
    }
    w.flush()?;
    Ok(())
}

/// Macro-F1 of a logistic probe on pooled embeddings, fitted on the first
/// half of the labeled set and scored on the second half. The set must be
/// normalized with the checkpoint's statistics.
pub fn validate_probe(ckpt: &Checkpoint, labeled: &Dataset) -> Result<f64, TrainError> {
    let y = labeled.class_labels()?;
    if y.iter().all(|&c| c == y[0]) {
        return Err(DownstreamError::SingleClass.into());
    }
    let (train, eval) = labeled.split_at(labeled.len() / 2);
    Ok(probe_f1(ckpt, &train, &eval)?)
}

/// Macro-F1 on `eval` of a logistic probe fitted on `train`.
pub fn probe_f1(ckpt: &Checkpoint, train: &Dataset, eval: &Dataset) -> Result<f64, DownstreamError> {
    let ytr = train.class_labels()?;
    let yev = eval.class_labels()?;
    let xtr = ckpt.embed_normalized(&train.samples.iter().collect::<Vec<_>>())?;
    let xev = ckpt.embed_normalized(&eval.samples.iter().collect::<Vec<_>>())?;
    let probe = fit_probe(&xtr, &ProbeTarget::Classes(ytr), &ProbeSpec::logistic())?;
    let pred = predict(&probe, &xev);
    Ok(macro_f1(&yev, pred.classes().expect("classifier")))
}

#[cfg(test)]
mod tests;
