//! End-to-end fine-tuning of the encoder with a linear head on the pooled
//! embedding.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, macro_f1, mean_stderr};
use super::DownstreamError;
use crate::dataio::{Dataset, PixelSample};
use crate::model::checkpoint::{HEAD_BIAS, HEAD_WEIGHT};
use crate::model::Checkpoint;
use crate::numcore::{adamw_step, AdamWConfig, Graph, OptimizerState, ParamStore, SeedTree, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Train the head only.
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { lr: 3e-4, weight_decay: 0.05, max_epochs: 50, batch_size: 64, patience: 5, freeze_encoder: false, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    /// Weights from the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<FinetuneEpoch>,
    pub best_val_accuracy: f64,
}

fn head_logits(g: &mut Graph<f32>, store: &ParamStore<f32>, pooled: Var) -> Result<Var, DownstreamError> {
    let w = store.id(HEAD_WEIGHT).ok_or(DownstreamError::NoHead)?;
    let b = store.id(HEAD_BIAS).ok_or(DownstreamError::NoHead)?;
    let (w, b) = (g.param(store, w), g.param(store, b));
    Ok(g.linear(pooled, w, Some(b)))
}

/// Class predictions of a checkpoint carrying a head, on normalized
/// samples.
pub fn predict_classes(ckpt: &Checkpoint, samples: &[&PixelSample]) -> Result<Vec<usize>, DownstreamError> {
    let model = ckpt.model()?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(crate::model::checkpoint::EMBED_CHUNK) {
        let mut g = Graph::<f32>::new();
        let enc = model.encode_batch(&mut g, &ckpt.params, chunk, None)?;
        let logits = head_logits(&mut g, &ckpt.params, enc.pooled)?;
        let v = g.value(logits);
        for i in 0..chunk.len() {
            let row = v.row(i);
            let mut best = 0;
            for (c, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Fine-tunes on `train` with early stopping on `val` accuracy. Both sets
/// must be normalized with the checkpoint's statistics.
pub fn finetune(ckpt: &Checkpoint, train: &Dataset, val: &Dataset, cfg: &FinetuneConfig) -> Result<FinetuneResult, DownstreamError> {
    if val.is_empty() {
        return Err(DownstreamError::Invalid("empty validation split".into()));
    }
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(DownstreamError::Invalid("empty training split or zero batch size".into()));
    }
    let y_train = train.class_labels()?;
    let y_val = val.class_labels()?;
    let classes = y_train.iter().chain(&y_val).max().map_or(0, |m| m + 1).max(2);
    let mut work = ckpt.clone();
    if work.head_classes.is_none() {
        work.add_head(classes)?;
    }
    let model = work.model()?;
    let adam = AdamWConfig { lr_base: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
    let freeze = cfg.freeze_encoder;
    let mut opt = OptimizerState::with_trainable(&work.params, adam, |name| {
        name.starts_with("head.") || (!freeze && (name.starts_with("tok.") || name.starts_with("enc.")))
    });
    let val_refs: Vec<&PixelSample> = val.samples.iter().collect();
    let mut best = (accuracy(&y_val, &predict_classes(&work, &val_refs)?), work.clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    let shuffle = SeedTree::new(cfg.seed).named("finetune-shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle.child(epoch as u64).rng());
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&PixelSample> = batch.iter().map(|&i| &train.samples[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let mut g = Graph::<f32>::new();
            let enc = model.encode_batch(&mut g, &work.params, &samples, None)?;
            let logits = head_logits(&mut g, &work.params, enc.pooled)?;
            let loss = g.cross_entropy(logits, &labels);
            let l = g.value(loss).item() as f64;
            if !l.is_finite() {
                return Err(DownstreamError::Numerical(format!("non-finite fine-tuning loss in epoch {epoch}")));
            }
            loss_sum += l * batch.len() as f64;
            let grads = g.backward(loss)?;
            adamw_step(&mut work.params, &grads, &mut opt, cfg.lr)?;
        }
        let acc = accuracy(&y_val, &predict_classes(&work, &val_refs)?);
        history.push(FinetuneEpoch { epoch, train_loss: loss_sum / train.len() as f64, val_accuracy: acc });
        if acc > best.0 {
            best = (acc, work.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(FinetuneResult { checkpoint: best.1, history, best_val_accuracy: best.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub runs: Vec<SeedRun>,
    pub accuracy_mean: f64,
    pub accuracy_stderr: f64,
    pub f1_mean: f64,
    pub f1_stderr: f64,
}

/// Fine-tunes once per seed and scores each run on `test`.
pub fn finetune_seeds(
    ckpt: &Checkpoint,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    cfg: &FinetuneConfig,
    seeds: &[u64],
) -> Result<SeedSummary, DownstreamError> {
    let y_test = test.class_labels()?;
    let test_refs: Vec<&PixelSample> = test.samples.iter().collect();
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut base = ckpt.clone();
        if base.head_classes.is_none() {
            // a seed-specific head initialisation
            let classes = train.class_labels()?.into_iter().max().map_or(2, |m| m + 1).max(2);
            base.add_head(classes)?;
            let id = base.params.id(HEAD_WEIGHT).expect("head just added");
            let init = crate::numcore::trunc_normal::<f32, _>(&mut SeedTree::new(seed).named("head").rng(), base.params.tensor(id).shape(), 0.02);
            *base.params.tensor_mut(id) = init;
        }
        let res = finetune(&base, train, val, &FinetuneConfig { seed, ..cfg.clone() })?;
        let pred = predict_classes(&res.checkpoint, &test_refs)?;
        runs.push(SeedRun { seed, accuracy: accuracy(&y_test, &pred), macro_f1: macro_f1(&y_test, &pred), epochs: res.history.len() });
    }
    let (accuracy_mean, accuracy_stderr) = mean_stderr(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let (f1_mean, f1_stderr) = mean_stderr(&runs.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
    Ok(SeedSummary { runs, accuracy_mean, accuracy_stderr, f1_mean, f1_stderr })
}
