//! Downstream use of a trained encoder: probes on frozen embeddings,
//! fine-tuning, and mean+std aggregation of pixel embeddings into image
//! descriptors.

pub mod aggregate;
pub mod finetune;
pub mod metrics;
pub mod probe;

pub use aggregate::{aggregate_embeddings, aggregate_image, ImageSample};
pub use finetune::{finetune, finetune_seeds, predict_classes, FinetuneConfig, FinetuneResult, SeedSummary};
pub use metrics::{accuracy, macro_f1, mean_stderr, rmse};
pub use probe::{fit_probe, predict, Prediction, Probe, ProbeKind, ProbeSpec, ProbeTarget};

use crate::dataio::{DataError, Dataset, NormStats};
use crate::model::{Checkpoint, ModelError};
use crate::numcore::NumError;

#[derive(Debug, thiserror::Error)]
pub enum DownstreamError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("classification needs at least two classes")]
    SingleClass,
    #[error("checkpoint has no classification head")]
    NoHead,
    #[error("normalization statistics differ from the checkpoint's")]
    StatsMismatch,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Pooled embeddings of a dataset that was normalized with `stats`, which
/// must be the checkpoint's own.
pub fn embed_dataset(ckpt: &Checkpoint, ds: &Dataset, stats: &NormStats) -> Result<Vec<Vec<f32>>, DownstreamError> {
    if stats != &ckpt.norm {
        return Err(DownstreamError::StatsMismatch);
    }
    Ok(ckpt.embed_normalized(&ds.samples.iter().collect::<Vec<_>>())?)
}

/// Fits a logistic probe on `train` embeddings and reports accuracy and
/// macro-F1 on `eval`.
pub fn probe_scores(
    train_x: &[Vec<f32>],
    train_y: &[usize],
    eval_x: &[Vec<f32>],
    eval_y: &[usize],
    spec: &ProbeSpec,
) -> Result<(f64, f64), DownstreamError> {
    let probe = fit_probe(train_x, &ProbeTarget::Classes(train_y.to_vec()), spec)?;
    let pred = predict(&probe, eval_x);
    let pred = pred.classes().ok_or_else(|| DownstreamError::Invalid("probe does not classify".into()))?;
    Ok((accuracy(eval_y, pred), macro_f1(eval_y, pred)))
}

#[cfg(test)]
mod tests;
