//! Masking-strategy and model-size sweeps.

use serde::Serialize;

use crate::dataio::{Dataset, NormStats};
use crate::error::Result;
use crate::masking::MaskStrategy;
use crate::model::{count_flops, Checkpoint, FlopInput, FlopMode, ModelConfig};
use crate::pretrain::{pretrain, validate_probe, PretrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Masking,
    Scaling,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub kind: AblationKind,
    pub name: String,
    pub depth: usize,
    pub width: usize,
    pub params: usize,
    /// Full-input encoder+decoder MFLOPs.
    pub mflops: f64,
    pub val_f1: f64,
    pub final_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
}

/// Model sizes of the scaling sweep: base, wider, deeper.
pub fn scaling_grid() -> [(String, ModelConfig); 3] {
    [
        ("2x128".into(), ModelConfig::scaled(2, 128)),
        ("2x256".into(), ModelConfig::scaled(2, 256)),
        ("4x128".into(), ModelConfig::scaled(4, 128)),
    ]
}

/// Masking sweep: the four single strategies, then all of them combined.
pub fn masking_grid() -> Vec<(String, Vec<MaskStrategy>)> {
    let mut v: Vec<(String, Vec<MaskStrategy>)> = MaskStrategy::ALL.iter().map(|&s| (s.cli_name().to_string(), vec![s])).collect();
    v.push(("combined".into(), MaskStrategy::ALL.to_vec()));
    v
}

/// Pretrains one model per row on `train` and scores each with the
/// validation probe on `val`. Both sets must be normalized with `norm`.
pub fn run_ablation(kind: AblationKind, base: &PretrainConfig, train: &Dataset, norm: &NormStats, val: &Dataset) -> Result<AblationReport> {
    let runs: Vec<(String, PretrainConfig)> = match kind {
        AblationKind::Masking => masking_grid().into_iter().map(|(n, s)| (n, PretrainConfig { strategies: s, ..base.clone() })).collect(),
        AblationKind::Scaling => scaling_grid().into_iter().map(|(n, m)| (n, PretrainConfig { model: m, ..base.clone() })).collect(),
    };
    let full = FlopInput::Full.slots();
    let mut rows = Vec::with_capacity(runs.len());
    for (name, cfg) in runs {
        log::info!("ablation {kind:?}: {name}");
        let res = pretrain(train, norm.clone(), &cfg)?;
        let f1 = validate_probe(&res.checkpoint, val)?;
        rows.push(row(kind, name, &cfg.model, &res.checkpoint, f1, res.history.last().map_or(f64::NAN, |h| h.loss.mse), &full));
    }
    Ok(AblationReport { kind, rows })
}

fn row(kind: AblationKind, name: String, m: &ModelConfig, ckpt: &Checkpoint, val_f1: f64, final_mse: f64, full: &[crate::tokenizer::TokenSlot]) -> AblationRow {
    AblationRow {
        kind,
        name,
        depth: m.depth,
        width: m.d_e,
        params: ckpt.count_params(),
        mflops: count_flops(m, full, FlopMode::EncoderDecoder).total() as f64 / 1e6,
        val_f1,
        final_mse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_reference_shapes() {
        let m = masking_grid();
        assert_eq!(m.len(), 5);
        assert_eq!(m[4].1.len(), 4);
        let full = FlopInput::Full.slots();
        let f: Vec<u64> = scaling_grid().iter().map(|(_, c)| count_flops(c, &full, FlopMode::EncoderDecoder).total()).collect();
        assert!(f[0] < f[2] && f[2] < f[1]);
    }
}
