//! Balanced reconstruction objective.
//!
//! With `SE` the summed squared error over masked continuous scalars
//! (`n_cont` of them) and `CE` the summed cross-entropy over masked DW
//! tokens (`n_cat`):
//!
//! ```text
//! mse   = SE / n_cont
//! ce    = CE / n_cat
//! total = mse + lambda * (n_cat / n_cont) * ce  =  (SE + lambda * CE) / n_cont
//! ```
//!
//! `total = lambda * ce` when nothing continuous is masked and `total = mse`
//! when no DW token is.

use serde::{Deserialize, Serialize};

use crate::masking::MaskTarget;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    pub ce: f64,
    pub n_cont: usize,
    pub n_cat: usize,
    pub total: f64,
}

impl LossReport {
    /// Combines summed errors into the report.
    pub fn from_sums(se_sum: f64, ce_sum: f64, n_cont: usize, n_cat: usize, lambda: f64) -> Self {
        let mse = if n_cont > 0 { se_sum / n_cont as f64 } else { 0.0 };
        let ce = if n_cat > 0 { ce_sum / n_cat as f64 } else { 0.0 };
        LossReport { mse, ce, n_cont, n_cat, total: combine(mse, ce, n_cont, n_cat, lambda) }
    }

    /// `total` recomputed from the other fields.
    pub fn recomputed_total(&self, lambda: f64) -> f64 {
        combine(self.mse, self.ce, self.n_cont, self.n_cat, lambda)
    }
}

fn combine(mse: f64, ce: f64, n_cont: usize, n_cat: usize, lambda: f64) -> f64 {
    match (n_cont, n_cat) {
        (_, 0) => mse,
        (0, _) => lambda * ce,
        (c, k) => mse + lambda * (k as f64 / c as f64) * ce,
    }
}

/// Weights that turn `SE` and `CE` sums into `total` for a batch with the
/// given counts: `total = w_se * SE + w_ce * CE`.
pub fn loss_weights(n_cont: usize, n_cat: usize, lambda: f64) -> (f64, f64) {
    let w_se = if n_cont > 0 { 1.0 / n_cont as f64 } else { 0.0 };
    let w_ce = match (n_cont, n_cat) {
        (_, 0) => 0.0,
        (0, k) => lambda / k as f64,
        (c, _) => lambda / c as f64,
    };
    (w_se, w_ce)
}

/// Decoder output for one masked token.
#[derive(Clone, Debug, PartialEq)]
pub enum Reconstruction {
    Values(Vec<f32>),
    Logits(Vec<f32>),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("{recons} reconstructions for {targets} targets")]
    Count { recons: usize, targets: usize },
    #[error("reconstruction {0} does not match its target")]
    Mismatch(usize),
}

/// Loss over masked tokens from plain vectors.
pub fn reconstruction_loss(recons: &[Reconstruction], targets: &[MaskTarget], lambda: f64) -> Result<LossReport, LossError> {
    if recons.len() != targets.len() {
        return Err(LossError::Count { recons: recons.len(), targets: targets.len() });
    }
    let (mut se, mut ce, mut n_cont, mut n_cat) = (0.0, 0.0, 0, 0);
    for (i, (r, t)) in recons.iter().zip(targets).enumerate() {
        match (r, t) {
            (Reconstruction::Values(v), MaskTarget::Continuous(y)) if v.len() == y.len() => {
                se += v.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
                n_cont += y.len();
            }
            (Reconstruction::Logits(z), MaskTarget::Categorical(c)) if (*c as usize) < z.len() => {
                let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
                let lse = m + z.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
                ce += lse - z[*c as usize] as f64;
                n_cat += 1;
            }
            _ => return Err(LossError::Mismatch(i)),
        }
    }
    Ok(LossReport::from_sums(se, ce, n_cont, n_cat, lambda))
}
