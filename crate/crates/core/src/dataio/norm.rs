use serde::{Deserialize, Serialize};

use super::groups::{continuous_channel_names, ChannelGroup, DYNAMIC_CHANNELS};
use super::sample::{Dataset, PixelSample};
use super::DataError;

/// Smallest standard deviation used when standardizing.
pub const STD_FLOOR: f32 = 1e-6;

/// Per-channel mean and standard deviation of the 15 dynamic continuous
/// channels followed by the two topography channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<String>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub const NORM_CHANNELS: usize = DYNAMIC_CHANNELS + 2;

impl NormStats {
    /// Stats that leave data unchanged.
    pub fn identity() -> Self {
        NormStats {
            channels: continuous_channel_names(),
            mean: vec![0.0; NORM_CHANNELS],
            std: vec![1.0; NORM_CHANNELS],
        }
    }

    pub fn from_vectors(mean: Vec<f32>, std: Vec<f32>) -> Result<Self, DataError> {
        let s = NormStats { channels: continuous_channel_names(), mean, std };
        s.check_layout()?;
        Ok(s)
    }

    /// Population mean and std over present values of the given samples
    /// (the training split).
    pub fn compute(samples: &[PixelSample]) -> Result<Self, DataError> {
        let mut sum = [0f64; NORM_CHANNELS];
        let mut sq = [0f64; NORM_CHANNELS];
        let mut n = [0u64; NORM_CHANNELS];
        for s in samples {
            for (t, row) in s.continuous.iter().enumerate() {
                for g in ChannelGroup::DYNAMIC {
                    let Some(r) = g.dynamic_range() else { continue };
                    if !s.presence[t][g.index()] {
                        continue;
                    }
                    for c in r {
                        let v = row[c] as f64;
                        sum[c] += v;
                        sq[c] += v * v;
                        n[c] += 1;
                    }
                }
            }
            if s.tg_present {
                for k in 0..2 {
                    let v = s.tg[k] as f64;
                    sum[DYNAMIC_CHANNELS + k] += v;
                    sq[DYNAMIC_CHANNELS + k] += v * v;
                    n[DYNAMIC_CHANNELS + k] += 1;
                }
            }
        }
        let mut mean = vec![0f32; NORM_CHANNELS];
        let mut std = vec![1f32; NORM_CHANNELS];
        for c in 0..NORM_CHANNELS {
            if n[c] == 0 {
                continue;
            }
            let m = sum[c] / n[c] as f64;
            let var = (sq[c] / n[c] as f64 - m * m).max(0.0);
            mean[c] = m as f32;
            std[c] = (var.sqrt() as f32).max(STD_FLOOR);
        }
        NormStats::from_vectors(mean, std)
    }

    pub fn compute_dataset(ds: &Dataset) -> Result<Self, DataError> {
        Self::compute(&ds.samples)
    }

    pub fn check_layout(&self) -> Result<(), DataError> {
        let names = continuous_channel_names();
        if self.mean.len() != NORM_CHANNELS || self.std.len() != NORM_CHANNELS || self.channels != names {
            return Err(DataError::LayoutMismatch(format!(
                "expected {} channels {:?}, got {} means / {} stds",
                NORM_CHANNELS,
                names,
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(DataError::Invalid("normalization stats must be finite with std > 0".into()));
        }
        Ok(())
    }

    fn sd(&self, c: usize) -> f32 {
        self.std[c].max(STD_FLOOR)
    }

    /// Standardizes the continuous channels; categorical values, months and
    /// presence are untouched. Location is not standardized.
    pub fn normalize(&self, sample: &PixelSample) -> Result<PixelSample, DataError> {
        self.check_layout()?;
        let mut out = sample.clone();
        for row in &mut out.continuous {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.sd(c);
            }
        }
        for k in 0..2 {
            let c = DYNAMIC_CHANNELS + k;
            out.tg[k] = (out.tg[k] - self.mean[c]) / self.sd(c);
        }
        Ok(out)
    }

    pub fn denormalize(&self, sample: &PixelSample) -> Result<PixelSample, DataError> {
        self.check_layout()?;
        let mut out = sample.clone();
        for row in &mut out.continuous {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.sd(c) + self.mean[c];
            }
        }
        for k in 0..2 {
            let c = DYNAMIC_CHANNELS + k;
            out.tg[k] = out.tg[k] * self.sd(c) + self.mean[c];
        }
        Ok(out)
    }

    pub fn normalize_dataset(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        let samples = ds.samples.iter().map(|s| self.normalize(s)).collect::<Result<_, _>>()?;
        Ok(Dataset { samples, labels: ds.labels.clone() })
    }
}

/// Normalizes one sample with `stats`.
pub fn normalize(sample: &PixelSample, stats: &NormStats) -> Result<PixelSample, DataError> {
    stats.normalize(sample)
}

pub fn denormalize(sample: &PixelSample, stats: &NormStats) -> Result<PixelSample, DataError> {
    stats.denormalize(sample)
}
