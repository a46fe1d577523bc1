//! Synthetic pixel-timeseries world.
//!
//! Each land-cover class follows its own seasonal cycle: every sinusoidal
//! channel is `base + amplitude * sin(2*pi*month/12 + phase + offset)`.
//! Classes differ in the depth of their phenology and in how far the radar
//! response lags the optical one. `offset` is a per-pixel phenology shift
//! (think sowing date) drawn uniformly, so no class is identified by the
//! timing of its season alone and class means coincide. Weather columns
//! follow the calendar and ignore both class and shift. NDVI is derived
//! from the simulated red and NIR bands, Dynamic World labels follow the
//! pixel's growing season, and Bernoulli dropout removes individual
//! `(timestep, group)` observations the way clouds would.

use std::f32::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::groups::{ChannelGroup, B4, B8, DYNAMIC_CHANNELS, DW_CLASSES, NDVI_COL, N_DYNAMIC_GROUPS};
use super::sample::{compute_ndvi, monthly_months, Dataset, PixelSample};
use super::DataError;
use crate::numcore::SeedTree;

const DW_CROPS: u8 = 4;
const DW_BARE: u8 = 7;

/// Per-class seasonal tables over the 15 dynamic continuous channels. The
/// NDVI column is ignored (NDVI is computed from B4 and B8).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSignatures {
    pub base: Vec<f32>,
    pub amplitude: Vec<Vec<f32>>,
    pub phase: Vec<Vec<f32>>,
    /// Noise standard deviation per channel at `noise == 1`.
    pub noise_scale: Vec<f32>,
}

// Raw-unit base level, seasonal amplitude and phase offset of each channel:
// S1 VV/VH (dB), S2 reflectances, NDVI (unused), ERA5 precipitation (m) and
// 2 m temperature (K).
const BASE: [f32; DYNAMIC_CHANNELS] =
    [-12.0, -18.0, 0.06, 0.09, 0.10, 0.13, 0.20, 0.24, 0.28, 0.30, 0.22, 0.14, 0.0, 0.08, 288.0];
const AMPLITUDE: [f32; DYNAMIC_CHANNELS] =
    [2.5, 3.0, 0.02, 0.03, 0.05, 0.03, 0.06, 0.08, 0.12, 0.12, 0.05, 0.05, 0.0, 0.05, 8.0];
const PHASE_OFFSET: [f32; DYNAMIC_CHANNELS] =
    [0.4, 0.5, PI, PI, PI, 0.2, 0.0, 0.0, 0.0, 0.0, 0.8 * PI, 0.8 * PI, 0.0, 1.0, -0.5 * PI];
/// ERA5 columns follow the calendar, not the land cover.
pub const CLASS_FREE: [usize; 2] = [13, 14];
const RADAR: [usize; 2] = [0, 1];

impl ClassSignatures {
    /// Class `k` of `K` scales every land-cover amplitude by
    /// `0.6 + 0.8 k / (K - 1)` and delays the radar channels by `pi k / K`.
    pub fn default_for(n_classes: usize) -> Self {
        let base = BASE.to_vec();
        let mut amplitude = Vec::with_capacity(n_classes);
        let mut phase = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            let depth = if n_classes > 1 { 0.6 + 0.8 * k as f32 / (n_classes - 1) as f32 } else { 1.0 };
            let lag = PI * k as f32 / n_classes as f32;
            let mut a = AMPLITUDE.to_vec();
            let mut p = PHASE_OFFSET.to_vec();
            for c in 0..DYNAMIC_CHANNELS {
                if CLASS_FREE.contains(&c) || c == NDVI_COL {
                    continue;
                }
                a[c] *= depth;
                if RADAR.contains(&c) {
                    p[c] += lag;
                }
            }
            amplitude.push(a);
            phase.push(p);
        }
        ClassSignatures { base, amplitude, phase, noise_scale: AMPLITUDE.to_vec() }
    }

    pub fn n_classes(&self) -> usize {
        self.amplitude.len()
    }

    /// Noise-free value of channel `c` for class `k` in calendar month
    /// `month`, without phenology shift.
    pub fn curve(&self, k: usize, c: usize, month: u8) -> f32 {
        self.shifted_curve(k, c, month, 0.0)
    }

    /// As [`curve`](Self::curve) for a pixel whose season is shifted by
    /// `offset` radians. Weather columns ignore the shift.
    pub fn shifted_curve(&self, k: usize, c: usize, month: u8, offset: f32) -> f32 {
        let offset = if CLASS_FREE.contains(&c) { 0.0 } else { offset };
        let angle = 2.0 * PI * month as f32 / 12.0 + self.phase[k][c] + offset;
        self.base[c] + self.amplitude[k][c] * angle.sin()
    }

    fn validate(&self) -> Result<(), DataError> {
        let k = self.amplitude.len();
        let ok = self.base.len() == DYNAMIC_CHANNELS
            && self.noise_scale.len() == DYNAMIC_CHANNELS
            && self.phase.len() == k
            && self.amplitude.iter().chain(&self.phase).all(|r| r.len() == DYNAMIC_CHANNELS);
        if !ok {
            return Err(DataError::Invalid("signature tables must be [classes][15]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    pub timesteps: usize,
    /// Observation noise as a multiple of each channel's `noise_scale`.
    pub noise: f32,
    /// Probability that a dynamic `(timestep, group)` observation is missing.
    pub dropout: f32,
    /// Probability that a Dynamic World label follows the pixel's season.
    pub dw_purity: f32,
    /// Width of the per-pixel phenology shift as a fraction of the year:
    /// offsets are uniform on `[0, 2*pi*phase_jitter)`.
    pub phase_jitter: f32,
    pub seed: u64,
    pub signatures: ClassSignatures,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self::new(10_000, 4, 0.1, 0.05, 0)
    }
}

impl SyntheticWorldConfig {
    pub fn new(n_samples: usize, n_classes: usize, noise: f32, dropout: f32, seed: u64) -> Self {
        SyntheticWorldConfig {
            n_samples,
            n_classes,
            timesteps: 12,
            noise,
            dropout,
            dw_purity: 0.8,
            phase_jitter: 1.0,
            seed,
            signatures: ClassSignatures::default_for(n_classes),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_classes == 0 || self.signatures.n_classes() != self.n_classes {
            return Err(DataError::Invalid(format!(
                "{} classes but signature tables for {}",
                self.n_classes,
                self.signatures.n_classes()
            )));
        }
        if self.timesteps == 0 {
            return Err(DataError::Invalid("timesteps must be positive".into()));
        }
        if [self.dropout, self.dw_purity, self.phase_jitter].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DataError::Invalid("probabilities must lie in [0, 1]".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(DataError::Invalid("noise must be >= 0".into()));
        }
        self.signatures.validate()
    }
}

/// Generates a labeled dataset. Classes are exactly balanced (counts differ
/// by at most one) and sample `i` depends only on `(seed, i)`.
pub fn generate_synthetic(config: &SyntheticWorldConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let root = SeedTree::new(config.seed);
    let mut labels: Vec<u32> = (0..config.n_samples).map(|i| (i % config.n_classes) as u32).collect();
    labels.shuffle(&mut root.named("labels").rng());
    let per_sample = root.named("samples");
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &k)| generate_one(config, k as usize, &mut per_sample.child(i as u64).rng()))
        .collect();
    Dataset::new(samples, labels.into_iter().map(Some).collect())
}

fn generate_one<R: Rng>(cfg: &SyntheticWorldConfig, class: usize, rng: &mut R) -> PixelSample {
    let sig = &cfg.signatures;
    let t = cfg.timesteps;
    let start_month: u8 = rng.random_range(0..12);
    let offset = 2.0 * PI * cfg.phase_jitter * rng.random::<f32>();
    let months = monthly_months(start_month, t);
    let mut continuous = vec![[0f32; DYNAMIC_CHANNELS]; t];
    let mut dw = vec![0u8; t];
    for (i, &m) in months.iter().enumerate() {
        let row = &mut continuous[i];
        for c in 0..DYNAMIC_CHANNELS {
            if c == NDVI_COL {
                continue;
            }
            let z: f32 = StandardNormal.sample(rng);
            let mut v = sig.shifted_curve(class, c, m, offset) + cfg.noise * sig.noise_scale[c] * z;
            // reflectances and precipitation are non-negative
            if (2..12).contains(&c) || c == 13 {
                v = v.max(0.0);
            }
            row[c] = v;
        }
        row[NDVI_COL] = compute_ndvi(row[B4], row[B8]);
        let growing = (2.0 * PI * m as f32 / 12.0 + sig.phase[class][B8] + offset).sin() > 0.0;
        dw[i] = if rng.random::<f32>() < cfg.dw_purity {
            if growing {
                DW_CROPS
            } else {
                DW_BARE
            }
        } else {
            rng.random_range(0..DW_CLASSES as u8)
        };
    }
    let mut presence = vec![[true; N_DYNAMIC_GROUPS]; t];
    if cfg.dropout > 0.0 {
        for p in presence.iter_mut() {
            for g in ChannelGroup::DYNAMIC {
                p[g.index()] = rng.random::<f32>() >= cfg.dropout;
            }
        }
    }
    PixelSample {
        continuous,
        dw,
        tg: [rng.random_range(0.0..2000.0), rng.random_range(0.0..30.0)],
        lat: rng.random_range(-60.0..60.0),
        lon: rng.random_range(-180.0..180.0),
        start_month,
        months,
        presence,
        tg_present: true,
    }
}
