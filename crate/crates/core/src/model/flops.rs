//! Analytic FLOP accounting.
//!
//! Counts multiply-accumulates of every dense layer (input projections,
//! attention in/out projections, MLPs, decoder embedding and heads) plus the
//! two attention products `Q K^T` and `P V` (`2 * n^2 * d` per block).
//! Norms, activations, softmax and embedding lookups are not counted. In
//! encoder-decoder mode the decoder sees every token and the heads run on
//! every non-Loc token, which is the cost of one unmasked forward pass.

use serde::Serialize;

use super::ModelConfig;
use crate::dataio::{ChannelGroup, PixelSample, DW_CLASSES};
use crate::tokenizer::{token_slots, TokenSlot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FlopMode {
    Encoder,
    EncoderDecoder,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub tokenizer: u64,
    pub encoder: u64,
    pub decoder: u64,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.tokenizer + self.encoder + self.decoder
    }
}

fn stack(n: u64, d: u64, depth: u64, mlp_ratio: u64) -> u64 {
    let dense = n * (3 * d * d + d * d + 2 * mlp_ratio * d * d);
    let attention = 2 * n * n * d;
    depth * (dense + attention)
}

/// Input shapes used in reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FlopInput {
    /// Twelve months with every group present: 110 tokens.
    Full,
    /// One timestep of the five Sentinel-2 groups, plus Loc.
    MsPixel,
    /// One timestep of the RGB group, plus Loc.
    RgbPixel,
}

impl FlopInput {
    pub const ALL: [FlopInput; 3] = [FlopInput::Full, FlopInput::MsPixel, FlopInput::RgbPixel];

    pub fn name(self) -> &'static str {
        match self {
            FlopInput::Full => "full",
            FlopInput::MsPixel => "ms-pixel",
            FlopInput::RgbPixel => "rgb-pixel",
        }
    }

    pub fn slots(self) -> Vec<TokenSlot> {
        let keep: &[ChannelGroup] = match self {
            FlopInput::Full => return token_slots(&PixelSample::empty_monthly(12, 0)),
            FlopInput::MsPixel => &ChannelGroup::SENTINEL2,
            FlopInput::RgbPixel => &[ChannelGroup::S2Rgb],
        };
        let mut s = PixelSample::empty_monthly(1, 0);
        for g in ChannelGroup::DYNAMIC {
            s.presence[0][g.index()] = keep.contains(&g);
        }
        s.tg_present = false;
        token_slots(&s)
    }
}

impl std::str::FromStr for FlopInput {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        FlopInput::ALL.into_iter().find(|i| i.name() == s).ok_or_else(|| format!("unknown input {s:?} (full, ms-pixel, rgb-pixel)"))
    }
}

pub fn count_flops(config: &ModelConfig, slots: &[TokenSlot], mode: FlopMode) -> FlopReport {
    let d = config.d_e as u64;
    let n = slots.len() as u64;
    let tokenizer: u64 = slots
        .iter()
        .filter(|s| !s.group.is_categorical())
        .map(|s| s.group.width() as u64 * d)
        .sum();
    let encoder = stack(n, d, config.depth as u64, config.mlp_ratio as u64);
    let decoder = match mode {
        FlopMode::Encoder => 0,
        FlopMode::EncoderDecoder => {
            let dd = config.decoder_d as u64;
            let heads: u64 = slots
                .iter()
                .filter(|s| s.group != ChannelGroup::Loc)
                .map(|s| if s.group.is_categorical() { DW_CLASSES as u64 } else { s.group.width() as u64 } * dd)
                .sum();
            n * d * dd + stack(n, dd, config.decoder_depth as u64, config.mlp_ratio as u64) + heads
        }
    };
    FlopReport { tokenizer, encoder, decoder }
}
