//! Turns pixel samples into token embeddings.
//!
//! Every present `(timestep, dynamic group)` pair becomes one token, as do
//! the TG and Loc static groups. Continuous groups go through their own
//! linear projection, DW classes through an embedding table. Each token
//! except Loc then gets `[channel; positional; month]` added; static tokens
//! carry zeros in the positional and month slots.

pub mod encoding;

use rand::Rng;

pub use encoding::{month_encoding, positional_encoding, EncodingLayout};

use crate::dataio::{ChannelGroup, DataError, PixelSample, DW_CLASSES, N_ENCODED_GROUPS};
use crate::numcore::{trunc_normal, Float, Graph, NumError, ParamStore, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum TokenizeError {
    #[error("encoding layout: {0}")]
    Layout(String),
    #[error("non-finite input in sample {sample}, group {group}, timestep {timestep:?}")]
    NonFinite { sample: usize, group: ChannelGroup, timestep: Option<usize> },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Rows of the DW embedding table: the 9 classes plus one reserved id.
pub const DW_VOCAB: usize = DW_CLASSES + 1;

/// Identity of one token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenSlot {
    pub group: ChannelGroup,
    pub timestep: Option<usize>,
    pub month: Option<u8>,
}

impl TokenSlot {
    pub fn maskable(&self) -> bool {
        self.group != ChannelGroup::Loc
    }
}

/// Tokens of a sample in canonical order: dynamic groups (each over all its
/// present timesteps), then TG when present, then Loc.
pub fn token_slots(sample: &PixelSample) -> Vec<TokenSlot> {
    let mut out = Vec::with_capacity(sample.timesteps() * 9 + 2);
    for g in ChannelGroup::DYNAMIC {
        for t in 0..sample.timesteps() {
            if sample.is_present(g, Some(t)) {
                out.push(TokenSlot { group: g, timestep: Some(t), month: Some(sample.months[t]) });
            }
        }
    }
    if sample.tg_present {
        out.push(TokenSlot { group: ChannelGroup::Tg, timestep: None, month: None });
    }
    out.push(TokenSlot { group: ChannelGroup::Loc, timestep: None, month: None });
    out
}

/// Raw values a continuous token is projected from.
pub fn slot_values(sample: &PixelSample, slot: &TokenSlot) -> Result<Vec<f32>, DataError> {
    Ok(match (slot.group, slot.timestep) {
        (ChannelGroup::Tg, _) => sample.tg.to_vec(),
        (ChannelGroup::Loc, _) => sample.location()?.to_vec(),
        (ChannelGroup::Dw, Some(t)) => vec![sample.dw[t] as f32],
        (g, Some(t)) => sample.continuous[t][g.dynamic_range().expect("dynamic group")].to_vec(),
        (g, None) => return Err(DataError::Invalid(format!("dynamic group {g} without a timestep"))),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub slot: TokenSlot,
    pub embedding: Vec<f32>,
    /// Input values the token was built from (the class id for DW).
    pub input: Vec<f32>,
}

impl Token {
    pub fn maskable(&self) -> bool {
        self.slot.maskable()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub d_e: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn slots(&self) -> Vec<TokenSlot> {
        self.tokens.iter().map(|t| t.slot).collect()
    }
}

pub fn proj_weight_name(g: ChannelGroup) -> String {
    format!("tok.proj.{}.weight", g.name())
}

pub fn proj_bias_name(g: ChannelGroup) -> String {
    format!("tok.proj.{}.bias", g.name())
}

pub const DW_EMBED: &str = "tok.dw_embed";
pub const ENC_CHANNEL_EMBED: &str = "enc.channel_embed";

fn lookup<T: Float>(store: &ParamStore<T>, name: &str) -> Result<crate::numcore::ParamId, TokenizeError> {
    store.id(name).ok_or_else(|| TokenizeError::MissingParam(name.to_string()))
}

/// Token embedding front end of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    pub d_model: usize,
    pub layout: EncodingLayout,
}

impl Tokenizer {
    pub fn new(d_model: usize) -> Result<Self, TokenizeError> {
        Ok(Tokenizer { d_model, layout: EncodingLayout::for_width(d_model)? })
    }

    /// Registers projections, the DW table and the encoder channel
    /// encodings.
    pub fn init_params<T: Float, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<(), NumError> {
        let d = self.d_model;
        for g in ChannelGroup::PROJECTED {
            store.insert(proj_weight_name(g), trunc_normal(rng, &[g.width(), d], 0.02))?;
            store.insert(proj_bias_name(g), Tensor::zeros(&[d]))?;
        }
        store.insert(DW_EMBED, trunc_normal(rng, &[DW_VOCAB, d], 0.02))?;
        store.insert(ENC_CHANNEL_EMBED, trunc_normal(rng, &[N_ENCODED_GROUPS, self.layout.d_channel], 0.02))?;
        Ok(())
    }

    /// Embeds a batch. Returns the packed `[total_tokens, d]` matrix (samples
    /// consecutive, each in [`token_slots`] order) and the slots per sample.
    pub fn embed<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        samples: &[&PixelSample],
    ) -> Result<(Var, Vec<Vec<TokenSlot>>), TokenizeError> {
        let (tokens, slots) = self.project(g, store, samples)?;
        let flat: Vec<TokenSlot> = slots.iter().flatten().copied().collect();
        let enc = encoding_rows(g, store, ENC_CHANNEL_EMBED, &self.layout, &flat)?;
        Ok((g.add(tokens, enc), slots))
    }

    /// The per-group projection (or DW lookup) of every token, before
    /// encodings are added.
    pub fn project<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        samples: &[&PixelSample],
    ) -> Result<(Var, Vec<Vec<TokenSlot>>), TokenizeError> {
        let slots: Vec<Vec<TokenSlot>> = samples.iter().map(|s| token_slots(s)).collect();
        let total: usize = slots.iter().map(Vec::len).sum();
        let mut by_group: Vec<(Vec<T>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); ChannelGroup::ALL.len()];
        let mut pos = 0;
        for (si, (sample, ss)) in samples.iter().zip(&slots).enumerate() {
            for slot in ss {
                let vals = slot_values(sample, slot)?;
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(TokenizeError::NonFinite { sample: si, group: slot.group, timestep: slot.timestep });
                }
                let entry = &mut by_group[slot.group.index()];
                entry.0.extend(vals.into_iter().map(|v| T::from_f64(v as f64)));
                entry.1.push(pos);
                pos += 1;
            }
        }
        let mut parts = Vec::new();
        let mut targets = Vec::with_capacity(total);
        for grp in ChannelGroup::ALL {
            let (vals, positions) = std::mem::take(&mut by_group[grp.index()]);
            if positions.is_empty() {
                continue;
            }
            let out = if grp == ChannelGroup::Dw {
                let table = g.param(store, lookup(store, DW_EMBED)?);
                let ids: Vec<usize> = vals.iter().map(|&v| <T as Float>::to_f64(v) as usize).collect();
                g.gather_rows(table, &ids)
            } else {
                let x = g.constant(Tensor::from_parts(vec![positions.len(), grp.width()], vals));
                let w = g.param(store, lookup(store, &proj_weight_name(grp))?);
                let b = g.param(store, lookup(store, &proj_bias_name(grp))?);
                g.linear(x, w, Some(b))
            };
            parts.push(out);
            targets.extend(positions);
        }
        let stacked = g.concat_rows(&parts);
        Ok((g.scatter_rows(stacked, &targets, total), slots))
    }

    /// Single-sample convenience over [`Tokenizer::embed`].
    pub fn tokenize(&self, sample: &PixelSample, store: &ParamStore<f32>) -> Result<TokenSequence, TokenizeError> {
        let mut g = Graph::<f32>::new();
        let (x, slots) = self.embed(&mut g, store, &[sample])?;
        let value = g.value(x);
        let tokens = slots[0]
            .iter()
            .enumerate()
            .map(|(i, &slot)| {
                Ok(Token { slot, embedding: value.row(i).to_vec(), input: slot_values(sample, &slot)? })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(TokenSequence { tokens, d_e: self.d_model })
    }
}

/// `[channel; positional; month]` rows for the given slots. Loc rows are
/// zero; static rows have zero positional and month slots.
pub fn encoding_rows<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    channel_embed: &str,
    layout: &EncodingLayout,
    slots: &[TokenSlot],
) -> Result<Var, TokenizeError> {
    let n = slots.len();
    let table = g.param(store, lookup(store, channel_embed)?);
    let (mut ids, mut rows) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, s) in slots.iter().enumerate() {
        if let Some(e) = s.group.encoding_index() {
            ids.push(e);
            rows.push(i);
        }
    }
    let picked = g.gather_rows(table, &ids);
    let channel = g.scatter_rows(picked, &rows, n);
    let dt = layout.d_pos + layout.d_month;
    let mut time = vec![T::zero(); n * dt];
    let months: Vec<Vec<f32>> = (0..12).map(|m| month_encoding(m, layout.d_month)).collect::<Result<_, _>>()?;
    for (i, s) in slots.iter().enumerate() {
        if let (Some(t), Some(m)) = (s.timestep, s.month) {
            let row = &mut time[i * dt..(i + 1) * dt];
            for (dst, v) in row.iter_mut().zip(positional_encoding(t, layout.d_pos).into_iter().chain(months[m as usize % 12].iter().copied())) {
                *dst = T::from_f64(v as f64);
            }
        }
    }
    let time = g.constant(Tensor::from_parts(vec![n, dt], time));
    Ok(g.concat_cols(&[channel, time]))
}
