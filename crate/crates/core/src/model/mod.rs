//! Encoder-decoder transformer over pixel tokens.
//!
//! The encoder sees the visible tokens of each sample, runs pre-norm
//! transformer blocks with full attention inside each sample, applies a
//! final layer norm and mean-pools the outputs into the sample embedding.
//! The decoder projects encoder outputs to its own width, fills masked
//! slots with a shared mask token, re-adds the slot encodings and
//! reconstructs each masked token with a per-group linear head (9 logits for
//! DW).

pub mod checkpoint;
pub mod flops;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use flops::{count_flops, FlopInput, FlopMode, FlopReport};

use crate::dataio::{ChannelGroup, PixelSample, DW_CLASSES, N_ENCODED_GROUPS};
use crate::numcore::{trunc_normal, Float, Graph, NumError, ParamId, ParamStore, Segments, Tensor, Var};
use crate::tokenizer::{encoding_rows, EncodingLayout, TokenSequence, TokenSlot, TokenizeError, Tokenizer, DW_VOCAB};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Format(#[from] crate::error::FormatError),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
}

/// Architecture hyper-parameters. The decoder has its own depth and width;
/// by default they equal the encoder's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth: usize,
    pub d_e: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub decoder_depth: usize,
    pub decoder_d: usize,
    pub decoder_heads: usize,
    pub dw_vocab: usize,
    pub dw_mask_id: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 2,
            d_e: 128,
            n_heads: 8,
            mlp_ratio: 4,
            decoder_depth: 2,
            decoder_d: 128,
            decoder_heads: 8,
            dw_vocab: DW_CLASSES,
            dw_mask_id: DW_CLASSES,
        }
    }
}

impl ModelConfig {
    /// Encoder of the given depth and width, default decoder.
    pub fn scaled(depth: usize, width: usize) -> Self {
        ModelConfig { depth, d_e: width, ..Default::default() }
    }

    /// Encoder and decoder both of the given shape.
    pub fn symmetric(depth: usize, width: usize, heads: usize) -> Self {
        ModelConfig {
            depth,
            d_e: width,
            n_heads: heads,
            decoder_depth: depth,
            decoder_d: width,
            decoder_heads: heads,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.depth == 0 || self.decoder_depth == 0 || self.mlp_ratio == 0 {
            return bad("depths and mlp ratio must be positive".into());
        }
        if self.n_heads == 0 || self.d_e % self.n_heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.d_e, self.n_heads));
        }
        if self.decoder_heads == 0 || self.decoder_d % self.decoder_heads != 0 {
            return bad(format!("decoder width {} not divisible by {} heads", self.decoder_d, self.decoder_heads));
        }
        if self.dw_vocab != DW_CLASSES || self.dw_mask_id != DW_CLASSES {
            return bad("the DW vocabulary is fixed at 9 classes plus mask id 9".into());
        }
        EncodingLayout::for_width(self.d_e)?;
        EncodingLayout::for_width(self.decoder_d)?;
        Ok(())
    }
}

/// Stateless view of the architecture; weights live in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub decoder_layout: EncodingLayout,
}

/// Encoder pass over a batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[visible tokens, d_e]`, final-normed, samples consecutive.
    pub tokens: Var,
    /// `[samples, d_e]` mean-pooled embeddings.
    pub pooled: Var,
    pub segments: Arc<Segments>,
    pub slots: Vec<Vec<TokenSlot>>,
    /// Visible token indices (into `slots[s]`) of each sample.
    pub visible: Vec<Vec<usize>>,
}

/// One reconstruction head's predictions.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub group: ChannelGroup,
    /// `[tokens, width]` values, or `[tokens, 9]` logits for DW.
    pub values: Var,
    /// `(sample, token index)` of every row.
    pub tokens: Vec<(usize, usize)>,
}

pub const DEC_EMBED: &str = "dec.embed";
pub const DEC_MASK_TOKEN: &str = "dec.mask_token";
pub const DEC_CHANNEL_EMBED: &str = "dec.channel_embed";

pub fn head_name(g: ChannelGroup) -> String {
    format!("dec.head.{}", g.name())
}

fn pid<T: Float>(store: &ParamStore<T>, name: &str) -> Result<ParamId, ModelError> {
    store.id(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))
}

fn bind<T: Float>(g: &mut Graph<T>, store: &ParamStore<T>, name: &str) -> Result<Var, ModelError> {
    Ok(g.param(store, pid(store, name)?))
}

fn linear_params<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    din: usize,
    dout: usize,
) -> Result<(), NumError> {
    store.insert(format!("{name}.weight"), trunc_normal(rng, &[din, dout], 0.02))?;
    store.insert(format!("{name}.bias"), Tensor::zeros(&[dout]))?;
    Ok(())
}

fn norm_params<T: Float>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<(), NumError> {
    store.insert(format!("{name}.gamma"), Tensor::full(&[d], T::one()))?;
    store.insert(format!("{name}.beta"), Tensor::zeros(&[d]))?;
    Ok(())
}

fn block_params<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    d: usize,
    mlp_ratio: usize,
) -> Result<(), NumError> {
    norm_params(store, &format!("{prefix}.ln1"), d)?;
    linear_params(store, rng, &format!("{prefix}.attn.qkv"), d, 3 * d)?;
    linear_params(store, rng, &format!("{prefix}.attn.proj"), d, d)?;
    norm_params(store, &format!("{prefix}.ln2"), d)?;
    linear_params(store, rng, &format!("{prefix}.mlp.fc1"), d, mlp_ratio * d)?;
    linear_params(store, rng, &format!("{prefix}.mlp.fc2"), mlp_ratio * d, d)?;
    Ok(())
}

fn apply_linear<T: Float>(g: &mut Graph<T>, store: &ParamStore<T>, name: &str, x: Var) -> Result<Var, ModelError> {
    let w = bind(g, store, &format!("{name}.weight"))?;
    let b = bind(g, store, &format!("{name}.bias"))?;
    Ok(g.linear(x, w, Some(b)))
}

fn apply_norm<T: Float>(g: &mut Graph<T>, store: &ParamStore<T>, name: &str, x: Var) -> Result<Var, ModelError> {
    let gamma = bind(g, store, &format!("{name}.gamma"))?;
    let beta = bind(g, store, &format!("{name}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta))
}

fn apply_block<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    heads: usize,
    segs: &Arc<Segments>,
) -> Result<Var, ModelError> {
    let h = apply_norm(g, store, &format!("{prefix}.ln1"), x)?;
    let qkv = apply_linear(g, store, &format!("{prefix}.attn.qkv"), h)?;
    let a = g.attention(qkv, heads, segs.clone());
    let a = apply_linear(g, store, &format!("{prefix}.attn.proj"), a)?;
    let x = g.add(x, a);
    let h = apply_norm(g, store, &format!("{prefix}.ln2"), x)?;
    let h = apply_linear(g, store, &format!("{prefix}.mlp.fc1"), h)?;
    let h = g.gelu(h);
    let h = apply_linear(g, store, &format!("{prefix}.mlp.fc2"), h)?;
    Ok(g.add(x, h))
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Model {
            config,
            tokenizer: Tokenizer::new(config.d_e)?,
            decoder_layout: EncodingLayout::for_width(config.decoder_d)?,
        })
    }

    /// Fresh parameters: truncated-normal(0.02) weights and embeddings, zero
    /// biases, unit norm scales.
    pub fn init_params<T: Float, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore<T>, ModelError> {
        let c = &self.config;
        let mut store = ParamStore::new();
        self.tokenizer.init_params(&mut store, rng)?;
        for i in 0..c.depth {
            block_params(&mut store, rng, &format!("enc.block{i}"), c.d_e, c.mlp_ratio)?;
        }
        norm_params(&mut store, "enc.norm", c.d_e)?;
        linear_params(&mut store, rng, DEC_EMBED, c.d_e, c.decoder_d)?;
        store.insert(DEC_MASK_TOKEN, trunc_normal(rng, &[1, c.decoder_d], 0.02))?;
        store.insert(DEC_CHANNEL_EMBED, trunc_normal(rng, &[N_ENCODED_GROUPS, self.decoder_layout.d_channel], 0.02))?;
        for i in 0..c.decoder_depth {
            block_params(&mut store, rng, &format!("dec.block{i}"), c.decoder_d, c.mlp_ratio)?;
        }
        norm_params(&mut store, "dec.norm", c.decoder_d)?;
        for grp in ChannelGroup::RECONSTRUCTED {
            linear_params(&mut store, rng, &head_name(grp), c.decoder_d, grp.width())?;
        }
        linear_params(&mut store, rng, &head_name(ChannelGroup::Dw), c.decoder_d, DW_CLASSES)?;
        debug_assert_eq!(store.get(crate::tokenizer::DW_EMBED).map(|t| t.rows()), Some(DW_VOCAB));
        Ok(store)
    }

    /// Encoder blocks and final norm over packed token rows.
    pub fn encoder_stack<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        mut x: Var,
        segs: &Arc<Segments>,
    ) -> Result<Var, ModelError> {
        for i in 0..self.config.depth {
            x = apply_block(g, store, &format!("enc.block{i}"), x, self.config.n_heads, segs)?;
        }
        apply_norm(g, store, "enc.norm", x)
    }

    /// Tokenizes and encodes a batch. With `visible`, only the listed token
    /// indices of each sample enter the encoder.
    pub fn encode_batch<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        samples: &[&PixelSample],
        visible: Option<&[Vec<usize>]>,
    ) -> Result<Encoded, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let (all, slots) = self.tokenizer.embed(g, store, samples)?;
        let visible: Vec<Vec<usize>> = match visible {
            Some(v) => {
                if v.len() != samples.len() {
                    return Err(ModelError::Input(format!("{} visibility lists for {} samples", v.len(), samples.len())));
                }
                for (s, vis) in v.iter().enumerate() {
                    if vis.is_empty() {
                        return Err(ModelError::EmptySequence);
                    }
                    if let Some(&i) = vis.iter().find(|&&i| i >= slots[s].len()) {
                        return Err(ModelError::Input(format!("token {i} out of {} in sample {s}", slots[s].len())));
                    }
                }
                v.to_vec()
            }
            None => slots.iter().map(|s| (0..s.len()).collect()).collect(),
        };
        let x = if visible.iter().zip(&slots).all(|(v, s)| v.len() == s.len()) {
            all
        } else {
            let mut rows = Vec::new();
            let mut off = 0;
            for (vis, ss) in visible.iter().zip(&slots) {
                rows.extend(vis.iter().map(|&i| off + i));
                off += ss.len();
            }
            g.gather_rows(all, &rows)
        };
        let segs = Arc::new(Segments::from_lengths(&visible.iter().map(Vec::len).collect::<Vec<_>>()));
        let tokens = self.encoder_stack(g, store, x, &segs)?;
        let pooled = g.segment_mean(tokens, segs.clone());
        Ok(Encoded { tokens, pooled, segments: segs, slots, visible })
    }

    /// Encodes already-embedded tokens of one sample.
    pub fn encode_sequence<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        seq: &TokenSequence,
    ) -> Result<(Var, Var), ModelError> {
        if seq.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if seq.d_e != self.config.d_e {
            return Err(ModelError::Input(format!("tokens of width {} for a width-{} model", seq.d_e, self.config.d_e)));
        }
        let data = seq.tokens.iter().flat_map(|t| t.embedding.iter().map(|&v| T::from_f64(v as f64))).collect();
        let x = g.constant(Tensor::from_parts(vec![seq.len(), seq.d_e], data));
        let segs = Arc::new(Segments::single(seq.len()));
        let out = self.encoder_stack(g, store, x, &segs)?;
        let pooled = g.segment_mean(out, segs);
        Ok((out, pooled))
    }

    /// Reconstructs the `masked` tokens of each sample from an encoder pass.
    /// Returns one output per head that has at least one masked token.
    pub fn decode_batch<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &Encoded,
        masked: &[Vec<usize>],
    ) -> Result<Vec<HeadOutput>, ModelError> {
        if masked.len() != enc.slots.len() {
            return Err(ModelError::Input(format!("{} mask lists for {} samples", masked.len(), enc.slots.len())));
        }
        if masked.iter().all(Vec::is_empty) {
            return Ok(Vec::new());
        }
        let c = &self.config;
        let total: usize = enc.slots.iter().map(Vec::len).sum();
        let (mut vis_rows, mut mask_rows) = (Vec::new(), Vec::new());
        let mut off = 0;
        for ((ss, vis), m) in enc.slots.iter().zip(&enc.visible).zip(masked) {
            vis_rows.extend(vis.iter().map(|&i| off + i));
            for &i in m {
                if i >= ss.len() {
                    return Err(ModelError::Input(format!("masked token {i} out of {}", ss.len())));
                }
                if !ss[i].maskable() {
                    return Err(ModelError::Input(format!("token {i} ({}) cannot be masked", ss[i].group)));
                }
                mask_rows.push(off + i);
            }
            off += ss.len();
        }
        let x = apply_linear(g, store, DEC_EMBED, enc.tokens)?;
        let x = g.scatter_rows(x, &vis_rows, total);
        let mask_token = bind(g, store, DEC_MASK_TOKEN)?;
        let filled = g.gather_rows(mask_token, &vec![0; mask_rows.len()]);
        let filled = g.scatter_rows(filled, &mask_rows, total);
        let x = g.add(x, filled);
        let flat: Vec<TokenSlot> = enc.slots.iter().flatten().copied().collect();
        let encs = encoding_rows(g, store, DEC_CHANNEL_EMBED, &self.decoder_layout, &flat)?;
        let mut x = g.add(x, encs);
        let segs = Arc::new(Segments::from_lengths(&enc.slots.iter().map(Vec::len).collect::<Vec<_>>()));
        for i in 0..c.decoder_depth {
            x = apply_block(g, store, &format!("dec.block{i}"), x, c.decoder_heads, &segs)?;
        }
        let x = apply_norm(g, store, "dec.norm", x)?;
        let mut outputs = Vec::new();
        for grp in ChannelGroup::ALL {
            if grp == ChannelGroup::Loc {
                continue;
            }
            let mut rows = Vec::new();
            let mut tokens = Vec::new();
            let mut off = 0;
            for (s, (ss, m)) in enc.slots.iter().zip(masked).enumerate() {
                for &i in m {
                    if ss[i].group == grp {
                        rows.push(off + i);
                        tokens.push((s, i));
                    }
                }
                off += ss.len();
            }
            if rows.is_empty() {
                continue;
            }
            let h = g.gather_rows(x, &rows);
            let values = apply_linear(g, store, &head_name(grp), h)?;
            outputs.push(HeadOutput { group: grp, values, tokens });
        }
        Ok(outputs)
    }
}
