use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::dataio::{NormStats, PixelSample};
use crate::error::FormatError;
use crate::numcore::tensor_file::TensorFile;
use crate::numcore::{Graph, ParamStore, SeedTree, Tensor};

pub const FORMAT_NAME: &str = "pixmae-checkpoint";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";
const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

/// JSON header stored in the checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: ModelConfig,
    pub norm_channels: Vec<String>,
    /// Output classes of a fine-tuned classification head, if any.
    pub head_classes: Option<usize>,
}

/// Model weights plus the normalization they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub norm: NormStats,
    pub head_classes: Option<usize>,
}

/// Rows embedded per forward pass.
pub const EMBED_CHUNK: usize = 256;

impl Checkpoint {
    pub fn init(config: ModelConfig, norm: NormStats, seed: u64) -> Result<Self, ModelError> {
        let model = Model::new(config)?;
        let params = model.init_params(&mut SeedTree::new(seed).named("init").rng())?;
        Ok(Checkpoint { config, params, norm, head_classes: None })
    }

    pub fn model(&self) -> Result<Model, ModelError> {
        Model::new(self.config)
    }

    /// Adds a zero-initialised linear classification head on the pooled
    /// embedding.
    pub fn add_head(&mut self, classes: usize) -> Result<(), ModelError> {
        if self.head_classes.is_some() {
            return Err(ModelError::Checkpoint("checkpoint already has a head".into()));
        }
        if classes < 2 {
            return Err(ModelError::Config(format!("head needs at least 2 classes, got {classes}")));
        }
        self.params.insert(HEAD_WEIGHT, Tensor::zeros(&[self.config.d_e, classes]))?;
        self.params.insert(HEAD_BIAS, Tensor::zeros(&[classes]))?;
        self.head_classes = Some(classes);
        Ok(())
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Tokenizer plus encoder parameters.
    pub fn encoder_params(&self) -> usize {
        self.params.count_prefix("tok.") + self.params.count_prefix("enc.")
    }

    pub fn decoder_params(&self) -> usize {
        self.params.count_prefix("dec.")
    }

    pub fn to_file(&self) -> TensorFile {
        let meta = CheckpointMeta {
            format: FORMAT_NAME.into(),
            config: self.config,
            norm_channels: self.norm.channels.clone(),
            head_classes: self.head_classes,
        };
        let mut tensors: Vec<(String, Tensor<f32>)> =
            self.params.iter().map(|(_, name, t)| (name.to_string(), t.clone())).collect();
        let n = self.norm.mean.len();
        tensors.push((NORM_MEAN.into(), Tensor::from_parts(vec![n], self.norm.mean.clone())));
        tensors.push((NORM_STD.into(), Tensor::from_parts(vec![n], self.norm.std.clone())));
        TensorFile { meta: serde_json::to_string(&meta).expect("meta serializes"), tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_file().to_bytes()
    }

    pub fn from_file(file: TensorFile) -> Result<Self, ModelError> {
        let meta: CheckpointMeta = serde_json::from_str(&file.meta)
            .map_err(|e| FormatError::Corrupt(format!("checkpoint metadata: {e}")))?;
        if meta.format != FORMAT_NAME {
            return Err(ModelError::Checkpoint(format!("not a model checkpoint ({:?})", meta.format)));
        }
        let mut reference = Checkpoint::init(meta.config, NormStats::identity(), 0)?;
        if let Some(k) = meta.head_classes {
            reference.add_head(k)?;
        }
        let mut params = ParamStore::new();
        let (mut mean, mut std) = (None, None);
        for (name, t) in file.tensors {
            match name.as_str() {
                NORM_MEAN => mean = Some(t.into_data()),
                NORM_STD => std = Some(t.into_data()),
                _ => {
                    let expect = reference
                        .params
                        .get(&name)
                        .ok_or_else(|| ModelError::Checkpoint(format!("unexpected tensor {name:?}")))?;
                    if expect.shape() != t.shape() {
                        return Err(ModelError::Checkpoint(format!(
                            "{name}: shape {:?}, config implies {:?}",
                            t.shape(),
                            expect.shape()
                        )));
                    }
                    params.insert(name, t)?;
                }
            }
        }
        if params.len() != reference.params.len() {
            let missing = reference.params.iter().find(|(_, n, _)| params.id(n).is_none()).map(|(_, n, _)| n.to_string());
            return Err(ModelError::Checkpoint(format!("missing tensor {}", missing.unwrap_or_default())));
        }
        let (Some(mean), Some(std)) = (mean, std) else {
            return Err(ModelError::Checkpoint("normalization statistics missing".into()));
        };
        let norm = NormStats { channels: meta.norm_channels, mean, std };
        norm.check_layout()?;
        Ok(Checkpoint { config: meta.config, params, norm, head_classes: meta.head_classes })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        Self::from_file(TensorFile::from_bytes(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }

    /// Pooled embeddings of raw samples (normalized with the checkpoint's
    /// stats first).
    pub fn embed(&self, samples: &[PixelSample]) -> Result<Vec<Vec<f32>>, ModelError> {
        let normed = samples.iter().map(|s| self.norm.normalize(s)).collect::<Result<Vec<_>, _>>()?;
        self.embed_normalized(&normed.iter().collect::<Vec<_>>())
    }

    /// Pooled embeddings of already-normalized samples.
    pub fn embed_normalized(&self, samples: &[&PixelSample]) -> Result<Vec<Vec<f32>>, ModelError> {
        let model = self.model()?;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EMBED_CHUNK) {
            let mut g = Graph::<f32>::new();
            let enc = model.encode_batch(&mut g, &self.params, chunk, None)?;
            let pooled = g.value(enc.pooled);
            out.extend((0..chunk.len()).map(|i| pooled.row(i).to_vec()));
        }
        Ok(out)
    }
}
