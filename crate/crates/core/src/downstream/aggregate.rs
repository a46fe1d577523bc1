use super::DownstreamError;
use crate::dataio::PixelSample;
use crate::model::Checkpoint;

/// Pixels of one image; every pixel shares `T` and the presence layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<PixelSample>,
}

impl ImageSample {
    pub fn new(pixels: Vec<PixelSample>) -> Result<Self, DownstreamError> {
        let first = pixels.first().ok_or_else(|| DownstreamError::Invalid("image without pixels".into()))?;
        for (i, p) in pixels.iter().enumerate() {
            if p.timesteps() != first.timesteps() || p.presence != first.presence || p.tg_present != first.tg_present {
                return Err(DownstreamError::Invalid(format!("pixel {i} has a different timestep or presence layout")));
            }
        }
        Ok(ImageSample { pixels })
    }
}

/// Per-dimension mean then population standard deviation of the pixel
/// embeddings: `2 * d` values. Each dimension is reduced in sorted order,
/// so the result does not depend on pixel order.
pub fn aggregate_embeddings(embeddings: &[Vec<f32>]) -> Result<Vec<f32>, DownstreamError> {
    let d = embeddings.first().map(Vec::len).ok_or_else(|| DownstreamError::Invalid("no embeddings".into()))?;
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(DownstreamError::Invalid("embeddings differ in width".into()));
    }
    let n = embeddings.len() as f64;
    let mut out = vec![0f32; 2 * d];
    let mut column = Vec::with_capacity(embeddings.len());
    for j in 0..d {
        column.clear();
        column.extend(embeddings.iter().map(|e| e[j] as f64));
        column.sort_by(f64::total_cmp);
        let mean = column.iter().sum::<f64>() / n;
        let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out[j] = mean as f32;
        out[d + j] = var.sqrt() as f32;
    }
    Ok(out)
}

/// Image descriptor from raw pixels (normalized with the checkpoint's
/// stats).
pub fn aggregate_image(ckpt: &Checkpoint, image: &ImageSample) -> Result<Vec<f32>, DownstreamError> {
    let emb = ckpt.embed(&image.pixels)?;
    aggregate_embeddings(&emb)
}
