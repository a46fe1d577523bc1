//! Pixel-timeseries data model, file formats, normalization and the
//! synthetic world.

pub mod csvio;
pub mod groups;
pub mod norm;
pub mod pts;
pub mod sample;
pub mod synth;

pub use csvio::{read_csv, write_csv};
pub use groups::*;
pub use norm::{denormalize, normalize, NormStats, NORM_CHANNELS, STD_FLOOR};
pub use pts::{read_pts, write_pts};
pub use sample::{compute_ndvi, location_to_cartesian, monthly_months, Dataset, PixelSample};
pub use synth::{generate_synthetic, ClassSignatures, SyntheticWorldConfig};

use crate::error::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("channel layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Format(FormatError::Io(e))
    }
}
