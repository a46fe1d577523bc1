use crate::dataio::DataError;
use crate::downstream::DownstreamError;
use crate::masking::MaskError;
use crate::model::ModelError;
use crate::numcore::NumError;
use crate::pretrain::TrainError;
use crate::tokenizer::TokenizeError;

/// Errors reading or writing the binary file formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {:?}, found {:?}", String::from_utf8_lossy(expected), String::from_utf8_lossy(found))]
    BadMagic { expected: [u8; 8], found: Vec<u8> },
    #[error("unsupported format version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("file truncated inside record {record}")]
    Truncated { record: u64 },
    #[error("file truncated inside the {0}")]
    TruncatedHeader(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

impl FormatError {
    /// Stable numeric code, shared with the C API.
    pub fn code(&self) -> i32 {
        match self {
            FormatError::Io(_) => 10,
            FormatError::BadMagic { .. } => 11,
            FormatError::UnsupportedVersion { .. } => 12,
            FormatError::Truncated { .. } => 13,
            FormatError::TruncatedHeader(_) => 14,
            FormatError::Corrupt(_) => 15,
        }
    }
}

/// Crate-wide error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Downstream(#[from] DownstreamError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Numeric code for the C API: 1 usage, 10..19 file format, 20.. data,
    /// 30.. numerical, 40.. model/contract.
    pub fn code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Format(f) => f.code(),
            Error::Io(_) => 10,
            Error::Csv(_) | Error::Json(_) => 16,
            Error::Data(DataError::Format(f)) | Error::Model(ModelError::Format(f)) => f.code(),
            Error::Data(_) => 20,
            Error::Tokenize(_) => 21,
            Error::Mask(_) => 22,
            Error::Train(TrainError::NonFiniteLoss { .. }) => 30,
            Error::Num(_) | Error::Train(TrainError::Num(_)) => 31,
            Error::Downstream(DownstreamError::Numerical(_)) => 32,
            Error::Downstream(_) => 23,
            Error::Train(TrainError::Config(_)) => 1,
            Error::Train(_) => 33,
            Error::Model(_) => 40,
        }
    }

    /// Process exit status for the CLI: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Train(TrainError::Config(_) | TrainError::Mask(_)) => 1,
            Error::Train(TrainError::NonFiniteLoss { .. } | TrainError::Num(_))
            | Error::Num(_)
            | Error::Downstream(DownstreamError::Numerical(_)) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
