use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("audio file contains no samples: {0}")]
    EmptyAudio(PathBuf),

    #[error("unsupported bit depth {0} (expected 8, 10, 12 or 16)")]
    UnsupportedBitDepth(u32),

    #[error("invalid sample rate {0}")]
    InvalidRate(i64),

    #[error("invalid cutoff {cutoff} Hz for sample rate {rate} Hz")]
    InvalidCutoff { cutoff: f64, rate: u32 },

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("signal is silent; {0} is undefined")]
    Silent(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("spectrogram dimensions inconsistent: {0}")]
    Dimensions(String),

    #[error("({rate} Hz, {bits}-bit) is not on the measured power grid")]
    OffGrid { rate: u32, bits: u32 },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
