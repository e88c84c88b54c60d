//! Signal-processing foundation: audio I/O and capture degradation, STFT and
//! phase helpers, objective metrics, the ADC power table and a procedural
//! speech corpus.

pub mod audio;
pub mod error;
pub mod filter;
pub mod manifest;
pub mod metrics;
pub mod power;
pub mod spectral;
pub mod synth;

pub use audio::{AudioClip, DegradationSpec};
pub use error::{Error, Result};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use spectral::{Spectrogram, StftConfig, StftPlan};
