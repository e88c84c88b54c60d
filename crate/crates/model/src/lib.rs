//! SUBARU sub-networks, losses, training loop and streaming emulator.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod stream;
pub mod trainer;

pub use config::{DataConfig, NetworkConfig, Order, TrainConfig, Variant};
pub use error::{Error, Result};
pub use networks::{param_count, Apen, Output, Plans, Sen, StageTimes, Subaru, Ten, Upsampler};
pub use losses::{evaluate_pair, LossBreakdown, LossWeights, Objective, PeriodMode};
