//! Chain-mapped tensor-network simulation of open quantum systems, with
//! transfer tensors learned from short trajectories for long-time
//! propagation.

pub mod config;
pub mod error;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod quadrature;
pub mod scaling;
pub mod spectral;
pub mod tns;
pub mod trajectory;
pub mod ttm;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use models::{DimerParams, Model, Spectrum, SpinBosonParams};
pub use scaling::{BenchRecord, ScalingFit};
pub use spectral::{ChainCoefficients, ChainParams, SpectralDensity};
pub use tns::{ChainState, EvolutionConfig, TruncationReport};
pub use trajectory::{RunSummary, Trajectory};
