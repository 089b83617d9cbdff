//! Approximate nearest-neighbor search over an HNSW graph built on
//! density-aware 8-bit codes, with a coarse / asymmetric / exact
//! multi-stage search and dispatched vector kernels.
//!
//! The crate is organized bottom-up:
//!
//! - [`dataset`]: row-major float and code matrices, fvecs/ivecs/bvecs IO,
//!   and a synthetic clustered generator.
//! - [`density`]: kNN local densities and the heterogeneity measures derived
//!   from them.
//! - [`quantizer`]: percentile-range training, encode/decode, the distance
//!   scale, and the adapted graph parameters.
//! - [`kernels`]: squared-L2 kernels (u8 and f32) and query encoding, with a
//!   scalar reference and per-architecture vector tiers.
//! - [`hnsw`]: graph construction, layer search, and the on-disk index format.
//! - [`search`]: the query pipeline.
//! - [`bench`]: ground truth, recall, latency/QPS measurement and sweeps.

pub mod bench;
pub mod dataset;
pub mod density;
mod error;
pub mod hnsw;
pub mod kernels;
pub mod quantizer;
pub mod search;

pub use error::{Error, Result};
pub use dataset::{Dataset, IdMatrix, QuantizedSet};
pub use density::{DensityConfig, DensityProfile, WeightMode};
pub use hnsw::{BuildConfig, GraphIndex, IndexMode};
pub use kernels::{KernelSet, KernelTier};
pub use quantizer::{GraphParams, QuantizationParams};
pub use search::{Candidate, ResultSet, SearchConfig, SearchStats, Stage};
