//! Sparse Tucker decomposition with a Kruskal-factored core.
//!
//! The model approximates an observed sparse tensor as
//! `X ≈ G ×₁ A⁽¹⁾ ⋯ ×_N A⁽ᴺ⁾` where the core `G` is itself a sum of
//! `R_core` rank-one terms built from the columns of `B⁽ⁿ⁾`. Because the
//! core is Kruskal-structured, every Kronecker contraction needed by SGD
//! collapses into products of per-mode dot products, so the cost of one
//! sample update is linear in the ranks instead of exponential in the order.
//!
//! Module map:
//! - [`sparse_tensor`]: COO tensors, file IO, synthetic data and splits
//! - [`model`]: factor matrices, Kruskal core factors, checkpoints
//! - [`kernels`]: per-sample contraction primitives
//! - [`factor_sgd`] / [`core_sgd`]: the two alternating update phases
//! - [`partition`]: conflict-free block partition and round schedule
//! - [`trainer`]: the epoch loop, learning-rate schedule and metrics
//! - [`oracle`]: dense brute-force reference used by the tests
//! - [`cli`]: command-line front end

pub mod cli;
pub mod core_sgd;
pub mod error;
pub mod factor_sgd;
pub mod kernels;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod rng;
pub mod sparse_tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ModelConfig, TuckerModel};
pub use sparse_tensor::{DatasetSplit, SparseTensorCoo};
pub use trainer::{MetricsRow, TrainConfig};
