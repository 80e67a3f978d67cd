//! Energy-based generative modeling of unordered point sets.
//!
//! A permutation-invariant network assigns each point cloud a scalar
//! negative energy `f(X)`. The model density is `p(X) ∝ exp(f(X))`; it is
//! fit by alternating Langevin sampling from the current model with a
//! parameter update on the observed-minus-synthesized gradient difference.
//! The fixed-length, noise-initialized sampler then doubles as a generator
//! for synthesis, reconstruction and latent interpolation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cloud;
pub mod data;
pub mod energy;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod net;
pub mod sampler;
pub mod tensor;
pub mod trainer;

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use cloud::PointCloud;
pub use energy::{Coords, EnergyFunction, GaussianEnergy};
pub use error::{Error, Result};
pub use net::{BnMode, EnergyNet, NetConfig, ParamSet, Pool};
pub use sampler::{InitScheme, NoiseStream, SamplerConfig};
pub use trainer::{TrainConfig, TrainLog};
