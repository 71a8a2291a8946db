//! Pyramidal hidden Markov model for multivariate time series.
//!
//! A stack of neural HMM layers: layer 1 is a GRU-parameterized latent chain
//! over the observations, and every layer above it updates once per `k`
//! updates of the layer below, pooling that window of lower-level latents
//! through attention. Training maximizes a sequential-VAE evidence lower
//! bound with reparameterized Gaussian latents.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod hmm;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;
