//! Joint generator/encoder adversarial training on data-latent couples.
//!
//! A generator `G` maps prior latents to data, an encoder `E` maps data to
//! latents, and a single discriminator `D` judges couples through two
//! embedding networks, `F` on the data side and an optional `H` on the latent
//! side. Training alternates between the discriminator group and the
//! encoder/generator group, with a latent reconstruction term tying `E` to
//! `G`.
//!
//! ```
//! use igan::data::{sample_mixture, GaussianMixtureSpec};
//! use igan::networks::{build_model, ArchConfig};
//! use igan::trainer::{train, TrainConfig};
//!
//! let ring = GaussianMixtureSpec::ring(8, 2.0, 0.05);
//! let data = sample_mixture(&ring, 512, 0)?;
//! let arch = ArchConfig { base_channels: 16, secondary_latent_dim: 16, ..ArchConfig::toy(2, 2) };
//! let model = build_model(&arch, 1)?;
//! let cfg = TrainConfig { steps: 20, batch_size: 32, indicator_interval: 10, ..Default::default() };
//! let out = train(model, &data, &cfg)?;
//! assert_eq!(out.metrics.len(), 2);
//! # Ok::<(), igan::Error>(())
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod latent;
pub mod loss;
pub mod networks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
