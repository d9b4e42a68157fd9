//! A desk-scale neural game engine.
//!
//! A deterministic toy shooter ([`env`]) produces gameplay, a PPO agent
//! ([`agent`]) plays it to build a training corpus, a convolutional codec
//! ([`autoencoder`]) compresses frames to 4x8x8 latents and an
//! action-conditioned latent diffusion model ([`diffusion`]) learns to predict
//! the next frame. [`simulation`] runs that model autoregressively and
//! [`eval`] measures it.

pub mod agent;
pub mod autoencoder;
pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
