//! Desk-scale laboratory for transferable state-only rewards: expert
//! demonstrations from several task variants are embedded into one shared
//! latent space, a Wasserstein critic scores latent occupancy mismatch, and
//! the recovered reward is carried to unseen variants.

pub mod adapt;
pub mod buffer;
pub mod config;
pub mod critic;
pub mod diag;
pub mod env;
pub mod error;
pub mod io;
pub mod net;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
