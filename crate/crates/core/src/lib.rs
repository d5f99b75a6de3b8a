//! Koopman autoencoders with invertible coupling-layer encoders.
//!
//! The crate covers four model variants behind one configuration surface:
//! a plain Koopman autoencoder (KAE), an invertible one (IKAE), an invertible
//! one with zero padding (IKAE-zp), and the augmented invertible model
//! (AIKAE) whose latent state is `(φ(x); χ(x))`. Forecasts are obtained by
//! powers of a learned transition matrix in latent space and decoded through
//! the exact inverse of `φ`.

pub mod assimilation;
pub mod data;
pub mod error;
pub mod flows;
pub mod models;
pub mod nn;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
