//! Cyberattack detection for SCADA time series with a variational autoencoder.
//!
//! The pipeline: load hourly sensor tables ([`dataio`]), cut 24-hour windows,
//! train a convolutional VAE by maximising the variational lower bound
//! ([`vae`], [`training`]), score each window by its log reconstruction
//! probability ([`detector`]), and evaluate alarms against labels
//! ([`evaluation`]). [`rulecheck`] is a physics-rule baseline and
//! [`synthgen`] produces labelled attack scenarios from a small tank/pump
//! simulator.

pub mod dataio;
pub mod detector;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod rulecheck;
pub mod synthgen;
pub mod training;
pub mod vae;

pub use error::{Error, ErrorKind, Result};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
