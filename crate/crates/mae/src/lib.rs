//! Musculoskeletal autoencoder toolkit: a masked autoencoder over joint
//! angles, muscle tensions, and muscle lengths, trained first from a
//! geometric model and then online from a (synthetic) tendon-driven plant.
//! The same network drives joint-angle estimation with anomaly scoring,
//! posture control through latent-space descent, and a quasi-static
//! simulator.

pub mod config;
pub mod control;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod model;
pub mod net;
pub mod simulation;
pub mod training;

pub use error::{Error, Result};
