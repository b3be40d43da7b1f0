//! Tile-based 360° video adaptive bitrate streaming: media model, viewpoint
//! prediction, region partition, QoE, the streaming environment, multi-agent
//! PPO and classic ABR baselines.

pub mod attention;
pub mod baselines;
pub mod env;
pub mod error;
pub mod experiment;
pub mod madrl;
pub mod media;
pub mod params;
pub mod qoe;
pub mod region;
pub mod sphere;
pub mod verify;
mod text;

pub use error::{Error, Result};
