//! Social-navigation simulator, recurrent actor-critic policy and the
//! two-stage privileged-latent training pipeline.

pub mod adapter;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod humanoid;
pub mod pipeline;
pub mod policy;
pub mod ppo;
pub mod replay;
pub mod scenegen;
pub mod sensors;
pub mod sim;
pub mod toy;

pub use error::{Result, SimError};
