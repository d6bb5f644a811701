//! Minimal 64-bit neural toolkit: parameter storage, dense and GRU layers,
//! row-wise/transposed ops for mixer blocks, a reverse-mode [`Tape`], Adam,
//! and a versioned checkpoint format.
//!
//! Every layer has two forward paths: a direct one over `&[f64]` used for
//! rollouts, and a recorded one over [`Tape`] used for training. Both call the
//! same kernels and produce bitwise-identical values.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod init;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use error::{NnError, Result};
pub use layers::{Activation, Dense, Gru, Mlp};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
