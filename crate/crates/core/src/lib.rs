//! Efficient attention-based trajectory prediction with map-based goal
//! features.
//!
//! The crate is organized bottom-up:
//!
//! - [`scene`]: scenes, tracks, feasible-area grids, file formats and a
//!   synthetic scene generator.
//! - [`features`]: heading/speed estimation with a forgetting factor, motion
//!   range and goal-point sampling over the feasible area.
//! - [`tensor`]: dense tensors, reverse-mode autodiff, Adam, plateau LR
//!   scheduling and checkpoints.
//! - [`attention`]: multi-head attention, set-attention blocks and the LSTM
//!   cell.
//! - [`model`]: the LSTM-MHSA and Set Transformer predictors plus parameter
//!   and FLOP accounting.
//! - [`loss`]: NLL, ADE, FDE and best-of-k metrics.
//! - [`train`]: augmentation and the training loop.
//! - [`eval`] and [`plot`]: prediction files, metric reports and SVG output.

pub mod attention;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod loss;
pub mod model;
pub mod plot;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
