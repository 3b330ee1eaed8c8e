//! Learning slot-filling dialog policies as logic programs.
//!
//! Candidate clauses come from rule templates, are weighted per slot, and
//! are trained end to end through a differentiable forward-chaining engine.
//! The learned weights are then read back as a crisp program that can be
//! run on new domains without retraining.

pub mod dialog;
pub mod error;
pub mod extract;
pub mod infer;
pub mod library;
pub mod logic;
pub mod metrics;
pub mod pipeline;
pub mod presets;
pub mod simulator;
pub mod template;

pub use error::{Error, Result};
