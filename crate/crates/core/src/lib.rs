//! Auto-regressive soft Q-learning for continuous control.
//!
//! Continuous actions are discretized on a coarse-to-fine lattice
//! ([`codec`]); a shared-backbone advantage network predicts normalized
//! per-dimension soft advantages auto-regressively ([`model`]); twin soft
//! value networks with EMA targets drive TD learning combined with a margin
//! behavior-cloning loss ([`losses`]). Training mixes an offline
//! demonstration dataset with an online replay buffer ([`replay`]) on small
//! native environments ([`envs`]), and exact tabular references ([`oracle`])
//! back the equivalence and case-study tests. [`trainer`] wires it all into
//! the experiment CLI.

pub mod autodiff;
pub mod case_studies;
pub mod codec;
pub mod config;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod replay;
pub mod trainer;
pub mod envs;
pub mod error;

pub use error::{ArsqError, Result};
