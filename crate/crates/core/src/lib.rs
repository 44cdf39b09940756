//! Behavior-aggregated hierarchical encoding (BAHE) for click-through-rate
//! prediction over long textual user behaviors.
//!
//! The pipeline splits a small transformer into frozen low layers and
//! trainable high layers:
//!
//! * [`atomic`] encodes every *distinct* behavior once with the low layers and
//!   stores the pooled vector in a [`atomic::BehaviorEmbeddingTable`].
//! * [`aggregator`] stacks table vectors into behavior-level sequences, runs
//!   the high layers per domain sequence and reduces each to a compact vector.
//! * [`pipeline`] trains the CTR head, the token-level baselines used for the
//!   ablation, and the downstream transfer model.
//! * [`cost`] counts what every stage actually executed and compares it with
//!   the closed-form complexity of the baseline and hierarchical encoders.

pub mod aggregator;
pub mod atomic;
pub mod config;
pub mod cost;
pub mod data;
pub mod nn;
pub mod pipeline;
pub mod rng;

mod error;

pub use error::{Error, Result};
