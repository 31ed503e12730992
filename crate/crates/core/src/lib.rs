//! Few-shot video classification with text-modulated prototypes and
//! temporal alignment metrics.
//!
//! Pipeline: a per-frame visual encoder and a frozen text encoder share a
//! `C`-dim space; support prototypes are fused with their class text through
//! a temporal Transformer, queries go through the same Transformer, and an
//! alignment metric (OTAM by default) scores query/prototype pairs.

pub mod data;
pub mod encoders;
pub mod engine;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod modulation;
pub mod nn;
pub mod objectives;
pub mod optim;

pub use error::{FsarError, Result};
