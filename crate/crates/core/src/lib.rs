//! Continual entity alignment over growing knowledge-graph snapshot pairs.
//!
//! A relation-aware graph encoder is trained once on the first snapshot of
//! two KGs. At each later snapshot new entities are initialized from their
//! known neighbors, the cross-graph stage is finetuned on affected seed
//! links and replayed high-confidence predictions, and newly found pairs
//! are merged into an accumulating conflict-free alignment.

pub mod cli;
pub mod config;
pub mod continual;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod kg_store;
pub mod linalg;
pub mod matcher;
pub mod objectives;
pub mod par;
pub mod snapgen;
pub mod trainer;

pub use config::{MetricKind, Mode, RunConfig};
pub use error::{Error, Result};
