//! Temporal sentence grounding with anchor-pair moment queries.
//!
//! The crate covers the whole pipeline: span geometry and anchor
//! initialization ([`span`]), datasets and batching ([`data`]), the model
//! ([`model`]), matching and training losses ([`objectives`]), ranking and
//! metrics ([`eval`]), and the training/evaluation harness ([`harness`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod io;
pub mod model;
pub mod objectives;
pub mod span;

pub use error::{Error, Result};
pub use span::{MomentSpan, ScoredSpan};
