//! Context-aware textual attribute recognition.
//!
//! The crate is organised as a pipeline:
//!
//! * [`geometry`] turns a page of word boxes into fixed-size context windows.
//! * [`synthdoc`] procedurally renders labeled documents and word crops.
//! * [`nncore`] is the small numeric core with hand-written backward passes.
//! * [`model`] wires the feature extractor, encoders and heads together.
//! * [`training`] holds the multi-task loss, Adam and the two-stage protocol.
//! * [`evaluation`] averages overlapping window logits and scores predictions.
//! * [`io`] reads and writes the on-disk formats shared by the CLI.
//! * [`dataset`] groups labeled documents and builds their windows.
//! * [`gradsuite`] checks every analytic gradient against finite differences.

pub mod error;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod gradsuite;
pub mod io;
pub mod model;
pub mod nncore;
pub mod real;
pub mod synthdoc;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;

/// Semantic version reported by the `version` subcommand.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
