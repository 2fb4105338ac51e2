//! Few-shot learning lab.
//!
//! Trains a small encoder either with momentum-contrast self-supervision on
//! unlabeled data or with cross-entropy on labeled base classes, then measures
//! how well the frozen features transfer to novel classes through episodic
//! N-way m-shot linear probes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod pipeline;
pub mod protocol;
pub mod supervised;
pub mod trace;

pub use error::{Error, Result};
pub use numeric::{Matrix, RngStream};
