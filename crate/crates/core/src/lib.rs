//! Multi-view evidential sequential recommendation.
//!
//! An item-ID view and a review/image view are each encoded by a GRU,
//! turned into subjective-logic opinions through rectified evidence heads,
//! and fused with Dempster's rule. Every ranking carries an explicit
//! uncertainty mass next to the per-item beliefs.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod evidential;
pub mod matrix;
pub mod model;
pub mod perception;
pub mod seqrec;
pub mod special;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
