//! Joint forecasting of pedestrian trajectories and head poses.
//!
//! Each pedestrian is described by a tracklet (ground-plane positions) and a
//! vislet (an anchor point at fixed radius encoding the head pan). An LSTM
//! per pedestrian consumes both, pools the hidden states of the neighbours
//! that fall inside its view frustum, and predicts a 4-variate Gaussian over
//! the next position and anchor.

// `!(x > 0.0)` deliberately rejects NaN; small matrix code reads best indexed.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod pooling;
pub mod types;

pub use error::{Error, Result};
