//! Cooperative table-carrying: a two-agent table simulator, a variational
//! recurrent model of team trajectories, sampling-based receding-horizon and
//! RRT planners, and the evaluation metrics used to compare them.

// Negated comparisons in validation are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod planners;
pub mod scripted;
pub mod session;
pub mod sim;
pub mod vrnn;
pub mod world;

pub use error::{Error, Result};
