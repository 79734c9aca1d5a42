// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arm;
pub mod error;
pub mod evaluation;
pub mod jet;
pub mod metric;
pub mod obstacle_map;
pub mod planner;
pub mod scene;

pub use error::{Error, Result};
