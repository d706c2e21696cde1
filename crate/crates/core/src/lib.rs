#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::type_complexity, clippy::too_many_arguments)]

pub mod backend;
pub mod config;
pub mod error;
pub mod ledger;
pub mod orchestrator;
pub mod planner;
pub mod profiler;
pub mod sim;
pub mod snapshot;
pub mod stats;

pub use error::{Error, Result};
