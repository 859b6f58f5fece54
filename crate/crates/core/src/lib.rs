// `!(x > 0.0)` is used on purpose: it rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod eval_cli;
pub mod global_synthesis;
pub mod model;
pub mod net_sim;
pub mod numcore;
pub mod preprocess;
pub mod seeding;
pub mod spatial_attention;
pub mod temporal_encoder;
pub mod training;

pub use error::{Error, Result};

/// Training enables dropout and batch statistics; evaluation uses neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
