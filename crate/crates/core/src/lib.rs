// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod faireval;
pub mod fusion;
pub mod gradsuite;
pub mod losses;
pub mod params;
pub mod study;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
