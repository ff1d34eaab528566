// `!(x > 0.0)` guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod error;
pub mod kernel;
pub mod limit;
pub mod mc;
pub mod sim;
pub mod summation;
pub mod ustat;
pub mod varest;

pub use error::{Error, Result};
