// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod conv;
pub mod dyadic;
pub mod error;
pub mod forms;
pub mod grid;
pub mod inputs;
pub mod kernels;
pub mod localnorms;
pub mod sparsifier;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
