#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Algorithmic core for event-based gait recognition.
//!
//! Everything here is allocation-only (`alloc`), deterministic, and free of
//! IO; file formats and the command line live in the `eventgait` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod nn;
pub mod event;
pub mod harness;
pub mod model;
pub mod params;
pub mod sim;
pub mod snn;
pub mod static_stream;
mod math;

pub use error::{Error, Result};
