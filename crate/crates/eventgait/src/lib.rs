//! File formats, configuration, training driver and command-line tools on
//! top of [`eventgait_core`].

pub mod config;
pub mod driver;
pub mod error;
pub mod exec;
pub mod formats;

pub use error::{Error, Result};
pub use eventgait_core as core;
