//! Library surface of the `qrenn` binary: config parsing and output
//! formatting, exposed for integration testing.

pub mod config;
pub mod output;
