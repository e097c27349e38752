//! Library surface of the `vdet` command-line tool.
//!
//! The binary is a thin wrapper; everything it does lives here so the
//! integration tests can drive the same code paths in-process.

pub mod config;
pub mod ingest;
pub mod pipeline;
pub mod plots;
