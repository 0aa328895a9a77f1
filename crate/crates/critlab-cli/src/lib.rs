//! Library half of the `critlab` binary.
//!
//! Everything the binary does is reachable from here so that integration
//! tests can drive commands in-process: parse a [`config::RunConfig`],
//! hand it to [`commands::run`], and inspect the returned
//! [`report::Report`] without spawning a subprocess.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod report;
