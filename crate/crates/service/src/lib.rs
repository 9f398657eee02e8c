//! HTTP service and command line for running annotation rounds.

pub mod app;
pub mod backend;
pub mod cli;
pub mod config;
pub mod jobs;
pub mod strokes;
pub mod wal;
