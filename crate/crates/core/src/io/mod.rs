//! File formats and run orchestration.

pub mod config;
pub mod embfile;
pub mod experiment;
pub mod manifest;
pub mod metric_log;
pub mod offline;
pub mod sweep;
