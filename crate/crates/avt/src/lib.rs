//! Recorder, processing pipeline, fleet catalog and telemetry services for
//! simulated naturalistic driving data, built on `avt-core`.

pub mod dacman;
pub mod formats;
pub mod layout;
pub mod recorder;
pub mod scan;
pub mod pipeline;
pub mod catalog;
pub mod telemetry;
pub mod cli;
