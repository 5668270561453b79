//! Core algorithms of the AVT driving-data system.
//!
//! Everything in this crate is a pure function over in-memory values: trip
//! naming, the vehicle power controller, CAN signal decoding, the synthetic
//! vehicle, the 30 fps synchronization grid, trip filtering rules, fleet
//! health flags and dataset statistics. File formats, IO and services live in
//! the `avt` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod can;
pub mod filter;
pub mod fsm;
pub mod health;
pub mod sim;
pub mod stats;
pub mod sync;
pub mod time;
pub mod trip;

pub use can::{CanFrame, CanId, DecodeTable, SignalSpec, SignalTimeline};
pub use time::Timestamp;
pub use trip::{SubsystemKind, TripId, TripSpecs};
