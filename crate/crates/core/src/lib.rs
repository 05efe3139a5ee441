//! Internal-leakage diagnosis for double-acting hydraulic cylinders.
//!
//! The crate is organised along the processing chain:
//!
//! * [`sim`] generates labelled pressure traces from a fixed-step model of a
//!   cylinder with a cross-port leak.
//! * [`signal`] cuts traces into strokes, detects pressure peaks and builds
//!   fixed-length, normalised train/test sets.
//! * [`nn`] is a from-scratch stacked LSTM classifier with hand-derived
//!   backpropagation through time and Adam.
//! * [`train`] runs the epoch loop and offline evaluation.
//! * [`metrics`] derives confusion matrices, precision/recall/F1 and PR curves.
//! * [`detect`] classifies strokes online as samples stream in and records
//!   per-cycle latency.

pub mod config;
pub mod detect;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod signal;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use nn::{Network, NetworkSpec, Real};
pub use signal::{CycleSegment, Dataset, NormStats, SequenceSample};
pub use sim::{ActuatorParams, LeakCalibration, LeakClass, SimConfig, SimState, Trace};
