//! # fencesim-core
//!
//! Deterministic discrete-event simulation of a perimeter intrusion
//! detection pipeline for farm fields: PIR sensor strips laid out around a
//! rectangular field, a constrained LoRa-style uplink with round-robin
//! gateway scheduling, a fog-side predictor that dead-reckons animal
//! positions from quantized sensor readings, and a pan camera whose
//! field of view and pixel footprint decide whether a sighting can be
//! confirmed.
//!
//! The crate is organized along the pipeline:
//!
//! - [`geometry`]: the virtual coordinate system, sensor layouts A/B/C,
//!   coverage shapes, and the region/representative position map
//! - [`motion`]: scripted trajectories and ground-truth detection events
//! - [`link`]: 16-byte reading frames, measured latency profiles, and the
//!   slotted round-robin gateway
//! - [`predictor`]: session tracking, simultaneous-reading fusion, and the
//!   two-point location prediction step
//! - [`camera`]: pointing accuracy, rotation timing, pixel occupancy, and
//!   recognition gates
//! - [`harness`]: the end-to-end event loop, offset/accuracy evaluation,
//!   latency budget and cost accounting, and report emission
//! - [`scenario`]: the JSON scenario schema and validation
//!
//! Everything is seeded and single-threaded inside one run: the same
//! scenario and seed always produce byte-identical reports.

pub mod camera;
pub mod geometry;
pub mod harness;
pub mod link;
pub mod motion;
pub mod predictor;
pub mod scenario;

pub use geometry::{
    CoverageRegion, CoverageShape, FieldSpec, LayoutKind, PirSpec, Point, PositionMap,
    SensorLayout, SideLabel, Signature,
};
pub use harness::{run_scenario, CostSheet, LatencyBudget, SimReport};
pub use scenario::ScenarioFile;
