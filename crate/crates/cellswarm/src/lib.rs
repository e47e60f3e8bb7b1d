//! Deterministic discrete-event simulator and protocol library for a
//! self-organizing cellular machine swarm.
//!
//! Every machine runs the same state controller (null / leader / follower),
//! exchanges command-and-control messages over an abstracted cellular
//! substrate, scores itself on spatial proximity and computational
//! capacity, elects leaders, detects failures, and reorganizes around a
//! new host. The whole simulation is virtual-time and replayable: the same
//! scenario and seed always produce byte-identical traces.

pub mod cellsim;
pub mod controller;
pub mod domain;
pub mod harness;
pub mod messages;
pub mod scoring;
pub mod wire;

pub use domain::{MachineId, NetworkTable, Role};
pub use harness::{run, RunOutput, ScenarioConfig};
pub use messages::Message;
