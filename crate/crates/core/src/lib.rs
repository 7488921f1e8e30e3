//! Time-slotted co-simulator of predictive wireless status update for
//! multi-platoon vehicle control.
//!
//! Status information travels over two parallel paths: over-the-air packets
//! for model-unexpected samples, and calibrated model predictions otherwise.
//! The crate bundles the protocol state machines, the online LMS status
//! model, a C-V2X Mode-4 SPS channel abstraction, a string-stable CACC
//! controller, the auxiliary-cost adaptation loop, and the world loop tying
//! them together.

pub mod mac;
pub mod platoon;
pub mod protocol;
pub mod sim;
pub mod smart;
pub mod status_model;

pub use sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};
pub use sim::engine::{replicate, run, run_with_traces};
pub use sim::metrics::Metrics;
pub use status_model::{StatusModel, StatusVector};
