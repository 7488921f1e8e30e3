//! The time-slotted world loop and its configuration and outputs.

pub mod config;
pub mod engine;
pub mod metrics;
