//! Run outputs: aggregate metrics, per-slot trace rows and their writers.

use crate::protocol::PacketKind;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketCounts {
    pub status: u64,
    pub model_calibration: u64,
    pub confirmation: u64,
    pub correction: u64,
    pub accel_assignment: u64,
}

impl PacketCounts {
    pub fn bump(&mut self, kind: PacketKind) {
        match kind {
            PacketKind::Status => self.status += 1,
            PacketKind::ModelCalibration => self.model_calibration += 1,
            PacketKind::Confirmation => self.confirmation += 1,
            PacketKind::Correction => self.correction += 1,
            PacketKind::AccelAssignment => self.accel_assignment += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.status
            + self.model_calibration
            + self.confirmation
            + self.correction
            + self.accel_assignment
    }
}

/// Aggregate result of one run. Unless `include_warmup` was set, everything
/// except the crash flag is measured after the warmup period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    pub duration: u64,
    pub warmup: u64,
    /// Any follower gap reached zero at any point of the run.
    pub crashed: bool,
    /// Smallest bumper-to-bumper front gap across followers, meters.
    pub min_gap: f64,
    /// Largest reduction below the desired gap, maximized over followers.
    pub max_gap_reduction: f64,
    pub per_follower_max_reduction: Vec<f64>,
    /// Mean absolute error of the recovered gap at decision slots, meters.
    pub recovery_mae: f64,
    pub recovery_max_err: f64,
    /// Mean age of the freshest delivered status, slots.
    pub mean_aoi: f64,
    pub sent: PacketCounts,
    /// Follower-originated status-bearing packets (status + correction).
    pub ota_status_packets: u64,
    pub frames_sent: u64,
    pub frames_collided: u64,
    pub deliveries: u64,
    pub half_duplex_losses: u64,
    /// Fraction of pool resources carrying a transmission.
    pub occupancy: f64,
    /// Fleet control cost per evaluation window.
    pub window_costs: Vec<f64>,
    pub final_window_cost: f64,
    /// Final auxiliary cost per platoon (empty outside the adaptive mode).
    pub m_final: Vec<f64>,
    /// Fraction of tracked slots with bit-identical source/destination
    /// recovery, worst link.
    pub aligned_fraction: f64,
    /// Longest misalignment streak in slots, worst link.
    pub max_misalignment_run: u64,
    pub first_confirmed_calibration: Option<u64>,
}

impl Metrics {
    pub fn write_json(&self, path: &Path) -> io::Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(file, self).map_err(io::Error::other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean / min / max of a non-empty slice.
pub fn summarize(values: &[f64]) -> Summary {
    assert!(!values.is_empty());
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    Summary { mean: sum / values.len() as f64, min, max }
}

/// Mean age of information over `[start, end)` given `(delivery_slot,
/// generation_slot)` events sorted by delivery slot. The age at slot `t` is
/// `t` minus the freshest generation stamp delivered so far (zero baseline
/// before the first delivery).
pub fn compute_aoi(events: &[(u64, u64)], start: u64, end: u64) -> f64 {
    assert!(start < end);
    debug_assert!(events.windows(2).all(|w| w[0].0 <= w[1].0));
    let mut idx = 0;
    let mut freshest = 0u64;
    let mut sum = 0u128;
    for t in 0..end {
        while idx < events.len() && events[idx].0 <= t {
            freshest = freshest.max(events[idx].1);
            idx += 1;
        }
        if t >= start {
            sum += (t - freshest) as u128;
        }
    }
    sum as f64 / (end - start) as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub slot: u64,
    pub platoon: u32,
    pub index: u32,
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    /// Front gap; zero for the leader.
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PacketRow {
    pub slot: u64,
    pub src: u32,
    pub dst: String,
    pub kind: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AoiRow {
    pub slot: u64,
    pub platoon: u32,
    pub follower: u32,
    pub age: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MTraceRow {
    pub slot: u64,
    pub platoon: u32,
    pub m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacEventRow {
    /// Subframe slot the frame actually went out in.
    pub slot: u64,
    pub src: u32,
    pub subchannel: u32,
    pub packets: u32,
    pub collided: bool,
    pub delivered: u32,
    pub half_duplex: u32,
}

/// Per-slot trace tables collected by `run_with_traces`.
#[derive(Debug, Clone, Default)]
pub struct Traces {
    pub trajectories: Vec<TrajectoryRow>,
    pub packets: Vec<PacketRow>,
    pub aoi: Vec<AoiRow>,
    pub m_trace: Vec<MTraceRow>,
    pub mac_events: Vec<MacEventRow>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

impl Traces {
    /// Writes trajectories.csv, packets.csv, aoi.csv, m_trace.csv and
    /// mac_events.csv into `dir`.
    pub fn write_all(&self, dir: &Path) -> io::Result<()> {
        write_csv(&dir.join("trajectories.csv"), &self.trajectories)?;
        write_csv(&dir.join("packets.csv"), &self.packets)?;
        write_csv(&dir.join("aoi.csv"), &self.aoi)?;
        write_csv(&dir.join("m_trace.csv"), &self.m_trace)?;
        write_csv(&dir.join("mac_events.csv"), &self.mac_events)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant() {
        let s = summarize(&[2.0, 2.0, 2.0]);
        assert_eq!(s, Summary { mean: 2.0, min: 2.0, max: 2.0 });
    }

    #[test]
    fn aoi_no_deliveries_grows_linearly() {
        // age(t) = t, mean over [0, 10) is 4.5.
        assert!((compute_aoi(&[], 0, 10) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn aoi_same_slot_delivery_every_slot() {
        let events: Vec<(u64, u64)> = (0..100).map(|t| (t, t)).collect();
        assert_eq!(compute_aoi(&events, 0, 100), 0.0);
    }

    #[test]
    fn aoi_periodic_deliveries_sawtooth() {
        // One fresh delivery every T slots with zero latency: the sawtooth
        // averages (T - 1) / 2.
        let t_period = 10u64;
        let events: Vec<(u64, u64)> = (0..100).step_by(10).map(|t| (t, t)).collect();
        let mean = compute_aoi(&events, 0, 100);
        assert!((mean - (t_period as f64 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn aoi_stale_delivery_does_not_rejuvenate() {
        // A late packet with an old stamp must not increase freshness.
        let events = vec![(5, 5), (8, 2)];
        let with_stale = compute_aoi(&events, 0, 20);
        let without = compute_aoi(&[(5, 5)], 0, 20);
        assert_eq!(with_stale, without);
    }

    #[test]
    fn packet_counts_total() {
        let mut c = PacketCounts::default();
        c.bump(PacketKind::Status);
        c.bump(PacketKind::Status);
        c.bump(PacketKind::Confirmation);
        assert_eq!(c.total(), 3);
        assert_eq!(c.status, 2);
    }
}
