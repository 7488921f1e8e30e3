use statuslink::run_with_traces;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn main() {
    for (name, mode) in [("par", Mode::Parallel), ("noc", Mode::ParallelNoCorrection)] {
        let cfg = ScenarioConfig {
            channel: Channel::Cv2x,
            leader_profile: LeaderProfile::Platoon,
            duration: 40_000,
            mode,
            seed: 0,
            ..Default::default()
        };
        let (m, tr) = run_with_traces(&cfg);
        // find worst (gap - d_des) row
        let mut worst = (0u64, 0u32, 0u32, f64::INFINITY);
        for row in &tr.trajectories {
            if row.slot < 2100 || row.index == 0 || row.gap <= 0.0 { continue; }
            let dev = row.gap - cfg.d_des;
            if dev < worst.3 {
                worst = (row.slot, row.platoon, row.index, dev);
            }
        }
        println!("{name}: red={:.3} worst dip {:.3} at slot {} platoon {} index {}", m.max_gap_reduction, worst.3, worst.0, worst.1, worst.2);
        // packet activity for that vehicle's link around the dip
        let (slot, platoon, index, _) = worst;
        let src = (platoon * 8 + index + 1) as u64;
        let lo = slot.saturating_sub(1500);
        for row in &tr.packets {
            if row.slot >= lo && row.slot <= slot + 200 && row.src as u64 == src {
                println!("  t={} kind={}", row.slot, row.kind);
            }
        }
    }
}
