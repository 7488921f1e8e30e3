use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};
use statuslink::{run, run_with_traces};
use std::time::Instant;

fn main() {
    let base = ScenarioConfig {
        channel: Channel::Cv2x,
        leader_profile: LeaderProfile::Platoon,
        duration: 40_000,
        ..Default::default()
    };
    let t0 = Instant::now();
    for (name, cfg) in [
        ("parallel", base.clone()),
        ("no-corr", ScenarioConfig { mode: Mode::ParallelNoCorrection, ..base.clone() }),
        ("unaware40", ScenarioConfig { mode: Mode::StatusUnaware, update_interval: 40, ..base.clone() }),
        ("smart", ScenarioConfig { mode: Mode::Smart, ..base.clone() }),
    ] {
        let m = run(&cfg);
        println!("{name:10} status={:6} ota={:6} coll={:5} hd={:5} occ={:.3} mae={:.4} max={:.3} red={:.3} mingap={:.3} crash={} cost={:.4}",
            m.sent.status, m.ota_status_packets, m.frames_collided, m.half_duplex_losses, m.occupancy,
            m.recovery_mae, m.recovery_max_err, m.max_gap_reduction, m.min_gap, m.crashed, m.final_window_cost);
    }
    println!("elapsed {:?}", t0.elapsed());

    for sigma in [0.001f64, 0.01] {
        for (name, mode, iv) in [
            ("par", Mode::Parallel, 40u64),
            ("noc", Mode::ParallelNoCorrection, 40),
            ("una", Mode::StatusUnaware, 40),
            ("smt", Mode::Smart, 40),
        ] {
            let cfg = ScenarioConfig {
                mode,
                update_interval: iv,
                sigma_d: sigma,
                sigma_v: sigma,
                ..base.clone()
            };
            let mut reds = Vec::new();
            let mut statuses = Vec::new();
            let mut maxe: f64 = 0.0;
            for seed in 0..8u64 {
                let m = run(&ScenarioConfig { seed, ..cfg.clone() });
                reds.push(m.max_gap_reduction);
                statuses.push(m.sent.status);
                maxe = maxe.max(m.recovery_max_err);
            }
            let mean = reds.iter().sum::<f64>() / reds.len() as f64;
            let lo = reds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = reds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let st = statuses.iter().sum::<u64>() / statuses.len() as u64;
            println!("sig={sigma} {name} red mean={mean:.3} [{lo:.3},{hi:.3}] status~{st} maxerr={maxe:.2}");
        }
    }
    for (name, cfg) in [
        ("par-ex", ScenarioConfig { exempt_control: true, ..base.clone() }),
        ("una-ex", ScenarioConfig { mode: Mode::StatusUnaware, update_interval: 40, exempt_control: true, ..base.clone() }),
        ("smart-ex", ScenarioConfig { mode: Mode::Smart, exempt_control: true, ..base.clone() }),
        ("nocorr-ex", ScenarioConfig { mode: Mode::ParallelNoCorrection, exempt_control: true, ..base.clone() }),
    ] {
        let m = run(&cfg);
        println!("{name:10} status={:6} ota={:6} coll={:5} hd={:5} occ={:.3} mae={:.4} max={:.3} red={:.3} crash={} cost={:.4}",
            m.sent.status, m.ota_status_packets, m.frames_collided, m.half_duplex_losses, m.occupancy,
            m.recovery_mae, m.recovery_max_err, m.max_gap_reduction, m.crashed, m.final_window_cost);
    }
    let perfect = ScenarioConfig { channel: Channel::Perfect, ..base.clone() };
    let m = run(&perfect);
    println!("perfect 3x8 status={:6} ota={:6} mae={:.4} max={:.3} red={:.3} crash={}",
        m.sent.status, m.ota_status_packets, m.recovery_mae, m.recovery_max_err, m.max_gap_reduction, m.crashed);

    for (name, cfg) in [
        ("parallel", base.clone()),
        ("smart", ScenarioConfig { mode: Mode::Smart, ..base.clone() }),
    ] {
        let (m, tr) = run_with_traces(&cfg);
        println!("== {name}: first_cal={:?}", m.first_confirmed_calibration);
        let mut buckets = vec![0u64; (cfg.duration / 4000) as usize + 1];
        for row in &tr.packets {
            if row.kind == "status" {
                buckets[(row.slot / 4000) as usize] += 1;
            }
        }
        println!("  status/4k: {buckets:?}");
        // per-link status counts
        let mut per_src = std::collections::BTreeMap::new();
        for row in &tr.packets {
            if row.kind == "status" {
                *per_src.entry(row.src).or_insert(0u64) += 1;
            }
        }
        println!("  per-src: {per_src:?}");
        if name == "smart" {
            let last: Vec<_> = tr.m_trace.iter().rev().take(6).collect();
            println!("  m tail: {last:?}");
        }
    }
}
