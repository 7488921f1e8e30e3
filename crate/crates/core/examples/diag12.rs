use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};
use statuslink::{run, run_with_traces};

fn main() {
    // String-stability impulse test: peak gap deviation along the platoon.
    let cfg = ScenarioConfig {
        platoons: 1,
        vehicles_per_platoon: 8,
        channel: Channel::Perfect,
        leader_profile: LeaderProfile::Impulse,
        duration: 15_000,
        sigma_d: 0.0,
        sigma_v: 0.0,
        delta: 0.0,
        ..Default::default()
    };
    let (_, tr) = run_with_traces(&cfg);
    let mut peak = std::collections::BTreeMap::new();
    for row in &tr.trajectories {
        if row.index > 0 && row.slot >= 3_000 {
            let dev = (row.gap - 10.0).abs();
            let e = peak.entry(row.index).or_insert(0.0f64);
            if dev > *e {
                *e = dev;
            }
        }
    }
    let peaks: Vec<f64> = peak.values().cloned().collect();
    println!("impulse peaks: {peaks:?}");
    let mono = peaks.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    println!("non-increasing: {mono}");

    // Interval sweep: U-shape of mean min safe distance.
    for iv in [10u64, 20, 30, 40, 60, 80, 120] {
        let mut mins = Vec::new();
        for seed in 0..20u64 {
            let cfg = ScenarioConfig {
                mode: Mode::StatusUnaware,
                update_interval: iv,
                channel: Channel::Cv2x,
                leader_profile: LeaderProfile::Platoon,
                duration: 40_000,
                seed,
                ..Default::default()
            };
            let m = run(&cfg);
            mins.push(m.min_gap);
        }
        let mean = mins.iter().sum::<f64>() / mins.len() as f64;
        println!("iv={iv} mean min_gap={mean:.3}");
    }

    // SDR pattern: silence stretch and ramp-phase packet rates.
    let cfg = ScenarioConfig { sigma_d: 0.0, sigma_v: 0.0, ..ScenarioConfig::sdr_link() };
    let (m, tr) = run_with_traces(&cfg);
    let mut slots: Vec<u64> =
        tr.packets.iter().filter(|p| p.kind == "status").map(|p| p.slot).collect();
    slots.sort_unstable();
    let first_cal = m.first_confirmed_calibration.unwrap_or(0);
    let mut longest = 0u64;
    let mut prev = first_cal;
    for &s in slots.iter().filter(|&&s| s > first_cal && s < 478) {
        longest = longest.max(s - prev);
        prev = s;
    }
    longest = longest.max(478u64.saturating_sub(prev));
    let early = slots.iter().filter(|&&s| (478..678).contains(&s)).count();
    let late = slots.iter().filter(|&&s| (678..878).contains(&s)).count();
    println!(
        "sdr: first_cal={first_cal} longest_silence={longest} ramp_early={early} ramp_late={late} maxerr={:.3}",
        m.recovery_max_err
    );
}
