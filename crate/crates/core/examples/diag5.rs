use statuslink::run;

use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn main() {
    let gain_sets: [[f64; 5]; 4] = [
        [-0.45, -1.2, -0.5, 0.3, 0.5],
        [-0.9, -2.0, -0.8, 0.3, 0.5],
        [-1.5, -3.0, -1.2, 0.3, 0.5],
        [-2.5, -4.5, -1.8, 0.3, 0.5],
    ];
    for (gi, w) in gain_sets.iter().enumerate() {
        for (name, mode) in [
            ("par", Mode::Parallel),
            ("noc", Mode::ParallelNoCorrection),
            ("una", Mode::StatusUnaware),
        ] {
            let mut reds = Vec::new();
            let mut crashes = 0;
            for seed in 0..8u64 {
                let cfg = ScenarioConfig {
                    channel: Channel::Cv2x,
                    leader_profile: LeaderProfile::Platoon,
                    duration: 40_000,
                    mode,
                    update_interval: 40,
                    gains: *w,
                    seed,
                    ..Default::default()
                };
                let m = run(&cfg);
                reds.push(m.max_gap_reduction);
                crashes += m.crashed as u32;
            }
            let mean = reds.iter().sum::<f64>() / reds.len() as f64;
            let lo = reds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = reds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!("g{gi} {name} red mean={mean:.3} [{lo:.3},{hi:.3}] crashes={crashes}");
        }
        // perfect-channel floor for this gain set
        let cfg = ScenarioConfig {
            channel: Channel::Perfect,
            leader_profile: LeaderProfile::Platoon,
            duration: 40_000,
            gains: *w,
            ..Default::default()
        };
        let m = run(&cfg);
        println!("g{gi} perfect-par red={:.3} crash={}", m.max_gap_reduction, m.crashed);
        println!();
    }
}
