use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn main() {
    for platoons in [3u32, 4, 5] {
        for w in [[-1.5, -3.0, -1.2, 0.3, 0.5], [-2.5, -4.5, -1.8, 0.3, 0.5]] {
            for (name, mode) in [
                ("par", Mode::Parallel),
                ("noc", Mode::ParallelNoCorrection),
                ("una", Mode::StatusUnaware),
            ] {
                let mut reds = Vec::new();
                let mut statuses = Vec::new();
                let mut crashes = 0;
                for seed in 0..10u64 {
                    let cfg = ScenarioConfig {
                        channel: Channel::Cv2x,
                        leader_profile: LeaderProfile::Platoon,
                        duration: 40_000,
                        platoons,
                        mode,
                        update_interval: 40,
                        gains: w,
                        seed,
                        ..Default::default()
                    };
                    let m = run(&cfg);
                    reds.push(m.max_gap_reduction);
                    statuses.push(m.sent.status);
                    crashes += m.crashed as u32;
                }
                let mean = reds.iter().sum::<f64>() / reds.len() as f64;
                let lo = reds.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = reds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let st = statuses.iter().sum::<u64>() / statuses.len() as u64;
                println!("p={platoons} w1={} {name} red mean={mean:.3} [{lo:.3},{hi:.3}] status~{st} crashes={crashes}", w[0]);
            }
            println!();
        }
    }
}
