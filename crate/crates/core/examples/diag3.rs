use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn main() {
    for platoons in [3u32, 4, 5, 6] {
        for (name, mode) in [
            ("par", Mode::Parallel),
            ("noc", Mode::ParallelNoCorrection),
            ("una", Mode::StatusUnaware),
        ] {
            let mut reds = Vec::new();
            let mut statuses = Vec::new();
            let mut maxe: f64 = 0.0;
            let mut crashes = 0;
            for seed in 0..8u64 {
                let cfg = ScenarioConfig {
                    channel: Channel::Cv2x,
                    leader_profile: LeaderProfile::Platoon,
                    duration: 40_000,
                    platoons,
                    mode,
                    update_interval: 40,
                    seed,
                    ..Default::default()
                };
                let m = run(&cfg);
                reds.push(m.max_gap_reduction);
                statuses.push(m.sent.status);
                maxe = maxe.max(m.recovery_max_err);
                crashes += m.crashed as u32;
            }
            let mean = reds.iter().sum::<f64>() / reds.len() as f64;
            let lo = reds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = reds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let st = statuses.iter().sum::<u64>() / statuses.len() as u64;
            println!("p={platoons} {name} red mean={mean:.3} [{lo:.3},{hi:.3}] status~{st} maxerr={maxe:.2} crashes={crashes}");
        }
        println!();
    }
}
