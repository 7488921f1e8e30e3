use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, ScenarioConfig};

fn main() {
    for seed in 0..8u64 {
        let cfg = ScenarioConfig {
            channel: Channel::Cv2x,
            leader_profile: LeaderProfile::Platoon,
            duration: 40_000,
            seed,
            ..Default::default()
        };
        let m = run(&cfg);
        println!(
            "seed={seed} status={} mae={:.4} max={:.3} red={:.3} crash={}",
            m.sent.status, m.recovery_mae, m.recovery_max_err, m.max_gap_reduction, m.crashed
        );
    }
}
