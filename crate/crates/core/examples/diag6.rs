use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn main() {
    let w = [-1.5, -3.0, -1.2, 0.3, 0.5];
    for t_corr in [250u64, 500, 1000, 2000, 5000] {
        let mut reds = Vec::new();
        let mut maxe: f64 = 0.0;
        for seed in 0..8u64 {
            let cfg = ScenarioConfig {
                channel: Channel::Cv2x,
                leader_profile: LeaderProfile::Platoon,
                duration: 40_000,
                mode: Mode::Parallel,
                gains: w,
                t_corr,
                seed,
                ..Default::default()
            };
            let m = run(&cfg);
            reds.push(m.max_gap_reduction);
            maxe = maxe.max(m.recovery_max_err);
        }
        let mean = reds.iter().sum::<f64>() / reds.len() as f64;
        let lo = reds.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = reds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("t_corr={t_corr} par red mean={mean:.3} [{lo:.3},{hi:.3}] maxerr={maxe:.2}");
    }
}
