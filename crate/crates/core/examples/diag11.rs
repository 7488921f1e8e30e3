use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn stats(v: &[f64]) -> (f64, f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, lo, hi)
}

fn main() {
    let seeds: u64 = std::env::var("SEEDS").ok().and_then(|v| v.parse().ok()).unwrap_or(20);
    let sigma: f64 = std::env::var("SIGMA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.01);
    for w in [
        [-1.5, -3.0, -1.2, 0.3, 0.5],
        [-2.0, -3.6, -1.5, 0.3, 0.5],
        [-2.5, -4.5, -1.8, 0.3, 0.5],
    ] {
        let mut res = Vec::new();
        for (name, mode) in [
            ("par", Mode::Parallel),
            ("noc", Mode::ParallelNoCorrection),
            ("una", Mode::StatusUnaware),
        ] {
            let mut mins = Vec::new();
            let mut st = 0u64;
            for seed in 0..seeds {
                let cfg = ScenarioConfig {
                    channel: Channel::Cv2x,
                    leader_profile: LeaderProfile::Platoon,
                    duration: 40_000,
                    mode,
                    update_interval: 40,
                    gains: w,
                    sigma_d: sigma,
                    sigma_v: sigma,
                    confirmation_timeout: std::env::var("TMO")
                        .ok()
                        .and_then(|v| v.parse().ok())
                        .unwrap_or(30),
                    t_corr: std::env::var("TCORR")
                        .ok()
                        .and_then(|v| v.parse().ok())
                        .unwrap_or(500),
                    seed,
                    ..Default::default()
                };
                let m = run(&cfg);
                mins.push(m.min_gap);
                st += m.sent.status;
            }
            let (mean, lo, hi) = stats(&mins);
            println!(
                "w1={} {name} min_gap mean={mean:.3} [{lo:.3},{hi:.3}] band={:.3} status~{}",
                w[0],
                hi - lo,
                st / seeds
            );
            res.push((name, mean, hi - lo));
        }
        let band = res[0].2;
        println!(
            "w1={} margins: par-noc={:.3} par-una={:.3} par_band={band:.3} pass_noc={} pass_una={}",
            w[0],
            res[0].1 - res[1].1,
            res[0].1 - res[2].1,
            res[0].1 - res[1].1 > band,
            res[0].1 - res[2].1 > band,
        );
        println!();
    }
}
