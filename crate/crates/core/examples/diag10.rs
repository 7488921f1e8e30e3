use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn envn<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() {
    let sigma: f64 = envn("SIGMA", 0.01);
    let seeds: u64 = envn("SEEDS", 10);
    let t_corr: u64 = envn("TCORR", 500);
    let window: usize = envn("WINDOW", 100);
    let t_model: u64 = envn("TMODEL", 100);
    for w in [[-1.5, -3.0, -1.2, 0.3, 0.5], [-2.5, -4.5, -1.8, 0.3, 0.5]] {
        for (name, mode) in [
            ("par", Mode::Parallel),
            ("noc", Mode::ParallelNoCorrection),
            ("una", Mode::StatusUnaware),
        ] {
            let mut reds = Vec::new();
            let mut statuses = Vec::new();
            let mut crashes = 0;
            let mut maes = Vec::new();
            let mut maxe: f64 = 0.0;
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
                    t_corr,
                    window,
                    t_model,
                    seed,
                    ..Default::default()
                };
                let m = run(&cfg);
                reds.push(m.max_gap_reduction);
                statuses.push(m.sent.status);
                crashes += m.crashed as u32;
                maes.push(m.recovery_mae);
                maxe = maxe.max(m.recovery_max_err);
            }
            let mean = reds.iter().sum::<f64>() / reds.len() as f64;
            let lo = reds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = reds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let st = statuses.iter().sum::<u64>() / statuses.len() as u64;
            let mmae = maes.iter().sum::<f64>() / maes.len() as f64;
            println!("tc={t_corr} win={window} tm={t_model} w1={} {name} red mean={mean:.3} [{lo:.3},{hi:.3}] status~{st} mae={mmae:.4} maxe={maxe:.2} crashes={crashes}", w[0]);
        }
        println!();
    }
}
