use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn main() {
    let m_ref: f64 = std::env::var("MREF").ok().and_then(|v| v.parse().ok()).unwrap_or(0.2);
    let base = ScenarioConfig {
        channel: Channel::Cv2x,
        leader_profile: LeaderProfile::RandomPiecewise,
        duration: 100_000,
        platoons: 3,
        m_ref,
        delta_cost: std::env::var("DCOST").ok().and_then(|v| v.parse().ok()),
        ..Default::default()
    };
    let grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.1).collect();
    let mut fixed = Vec::new();
    for &m in &grid {
        let cfg =
            ScenarioConfig { mode: Mode::Parallel, delta: base.delta_base * m / m_ref, ..base.clone() };
        fixed.push(run(&cfg).final_window_cost);
    }
    let best = fixed.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst = fixed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "mref={m_ref} fixed: {:?}",
        fixed.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>()
    );
    let mut fails = 0;
    let mut worst_adapted = f64::NEG_INFINITY;
    for &m0 in &grid {
        let cfg = ScenarioConfig { mode: Mode::Smart, m_init: Some(m0), ..base.clone() };
        let c = run(&cfg).final_window_cost;
        worst_adapted = worst_adapted.max(c);
        if c > best * 1.1 {
            fails += 1;
        }
    }
    println!(
        "mref={m_ref} best={best:.4} worst_fixed={worst:.4} spread={:.2} worst_adapted={worst_adapted:.4} bar={:.4} fails={fails}",
        (worst - best) / worst,
        best * 1.1
    );
}
