use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};

fn main() {
    for platoons in [1u32, 2, 3] {
        let base = ScenarioConfig {
            channel: Channel::Cv2x,
            leader_profile: LeaderProfile::RandomPiecewise,
            duration: 100_000,
            platoons,
            ..Default::default()
        };
        let grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.1).collect();
        let mut fixed = Vec::new();
        for &m in &grid {
            let cfg = ScenarioConfig {
                mode: Mode::Parallel,
                delta: base.delta_base * m / base.m_ref,
                ..base.clone()
            };
            fixed.push(run(&cfg).final_window_cost);
        }
        let best = fixed.iter().cloned().fold(f64::INFINITY, f64::min);
        let worst = fixed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spread = (worst - best) / worst;
        let mut max_adapted = f64::NEG_INFINITY;
        let mut fails = 0;
        for &m0 in &grid {
            let cfg = ScenarioConfig { mode: Mode::Smart, m_init: Some(m0), ..base.clone() };
            let c = run(&cfg).final_window_cost;
            max_adapted = max_adapted.max(c);
            if c > best * 1.1 {
                fails += 1;
                println!("  p={platoons} m0={m0:.1} adapted={c:.4} > best*1.1={:.4}", best * 1.1);
            }
        }
        println!(
            "p={platoons} best_fixed={best:.4} worst_fixed={worst:.4} spread={spread:.2} max_adapted={max_adapted:.4} fails={fails}"
        );
    }
}
