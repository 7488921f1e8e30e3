use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};
use statuslink::{run, run_with_traces};

fn main() {
    let base = ScenarioConfig {
        channel: Channel::Cv2x,
        leader_profile: LeaderProfile::RandomPiecewise,
        duration: 100_000,
        platoons: 3,
        ..Default::default()
    };
    let fixed = ScenarioConfig { mode: Mode::Parallel, delta: 0.1, ..base.clone() };
    let r = run(&fixed);
    let tail: Vec<String> = r.window_costs.iter().rev().take(25).rev().map(|c| format!("{c:.3}")).collect();
    println!("fixed m=0.1 final={:.4} coll={} st={} tail={:?}", r.final_window_cost, r.frames_collided, r.sent.status, tail);

    for m0 in [0.1f64, 1.5] {
        let cfg = ScenarioConfig { mode: Mode::Smart, m_init: Some(m0), ..base.clone() };
        let (r, tr) = run_with_traces(&cfg);
        let tail: Vec<String> =
            r.window_costs.iter().rev().take(25).rev().map(|c| format!("{c:.3}")).collect();
        println!("smart m0={m0} final={:.4} coll={} st={} min_gap={:.2} crashed={} tail={:?}", r.final_window_cost, r.frames_collided, r.sent.status, r.min_gap, r.crashed, tail);
        let mut lo = [99.0f64; 3];
        let mut hi = [0.0f64; 3];
        for row in &tr.trajectories {
            if row.slot >= 95_000 && row.index > 1 {
                let p = row.platoon as usize;
                lo[p] = lo[p].min(row.gap);
                hi[p] = hi[p].max(row.gap);
            }
        }
        println!("  late gap ranges: {:?}", lo.iter().zip(hi.iter()).collect::<Vec<_>>());
        for p in 0..3u32 {
            let ms: Vec<f64> = tr
                .m_trace
                .iter()
                .filter(|row| row.platoon == p)
                .map(|row| row.m)
                .collect();
            let s: Vec<String> = ms.iter().step_by(5).map(|m| format!("{m:.1}")).collect();
            println!("  p{p} m: {s:?}");
        }
    }
}
