use statuslink::run;
use statuslink::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};
use statuslink::sim::engine::MM_SLOTS;

fn main() {
    for (name, mode) in [("par", Mode::Parallel), ("noc", Mode::ParallelNoCorrection)] {
        for seed in 0..4u64 {
            MM_SLOTS.with(|c| c.set(0));
            let cfg = ScenarioConfig {
                channel: Channel::Cv2x,
                leader_profile: LeaderProfile::Platoon,
                duration: 40_000,
                mode,
                gains: [-2.5, -4.5, -1.8, 0.3, 0.5],
                sigma_d: 0.01,
                sigma_v: 0.01,
                seed,
                ..Default::default()
            };
            let m = run(&cfg);
            let mm = MM_SLOTS.with(|c| c.get());
            println!("{name} seed={seed} red={:.3} maxe={:.2} mm_slots={} (of {} link-slots)",
                m.max_gap_reduction, m.recovery_max_err, mm, 40_000u64 * 21);
        }
    }
}
