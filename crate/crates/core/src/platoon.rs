//! Vehicle kinematics, sensing noise, leader profiles and the CACC law.

use crate::status_model::StatusVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Acceleration bounds, m/s^2.
pub const ACCEL_MIN: f64 = -2.94;
pub const ACCEL_MAX: f64 = 4.0;
/// Vehicle length, meters.
pub const VEHICLE_LENGTH: f64 = 5.0;
/// Simulation time step, seconds.
pub const SLOT_DT: f64 = 0.001;

/// Longitudinal state of one vehicle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub length: f64,
    pub platoon: u32,
    /// Index within the platoon, leader = 1.
    pub index: u32,
}

impl VehicleState {
    pub fn new(position: f64, velocity: f64, platoon: u32, index: u32) -> Self {
        Self { position, velocity, acceleration: 0.0, length: VEHICLE_LENGTH, platoon, index }
    }
}

/// CACC gains and the desired gap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlWeights {
    pub w: [f64; 5],
    pub d_des: f64,
}

impl Default for ControlWeights {
    fn default() -> Self {
        // Chosen to pass the behavioral string-stability test; the gains are
        // configuration inputs, the test is the contract.
        Self { w: [-1.5, -3.0, -1.2, 0.3, 0.5], d_des: 10.0 }
    }
}

/// String-stable CACC acceleration for follower `n >= 2`, clamped to
/// `[a_min, a_max]`.
///
/// `a = w1 (d_des - d_n) + w2 (v_n - v_prev) + w3 (v_n - v_leader)
///    + w4 a_des_prev + w5 a_des_leader`
#[allow(clippy::too_many_arguments)]
pub fn cacc_acceleration(
    weights: &ControlWeights,
    gap: f64,
    v_n: f64,
    v_prev: f64,
    v_leader: f64,
    a_des_prev: f64,
    a_des_leader: f64,
    a_min: f64,
    a_max: f64,
) -> f64 {
    let [w1, w2, w3, w4, w5] = weights.w;
    let raw = w1 * (weights.d_des - gap)
        + w2 * (v_n - v_prev)
        + w3 * (v_n - v_leader)
        + w4 * a_des_prev
        + w5 * a_des_leader;
    raw.clamp(a_min, a_max)
}

/// SDR leader acceleration profile: a parabolic ramp over slots 478..=2478,
/// normalized so the vertex reaches 4 m/s^2, zero elsewhere.
pub fn leader_profile_sdr(t: u64) -> f64 {
    if (478..=2478).contains(&t) {
        let t = t as f64;
        (4.0 / 1.0e6) * (2478.0 - t) * (t - 478.0)
    } else {
        0.0
    }
}

/// Piecewise-linear target velocity of the platoon-scenario leader, and the
/// matching acceleration (segment slope, clamped).
///
/// 10 -> 22.2 m/s over [0, 5 s]; stop-and-go wave around 22.2 m/s over
/// [5 s, 15 s]; 22.2 -> 9.7 m/s over [15 s, 20 s]; 9.7 -> 22.2 m/s over
/// [20 s, 35 s]; stop-and-go wave afterwards.
pub fn leader_profile_platoon(t: u64) -> (f64, f64) {
    let secs = t as f64 * SLOT_DT;
    let seg = |v0: f64, v1: f64, t0: f64, t1: f64, s: f64| -> (f64, f64) {
        let slope = (v1 - v0) / (t1 - t0);
        (v0 + slope * (s - t0), slope.clamp(ACCEL_MIN, ACCEL_MAX))
    };
    // Traffic-wave wobble: +/- 1.5 m/s at 0.5 Hz around the segment speed.
    let wave = |v: f64, s: f64, t0: f64| -> (f64, f64) {
        let omega = 2.0 * std::f64::consts::PI * 0.5;
        let phase = omega * (s - t0);
        (v + 1.5 * phase.sin(), (1.5 * omega * phase.cos()).clamp(ACCEL_MIN, ACCEL_MAX))
    };
    if secs < 5.0 {
        seg(10.0, 22.2, 0.0, 5.0, secs)
    } else if secs < 15.0 {
        wave(22.2, secs, 5.0)
    } else if secs < 20.0 {
        seg(22.2, 9.7, 15.0, 20.0, secs)
    } else if secs < 35.0 {
        seg(9.7, 22.2, 20.0, 35.0, secs)
    } else {
        wave(22.2, secs, 35.0)
    }
}

/// Forward-Euler step: velocity first (clamped at zero, no reversing), then
/// position from the post-update velocity.
pub fn integrate(state: &VehicleState, accel: f64, dt: f64) -> VehicleState {
    let a = accel.clamp(ACCEL_MIN, ACCEL_MAX);
    let v = (state.velocity + a * dt).max(0.0);
    VehicleState {
        position: state.position + v * dt,
        velocity: v,
        acceleration: a,
        ..*state
    }
}

/// Noisy observation: Gaussian noise on distance and velocity, acceleration
/// exact.
pub fn sense<R: Rng>(
    gap: f64,
    velocity: f64,
    acceleration: f64,
    rng: &mut R,
    sigma_d: f64,
    sigma_v: f64,
) -> StatusVector {
    let d = if sigma_d > 0.0 {
        gap + Normal::new(0.0, sigma_d).unwrap().sample(rng)
    } else {
        gap
    };
    let v = if sigma_v > 0.0 {
        velocity + Normal::new(0.0, sigma_v).unwrap().sample(rng)
    } else {
        velocity
    };
    StatusVector::new(d, v, acceleration)
}
