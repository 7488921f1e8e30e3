//! Scenario configuration: flat key=value text, every field scalar.

use crate::platoon::{ACCEL_MAX, ACCEL_MIN};
use crate::protocol::ErrorNorm;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {value}")]
    InvalidValue { key: String, value: String },
    #[error("malformed line `{0}` (expected key=value)")]
    MalformedLine(String),
    #[error("{0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Parallel,
    ParallelNoCorrection,
    StatusUnaware,
    Smart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// Zero loss, zero latency; packets bypass the resource pool.
    Perfect,
    /// C-V2X Mode-4 SPS contention.
    Cv2x,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaderProfile {
    /// Parabolic acceleration ramp of the two-vehicle link experiment.
    Sdr,
    /// Piecewise-linear highway velocity profile.
    Platoon,
    /// Constant initial speed.
    Constant,
    /// Seeded piecewise-constant random accelerations.
    RandomPiecewise,
    /// Constant speed with one brake-and-recover pulse at 5 s.
    Impulse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: Mode,
    /// Status-unaware update interval, slots.
    pub update_interval: u64,
    pub channel: Channel,
    pub platoons: u32,
    pub vehicles_per_platoon: u32,
    pub road_length: f64,
    /// Run length in 1 ms slots.
    pub duration: u64,
    pub d_des: f64,
    pub delta: f64,
    pub norm: ErrorNorm,
    pub t_decide: u64,
    pub t_model: u64,
    pub t_corr: u64,
    pub window: usize,
    pub rri: u32,
    pub subchannels: u32,
    pub sigma_d: f64,
    pub sigma_v: f64,
    pub gains: [f64; 5],
    pub a_min: f64,
    pub a_max: f64,
    pub leader_profile: LeaderProfile,
    pub initial_speed: f64,
    pub seed: u64,
    pub confirmation_repeats: u32,
    pub confirmation_timeout: u64,
    pub horizon: u64,
    /// SPS persistence: reselect the resource after this many transmissions.
    pub persistence: u32,
    pub include_warmup: bool,
    /// Slots excluded from metrics unless `include_warmup`.
    pub warmup: u64,
    /// Loss-injection hook: drop the nth emitted packet (0-based).
    pub drop_nth_packet: Option<u64>,
    /// Handshake and control packets bypass the resource pool when set.
    pub exempt_control: bool,
    // SMART knobs.
    pub m_min: f64,
    pub m_max: f64,
    pub m_int: f64,
    pub m_init: Option<f64>,
    pub eva_int: u64,
    pub delta_cost: Option<f64>,
    pub delta_base: f64,
    pub m_ref: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Parallel,
            update_interval: 40,
            channel: Channel::Cv2x,
            platoons: 3,
            vehicles_per_platoon: 8,
            road_length: 1500.0,
            duration: 40_000,
            d_des: 10.0,
            delta: 0.1,
            norm: ErrorNorm::L1,
            t_decide: 10,
            // Calibrating every 100 ms keeps the fitted window inside one
            // motion regime; corrections carry the confirmed model at 2 Hz.
            t_model: 100,
            t_corr: 200,
            window: 100,
            rri: 10,
            subchannels: 2,
            // Odometry-grade noise at 1 kHz sampling: small enough that the
            // fitted model stays predictive over a correction interval.
            sigma_d: 0.01,
            sigma_v: 0.01,
            gains: crate::platoon::ControlWeights::default().w,
            a_min: ACCEL_MIN,
            a_max: ACCEL_MAX,
            leader_profile: LeaderProfile::Platoon,
            initial_speed: 10.0,
            seed: 0,
            confirmation_repeats: 5,
            // Must cover a full handshake round trip under contention-channel
            // scheduling delay (up to two selection windows plus processing).
            confirmation_timeout: 30,
            horizon: 1000,
            persistence: 1,
            include_warmup: false,
            warmup: 2000,
            drop_nth_packet: None,
            exempt_control: false,
            m_min: 0.1,
            m_max: 2.0,
            m_int: 0.1,
            m_init: None,
            eva_int: 1000,
            delta_cost: None,
            delta_base: 0.1,
            // Reference price in the lower half of the grid: the adapter's
            // working region maps to mild thresholds, while prices near
            // m_max buy long silences.
            m_ref: 0.5,
        }
    }
}

impl ScenarioConfig {
    /// The SDR two-vehicle link profile.
    pub fn sdr_link() -> Self {
        Self {
            platoons: 1,
            vehicles_per_platoon: 2,
            channel: Channel::Perfect,
            leader_profile: LeaderProfile::Sdr,
            t_corr: 1000,
            duration: 3000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("update_interval", self.update_interval),
            ("duration", self.duration),
            ("t_decide", self.t_decide),
            ("t_model", self.t_model),
            ("t_corr", self.t_corr),
            ("eva_int", self.eva_int),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invariant(format!("{name} must be positive")));
            }
        }
        if self.platoons == 0 || self.vehicles_per_platoon < 2 {
            return Err(ConfigError::Invariant(
                "need at least one platoon of two vehicles".into(),
            ));
        }
        if self.rri == 0 || self.subchannels == 0 {
            return Err(ConfigError::Invariant("resource pool must be non-empty".into()));
        }
        if self.delta < 0.0 || self.sigma_d < 0.0 || self.sigma_v < 0.0 {
            return Err(ConfigError::Invariant("thresholds and noise must be >= 0".into()));
        }
        if self.window < 3 {
            return Err(ConfigError::Invariant("window must be >= 3".into()));
        }
        if self.a_min >= self.a_max {
            return Err(ConfigError::Invariant("a_min must be below a_max".into()));
        }
        if !(self.m_min <= self.m_max && self.m_int > 0.0) {
            return Err(ConfigError::Invariant("bad auxiliary-cost grid".into()));
        }
        if let Some(m0) = self.m_init {
            if m0 < self.m_min || m0 > self.m_max {
                return Err(ConfigError::Invariant("m_init outside [m_min, m_max]".into()));
            }
        }
        Ok(())
    }

    /// Applies one key=value override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::InvalidValue { key: key.into(), value: value.into() };
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "mode" => {
                self.mode = match value {
                    "parallel" => Mode::Parallel,
                    "parallel_no_correction" => Mode::ParallelNoCorrection,
                    "smart" => Mode::Smart,
                    "status_unaware" => Mode::StatusUnaware,
                    other => {
                        // status_unaware:40 selects the interval inline.
                        if let Some(rest) = other.strip_prefix("status_unaware:") {
                            self.update_interval = rest.parse().map_err(|_| bad())?;
                            Mode::StatusUnaware
                        } else {
                            return Err(bad());
                        }
                    }
                }
            }
            "update_interval" => self.update_interval = num!(),
            "channel" => {
                self.channel = match value {
                    "perfect" => Channel::Perfect,
                    "cv2x" => Channel::Cv2x,
                    _ => return Err(bad()),
                }
            }
            "platoons" => self.platoons = num!(),
            "vehicles_per_platoon" => self.vehicles_per_platoon = num!(),
            "road_length" => self.road_length = num!(),
            "duration" => self.duration = num!(),
            "d_des" => self.d_des = num!(),
            "delta" => self.delta = num!(),
            "norm" => {
                self.norm = match value {
                    "l1" => ErrorNorm::L1,
                    "l2" => ErrorNorm::L2,
                    _ => return Err(bad()),
                }
            }
            "t_decide" => self.t_decide = num!(),
            "t_model" => self.t_model = num!(),
            "t_corr" => self.t_corr = num!(),
            "window" => self.window = num!(),
            "rri" => self.rri = num!(),
            "subchannels" => self.subchannels = num!(),
            "sigma_d" => self.sigma_d = num!(),
            "sigma_v" => self.sigma_v = num!(),
            "w1" => self.gains[0] = num!(),
            "w2" => self.gains[1] = num!(),
            "w3" => self.gains[2] = num!(),
            "w4" => self.gains[3] = num!(),
            "w5" => self.gains[4] = num!(),
            "a_min" => self.a_min = num!(),
            "a_max" => self.a_max = num!(),
            "leader_profile" => {
                self.leader_profile = match value {
                    "sdr" => LeaderProfile::Sdr,
                    "platoon" => LeaderProfile::Platoon,
                    "constant" => LeaderProfile::Constant,
                    "random" => LeaderProfile::RandomPiecewise,
                    "impulse" => LeaderProfile::Impulse,
                    _ => return Err(bad()),
                }
            }
            "initial_speed" => self.initial_speed = num!(),
            "seed" => self.seed = num!(),
            "confirmation_repeats" => self.confirmation_repeats = num!(),
            "confirmation_timeout" => self.confirmation_timeout = num!(),
            "horizon" => self.horizon = num!(),
            "persistence" => self.persistence = num!(),
            "include_warmup" => self.include_warmup = value.parse().map_err(|_| bad())?,
            "warmup" => self.warmup = num!(),
            "drop_nth_packet" => {
                self.drop_nth_packet = if value == "none" { None } else { Some(num!()) }
            }
            "exempt_control" => self.exempt_control = value.parse().map_err(|_| bad())?,
            "m_min" => self.m_min = num!(),
            "m_max" => self.m_max = num!(),
            "m_int" => self.m_int = num!(),
            "m_init" => self.m_init = if value == "none" { None } else { Some(num!()) },
            "eva_int" => self.eva_int = num!(),
            "delta_cost" => self.delta_cost = if value == "none" { None } else { Some(num!()) },
            "delta_base" => self.delta_base = num!(),
            "m_ref" => self.m_ref = num!(),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses a whole key=value document on top of the defaults.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedLine(line.into()))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Echoes the effective configuration as key=value text; feeding the
    /// output back through `from_kv` reproduces this config.
    pub fn to_kv(&self) -> String {
        let mode = match self.mode {
            Mode::Parallel => "parallel",
            Mode::ParallelNoCorrection => "parallel_no_correction",
            Mode::StatusUnaware => "status_unaware",
            Mode::Smart => "smart",
        };
        let channel = match self.channel {
            Channel::Perfect => "perfect",
            Channel::Cv2x => "cv2x",
        };
        let norm = match self.norm {
            ErrorNorm::L1 => "l1",
            ErrorNorm::L2 => "l2",
        };
        let profile = match self.leader_profile {
            LeaderProfile::Sdr => "sdr",
            LeaderProfile::Platoon => "platoon",
            LeaderProfile::Constant => "constant",
            LeaderProfile::RandomPiecewise => "random",
            LeaderProfile::Impulse => "impulse",
        };
        let opt = |v: Option<f64>| v.map_or("none".into(), |x| format!("{x}"));
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        push("mode", mode.into());
        push("update_interval", self.update_interval.to_string());
        push("channel", channel.into());
        push("platoons", self.platoons.to_string());
        push("vehicles_per_platoon", self.vehicles_per_platoon.to_string());
        push("road_length", self.road_length.to_string());
        push("duration", self.duration.to_string());
        push("d_des", self.d_des.to_string());
        push("delta", self.delta.to_string());
        push("norm", norm.into());
        push("t_decide", self.t_decide.to_string());
        push("t_model", self.t_model.to_string());
        push("t_corr", self.t_corr.to_string());
        push("window", self.window.to_string());
        push("rri", self.rri.to_string());
        push("subchannels", self.subchannels.to_string());
        push("sigma_d", self.sigma_d.to_string());
        push("sigma_v", self.sigma_v.to_string());
        for (i, w) in self.gains.iter().enumerate() {
            push(&format!("w{}", i + 1), w.to_string());
        }
        push("a_min", self.a_min.to_string());
        push("a_max", self.a_max.to_string());
        push("leader_profile", profile.into());
        push("initial_speed", self.initial_speed.to_string());
        push("seed", self.seed.to_string());
        push("confirmation_repeats", self.confirmation_repeats.to_string());
        push("confirmation_timeout", self.confirmation_timeout.to_string());
        push("horizon", self.horizon.to_string());
        push("persistence", self.persistence.to_string());
        push("include_warmup", self.include_warmup.to_string());
        push("warmup", self.warmup.to_string());
        push(
            "drop_nth_packet",
            self.drop_nth_packet.map_or("none".into(), |v| v.to_string()),
        );
        push("exempt_control", self.exempt_control.to_string());
        push("m_min", self.m_min.to_string());
        push("m_max", self.m_max.to_string());
        push("m_int", self.m_int.to_string());
        push("m_init", opt(self.m_init));
        push("eva_int", self.eva_int.to_string());
        push("delta_cost", opt(self.delta_cost));
        push("delta_base", self.delta_base.to_string());
        push("m_ref", self.m_ref.to_string());
        s
    }
}
