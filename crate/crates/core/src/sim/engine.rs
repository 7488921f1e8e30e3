//! The world loop: vehicles, links, channel access and cost adaptation.
//!
//! Slot order: control application and kinematics, sensing, follower
//! transmit blocks, leader emissions, channel resolution, leader receive
//! blocks, then (on decision slots) control recomputation and (on
//! evaluation-window boundaries) auxiliary-cost adaptation. Follower-bound
//! deliveries are consumed at the start of the next slot; leader-bound
//! deliveries are consumed in the delivery slot.

use crate::mac::{
    resolve_subframe, select_resource, MacResource, NodeId, Outcome, ResourcePool, SubframeTx,
};
use crate::platoon::{
    cacc_acceleration, integrate, leader_profile_platoon, leader_profile_sdr, sense,
    ControlWeights, VehicleState, SLOT_DT,
};
use crate::protocol::{
    AccelEntry, Dest, Packet, PacketKind, Payload, ProtocolConfig, RxState, TxState,
};
use crate::sim::config::{Channel, LeaderProfile, Mode, ScenarioConfig};
use crate::sim::metrics::{
    AoiRow, MTraceRow, MacEventRow, Metrics, PacketCounts, PacketRow, TrajectoryRow, Traces,
};
use crate::smart::{adapt_cost, policy_threshold, CostAdapterState};
use crate::status_model::{StatusModel, StatusVector};
/// Assignment rebroadcast threshold (m/s^2) and heartbeat period (slots).
const ASSIGN_EPS: f64 = 0.02;
const ASSIGN_HEARTBEAT: u64 = 100;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

thread_local! {
    pub static MM_SLOTS: std::cell::Cell<u64> = std::cell::Cell::new(0);
}
use rayon::prelude::*;
use std::collections::HashSet;

/// Uninformative starting model: until the first calibration the prediction
/// error is large, so every decision slot transmits over the air.
fn initial_model() -> StatusModel {
    StatusModel::zero()
}

/// One follower-to-leader status link plus the follower's actuation state.
struct Link {
    platoon: usize,
    /// Follower position within the platoon (leader is 0).
    k: usize,
    follower: NodeId,
    leader: NodeId,
    tx: Option<TxState>,
    rx: Option<RxState>,
    /// Status-unaware recovery: last delivered status, held.
    zoh: StatusVector,
    /// Leader-side recovery used by the controller.
    recovered: StatusVector,
    /// Acceleration the follower currently applies.
    applied_accel: f64,
    /// Last acceleration the leader assigned on this link.
    assigned: f64,
    /// Assignment value last included in a broadcast for this link.
    sent_accel: f64,
    /// Freshest delivered status generation stamp (age-of-information).
    last_info_ts: u64,
    aoi_sum: u128,
    aoi_slots: u64,
    // Source/destination recovery alignment, tracked after the first
    // confirmed calibration.
    aligned: u64,
    tracked: u64,
    misrun: u64,
    max_misrun: u64,
    max_reduction: f64,
}

/// One channel access: all packets a node hands to the MAC in one slot.
struct Frame {
    tx_slot: u64,
    src: NodeId,
    subchannel: u32,
    packets: Vec<Packet>,
}

struct World {
    cfg: ScenarioConfig,
    rng: ChaCha12Rng,
    vehicles: Vec<VehicleState>,
    links: Vec<Link>,
    weights: ControlWeights,
    pool: ResourcePool,
    /// Frames waiting for their subframe (contention channel only).
    pending: Vec<Frame>,
    /// Packets delivered to followers, consumed next slot.
    follower_inbox: Vec<Vec<Packet>>,
    /// Leader packets generated at slot t, emitted at t + 1.
    leader_outbox: Vec<Vec<Packet>>,
    leader_rand_accel: Vec<f64>,
    adapters: Vec<CostAdapterState>,
    m_cur: Vec<f64>,
    // Window accumulators for the adaptation loop.
    win_cost_sum: Vec<f64>,
    win_cost_sq: Vec<f64>,
    win_cost_n: Vec<u64>,
    win_collisions: Vec<u64>,
    // Metrics accumulators.
    emitted: u64,
    sent: PacketCounts,
    ota_status: u64,
    frames_sent: u64,
    frames_collided: u64,
    deliveries: u64,
    half_duplex: u64,
    used_resources: HashSet<(u64, u32)>,
    /// Semi-persistent scheduling state: per node, the currently held
    /// resource and how many more transmissions it is kept for.
    sps: Vec<Option<(MacResource, u32)>>,
    /// Slot of the last assignment broadcast, per platoon.
    assign_sent_at: Vec<u64>,
    crashed: bool,
    min_gap: f64,
    rec_err_sum: f64,
    rec_err_n: u64,
    rec_err_max: f64,
    window_costs: Vec<f64>,
    m_final: Vec<f64>,
    traces: Option<Traces>,
}

impl World {
    fn new(cfg: &ScenarioConfig, collect_traces: bool) -> Self {
        cfg.validate().expect("invalid scenario configuration");
        let cfg = cfg.clone();
        let v = cfg.vehicles_per_platoon as usize;
        let p_count = cfg.platoons as usize;

        // Column layout behind position 0: desired gaps inside a platoon,
        // a triple gap between platoons.
        let mut vehicles = Vec::with_capacity(p_count * v);
        let mut pos = 0.0;
        for p in 0..p_count {
            for k in 0..v {
                if !vehicles.is_empty() {
                    let front: &VehicleState = vehicles.last().unwrap();
                    let gap = if k == 0 { 3.0 * cfg.d_des } else { cfg.d_des };
                    pos = front.position - front.length - gap;
                }
                let mut s =
                    VehicleState::new(pos, cfg.initial_speed, p as u32, k as u32 + 1);
                if k == 0 && p_count * v > 0 {
                    s.acceleration = 0.0;
                }
                vehicles.push(s);
            }
        }

        let m0 = cfg.m_init.unwrap_or(cfg.m_max);
        let threshold = match cfg.mode {
            Mode::Smart => policy_threshold(m0, cfg.delta_base, cfg.m_ref),
            _ => cfg.delta,
        };
        let t_corr = match cfg.mode {
            Mode::ParallelNoCorrection => None,
            _ => Some(cfg.t_corr),
        };

        let node = |p: usize, k: usize| (p * v + k + 1) as NodeId;
        let mut links = Vec::new();
        for p in 0..p_count {
            for k in 1..v {
                let idx = links.len() as u64;
                let proto = ProtocolConfig {
                    threshold,
                    norm: cfg.norm,
                    t_decide: cfg.t_decide,
                    t_model: cfg.t_model,
                    t_corr,
                    window: cfg.window,
                    confirmation_repeats: cfg.confirmation_repeats,
                    confirmation_timeout: cfg.confirmation_timeout,
                    horizon: cfg.horizon,
                    // Stride the per-link phase so periodic traffic
                    // (corrections especially) spreads across the whole
                    // interval instead of bursting in adjacent slots.
                    phase: idx * 23,
                };
                let follower = node(p, k);
                let leader = node(p, 0);
                // Commissioning knowledge: the follower's exact starting
                // front gap and speed in the formation.
                let front = &vehicles[p * v + k - 1];
                let formation = StatusVector::new(
                    front.position - vehicles[p * v + k].position - front.length,
                    cfg.initial_speed,
                    0.0,
                );
                let (tx, rx) = if cfg.mode == Mode::StatusUnaware {
                    (None, None)
                } else {
                    let tx = TxState::new(follower, leader, proto.clone(), initial_model());
                    let mut rx = RxState::new(leader, follower, proto, initial_model());
                    // Both ends assume the commissioning formation until the
                    // first packet arrives.
                    rx.remote_estimate = formation;
                    (Some(tx), Some(rx))
                };
                links.push(Link {
                    platoon: p,
                    k,
                    follower,
                    leader,
                    tx,
                    rx,
                    zoh: formation,
                    recovered: formation,
                    applied_accel: 0.0,
                    assigned: 0.0,
                    sent_accel: 0.0,
                    last_info_ts: 0,
                    aoi_sum: 0,
                    aoi_slots: 0,
                    aligned: 0,
                    tracked: 0,
                    misrun: 0,
                    max_misrun: 0,
                    max_reduction: f64::NEG_INFINITY,
                });
            }
        }

        let total_nodes = p_count * v;
        World {
            rng: ChaCha12Rng::seed_from_u64(cfg.seed),
            vehicles,
            links,
            weights: ControlWeights { w: cfg.gains, d_des: cfg.d_des },
            pool: ResourcePool::new(cfg.rri, cfg.subchannels),
            pending: Vec::new(),
            follower_inbox: vec![Vec::new(); total_nodes + 1],
            leader_outbox: vec![Vec::new(); p_count],
            leader_rand_accel: vec![0.0; p_count],
            adapters: vec![
                {
                    let mut a = CostAdapterState::new(cfg.m_min, cfg.m_max, cfg.m_int, cfg.eva_int);
                    a.m = m0;
                    a
                };
                p_count
            ],
            m_cur: vec![m0; p_count],
            win_cost_sum: vec![0.0; p_count],
            win_cost_sq: vec![0.0; p_count],
            win_cost_n: vec![0; p_count],
            win_collisions: vec![0; p_count],
            emitted: 0,
            sent: PacketCounts::default(),
            ota_status: 0,
            frames_sent: 0,
            frames_collided: 0,
            deliveries: 0,
            half_duplex: 0,
            used_resources: HashSet::new(),
            sps: vec![None; total_nodes + 1],
            assign_sent_at: vec![0; p_count],
            crashed: false,
            min_gap: f64::INFINITY,
            rec_err_sum: 0.0,
            rec_err_n: 0,
            rec_err_max: 0.0,
            window_costs: Vec::new(),
            m_final: Vec::new(),
            traces: collect_traces.then(Traces::default),
            cfg,
        }
    }

    fn node_index(&self, node: NodeId) -> usize {
        node as usize - 1
    }

    fn leader_global(&self, p: usize) -> usize {
        p * self.cfg.vehicles_per_platoon as usize
    }

    /// Bumper-to-bumper front gap of the vehicle at global index `g`.
    fn gap(&self, g: usize) -> f64 {
        let front = &self.vehicles[g - 1];
        front.position - self.vehicles[g].position - front.length
    }

    fn in_window(&self, t: u64) -> bool {
        self.cfg.include_warmup || t >= self.cfg.warmup
    }

    /// Returns the node's semi-persistently held resource, reselecting
    /// uniformly from the pool once its reuse budget is exhausted.
    fn sps_resource(&mut self, src: NodeId) -> MacResource {
        let slot = self.node_index(src);
        let keep = self.cfg.persistence.max(1);
        let (res, left) = match self.sps[slot] {
            Some((res, left)) if left > 0 => (res, left),
            _ => (select_resource(&mut self.rng, &self.pool), keep),
        };
        self.sps[slot] = Some((res, left - 1));
        res
    }

    /// Hands a node's outgoing packets to the channel.
    fn emit(&mut self, t: u64, src: NodeId, packets: Vec<Packet>) {
        let mut kept = Vec::with_capacity(packets.len());
        for pkt in packets {
            let n = self.emitted;
            self.emitted += 1;
            if self.cfg.drop_nth_packet == Some(n) {
                continue;
            }
            self.sent.bump(pkt.kind());
            if matches!(pkt.kind(), PacketKind::Status | PacketKind::Correction) {
                self.ota_status += 1;
            }
            if let Some(tr) = &mut self.traces {
                tr.packets.push(PacketRow {
                    slot: t,
                    src: pkt.src,
                    dst: match pkt.dst {
                        Dest::Node(n) => n.to_string(),
                        Dest::Broadcast => "broadcast".into(),
                    },
                    kind: pkt.kind().to_string(),
                    timestamp: pkt.timestamp,
                });
            }
            kept.push(pkt);
        }
        if kept.is_empty() {
            return;
        }
        // Optional out-of-band delivery for handshake feedback and control
        // assignments; only sensing-plane traffic then contends for resources.
        if self.cfg.exempt_control && self.cfg.channel == Channel::Cv2x {
            let (exempt, contended): (Vec<Packet>, Vec<Packet>) = kept.into_iter().partition(|p| {
                matches!(p.kind(), PacketKind::Confirmation | PacketKind::AccelAssignment)
            });
            for pkt in exempt {
                self.route(t, pkt);
            }
            kept = contended;
            if kept.is_empty() {
                return;
            }
        }
        match self.cfg.channel {
            Channel::Perfect => {
                for pkt in kept {
                    self.route(t, pkt);
                }
            }
            Channel::Cv2x => {
                // Generate-at-will: a fresh status supersedes any queued,
                // still-unsent one from the same source.
                if kept.iter().any(|p| p.kind() == PacketKind::Status) {
                    for frame in self.pending.iter_mut().filter(|f| f.src == src) {
                        frame.packets.retain(|p| p.kind() != PacketKind::Status);
                    }
                    self.pending.retain(|f| !f.packets.is_empty());
                }
                let res = self.sps_resource(src);
                self.pending.push(Frame {
                    tx_slot: t + res.subframe as u64,
                    src,
                    subchannel: res.subchannel,
                    packets: kept,
                });
            }
        }
    }

    /// Delivers one packet to every addressed node's inbox.
    fn route(&mut self, t: u64, pkt: Packet) {
        let total = self.vehicles.len();
        for idx in 0..total {
            let node = (idx + 1) as NodeId;
            if pkt.addressed_to(node) {
                self.follower_inbox[idx].push(pkt.clone());
                self.deliveries += 1;
            }
        }
        let _ = t;
    }

    /// Resolves the contention channel for slot `t`.
    fn resolve_channel(&mut self, t: u64) {
        if self.cfg.channel != Channel::Cv2x {
            return;
        }
        let due: Vec<Frame> = {
            let mut due = Vec::new();
            let mut rest = Vec::new();
            for f in self.pending.drain(..) {
                if f.tx_slot <= t {
                    due.push(f);
                } else {
                    rest.push(f);
                }
            }
            self.pending = rest;
            due
        };
        if due.is_empty() {
            return;
        }
        let receivers: Vec<NodeId> = (1..=self.vehicles.len() as NodeId).collect();
        let txs: Vec<SubframeTx> = due
            .iter()
            .map(|f| SubframeTx { src: f.src, subchannel: f.subchannel })
            .collect();
        let records = resolve_subframe(&txs, &receivers);

        let follower_nodes: HashSet<NodeId> = self.links.iter().map(|l| l.follower).collect();
        let mut per_frame = vec![(false, 0u32, 0u32); due.len()]; // collided, delivered, hd
        for rec in &records {
            let frame = &due[rec.tx_index];
            match rec.outcome {
                Outcome::Delivered => {
                    per_frame[rec.tx_index].1 += 1;
                    for pkt in &frame.packets {
                        if pkt.addressed_to(rec.receiver) {
                            self.deliveries += 1;
                            self.follower_inbox[rec.receiver as usize - 1].push(pkt.clone());
                        }
                    }
                }
                Outcome::Collided => per_frame[rec.tx_index].0 = true,
                Outcome::HalfDuplexLost => {
                    let addressed =
                        frame.packets.iter().any(|p| p.addressed_to(rec.receiver));
                    if addressed {
                        per_frame[rec.tx_index].2 += 1;
                        self.half_duplex += 1;
                    }
                }
            }
        }
        for (i, frame) in due.iter().enumerate() {
            self.frames_sent += 1;
            if self.in_window(t) {
                self.used_resources.insert((t, frame.subchannel));
            }
            let (collided, delivered, hd) = per_frame[i];
            if collided {
                self.frames_collided += 1;
                if let Some(link) =
                    self.links.iter().find(|l| l.follower == frame.src)
                {
                    self.win_collisions[link.platoon] += 1;
                }
            }
            let _ = follower_nodes;
            if let Some(tr) = &mut self.traces {
                tr.mac_events.push(MacEventRow {
                    slot: t,
                    src: frame.src,
                    subchannel: frame.subchannel,
                    packets: frame.packets.len() as u32,
                    collided,
                    delivered,
                    half_duplex: hd,
                });
            }
        }
    }

    fn leader_accel(&mut self, t: u64, p: usize) -> (Option<f64>, f64) {
        // Returns (fixed velocity, acceleration).
        match self.cfg.leader_profile {
            LeaderProfile::Sdr => (None, leader_profile_sdr(t)),
            LeaderProfile::Platoon => {
                let (v, a) = leader_profile_platoon(t);
                (Some(v), a)
            }
            LeaderProfile::Constant => (None, 0.0),
            LeaderProfile::RandomPiecewise => {
                if t % 1000 == 0 {
                    self.leader_rand_accel[p] = self.rng.random_range(-1.5..1.5);
                }
                (None, self.leader_rand_accel[p])
            }
            LeaderProfile::Impulse => {
                // Brake pulse followed by a symmetric recovery pulse.
                let a = if (5_000..5_500).contains(&t) {
                    -3.0
                } else if (5_500..6_000).contains(&t) {
                    3.0
                } else {
                    0.0
                };
                (None, a)
            }
        }
    }

    fn step(&mut self, t: u64) {
        let v = self.cfg.vehicles_per_platoon as usize;
        let p_count = self.cfg.platoons as usize;
        let in_window = self.in_window(t);

        // 1. Control application and kinematics.
        for p in 0..p_count {
            let g = self.leader_global(p);
            let (fixed_v, accel) = self.leader_accel(t, p);
            let s = self.vehicles[g];
            self.vehicles[g] = match fixed_v {
                Some(tv) => VehicleState {
                    position: s.position + tv * SLOT_DT,
                    velocity: tv,
                    acceleration: accel,
                    ..s
                },
                None => integrate(&s, accel, SLOT_DT),
            };
        }
        for li in 0..self.links.len() {
            let (p, k, a) =
                (self.links[li].platoon, self.links[li].k, self.links[li].applied_accel);
            let g = self.leader_global(p) + k;
            self.vehicles[g] = integrate(&self.vehicles[g], a, SLOT_DT);
        }

        // Gap bookkeeping and crash detection.
        for li in 0..self.links.len() {
            let (p, k) = (self.links[li].platoon, self.links[li].k);
            let gap = self.gap(self.leader_global(p) + k);
            if gap <= 0.0 {
                self.crashed = true;
            }
            if in_window {
                self.min_gap = self.min_gap.min(gap);
                let reduction = self.cfg.d_des - gap;
                let link = &mut self.links[li];
                link.max_reduction = link.max_reduction.max(reduction);
            }
        }

        if let Some(tr) = &mut self.traces {
            if t % 10 == 0 {
                for (g, s) in self.vehicles.iter().enumerate() {
                    let gap = if s.index == 1 {
                        0.0
                    } else {
                        let front = &self.vehicles[g - 1];
                        front.position - s.position - front.length
                    };
                    tr.trajectories.push(TrajectoryRow {
                        slot: t,
                        platoon: s.platoon,
                        index: s.index,
                        position: s.position,
                        velocity: s.velocity,
                        acceleration: s.acceleration,
                        gap,
                    });
                }
            }
        }

        // 2 + 3. Sensing and the follower transmit blocks.
        for li in 0..self.links.len() {
            let (p, k) = (self.links[li].platoon, self.links[li].k);
            let g = self.leader_global(p) + k;
            let veh = self.vehicles[g];
            // The status is the front gap plus the vehicle's own velocity
            // and acceleration, as ranged/measured on board. Gap magnitudes
            // stay near the desired distance, which keeps the sliding-window
            // fit well conditioned.
            let sensed = sense(
                self.gap(g),
                veh.velocity,
                veh.acceleration,
                &mut self.rng,
                self.cfg.sigma_d,
                self.cfg.sigma_v,
            );

            let follower = self.links[li].follower;
            let follower_idx = self.node_index(follower);
            let inbox = std::mem::take(&mut self.follower_inbox[follower_idx]);
            // Assignments from the own leader: actuation and, in the
            // adaptive mode, the piggybacked auxiliary cost.
            for pkt in &inbox {
                if pkt.src != self.links[li].leader {
                    continue;
                }
                if let Payload::AccelAssignment { entries } = &pkt.payload {
                    for e in entries {
                        if e.follower == follower {
                            self.links[li].applied_accel = e.accel;
                            if let (Some(m), Some(tx)) =
                                (e.aux_cost, self.links[li].tx.as_mut())
                            {
                                tx.cfg.threshold = policy_threshold(
                                    m,
                                    self.cfg.delta_base,
                                    self.cfg.m_ref,
                                );
                            }
                        }
                    }
                }
            }

            match self.cfg.mode {
                Mode::StatusUnaware => {
                    // Same per-link phase staggering as the protocol timers.
                    let phase = li as u64 % self.cfg.update_interval;
                    if t > 0 && t % self.cfg.update_interval == phase {
                        let pkt = Packet {
                            src: follower,
                            dst: Dest::Node(self.links[li].leader),
                            timestamp: t,
                            payload: Payload::Status(sensed),
                        };
                        self.emit(t, follower, vec![pkt]);
                    }
                }
                _ => {
                    let leader = self.links[li].leader;
                    let confirmations: Vec<Packet> = inbox
                        .iter()
                        .filter(|pkt| {
                            pkt.src == leader && pkt.kind() == PacketKind::Confirmation
                        })
                        .cloned()
                        .collect();
                    let tx = self.links[li].tx.as_mut().unwrap();
                    let out = tx
                        .begin_slot(t, sensed, &confirmations)
                        .expect("follower clock is the slot counter");
                    // Broadcast medium without per-packet feedback: the
                    // transmitter assumes success.
                    tx.finish_slot(t, true);
                    self.emit(t, follower, out);
                }
            }
        }

        // 4. Leader emissions: queued assignments plus due confirmations.
        for p in 0..p_count {
            let leader = (self.leader_global(p) + 1) as NodeId;
            let mut outgoing = std::mem::take(&mut self.leader_outbox[p]);
            for li in 0..self.links.len() {
                if self.links[li].platoon != p {
                    continue;
                }
                if let Some(rx) = self.links[li].rx.as_mut() {
                    outgoing.extend(rx.due_confirmations(t));
                }
            }
            if !outgoing.is_empty() {
                self.emit(t, leader, outgoing);
            }
        }

        // 5. Channel resolution for this subframe.
        self.resolve_channel(t);

        // 6. Leader receive blocks, one status output per link per slot.
        for li in 0..self.links.len() {
            let leader = self.links[li].leader;
            let follower = self.links[li].follower;
            let delivered: Vec<Packet> = self.follower_inbox[self.node_index(leader)]
                .iter()
                .filter(|pkt| pkt.src == follower)
                .cloned()
                .collect();
            // Age of information: any status-bearing delivery refreshes.
            for pkt in &delivered {
                if matches!(
                    pkt.kind(),
                    PacketKind::Status | PacketKind::Correction | PacketKind::ModelCalibration
                ) {
                    let link = &mut self.links[li];
                    link.last_info_ts = link.last_info_ts.max(pkt.timestamp);
                }
            }
            match self.cfg.mode {
                Mode::StatusUnaware => {
                    for pkt in &delivered {
                        if let Payload::Status(s) = &pkt.payload {
                            self.links[li].zoh = *s;
                        }
                    }
                    self.links[li].recovered = self.links[li].zoh;
                }
                _ => {
                    let link = &mut self.links[li];
                    let est = link
                        .rx
                        .as_mut()
                        .unwrap()
                        .rx_step(t, &delivered)
                        .expect("leader clock is the slot counter");
                    link.recovered = est;
                    if li == 15 && (39200..=39320).contains(&t) && std::env::var_os("SL_DEBUG2").is_some() {
                        let mirror = link.tx.as_ref().unwrap().local_estimate.distance;
                        let rx_at = link.rx.as_ref().unwrap().current_model.estimated_at;
                        let tx_at = link.tx.as_ref().unwrap().current_model.estimated_at;
                        let (pp, kk) = (link.platoon, link.k);
                        let kinds: Vec<String> =
                            delivered.iter().map(|p| p.kind().to_string()).collect();
                        let true_pos = self.vehicles[pp * self.cfg.vehicles_per_platoon as usize + kk].position;
                        eprintln!(
                            "DBG2 t={t} rec={:.4} mirror={mirror:.4} true={true_pos:.4} ndeliv={n} kinds={kinds:?} rxmodel_at={rx_at} txmodel_at={tx_at}",
                            est.distance,
                            n = delivered.len(),
                        );
                    }
                    if std::env::var_os("SL_MM").is_some() {
                        let txm = &link.tx.as_ref().unwrap().current_model;
                        let rxm = &link.rx.as_ref().unwrap().current_model;
                        if txm != rxm {
                            MM_SLOTS.with(|c| c.set(c.get() + 1));
                        }
                    }
                    // Alignment after the first confirmed calibration.
                    let tx = link.tx.as_ref().unwrap();
                    if let Some(first) = tx.first_confirmed_calibration {
                        if t >= first {
                            link.tracked += 1;
                            if tx.local_estimate.bits_eq(&est) {
                                link.aligned += 1;
                                link.misrun = 0;
                            } else {
                                link.misrun += 1;
                                link.max_misrun = link.max_misrun.max(link.misrun);
                            }
                        }
                    }
                }
            }
            if in_window {
                let link = &mut self.links[li];
                link.aoi_sum += t.saturating_sub(link.last_info_ts) as u128;
                link.aoi_slots += 1;
            }
            if let Some(tr) = &mut self.traces {
                if t % self.cfg.t_decide == 0 {
                    let link = &self.links[li];
                    tr.aoi.push(AoiRow {
                        slot: t,
                        platoon: link.platoon as u32,
                        follower: link.k as u32 + 1,
                        age: t.saturating_sub(link.last_info_ts),
                    });
                }
            }
        }
        // Leader inboxes are fully consumed each slot.
        for p in 0..p_count {
            let leader_idx = self.leader_global(p);
            self.follower_inbox[leader_idx].clear();
        }

        // 7. Decision slots: the leader recomputes the platoon's
        // accelerations from recovered statuses and queues one broadcast
        // assignment, emitted next slot.
        if t > 0 && t % self.cfg.t_decide == 0 {
            for p in 0..p_count {
                let leader_g = self.leader_global(p);
                let leader_node = (leader_g + 1) as NodeId;
                let leader_v = self.vehicles[leader_g].velocity;
                let leader_a = self.vehicles[leader_g].acceleration;
                let base = self.links.iter().position(|l| l.platoon == p).unwrap();
                let mut entries = Vec::with_capacity(v - 1);
                for k in 1..v {
                    let li = base + (k - 1);
                    let est = self.links[li].recovered;
                    let (v_prev, a_prev) = if k == 1 {
                        (leader_v, leader_a)
                    } else {
                        let prev = &self.links[li - 1];
                        (prev.recovered.velocity, prev.assigned)
                    };
                    let gap_hat = est.distance;
                    let a = cacc_acceleration(
                        &self.weights,
                        gap_hat,
                        est.velocity,
                        v_prev,
                        leader_v,
                        a_prev,
                        leader_a,
                        self.cfg.a_min,
                        self.cfg.a_max,
                    );
                    self.links[li].assigned = a;
                    entries.push(AccelEntry {
                        follower: self.links[li].follower,
                        accel: a,
                        echoed_calibration: self.links[li]
                            .rx
                            .as_ref()
                            .and_then(|rx| rx.last_calibration_timestamp),
                        aux_cost: (self.cfg.mode == Mode::Smart).then(|| self.m_cur[p]),
                    });

                    // Recovery error and control-cost window samples.
                    let true_gap = self.gap(leader_g + k);
                    if in_window {
                        let err = (gap_hat - true_gap).abs();
                        if err > 2.0 && std::env::var_os("SL_DEBUG").is_some() {
                            eprintln!(
                                "DBG t={t} li={li} k={k} err={err:.3} gap_hat={gap_hat:.3} true={true_gap:.3} own_rec={:.3} own_true={:.3}",
                                self.links[li].recovered.distance,
                                self.vehicles[leader_g + k].position,
                            );
                        }
                        self.rec_err_sum += err;
                        self.rec_err_n += 1;
                        self.rec_err_max = self.rec_err_max.max(err);
                    }
                    let e = gap_hat - self.cfg.d_des;
                    self.win_cost_sum[p] += e;
                    self.win_cost_sq[p] += e * e;
                    self.win_cost_n[p] += 1;
                }
                // Broadcast only when an assignment meaningfully changed,
                // with a periodic heartbeat so followers that missed a frame
                // resynchronize; steady-state platoons stay quiet.
                let changed = (0..v - 1).any(|i| {
                    (self.links[base + i].assigned - self.links[base + i].sent_accel).abs()
                        > ASSIGN_EPS
                });
                if changed || t - self.assign_sent_at[p] >= ASSIGN_HEARTBEAT {
                    for i in 0..v - 1 {
                        self.links[base + i].sent_accel = self.links[base + i].assigned;
                    }
                    self.assign_sent_at[p] = t;
                    self.leader_outbox[p].push(Packet {
                        src: leader_node,
                        dst: Dest::Broadcast,
                        timestamp: t,
                        payload: Payload::AccelAssignment { entries },
                    });
                }
            }
        }

        // 8. Evaluation-window boundary: control cost and, in the adaptive
        // mode, one auxiliary-cost step per platoon.
        if t > 0 && t % self.cfg.eva_int == 0 {
            let mut fleet_cost = 0.0;
            for p in 0..p_count {
                let n = self.win_cost_n[p].max(1) as f64;
                let mean = self.win_cost_sum[p] / n;
                let var = (self.win_cost_sq[p] / n - mean * mean).max(0.0);
                let cost = var.sqrt();
                fleet_cost += cost;
                if self.cfg.mode == Mode::Smart {
                    let mut adapter = self.adapters[p];
                    if adapter.delta_cost.is_none() {
                        adapter.delta_cost = self.cfg.delta_cost;
                    }
                    let next = adapt_cost(&adapter, cost, self.win_collisions[p]);
                    self.adapters[p] = next;
                    self.m_cur[p] = next.m;
                    if let Some(tr) = &mut self.traces {
                        tr.m_trace.push(MTraceRow { slot: t, platoon: p as u32, m: next.m });
                    }
                }
                self.win_cost_sum[p] = 0.0;
                self.win_cost_sq[p] = 0.0;
                self.win_cost_n[p] = 0;
                self.win_collisions[p] = 0;
            }
            if self.cfg.include_warmup || t > self.cfg.warmup {
                self.window_costs.push(fleet_cost / p_count as f64);
            }
        }
    }

    fn finish(mut self) -> (Metrics, Option<Traces>) {
        let cfg = &self.cfg;
        let slots_measured = if cfg.include_warmup {
            cfg.duration
        } else {
            cfg.duration.saturating_sub(cfg.warmup)
        }
        .max(1);
        let per_follower: Vec<f64> = self
            .links
            .iter()
            .map(|l| if l.max_reduction.is_finite() { l.max_reduction } else { 0.0 })
            .collect();
        let max_gap_reduction =
            per_follower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let aoi_total: u128 = self.links.iter().map(|l| l.aoi_sum).sum();
        let aoi_slots: u64 = self.links.iter().map(|l| l.aoi_slots).sum();
        let aligned_fraction = self
            .links
            .iter()
            .filter(|l| l.tracked > 0)
            .map(|l| l.aligned as f64 / l.tracked as f64)
            .fold(1.0f64, f64::min);
        let max_misalignment_run =
            self.links.iter().map(|l| l.max_misrun).max().unwrap_or(0);
        let first_cal = self
            .links
            .iter()
            .filter_map(|l| l.tx.as_ref().and_then(|tx| tx.first_confirmed_calibration))
            .min();
        self.m_final = if cfg.mode == Mode::Smart { self.m_cur.clone() } else { Vec::new() };
        let metrics = Metrics {
            seed: cfg.seed,
            duration: cfg.duration,
            warmup: cfg.warmup,
            crashed: self.crashed,
            min_gap: if self.min_gap.is_finite() { self.min_gap } else { cfg.d_des },
            max_gap_reduction: if max_gap_reduction.is_finite() {
                max_gap_reduction
            } else {
                0.0
            },
            per_follower_max_reduction: per_follower,
            recovery_mae: self.rec_err_sum / self.rec_err_n.max(1) as f64,
            recovery_max_err: self.rec_err_max,
            mean_aoi: aoi_total as f64 / (aoi_slots.max(1)) as f64,
            sent: self.sent,
            ota_status_packets: self.ota_status,
            frames_sent: self.frames_sent,
            frames_collided: self.frames_collided,
            deliveries: self.deliveries,
            half_duplex_losses: self.half_duplex,
            occupancy: self.used_resources.len() as f64
                / (slots_measured as f64 * cfg.subchannels as f64),
            final_window_cost: {
                // Steady-state cost: mean over the last quarter of windows,
                // which smooths single-window sampling noise.
                let n = self.window_costs.len();
                let tail = &self.window_costs[n - (n / 4).max(1).min(n)..];
                if tail.is_empty() {
                    0.0
                } else {
                    tail.iter().sum::<f64>() / tail.len() as f64
                }
            },
            window_costs: std::mem::take(&mut self.window_costs),
            m_final: std::mem::take(&mut self.m_final),
            aligned_fraction,
            max_misalignment_run,
            first_confirmed_calibration: first_cal,
        };
        (metrics, self.traces.take())
    }
}

fn run_inner(cfg: &ScenarioConfig, collect_traces: bool) -> (Metrics, Option<Traces>) {
    let mut world = World::new(cfg, collect_traces);
    for t in 0..cfg.duration {
        world.step(t);
    }
    world.finish()
}

/// Runs one scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Metrics {
    run_inner(cfg, false).0
}

/// Runs one scenario and keeps the per-slot trace tables.
pub fn run_with_traces(cfg: &ScenarioConfig) -> (Metrics, Traces) {
    let (m, tr) = run_inner(cfg, true);
    (m, tr.unwrap())
}

/// Runs the scenario once per seed in parallel. Results come back sorted by
/// seed, so aggregation is independent of scheduling order.
pub fn replicate(cfg: &ScenarioConfig, seeds: &[u64]) -> Vec<(u64, Metrics)> {
    let mut out: Vec<(u64, Metrics)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            (seed, run(&c))
        })
        .collect();
    out.sort_by_key(|&(s, _)| s);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> ScenarioConfig {
        ScenarioConfig {
            platoons: 1,
            vehicles_per_platoon: 4,
            duration: 6000,
            warmup: 1000,
            channel: Channel::Perfect,
            leader_profile: LeaderProfile::Platoon,
            ..Default::default()
        }
    }

    #[test]
    fn determinism_same_seed_same_metrics() {
        let cfg = ScenarioConfig { channel: Channel::Cv2x, ..quick_cfg() };
        let a = run(&cfg);
        let b = run(&cfg);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn different_seeds_differ_on_contention() {
        let cfg = ScenarioConfig { channel: Channel::Cv2x, ..quick_cfg() };
        let mut other = cfg.clone();
        other.seed = 1;
        let a = run(&cfg);
        let b = run(&other);
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn no_crash_on_perfect_channel() {
        let m = run(&quick_cfg());
        assert!(!m.crashed, "min gap {}", m.min_gap);
        assert!(m.min_gap > 0.0);
    }

    #[test]
    fn constant_leader_stays_in_formation() {
        let cfg = ScenarioConfig {
            leader_profile: LeaderProfile::Constant,
            sigma_d: 0.0,
            sigma_v: 0.0,
            ..quick_cfg()
        };
        let m = run(&cfg);
        assert!(!m.crashed);
        // Nothing perturbs the formation, so the gap stays near desired.
        assert!(m.max_gap_reduction < 0.5, "reduction {}", m.max_gap_reduction);
    }

    #[test]
    fn perfect_channel_alignment_holds() {
        let m = run(&quick_cfg());
        assert!(m.first_confirmed_calibration.is_some());
        assert_eq!(m.aligned_fraction, 1.0, "max run {}", m.max_misalignment_run);
    }

    #[test]
    fn status_unaware_packet_budget() {
        let cfg = ScenarioConfig {
            mode: Mode::StatusUnaware,
            update_interval: 40,
            ..quick_cfg()
        };
        let m = run(&cfg);
        // Three followers, one packet each per 40 slots.
        let expect = 3 * (cfg.duration / 40);
        assert!(m.sent.status.abs_diff(expect) <= 3, "{} vs {expect}", m.sent.status);
        assert_eq!(m.sent.model_calibration, 0);
    }

    #[test]
    fn parallel_sends_fewer_status_packets_than_unaware() {
        let m_par = run(&quick_cfg());
        let cfg = ScenarioConfig {
            mode: Mode::StatusUnaware,
            update_interval: 40,
            ..quick_cfg()
        };
        let m_un = run(&cfg);
        assert!(
            m_par.ota_status_packets < m_un.ota_status_packets,
            "{} vs {}",
            m_par.ota_status_packets,
            m_un.ota_status_packets
        );
    }

    #[test]
    fn replicate_is_order_invariant() {
        let cfg = ScenarioConfig { duration: 3000, ..quick_cfg() };
        let a = replicate(&cfg, &[3, 1, 2]);
        let b = replicate(&cfg, &[1, 2, 3]);
        let key =
            |v: &Vec<(u64, Metrics)>| v.iter().map(|(s, _)| *s).collect::<Vec<_>>();
        assert_eq!(key(&a), vec![1, 2, 3]);
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn traces_are_populated() {
        let (_, tr) = run_with_traces(&quick_cfg());
        assert!(!tr.trajectories.is_empty());
        assert!(!tr.packets.is_empty());
        assert!(!tr.aoi.is_empty());
    }

    #[test]
    fn smart_mode_keeps_m_inside_bounds() {
        let cfg = ScenarioConfig {
            mode: Mode::Smart,
            channel: Channel::Cv2x,
            duration: 8000,
            ..quick_cfg()
        };
        let m = run(&cfg);
        assert_eq!(m.m_final.len(), 1);
        for &mv in &m.m_final {
            assert!((cfg.m_min..=cfg.m_max).contains(&mv));
        }
    }
}
