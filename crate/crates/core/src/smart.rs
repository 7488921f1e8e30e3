//! Status-aware transmit-decision policies.
//!
//! Contains the decoupled average-cost MDP solver (relative value iteration),
//! a Whittle-style index probe over a grid of auxiliary costs, the online
//! auxiliary-cost adaptation loop, and the threshold-policy family used by
//! the live simulator.

use crate::mac::NodeId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SPAN_TOL: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 100_000;
/// Aperiodicity damping for relative value iteration. The damped chain
/// P' = (1-tau) I + tau P has the same average cost and optimal policy.
const DAMPING: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("relative value iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Silent,
    Transmit,
}

/// Finite two-action MDP for one source node, with a per-transmission
/// auxiliary cost `m` added to the transmit branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoupledMdp {
    pub cost_silent: Vec<f64>,
    pub cost_transmit: Vec<f64>,
    pub p_silent: Vec<Vec<f64>>,
    pub p_transmit: Vec<Vec<f64>>,
    pub aux_cost: f64,
}

impl DecoupledMdp {
    pub fn num_states(&self) -> usize {
        self.cost_silent.len()
    }

    pub fn validate(&self) {
        let n = self.num_states();
        assert_eq!(self.cost_transmit.len(), n);
        assert_eq!(self.p_silent.len(), n);
        assert_eq!(self.p_transmit.len(), n);
        for rows in [&self.p_silent, &self.p_transmit] {
            for row in rows.iter() {
                assert_eq!(row.len(), n);
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "transition row sums to {sum}");
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
        for costs in [&self.cost_silent, &self.cost_transmit] {
            assert!(costs.iter().all(|&c| c.is_finite() && c >= 0.0));
        }
    }
}

#[derive(Debug, Clone)]
pub struct MdpSolution {
    pub policy: Vec<Action>,
    /// Relative cost-to-go, normalized to zero at state 0.
    pub values: Vec<f64>,
    pub average_cost: f64,
    pub sweeps: usize,
}

/// Relative value iteration on the decoupled MDP, run on the damped
/// (aperiodic) chain until the span of successive differences drops below
/// `SPAN_TOL`. Ties break toward `Silent`.
pub fn solve_decoupled(mdp: &DecoupledMdp) -> Result<MdpSolution, SolveError> {
    mdp.validate();
    let n = mdp.num_states();
    let mut h = vec![0.0f64; n];
    let mut th = vec![0.0f64; n];

    let branch = |x: usize, h: &[f64]| -> (f64, f64) {
        let mut silent = mdp.cost_silent[x];
        let mut transmit = mdp.aux_cost + mdp.cost_transmit[x];
        for y in 0..n {
            // Damped transitions: (1-tau) stay + tau * P.
            silent += DAMPING * mdp.p_silent[x][y] * h[y];
            transmit += DAMPING * mdp.p_transmit[x][y] * h[y];
        }
        silent += (1.0 - DAMPING) * h[x];
        transmit += (1.0 - DAMPING) * h[x];
        (silent, transmit)
    };

    let mut sweeps = 0;
    loop {
        sweeps += 1;
        if sweeps > MAX_SWEEPS {
            return Err(SolveError::NoConvergence(MAX_SWEEPS));
        }
        let mut diff_min = f64::INFINITY;
        let mut diff_max = f64::NEG_INFINITY;
        for x in 0..n {
            let (s, t) = branch(x, &h);
            th[x] = s.min(t);
            let d = th[x] - h[x];
            diff_min = diff_min.min(d);
            diff_max = diff_max.max(d);
        }
        let offset = th[0];
        for x in 0..n {
            h[x] = th[x] - offset;
        }
        if diff_max - diff_min < SPAN_TOL {
            let average_cost = 0.5 * (diff_max + diff_min);
            // Undamped relative values: h_orig = tau * h_damped.
            let values: Vec<f64> = h.iter().map(|v| v * DAMPING).collect();
            let policy = (0..n)
                .map(|x| {
                    let (s, t) = branch(x, &h);
                    if t < s {
                        Action::Transmit
                    } else {
                        Action::Silent
                    }
                })
                .collect();
            return Ok(MdpSolution { policy, values, average_cost, sweeps });
        }
    }
}

/// Bellman residual of a solution under the original (undamped) optimality
/// equation, maximized over states.
pub fn bellman_residual(mdp: &DecoupledMdp, sol: &MdpSolution) -> f64 {
    let n = mdp.num_states();
    let mut worst: f64 = 0.0;
    for x in 0..n {
        let silent: f64 = mdp.cost_silent[x]
            + (0..n).map(|y| mdp.p_silent[x][y] * sol.values[y]).sum::<f64>();
        let transmit: f64 = mdp.aux_cost
            + mdp.cost_transmit[x]
            + (0..n).map(|y| mdp.p_transmit[x][y] * sol.values[y]).sum::<f64>();
        let lhs = sol.values[x] + sol.average_cost;
        worst = worst.max((lhs - silent.min(transmit)).abs());
    }
    worst
}

/// Whittle-style index probe: the largest `m` on the grid for which the
/// policy at `state` still transmits; `m_min - m_int` if it never does.
pub fn index_of_state(
    template: &DecoupledMdp,
    state: usize,
    m_min: f64,
    m_int: f64,
    m_max: f64,
) -> Result<f64, SolveError> {
    let mut index = m_min - m_int;
    for m in m_grid(m_min, m_int, m_max) {
        let mut mdp = template.clone();
        mdp.aux_cost = m;
        let sol = solve_decoupled(&mdp)?;
        if sol.policy[state] == Action::Transmit {
            index = m;
        }
    }
    Ok(index)
}

/// The auxiliary-cost grid `[m_min : m_int : m_max]`, stepped by integer
/// counts to avoid float drift.
pub fn m_grid(m_min: f64, m_int: f64, m_max: f64) -> Vec<f64> {
    let steps = ((m_max - m_min) / m_int + 1e-9).floor() as usize;
    (0..=steps).map(|k| m_min + k as f64 * m_int).collect()
}

/// State of one Supervision Node's auxiliary-cost adaptation loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostAdapterState {
    pub m: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub m_int: f64,
    /// Evaluation window length in slots.
    pub eva_int: u64,
    pub cost_prev: Option<f64>,
    pub collisions_prev: u64,
    /// Cost-change threshold; when `None` it is pinned to 5% of the first
    /// window's cost.
    pub delta_cost: Option<f64>,
}

impl CostAdapterState {
    pub fn new(m_min: f64, m_max: f64, m_int: f64, eva_int: u64) -> Self {
        // Initial auxiliary cost is m_max.
        Self {
            m: m_max,
            m_min,
            m_max,
            m_int,
            eva_int,
            cost_prev: None,
            collisions_prev: 0,
            delta_cost: None,
        }
    }
}

/// One auxiliary-cost adaptation step, invoked once per evaluation window.
///
/// Cost up by more than the threshold with more collisions: raise `m`;
/// cost change within the threshold: keep `m`; otherwise lower `m`.
/// `m` is clamped into `[m_min, m_max]`.
pub fn adapt_cost(
    state: &CostAdapterState,
    window_cost: f64,
    window_collisions: u64,
) -> CostAdapterState {
    let mut next = *state;
    next.collisions_prev = window_collisions;
    let Some(prev) = state.cost_prev else {
        next.cost_prev = Some(window_cost);
        if next.delta_cost.is_none() {
            next.delta_cost = Some(0.05 * window_cost);
        }
        return next;
    };
    let delta = next.delta_cost.unwrap_or(0.05 * prev.max(f64::MIN_POSITIVE));
    let change = window_cost - prev;
    if change > delta && window_collisions > state.collisions_prev {
        next.m = (state.m + state.m_int).min(state.m_max);
    } else if change.abs() < delta {
        // unchanged
    } else {
        next.m = (state.m - state.m_int).max(state.m_min);
    }
    next.cost_prev = Some(window_cost);
    next
}

/// Threshold policy family: transmit iff the prediction error exceeds
/// `delta_base * (m / m_ref)`. Strictly increasing in `m`, so a higher
/// auxiliary cost means higher reluctance to transmit.
pub fn policy_threshold(m: f64, delta_base: f64, m_ref: f64) -> f64 {
    delta_base * (m / m_ref)
}

pub fn policy_decide(m: f64, prediction_error: f64, delta_base: f64, m_ref: f64) -> Action {
    if prediction_error > policy_threshold(m, delta_base, m_ref) {
        Action::Transmit
    } else {
        Action::Silent
    }
}

/// Every destination is elected as a Supervision Node.
pub fn elect_supervisors(links: &[(NodeId, NodeId)]) -> Vec<NodeId> {
    let mut sns: Vec<NodeId> = links.iter().map(|&(_, dst)| dst).collect();
    sns.sort_unstable();
    sns.dedup();
    sns
}

/// Random-walk prediction-error chain used by tests and the `solve-mdp`
/// subcommand: state k is an error magnitude, both actions pay error^2 per
/// slot. Silent drifts up with probability `p_up` and occasionally resets on
/// its own (the estimate coincides with the truth); transmit resets, after
/// which fresh drift applies. The spontaneous reset keeps every stationary
/// policy unichain, so average costs are start-state independent.
pub fn error_chain_mdp(states: usize, p_up: f64, aux_cost: f64) -> DecoupledMdp {
    assert!(states >= 2);
    const P_RESET: f64 = 0.05;
    assert!((0.0..=1.0 - P_RESET).contains(&p_up));
    let n = states;
    let cost: Vec<f64> = (0..n).map(|k| (k * k) as f64).collect();
    let mut p_silent = vec![vec![0.0; n]; n];
    let mut p_transmit = vec![vec![0.0; n]; n];
    for k in 0..n {
        let up = (k + 1).min(n - 1);
        p_silent[k][up] += p_up;
        p_silent[k][k] += 1.0 - p_up - P_RESET;
        p_silent[k][0] += P_RESET;
        p_transmit[k][1] += p_up;
        p_transmit[k][0] += 1.0 - p_up;
    }
    DecoupledMdp {
        cost_silent: cost.clone(),
        cost_transmit: cost,
        p_silent,
        p_transmit,
        aux_cost,
    }
}

#[cfg(test)]
pub(crate) mod brute_force {
    use super::*;
    use nalgebra::DMatrix;

    /// Average cost of a fixed stationary deterministic policy, via the
    /// stationary distribution of the induced chain (solved densely).
    pub fn policy_average_cost(mdp: &DecoupledMdp, policy: &[Action]) -> f64 {
        let n = mdp.num_states();
        // Solve pi (I - P) = 0 with sum(pi) = 1: replace one equation by the
        // normalization row.
        let mut a = DMatrix::zeros(n, n);
        for x in 0..n {
            let row = match policy[x] {
                Action::Silent => &mdp.p_silent[x],
                Action::Transmit => &mdp.p_transmit[x],
            };
            for y in 0..n {
                a[(y, x)] += row[y];
            }
            a[(x, x)] -= 1.0;
        }
        for x in 0..n {
            a[(n - 1, x)] = 1.0;
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let pi = a.lu().solve(&b).expect("unichain policy");
        let mut cost = 0.0;
        for x in 0..n {
            let c = match policy[x] {
                Action::Silent => mdp.cost_silent[x],
                Action::Transmit => mdp.aux_cost + mdp.cost_transmit[x],
            };
            cost += pi[(x, 0)] * c;
        }
        cost
    }

    /// Exhaustive enumeration of all 2^n stationary deterministic policies.
    pub fn best_policy(mdp: &DecoupledMdp) -> (Vec<Action>, f64) {
        let n = mdp.num_states();
        assert!(n <= 16);
        let mut best = (vec![Action::Silent; n], f64::INFINITY);
        for mask in 0..(1u32 << n) {
            let policy: Vec<Action> = (0..n)
                .map(|x| if mask & (1 << x) != 0 { Action::Transmit } else { Action::Silent })
                .collect();
            let cost = policy_average_cost(mdp, &policy);
            if cost < best.1 {
                best = (policy, cost);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_price_transmit_dominates() {
        // Transmit resets to the zero-error state and is cheaper state-wise.
        let mut mdp = error_chain_mdp(4, 0.5, 0.0);
        for k in 1..4 {
            mdp.cost_transmit[k] = mdp.cost_silent[k] - 0.5;
        }
        let sol = solve_decoupled(&mdp).unwrap();
        for k in 1..4 {
            assert_eq!(sol.policy[k], Action::Transmit);
        }
    }

    #[test]
    fn huge_price_silences_everything() {
        let mdp = error_chain_mdp(4, 0.5, 1e6);
        let sol = solve_decoupled(&mdp).unwrap();
        assert!(sol.policy.iter().all(|&a| a == Action::Silent));
    }

    #[test]
    fn three_state_chain_matches_enumeration() {
        let mdp = error_chain_mdp(3, 0.5, 0.5);
        let sol = solve_decoupled(&mdp).unwrap();
        let (_, best_cost) = brute_force::best_policy(&mdp);
        // Policies may tie, so compare achieved cost rather than actions.
        assert!((sol.average_cost - best_cost).abs() < 1e-6);
        assert!(bellman_residual(&mdp, &sol) < 1e-6);
    }

    #[test]
    fn index_never_transmit_is_below_grid() {
        // Zero-error state with transmit strictly costlier at every m > 0.
        let mdp = error_chain_mdp(4, 0.5, 0.0);
        let idx = index_of_state(&mdp, 0, 0.1, 0.1, 1.0).unwrap();
        assert!(idx < 0.1);
        assert!((idx - 0.0).abs() < 1e-12);
    }

    #[test]
    fn index_monotone_in_error() {
        let mdp = error_chain_mdp(5, 0.5, 0.0);
        let idx: Vec<f64> = (0..5)
            .map(|s| index_of_state(&mdp, s, 0.1, 0.1, 3.0).unwrap())
            .collect();
        for w in idx.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "index not monotone: {idx:?}");
        }
    }

    #[test]
    fn index_degenerate_grid() {
        let mdp = error_chain_mdp(4, 0.5, 0.0);
        let sol_at = |m: f64| {
            let mut c = mdp.clone();
            c.aux_cost = m;
            solve_decoupled(&c).unwrap()
        };
        let idx = index_of_state(&mdp, 3, 0.5, 0.1, 0.5).unwrap();
        if sol_at(0.5).policy[3] == Action::Transmit {
            assert!((idx - 0.5).abs() < 1e-12);
        } else {
            assert!(idx < 0.5);
        }
    }

    #[test]
    fn transmit_set_is_up_set() {
        // Threshold structure on the monotone error chain.
        for m in [0.1, 0.5, 1.5, 3.0] {
            let mut mdp = error_chain_mdp(8, 0.4, 0.0);
            mdp.aux_cost = m;
            let sol = solve_decoupled(&mdp).unwrap();
            let mut seen_transmit = false;
            for &a in &sol.policy {
                if seen_transmit {
                    assert_eq!(a, Action::Transmit, "transmit set not an up-set at m={m}");
                }
                if a == Action::Transmit {
                    seen_transmit = true;
                }
            }
        }
    }

    #[test]
    fn adapter_increase_branch() {
        let mut s = CostAdapterState::new(0.1, 2.0, 0.1, 1000);
        s.m = 1.0;
        s.cost_prev = Some(1.0);
        s.delta_cost = Some(0.05);
        s.collisions_prev = 10;
        let next = adapt_cost(&s, 1.1, 20);
        assert!((next.m - 1.1).abs() < 1e-12);
        assert_eq!(next.cost_prev, Some(1.1));
    }

    #[test]
    fn adapter_unchanged_branch() {
        let mut s = CostAdapterState::new(0.1, 2.0, 0.1, 1000);
        s.m = 1.0;
        s.cost_prev = Some(1.0);
        s.delta_cost = Some(0.05);
        let next = adapt_cost(&s, 1.01, 100);
        assert_eq!(next.m, 1.0);
    }

    #[test]
    fn adapter_clamps_at_floor() {
        let mut s = CostAdapterState::new(0.1, 2.0, 0.1, 1000);
        s.m = 0.1;
        s.cost_prev = Some(1.0);
        s.delta_cost = Some(0.05);
        // Cost dropped: decrease branch fires, m stays at the floor.
        let next = adapt_cost(&s, 0.5, 0);
        assert_eq!(next.m, 0.1);
    }

    #[test]
    fn adapter_clamps_at_ceiling() {
        let mut s = CostAdapterState::new(0.1, 2.0, 0.1, 1000);
        s.cost_prev = Some(1.0);
        s.delta_cost = Some(0.05);
        s.collisions_prev = 0;
        let next = adapt_cost(&s, 2.0, 5);
        assert_eq!(next.m, 2.0);
    }

    #[test]
    fn adapter_never_exits_bounds() {
        let mut s = CostAdapterState::new(0.1, 2.0, 0.1, 1000);
        let mut cost = 1.0;
        let mut coll = 0u64;
        for step in 0..500 {
            cost = (cost + (step % 7) as f64 * 0.1) % 3.0;
            coll = coll.wrapping_add(step % 3);
            s = adapt_cost(&s, cost, coll);
            assert!(s.m >= 0.1 - 1e-12 && s.m <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn policy_decide_identity_at_reference() {
        // m = m_ref behaves exactly like the base threshold.
        assert_eq!(policy_decide(1.0, 0.11, 0.1, 1.0), Action::Transmit);
        assert_eq!(policy_decide(1.0, 0.09, 0.1, 1.0), Action::Silent);
    }

    #[test]
    fn doubling_m_doubles_threshold() {
        assert!((policy_threshold(2.0, 0.1, 1.0) - 0.2).abs() < 1e-12);
        // A trace replayed at a higher m can only transmit less.
        let errors = [0.05, 0.12, 0.18, 0.25, 0.07, 0.3];
        let count = |m: f64| {
            errors
                .iter()
                .filter(|&&e| policy_decide(m, e, 0.1, 1.0) == Action::Transmit)
                .count()
        };
        assert!(count(2.0) <= count(1.0));
    }

    #[test]
    fn supervisors_are_destinations() {
        let links = [(2, 1), (3, 1), (5, 4), (6, 4), (8, 7)];
        assert_eq!(elect_supervisors(&links), vec![1, 4, 7]);
        assert_eq!(elect_supervisors(&[(2, 1)]), vec![1]);
    }
}
