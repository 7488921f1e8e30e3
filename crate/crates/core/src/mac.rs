//! Slot-level C-V2X Mode-4 SPS abstraction.
//!
//! Transmitters pick a resource uniformly at random from an RRI x subchannel
//! pool. Losses happen only through same-resource collisions and half-duplex
//! conflicts; connectivity is all-to-all.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub type NodeId = u32;

/// Time/frequency selection pool: `rri` subframes by `subchannels` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourcePool {
    pub rri: u32,
    pub subchannels: u32,
}

impl ResourcePool {
    pub fn new(rri: u32, subchannels: u32) -> Self {
        assert!(rri >= 1 && subchannels >= 1);
        Self { rri, subchannels }
    }

    pub fn size(&self) -> u32 {
        self.rri * self.subchannels
    }
}

/// One resource inside a selection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacResource {
    /// Subframe offset within the window, in `[0, rri)`.
    pub subframe: u32,
    /// Subchannel index, in `[0, subchannels)`.
    pub subchannel: u32,
}

/// Per (packet, receiver) delivery outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    Collided,
    HalfDuplexLost,
}

/// Uniform random selection from the pool window starting at `earliest`.
pub fn select_resource<R: Rng>(rng: &mut R, pool: &ResourcePool) -> MacResource {
    let idx = rng.random_range(0..pool.size());
    MacResource { subframe: idx / pool.subchannels, subchannel: idx % pool.subchannels }
}

/// One transmission submitted to a single subframe.
#[derive(Debug, Clone, Copy)]
pub struct SubframeTx {
    pub src: NodeId,
    pub subchannel: u32,
}

/// Outcome record for one (transmission, receiver) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutcomeRecord {
    /// Index into the submitted transmission slice.
    pub tx_index: usize,
    pub receiver: NodeId,
    pub outcome: Outcome,
}

/// Resolves all transmissions sharing one subframe.
///
/// Two or more transmissions on the same subchannel collide for every
/// receiver; a receiver transmitting in this subframe (any subchannel)
/// loses all receptions to half-duplex; otherwise the packet is delivered.
pub fn resolve_subframe(txs: &[SubframeTx], receivers: &[NodeId]) -> Vec<OutcomeRecord> {
    let mut records = Vec::with_capacity(txs.len() * receivers.len());
    for (i, tx) in txs.iter().enumerate() {
        let collided = txs
            .iter()
            .enumerate()
            .any(|(j, other)| j != i && other.subchannel == tx.subchannel);
        for &rx in receivers {
            if rx == tx.src {
                continue;
            }
            let rx_busy = txs.iter().any(|t| t.src == rx);
            let outcome = if rx_busy {
                Outcome::HalfDuplexLost
            } else if collided {
                Outcome::Collided
            } else {
                Outcome::Delivered
            };
            records.push(OutcomeRecord { tx_index: i, receiver: rx, outcome });
        }
    }
    records
}

/// Fraction of pool resources carrying at least one transmission over a
/// window of subframes. `used` counts distinct (subframe, subchannel) pairs.
pub fn occupancy(used: usize, window_subframes: u64, pool: &ResourcePool) -> f64 {
    assert!(window_subframes >= 1);
    used as f64 / (window_subframes as f64 * pool.subchannels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn singleton_pool_always_zero() {
        let pool = ResourcePool::new(1, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            let r = select_resource(&mut rng, &pool);
            assert_eq!((r.subframe, r.subchannel), (0, 0));
        }
    }

    #[test]
    fn selection_is_uniform_over_pool() {
        let pool = ResourcePool::new(10, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 1_000_000usize;
        let mut counts = vec![0u64; pool.size() as usize];
        for _ in 0..n {
            let r = select_resource(&mut rng, &pool);
            counts[(r.subframe * pool.subchannels + r.subchannel) as usize] += 1;
        }
        let expect = n as f64 / 20.0;
        for &c in &counts {
            let rel = (c as f64 - expect).abs() / expect;
            assert!(rel < 0.01, "frequency off by {rel}");
        }
    }

    #[test]
    fn identical_seeds_identical_selections() {
        let pool = ResourcePool::new(10, 2);
        let mut a = ChaCha12Rng::seed_from_u64(9);
        let mut b = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..1000 {
            assert_eq!(select_resource(&mut a, &pool), select_resource(&mut b, &pool));
        }
    }

    #[test]
    fn single_transmission_idle_receiver_delivered() {
        let recs = resolve_subframe(&[SubframeTx { src: 1, subchannel: 0 }], &[1, 2]);
        assert_eq!(recs, vec![OutcomeRecord { tx_index: 0, receiver: 2, outcome: Outcome::Delivered }]);
    }

    #[test]
    fn same_subchannel_collides_for_all() {
        let txs = [SubframeTx { src: 1, subchannel: 0 }, SubframeTx { src: 2, subchannel: 0 }];
        let recs = resolve_subframe(&txs, &[1, 2, 3]);
        for r in recs.iter().filter(|r| r.receiver == 3) {
            assert_eq!(r.outcome, Outcome::Collided);
        }
        // The two transmitters themselves are half-duplex busy.
        for r in recs.iter().filter(|r| r.receiver != 3) {
            assert_eq!(r.outcome, Outcome::HalfDuplexLost);
        }
    }

    #[test]
    fn half_duplex_loss_on_other_subchannel() {
        let txs = [SubframeTx { src: 1, subchannel: 0 }, SubframeTx { src: 2, subchannel: 1 }];
        let recs = resolve_subframe(&txs, &[1, 2]);
        for r in &recs {
            assert_eq!(r.outcome, Outcome::HalfDuplexLost);
        }
    }

    #[test]
    fn conservation_one_outcome_per_receiver() {
        let txs = [
            SubframeTx { src: 1, subchannel: 0 },
            SubframeTx { src: 2, subchannel: 1 },
            SubframeTx { src: 3, subchannel: 1 },
        ];
        let receivers = [1, 2, 3, 4, 5];
        let recs = resolve_subframe(&txs, &receivers);
        for (i, tx) in txs.iter().enumerate() {
            let n = recs.iter().filter(|r| r.tx_index == i).count();
            assert_eq!(n, receivers.iter().filter(|&&r| r != tx.src).count());
        }
    }

    #[test]
    fn collision_symmetry_under_relabeling() {
        let txs = [SubframeTx { src: 1, subchannel: 0 }, SubframeTx { src: 2, subchannel: 0 }];
        let swapped = [SubframeTx { src: 2, subchannel: 0 }, SubframeTx { src: 1, subchannel: 0 }];
        let a = resolve_subframe(&txs, &[3]);
        let b = resolve_subframe(&swapped, &[3]);
        assert_eq!(a[0].outcome, b[0].outcome);
        assert_eq!(a[1].outcome, b[1].outcome);
    }

    #[test]
    fn monte_carlo_matches_balls_in_bins() {
        // N = 6 transmitters, 10x2 pool: per-packet collision probability
        // is 1 - (1 - 1/20)^5.
        let pool = ResourcePool::new(10, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 6;
        let trials = 1_000_000;
        let mut collided = 0u64;
        for _ in 0..trials {
            let picks: Vec<MacResource> = (0..n).map(|_| select_resource(&mut rng, &pool)).collect();
            if picks[1..].iter().any(|p| p == &picks[0]) {
                collided += 1;
            }
        }
        let empirical = collided as f64 / trials as f64;
        let closed_form = 1.0 - (1.0 - 1.0 / 20.0f64).powi(n as i32 - 1);
        assert!((empirical - closed_form).abs() < 0.005);
    }

    #[test]
    fn occupancy_bounds() {
        let pool = ResourcePool::new(10, 2);
        assert_eq!(occupancy(0, 10, &pool), 0.0);
        assert_eq!(occupancy(20, 10, &pool), 1.0);
        assert_eq!(occupancy(5, 10, &pool), 0.25);
    }
}
