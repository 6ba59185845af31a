//! Brute-force reference for opportunistic cooperation.
//!
//! The augmented MDP keeps the cooperation decision `z` as an explicit
//! action: in channel state `c` the user picks `z ∈ {0, 1}` and an action
//! that fits the budget of the chosen rate. Its optimal value must equal the
//! value of the plain MDP driven by the opportunistic rate
//! `max(β_direct, β_coop)`. This module is independent of the production
//! solver and only meant for tests and the `oracle` subcommand.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{budget_for_rate, RatePmf, TrafficModel, UserModel};
use crate::error::{invalid, Error, Result};

/// Largest instance the oracle agrees to solve.
pub const PAIR_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPair {
    pub direct: f64,
    pub coop: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInstance {
    /// Per traffic state: `(packets, utility, next state)`.
    pub actions: Vec<Vec<(u32, f64, usize)>>,
    pub channels: Vec<ChannelPair>,
    pub alpha: f64,
    pub lambda: f64,
    pub users: usize,
    pub slot_seconds: f64,
    pub packet_bits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSolution {
    /// Optimal value per (traffic state, channel state), row-major.
    pub values: Vec<f64>,
    /// Whether the optimal choice in each pair cooperates.
    pub cooperate: Vec<bool>,
    pub iterations: usize,
}

impl OracleInstance {
    fn validate(&self) -> Result<()> {
        if self.actions.is_empty() || self.channels.is_empty() {
            return Err(invalid("instance", "needs traffic and channel states"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid("alpha", "must lie in [0, 1)"));
        }
        let total: f64 = self.channels.iter().map(|c| c.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("channels", "probabilities must sum to 1"));
        }
        let n = self.actions.len();
        for row in &self.actions {
            if !row.iter().any(|a| a.0 == 0) {
                return Err(invalid("actions", "every state needs a zero-packet action"));
            }
            if row.iter().any(|a| a.2 >= n) {
                return Err(invalid("actions", "successor out of range"));
            }
        }
        Ok(())
    }

    fn payoff(&self, packets: u32, utility: f64, rate: f64) -> f64 {
        let x = if packets == 0 {
            0.0
        } else {
            f64::from(self.packet_bits) * f64::from(packets) / (self.slot_seconds * rate)
        };
        utility - self.lambda * (x - 1.0 / self.users as f64)
    }
}

/// Optimal values of the MDP with explicit cooperation choice.
pub fn augmented_brute_force(inst: &OracleInstance) -> Result<AugmentedSolution> {
    inst.validate()?;
    let n_t = inst.actions.len();
    let n_c = inst.channels.len();
    let pairs: usize = inst.actions.iter().map(Vec::len).sum::<usize>() * n_c * 2;
    if pairs > PAIR_LIMIT {
        return Err(Error::InstanceTooLarge {
            pairs,
            limit: PAIR_LIMIT,
        });
    }
    let mut v = vec![0.0; n_t * n_c];
    let mut coop = vec![false; n_t * n_c];
    let max_iter = 100_000;
    for it in 1..=max_iter {
        let mut next = vec![0.0; n_t * n_c];
        let mut delta: f64 = 0.0;
        for t in 0..n_t {
            for (c, ch) in inst.channels.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                let mut best_z = false;
                for (z, rate) in [(false, ch.direct), (true, ch.coop)] {
                    let budget = budget_for_rate(rate, inst.slot_seconds, inst.packet_bits);
                    for &(packets, u, nt) in &inst.actions[t] {
                        if packets > budget {
                            continue;
                        }
                        let future: f64 = inst
                            .channels
                            .iter()
                            .enumerate()
                            .map(|(c2, ch2)| ch2.probability * v[nt * n_c + c2])
                            .sum();
                        let q = inst.payoff(packets, u, rate) + inst.alpha * future;
                        if q > best {
                            best = q;
                            best_z = z;
                        }
                    }
                }
                next[t * n_c + c] = best;
                coop[t * n_c + c] = best_z;
                delta = delta.max((best - v[t * n_c + c]).abs());
            }
        }
        v = next;
        if delta < 1e-13 {
            return Ok(AugmentedSolution {
                values: v,
                cooperate: coop,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_delta: f64::NAN,
    })
}

/// The same instance with cooperation decided by the larger rate, as a
/// production [`UserModel`], plus the bin of each channel state.
pub fn opportunistic_model(inst: &OracleInstance) -> Result<(UserModel, Vec<usize>)> {
    inst.validate()?;
    let rates: Vec<f64> = inst.channels.iter().map(|c| c.direct.max(c.coop)).collect();
    let mut bins = rates.clone();
    bins.sort_by(f64::total_cmp);
    bins.dedup();
    let mut probs = vec![0.0; bins.len()];
    let mut bin_of = Vec::with_capacity(rates.len());
    for (ch, r) in inst.channels.iter().zip(&rates) {
        let b = bins.iter().position(|x| x == r).expect("rate present");
        probs[b] += ch.probability;
        bin_of.push(b);
    }
    let pmf = RatePmf::new(bins, probs)?;
    let traffic = TrafficModel::from_table(inst.actions.clone())?;
    Ok((
        UserModel::from_parts(traffic, pmf, inst.slot_seconds, inst.packet_bits)?,
        bin_of,
    ))
}

/// Random instance with 1–4 traffic states and 1–3 channel states.
/// Rates are whole packets per slot so budgets are exact.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> OracleInstance {
    let n_t = rng.random_range(1..=4);
    let n_c = rng.random_range(1..=3);
    let actions = (0..n_t)
        .map(|_| {
            let mut row = vec![(0, rng.random_range(0.0..0.5), rng.random_range(0..n_t))];
            for _ in 0..rng.random_range(0..=3) {
                row.push((
                    rng.random_range(1..=4),
                    rng.random_range(0.0..5.0),
                    rng.random_range(0..n_t),
                ));
            }
            row
        })
        .collect();
    let mut weights: Vec<f64> = (0..n_c).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let channels = weights
        .into_iter()
        .map(|p| ChannelPair {
            direct: f64::from(rng.random_range(0..=4u32)),
            coop: f64::from(rng.random_range(0..=4u32)),
            probability: p,
        })
        .collect();
    let alpha = [0.0, 0.5, 0.9][rng.random_range(0..3)];
    OracleInstance {
        actions,
        channels,
        alpha,
        lambda: rng.random_range(0.0..3.0),
        users: rng.random_range(1..=3),
        slot_seconds: 1.0,
        packet_bits: 1,
    }
}

/// Largest |augmented − opportunistic| over all (traffic, channel) pairs and
/// the largest signed excess of the augmented value.
pub fn compare(inst: &OracleInstance) -> Result<(f64, f64)> {
    let aug = augmented_brute_force(inst)?;
    let (model, bin_of) = opportunistic_model(inst)?;
    let params = super::SolveParams {
        lambda: inst.lambda,
        alpha: inst.alpha,
        users: inst.users,
        tol: 1e-13,
        max_iter: 100_000,
    };
    let sol = super::value_iteration(&model, &params)?;
    let n_c = inst.channels.len();
    let mut worst: f64 = 0.0;
    let mut excess = f64::NEG_INFINITY;
    for t in 0..inst.actions.len() {
        for (c, &b) in bin_of.iter().enumerate() {
            let opp = sol.value(super::UserState {
                traffic: t,
                rate_bin: b,
            });
            let d = aug.values[t * n_c + c] - opp;
            worst = worst.max(d.abs());
            excess = excess.max(d);
        }
    }
    Ok((worst, excess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixed(coop_rates: [f64; 2]) -> OracleInstance {
        OracleInstance {
            actions: vec![
                vec![(0, 0.0, 1), (2, 3.0, 0)],
                vec![(0, 0.0, 0), (1, 1.0, 1)],
            ],
            channels: vec![
                ChannelPair {
                    direct: 1.0,
                    coop: coop_rates[0],
                    probability: 0.4,
                },
                ChannelPair {
                    direct: 2.0,
                    coop: coop_rates[1],
                    probability: 0.6,
                },
            ],
            alpha: 0.9,
            lambda: 0.8,
            users: 2,
            slot_seconds: 1.0,
            packet_bits: 1,
        }
    }

    #[test]
    fn cooperation_always_better() {
        let inst = fixed([3.0, 4.0]);
        let (worst, _) = compare(&inst).unwrap();
        assert!(worst < 1e-8);
        let aug = augmented_brute_force(&inst).unwrap();
        // Wherever something is scheduled, the better rate is used.
        assert!(aug.cooperate.iter().any(|&z| z));
    }

    #[test]
    fn cooperation_never_better() {
        let (worst, _) = compare(&fixed([0.0, 1.0])).unwrap();
        assert!(worst < 1e-8);
    }

    #[test]
    fn random_instances_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let inst = random_instance(&mut rng);
            let (worst, excess) = compare(&inst).unwrap();
            assert!(worst < 1e-8 && excess < 1e-8, "{inst:?}");
        }
    }

    #[test]
    fn oversized_instance_refused() {
        let mut inst = fixed([1.0, 1.0]);
        inst.actions = vec![(0..2000).map(|i| (u32::from(i > 0), 1.0, 0)).collect(); 2];
        assert!(matches!(
            augmented_brute_force(&inst),
            Err(Error::InstanceTooLarge { .. })
        ));
    }
}
