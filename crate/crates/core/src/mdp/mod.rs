//! Per-user scheduling MDPs.
//!
//! A user's state is its traffic state plus the bin of its opportunistic
//! transmission rate. Rates are i.i.d. across slots, so the solver works on
//! a compiled traffic model (reachable traffic states with their feasible
//! actions) and a rate pmf.

mod model;
pub mod oracle;
mod solver;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cooperation::{run_recruitment, CoopConfig};
use crate::error::{invalid, Error, Result};
use crate::phy::{draw_channel_matrix, PhyConfig, Topology};
use crate::traffic::{GopSpec, SchedulingAction};

pub use model::{CompiledAction, ModelState, TrafficModel, DEFAULT_STATE_LIMIT};
pub use solver::{
    expected_resource, expected_resource_from_start, value_iteration, value_iteration_from,
    Solution, SolveParams,
};

/// Distribution of the per-slot transmission rate over a finite set of bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePmf {
    bins: Vec<f64>,
    probabilities: Vec<f64>,
}

impl RatePmf {
    pub fn new(bins: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        if bins.is_empty() {
            return Err(invalid("bins", "need at least one bin"));
        }
        if bins.len() != probabilities.len() {
            return Err(Error::DimensionMismatch {
                expected: bins.len(),
                got: probabilities.len(),
            });
        }
        if bins.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(invalid("bins", "rates must be finite and nonnegative"));
        }
        if bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("bins", "must be strictly ascending"));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(invalid("probabilities", "must be nonnegative"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("probabilities", format!("sum to {total}, not 1")));
        }
        Ok(Self {
            bins,
            probabilities,
        })
    }

    /// All mass on one rate.
    pub fn point(rate: f64) -> Result<Self> {
        Self::new(vec![rate], vec![1.0])
    }

    /// Empirical pmf of `samples` floored onto `grid`.
    pub fn from_samples(grid: Vec<f64>, samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("n_samples", "must be at least 1"));
        }
        let mut counts = vec![0usize; grid.len()];
        let probe = Self {
            probabilities: vec![0.0; grid.len()],
            bins: grid,
        };
        for &s in samples {
            counts[probe.bin_of(s)] += 1;
        }
        let n = samples.len() as f64;
        Self::new(probe.bins, counts.iter().map(|&c| c as f64 / n).collect())
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Index of the largest bin not above `rate` (bin 0 if none is).
    pub fn bin_of(&self, rate: f64) -> usize {
        let tol = 1e-9 * rate.abs().max(1.0);
        self.bins
            .iter()
            .rposition(|&b| b <= rate + tol)
            .unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        self.bins
            .iter()
            .zip(&self.probabilities)
            .map(|(b, p)| b * p)
            .sum()
    }
}

/// Monte-Carlo estimate of the opportunistic rate pmf of `user`.
///
/// Each sample draws a channel, runs recruitment and keeps the effective
/// rate (cooperative if accepted, else direct), floored onto the rate grid.
pub fn estimate_rate_pmf<R: Rng + ?Sized>(
    user: usize,
    topology: &Topology,
    phy: &PhyConfig,
    coop: &CoopConfig,
    n_samples: usize,
    rng: &mut R,
) -> Result<RatePmf> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let h = draw_channel_matrix(topology, rng)?;
        let outcome = run_recruitment(user, &h, phy, coop, 0.0, rng)?;
        samples.push(outcome.effective_rate());
    }
    RatePmf::from_samples(phy.rate_grid(), &samples)
}

/// Slot fraction used by sending `packets` packets: x = P·n/(R·β).
pub fn packets_to_allocation(
    packets: u32,
    rate: f64,
    slot_seconds: f64,
    packet_bits: u32,
) -> Result<f64> {
    if packets == 0 {
        return Ok(0.0);
    }
    if !(rate > 0.0) {
        return Err(Error::InfeasibleAction {
            allocation: f64::INFINITY,
        });
    }
    let x = f64::from(packet_bits) * f64::from(packets) / (slot_seconds * rate);
    if x > 1.0 + 1e-12 {
        return Err(Error::InfeasibleAction { allocation: x });
    }
    Ok(x)
}

/// [`packets_to_allocation`] for a full action.
pub fn action_to_allocation(
    action: &SchedulingAction,
    rate: f64,
    slot_seconds: f64,
    packet_bits: u32,
) -> Result<f64> {
    packets_to_allocation(action.packets(), rate, slot_seconds, packet_bits)
}

/// Index pair into a [`UserModel`]: traffic state and rate bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserState {
    pub traffic: usize,
    pub rate_bin: usize,
}

/// Everything a user needs to solve its priced MDP.
#[derive(Debug, Clone)]
pub struct UserModel {
    pub traffic: TrafficModel,
    pub pmf: RatePmf,
    pub slot_seconds: f64,
    pub packet_bits: u32,
}

impl UserModel {
    /// Compiles the traffic model reachable from slot 0 with the largest
    /// budget any bin of `pmf` allows.
    pub fn compile(
        gop: &GopSpec,
        pmf: RatePmf,
        slot_seconds: f64,
        packet_bits: u32,
    ) -> Result<Self> {
        let mut out = Self {
            traffic: TrafficModel::empty(),
            pmf,
            slot_seconds,
            packet_bits,
        };
        out.validate_timing()?;
        let max_budget = (0..out.pmf.len()).map(|b| out.budget(b)).max().unwrap_or(0);
        out.traffic = TrafficModel::compile(gop, max_budget, DEFAULT_STATE_LIMIT)?;
        Ok(out)
    }

    pub fn from_parts(
        traffic: TrafficModel,
        pmf: RatePmf,
        slot_seconds: f64,
        packet_bits: u32,
    ) -> Result<Self> {
        let out = Self {
            traffic,
            pmf,
            slot_seconds,
            packet_bits,
        };
        out.validate_timing()?;
        Ok(out)
    }

    pub fn for_phy(gop: &GopSpec, pmf: RatePmf, phy: &PhyConfig) -> Result<Self> {
        Self::compile(gop, pmf, phy.slot_seconds, phy.packet_bits)
    }

    fn validate_timing(&self) -> Result<()> {
        if !(self.slot_seconds > 0.0) || !self.slot_seconds.is_finite() {
            return Err(invalid("slot_seconds", "must be positive and finite"));
        }
        if self.packet_bits == 0 {
            return Err(invalid("packet_bits", "must be positive"));
        }
        Ok(())
    }

    /// Packets that fit in a slot at the rate of `bin`.
    pub fn budget(&self, bin: usize) -> u32 {
        budget_for_rate(self.pmf.bins()[bin], self.slot_seconds, self.packet_bits)
    }

    /// Slot fraction per packet at the rate of `bin`.
    pub fn cost_per_packet(&self, bin: usize) -> f64 {
        let rate = self.pmf.bins()[bin];
        if rate > 0.0 {
            f64::from(self.packet_bits) / (self.slot_seconds * rate)
        } else {
            f64::INFINITY
        }
    }

    pub fn allocation(&self, packets: u32, bin: usize) -> f64 {
        if packets == 0 {
            0.0
        } else {
            self.cost_per_packet(bin) * f64::from(packets)
        }
    }
}

/// floor(R·β/P), snapping values a rounding error below an integer.
pub fn budget_for_rate(rate: f64, slot_seconds: f64, packet_bits: u32) -> u32 {
    if !(rate > 0.0) {
        return 0;
    }
    (slot_seconds * rate / f64::from(packet_bits) + 1e-9).floor() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn allocation_examples() {
        let zero = SchedulingAction::zero(3);
        assert_eq!(action_to_allocation(&zero, 0.0, 0.01, 1000).unwrap(), 0.0);
        let five = SchedulingAction { counts: vec![2, 3] };
        assert_eq!(action_to_allocation(&five, 1e6, 0.01, 1000).unwrap(), 0.5);
        let full = SchedulingAction { counts: vec![10] };
        assert_eq!(action_to_allocation(&full, 1e6, 0.01, 1000).unwrap(), 1.0);
        let over = SchedulingAction { counts: vec![11] };
        assert!(matches!(
            action_to_allocation(&over, 1e6, 0.01, 1000),
            Err(Error::InfeasibleAction { .. })
        ));
        assert!(action_to_allocation(&full, 0.0, 0.01, 1000).is_err());
    }

    #[test]
    fn pmf_validation() {
        assert!(RatePmf::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_ok());
        assert!(RatePmf::new(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(RatePmf::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(RatePmf::new(vec![], vec![]).is_err());
    }

    #[test]
    fn pmf_from_samples_floors() {
        let pmf = RatePmf::from_samples(vec![0.0, 1.0, 2.0], &[0.3, 1.0, 1.9, 2.5]).unwrap();
        assert_eq!(pmf.probabilities(), &[0.25, 0.5, 0.25]);
        assert_eq!(pmf.bin_of(-1.0), 0);
    }

    fn line(d: f64) -> Topology {
        Topology {
            positions: vec![[0.0, 0.0], [d, 0.0], [d, 1.0]],
            path_loss_exponent: 3.0,
            coverage_radius: 100.0,
        }
    }

    #[test]
    fn pmf_saturates_next_to_ap() {
        let phy = PhyConfig::default();
        let coop = CoopConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pmf = estimate_rate_pmf(1, &line(0.05), &phy, &coop, 500, &mut rng).unwrap();
        let top = *pmf.probabilities().last().unwrap();
        assert!(top > 0.95, "{top}");
    }

    #[test]
    fn pmf_is_deterministic_per_seed() {
        let phy = PhyConfig::default();
        let coop = CoopConfig::default();
        let a = estimate_rate_pmf(
            1,
            &line(60.0),
            &phy,
            &coop,
            300,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = estimate_rate_pmf(
            1,
            &line(60.0),
            &phy,
            &coop,
            300,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zeroed_links_give_point_mass_at_zero() {
        let phy = PhyConfig::default();
        let coop = CoopConfig::default();
        let h = crate::phy::ChannelMatrix::from_fn(3, |_, _| Complex64::new(0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_recruitment(1, &h, &phy, &coop, 0.0, &mut rng).unwrap();
        let pmf = RatePmf::from_samples(phy.rate_grid(), &[out.effective_rate()]).unwrap();
        assert_eq!(pmf.probabilities()[0], 1.0);
    }
}
