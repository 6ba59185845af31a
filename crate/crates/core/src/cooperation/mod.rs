//! Two-phase decode-and-forward cooperation.
//!
//! Phase I: the source broadcasts at `β1` for a fraction `ρ` of its airtime.
//! Phase II: the self-selected relays and the source jointly send the same
//! bits with a randomized space-time block code at `β2`.

mod protocol;
mod stbc;

pub use protocol::{run_recruitment, write_trace_log, CoopOutcome, Message, MessageKind, Sender};
pub use stbc::{equivalent_channel, RandomizationMatrix};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::phy::{bits_for_gain, snr_coefficient, ChannelMatrix, PhyConfig};

/// Slack used when comparing rate ratios against ξ, so that ratios that are
/// exact in decimal (1/5 vs 0.2) are not lost to rounding.
const RATIO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoopConfig {
    /// Number of columns `L` of the underlying orthogonal code.
    pub stbc_length: usize,
    /// Code rate `R_c`.
    pub stbc_rate: f64,
    /// Self-selection threshold ξ.
    pub self_select_xi: f64,
    /// Hop-1 BEP. Defaults to `bep_split · bep_target` of the PHY.
    pub bep_phase1: Option<f64>,
    /// Hop-2 BEP. Defaults to the remainder of the PHY budget.
    pub bep_phase2: Option<f64>,
}

impl Default for CoopConfig {
    fn default() -> Self {
        Self {
            stbc_length: 2,
            stbc_rate: 1.0,
            self_select_xi: 0.2,
            bep_phase1: None,
            bep_phase2: None,
        }
    }
}

impl CoopConfig {
    pub fn with_xi(mut self, xi: f64) -> Self {
        self.self_select_xi = xi;
        self
    }

    pub fn bep_phase1(&self, phy: &PhyConfig) -> f64 {
        self.bep_phase1.unwrap_or_else(|| phy.bep_phase1())
    }

    pub fn bep_phase2(&self, phy: &PhyConfig) -> f64 {
        self.bep_phase2.unwrap_or_else(|| phy.bep_phase2())
    }

    pub fn gamma_phase1(&self, phy: &PhyConfig) -> Result<f64> {
        snr_coefficient(phy.avg_snr_gamma, self.bep_phase1(phy))
    }

    pub fn gamma_phase2(&self, phy: &PhyConfig) -> Result<f64> {
        snr_coefficient(phy.avg_snr_gamma, self.bep_phase2(phy))
    }

    pub fn validate(&self, phy: &PhyConfig) -> Result<()> {
        if self.stbc_length == 0 {
            return Err(invalid("stbc_length", "must be at least 1"));
        }
        if !(self.stbc_rate > 0.0 && self.stbc_rate <= 1.0) {
            return Err(invalid("stbc_rate", "must lie in (0, 1]"));
        }
        if !(self.self_select_xi > 0.0 && self.self_select_xi < 1.0) {
            return Err(invalid("self_select_xi", "must lie in (0, 1)"));
        }
        let (b1, b2) = (self.bep_phase1(phy), self.bep_phase2(phy));
        if !(b1 > 0.0 && b2 > 0.0) {
            return Err(invalid("bep_phase1", "hop BEPs must be positive"));
        }
        if ((b1 + b2) - phy.bep_target).abs() > 1e-9 * phy.bep_target {
            return Err(invalid(
                "bep_phase1",
                format!(
                    "hop BEPs {b1} + {b2} must add up to bep_target {}",
                    phy.bep_target
                ),
            ));
        }
        if b1 <= b2 {
            return Err(invalid("bep_phase1", "hop-1 BEP must exceed hop-2 BEP"));
        }
        Ok(())
    }
}

/// A candidate relay joins iff `β_direct / β_source→relay ≤ ξ`.
pub fn self_select(beta_direct: f64, beta_source_to_me: f64, xi: f64) -> bool {
    if !(beta_source_to_me > 0.0) {
        return false;
    }
    beta_direct / beta_source_to_me <= xi + RATIO_EPS
}

/// `β_direct / ξ`, rounded down onto the rate grid.
pub fn assigned_phase1_rate(beta_direct: f64, xi: f64, cfg: &PhyConfig) -> Result<f64> {
    if !(beta_direct > 0.0) {
        return Err(Error::NoDirectLink);
    }
    if !(xi > 0.0) {
        return Err(invalid("xi", "must be positive"));
    }
    let bits = cfg.floor_to_grid(beta_direct / xi);
    Ok(cfg.rate_of_bits(bits).max(beta_direct))
}

/// Phase-I rate limited by the weakest source-to-relay link.
pub fn channel_truth_phase1_rate(
    h: &ChannelMatrix,
    source: usize,
    relays: &[usize],
    gamma1: f64,
    cfg: &PhyConfig,
) -> Result<f64> {
    let weakest = relays
        .iter()
        .map(|&l| h.gain(source, l))
        .fold(None, |acc: Option<f64>, g| {
            Some(acc.map_or(g, |a| a.min(g)))
        })
        .ok_or_else(|| invalid("relays", "relay set must be nonempty"))?;
    Ok(cfg.rate_of_bits(bits_for_gain(weakest, gamma1, cfg.max_bits_per_symbol)))
}

/// Second-hop rate seen through the equivalent channel.
///
/// `rh` is `R·h2`; with the zeroed first row of `R` the source term adds
/// to its power without interference.
pub fn phase2_rate(h_source_ap: Complex64, rh: &[Complex64], gamma2: f64, cfg: &PhyConfig) -> f64 {
    let gain = h_source_ap.norm_sqr() + rh.iter().map(|c| c.norm_sqr()).sum::<f64>();
    cfg.rate_of_bits(bits_for_gain(gain, gamma2, cfg.max_bits_per_symbol))
}

/// End-to-end rate of the two phases: `1 / (1/β1 + 1/(R_c β2))`.
pub fn coop_rate(beta1: f64, beta2: f64, rc: f64) -> Result<f64> {
    if !(beta1 > 0.0 && beta2 > 0.0 && rc > 0.0) {
        return Err(Error::CooperationInfeasible);
    }
    Ok(1.0 / (1.0 / beta1 + 1.0 / (rc * beta2)))
}

/// Phase-I share ρ of the user's airtime.
pub fn phase_split(beta1: f64, beta2: f64, rc: f64) -> Result<f64> {
    if !(beta1 > 0.0 && beta2 > 0.0 && rc > 0.0) {
        return Err(Error::CooperationInfeasible);
    }
    let r2 = rc * beta2;
    Ok(r2 / (r2 + beta1))
}

/// Cooperation beats the direct link: `1/β1 + 1/(R_c β2) < 1/β_direct`.
///
/// A zero direct rate is beaten by any usable pair of phase rates.
pub fn cooperation_wins(beta_direct: f64, beta1: f64, beta2: f64, rc: f64) -> bool {
    if !(beta1 > 0.0 && beta2 > 0.0) {
        return false;
    }
    if !(beta_direct > 0.0) {
        return true;
    }
    1.0 / beta1 + 1.0 / (rc * beta2) < 1.0 / beta_direct
}

/// The AP-side test `1/(R_c β2) < (1 − ξ)/β_direct`.
pub fn ap_accept_condition(beta_direct: f64, beta2: f64, rc: f64, xi: f64) -> bool {
    if !(beta2 > 0.0) {
        return false;
    }
    if !(beta_direct > 0.0) {
        return xi < 1.0;
    }
    1.0 / (rc * beta2) < (1.0 - xi) / beta_direct
}

/// Energy split for a batch of packets sent cooperatively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub source: f64,
    pub per_relay: f64,
    pub total: f64,
}

pub fn coop_energy(
    cfg: &PhyConfig,
    rate_coop: f64,
    rate_phase2: f64,
    rc: f64,
    n_relays: usize,
    n_packets: u32,
) -> Result<EnergyReport> {
    if !(rate_coop > 0.0) {
        return Err(Error::UndefinedEnergy);
    }
    let bits = f64::from(n_packets) * f64::from(cfg.packet_bits);
    let ps = cfg.symbol_power();
    let source = bits * ps / rate_coop;
    let per_relay = if n_relays == 0 {
        0.0
    } else {
        if !(rate_phase2 > 0.0 && rc > 0.0) {
            return Err(Error::UndefinedEnergy);
        }
        bits * ps / (rate_phase2 * rc)
    };
    Ok(EnergyReport {
        source,
        per_relay,
        total: source + n_relays as f64 * per_relay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PhyConfig {
        PhyConfig {
            symbol_rate: 1.0,
            ..PhyConfig::default()
        }
    }

    #[test]
    fn self_select_examples() {
        assert!(self_select(1.0, 5.0, 0.2));
        assert!(!self_select(1.0, 4.0, 0.2));
        assert!(self_select(0.0, 1.0, 0.7));
        assert!(!self_select(0.0, 0.0, 0.7));
        assert!(!self_select(1.0, 0.0, 0.7));
    }

    #[test]
    fn assigned_rate_examples() {
        let c = cfg();
        assert_eq!(assigned_phase1_rate(1.0, 0.2, &c).unwrap(), 5.0);
        assert_eq!(assigned_phase1_rate(1.0, 0.3, &c).unwrap(), 3.0);
        assert_eq!(assigned_phase1_rate(3.0, 0.5, &c).unwrap(), 6.0);
        // Grid cap; never below the direct rate.
        assert_eq!(assigned_phase1_rate(10.0, 0.2, &c).unwrap(), 10.0);
        assert!(matches!(
            assigned_phase1_rate(0.0, 0.2, &c),
            Err(Error::NoDirectLink)
        ));
    }

    #[test]
    fn channel_truth_uses_weakest_relay() {
        let c = cfg();
        let mut h = ChannelMatrix::from_fn(4, |_, _| Complex64::new(0.0, 0.0));
        h.set(1, 2, Complex64::new(3f64.sqrt(), 0.0));
        h.set(1, 3, Complex64::new(15f64.sqrt(), 0.0));
        assert_eq!(
            channel_truth_phase1_rate(&h, 1, &[3], 1.0, &c).unwrap(),
            4.0
        );
        assert_eq!(
            channel_truth_phase1_rate(&h, 1, &[2, 3], 1.0, &c).unwrap(),
            2.0
        );
        assert!(channel_truth_phase1_rate(&h, 1, &[], 1.0, &c).is_err());
    }

    #[test]
    fn phase2_rate_examples() {
        let c = cfg();
        let h0 = Complex64::new(3f64.sqrt(), 0.0);
        assert_eq!(
            phase2_rate(h0, &[Complex64::new(0.0, 0.0); 2], 1.0, &c),
            2.0
        );
        let rh = [Complex64::new(0.0, 0.0), Complex64::new(0.0, 2.0)];
        assert_eq!(phase2_rate(h0, &rh, 1.0, &c), 3.0);
    }

    #[test]
    fn coop_rate_examples() {
        assert!((coop_rate(2.0, 4.0, 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((coop_rate(3.0, 3.0, 1.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(coop_rate(0.0, 3.0, 1.0).is_err());
        assert!(coop_rate(3.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn phase_split_examples() {
        assert!((phase_split(2.0, 4.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((phase_split(2.0, 4.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decision_rule_examples() {
        assert!(cooperation_wins(1.0, 2.0, 4.0, 1.0));
        assert!(!cooperation_wins(1.0, 2.0, 2.0, 1.0));
        assert!(!cooperation_wins(1.0, 1.0, 1e9, 1.0));
        assert!(ap_accept_condition(1.0, 4.0, 1.0, 0.2));
        assert!(!ap_accept_condition(1.0, 1.0, 1.0, 0.2));
        assert!(!ap_accept_condition(1.0, 1e6, 1.0, 1.0 - 1e-9));
    }

    #[test]
    fn energy_examples() {
        let c = cfg();
        let direct = crate::phy::direct_energy_per_packet(&c, 3.0).unwrap();
        let e = coop_energy(&c, 3.0, 7.0, 1.0, 0, 1).unwrap();
        assert!((e.total - direct).abs() < 1e-15);

        let e = coop_energy(&c, 4.0 / 3.0, 4.0, 1.0, 2, 1).unwrap();
        assert!((e.source - 0.75).abs() < 1e-12);
        assert!((e.per_relay - 0.25).abs() < 1e-12);
        assert!((e.total - 1.25).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let phy = PhyConfig::default();
        CoopConfig::default().validate(&phy).unwrap();
        let bad = CoopConfig {
            bep_phase1: Some(0.5e-4),
            bep_phase2: Some(0.5e-4),
            ..CoopConfig::default()
        };
        assert!(bad.validate(&phy).is_err());
        let bad = CoopConfig {
            bep_phase1: Some(0.8e-4),
            bep_phase2: Some(0.1e-4),
            ..CoopConfig::default()
        };
        assert!(bad.validate(&phy).is_err());
        assert!(CoopConfig::default().with_xi(1.0).validate(&phy).is_err());
    }
}
