//! Physical layer: fading draws, BEP-constrained rates and per-packet energy.
//!
//! Rates are carried as `f64` bits/second. A rate of zero marks a link that
//! cannot carry data in the current slot. Internally the rate grid is the set
//! of integer bits-per-symbol `0..=max_bits_per_symbol`, scaled by the
//! symbol rate.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Radio parameters shared by every node in the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    /// Symbols per second (1/T_s).
    pub symbol_rate: f64,
    /// Average SNR per symbol, E_s/N_0 (linear).
    pub avg_snr_gamma: f64,
    /// End-to-end bit error probability target.
    pub bep_target: f64,
    /// Share of the BEP budget given to the source-to-relay hop.
    pub bep_split: f64,
    pub max_bits_per_symbol: u32,
    /// Constellation used for control messages.
    pub base_bits_per_symbol: u32,
    pub packet_bits: u32,
    /// Slot length in seconds.
    pub slot_seconds: f64,
    /// Energy per symbol in Joules. `None` selects the normalized value
    /// E_s = T_s / P, i.e. a symbol power of 1/P Watts.
    pub symbol_energy: Option<f64>,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            symbol_rate: 1_250_000.0,
            avg_snr_gamma: 2.0e7,
            bep_target: 1e-4,
            bep_split: 0.9,
            max_bits_per_symbol: 10,
            base_bits_per_symbol: 1,
            packet_bits: 1000,
            slot_seconds: 0.0008,
            symbol_energy: None,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate > 0.0 && self.symbol_rate.is_finite()) {
            return Err(invalid("symbol_rate", "must be positive"));
        }
        if !(self.avg_snr_gamma > 0.0 && self.avg_snr_gamma.is_finite()) {
            return Err(invalid("avg_snr_gamma", "must be positive"));
        }
        if !(self.bep_target > 0.0 && self.bep_target < 1.0) {
            return Err(invalid("bep_target", "must lie in (0, 1)"));
        }
        if !(self.bep_split > 0.0 && self.bep_split < 1.0) {
            return Err(invalid("bep_split", "must lie in (0, 1)"));
        }
        if self.base_bits_per_symbol == 0 {
            return Err(invalid("base_bits_per_symbol", "must be at least 1"));
        }
        if self.base_bits_per_symbol > self.max_bits_per_symbol {
            return Err(invalid(
                "base_bits_per_symbol",
                "must not exceed max_bits_per_symbol",
            ));
        }
        if self.packet_bits == 0 {
            return Err(invalid("packet_bits", "must be positive"));
        }
        if !(self.slot_seconds > 0.0) {
            return Err(invalid("slot_seconds", "must be positive"));
        }
        if let Some(es) = self.symbol_energy {
            if !(es > 0.0) {
                return Err(invalid("symbol_energy", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn symbol_period(&self) -> f64 {
        1.0 / self.symbol_rate
    }

    pub fn symbol_energy(&self) -> f64 {
        self.symbol_energy
            .unwrap_or_else(|| self.symbol_period() / f64::from(self.packet_bits))
    }

    /// Average transmit power P_s = E_s / T_s.
    pub fn symbol_power(&self) -> f64 {
        self.symbol_energy() * self.symbol_rate
    }

    pub fn bep_phase1(&self) -> f64 {
        self.bep_split * self.bep_target
    }

    pub fn bep_phase2(&self) -> f64 {
        self.bep_target - self.bep_phase1()
    }

    /// Γ for the end-to-end target (direct links).
    pub fn gamma_direct(&self) -> Result<f64> {
        snr_coefficient(self.avg_snr_gamma, self.bep_target)
    }

    pub fn gamma_phase1(&self) -> Result<f64> {
        snr_coefficient(self.avg_snr_gamma, self.bep_phase1())
    }

    pub fn gamma_phase2(&self) -> Result<f64> {
        snr_coefficient(self.avg_snr_gamma, self.bep_phase2())
    }

    /// Rate in bits/s carried by `bits` bits per symbol.
    pub fn rate_of_bits(&self, bits: u32) -> f64 {
        f64::from(bits) * self.symbol_rate
    }

    /// Grid index (bits per symbol) of the largest grid rate not above `rate`.
    pub fn floor_to_grid(&self, rate: f64) -> u32 {
        if !(rate > 0.0) {
            return 0;
        }
        // Snap values that are a rounding error below a grid point.
        let bits = (rate / self.symbol_rate + 1e-9).floor();
        (bits as u32).min(self.max_bits_per_symbol)
    }

    /// The basic rate set, ascending, including the unusable rate 0.
    pub fn rate_grid(&self) -> Vec<f64> {
        (0..=self.max_bits_per_symbol)
            .map(|b| self.rate_of_bits(b))
            .collect()
    }

    /// Packets that fit in one slot at `rate`: floor(R·β/P).
    pub fn packet_budget(&self, rate: f64) -> u32 {
        if !(rate > 0.0) {
            return 0;
        }
        (self.slot_seconds * rate / f64::from(self.packet_bits) + 1e-9).floor() as u32
    }
}

/// Γ = 3γ / (2·|ln(bep/4)|).
pub fn snr_coefficient(gamma: f64, bep: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", "must be positive and finite"));
    }
    if !(bep > 0.0) {
        return Err(invalid("bep", "must be positive"));
    }
    if bep >= 4.0 {
        return Err(invalid("bep", "bep/4 must be below 1"));
    }
    Ok(3.0 * gamma / (2.0 * (bep / 4.0).ln().abs()))
}

/// Gray-coded square-QAM error bound min(1, 4·exp(−3γ|h|²/(2(2^b − 1)))).
pub fn ber_upper_bound(h: Complex64, bits_per_symbol: u32, gamma: f64) -> f64 {
    ber_bound_from_gain(h.norm_sqr(), bits_per_symbol, gamma)
}

pub(crate) fn ber_bound_from_gain(gain: f64, bits_per_symbol: u32, gamma: f64) -> f64 {
    let levels = 2f64.powi(bits_per_symbol as i32) - 1.0;
    (4.0 * (-3.0 * gamma * gain / (2.0 * levels)).exp()).min(1.0)
}

/// Bits per symbol supported by a channel power gain under coefficient Γ.
pub fn bits_for_gain(gain: f64, big_gamma: f64, max_bits: u32) -> u32 {
    let snr = big_gamma * gain;
    if !(snr > 0.0) {
        return 0;
    }
    // Snap values a rounding error below an integer (e.g. sqrt(3)^2).
    let bits = ((1.0 + snr).log2() + 1e-9).floor();
    if bits >= f64::from(max_bits) {
        max_bits
    } else {
        bits as u32
    }
}

/// Achievable rate in bits/s over a link with fade `h` under coefficient Γ.
pub fn direct_rate(h: Complex64, big_gamma: f64, cfg: &PhyConfig) -> f64 {
    cfg.rate_of_bits(bits_for_gain(
        h.norm_sqr(),
        big_gamma,
        cfg.max_bits_per_symbol,
    ))
}

/// Energy to send one packet at `rate`: P·P_s/β.
pub fn direct_energy_per_packet(cfg: &PhyConfig, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::UndefinedEnergy);
    }
    Ok(f64::from(cfg.packet_bits) * cfg.symbol_power() / rate)
}

/// Packet error rate under independent bit errors: 1 − (1 − ber)^P.
pub fn packet_error_probability(ber: f64, packet_bits: u32) -> f64 {
    let ber = ber.clamp(0.0, 1.0);
    -(f64::from(packet_bits) * (-ber).ln_1p()).exp_m1()
}

/// Node placement. Node 0 is the AP at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub positions: Vec<[f64; 2]>,
    pub path_loss_exponent: f64,
    pub coverage_radius: f64,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() < 2 {
            return Err(Error::InvalidTopology("at least 2 nodes required".into()));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(invalid("path_loss_exponent", "must be positive"));
        }
        if self.positions[0] != [0.0, 0.0] {
            return Err(Error::InvalidTopology(
                "node 0 (AP) must sit at the origin".into(),
            ));
        }
        let limit = self.coverage_radius * (1.0 + 1e-9);
        for (id, p) in self.positions.iter().enumerate() {
            if p[0].hypot(p[1]) > limit {
                return Err(Error::InvalidTopology(format!(
                    "node {id} lies outside the {} m coverage radius",
                    self.coverage_radius
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.positions[a], self.positions[b]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

/// Fading coefficients for one slot, `(M+1)×(M+1)` with node 0 the AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n: usize,
    coefficients: Vec<Complex64>,
}

impl ChannelMatrix {
    /// Builds a matrix from the upper triangle; the lower triangle mirrors it.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut coefficients = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for l in (i + 1)..n {
                let h = f(i, l);
                coefficients[i * n + l] = h;
                coefficients[l * n + i] = h;
            }
        }
        Self { n, coefficients }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, l: usize) -> Complex64 {
        self.coefficients[i * self.n + l]
    }

    pub fn gain(&self, i: usize, l: usize) -> f64 {
        self.get(i, l).norm_sqr()
    }

    pub fn set(&mut self, i: usize, l: usize, h: Complex64) {
        self.coefficients[i * self.n + l] = h;
        self.coefficients[l * self.n + i] = h;
    }
}

/// Draws a circularly-symmetric complex Gaussian with the given variance.
pub fn draw_cn<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draws one slot of i.i.d. Rayleigh fades with variance distance^(−δ).
pub fn draw_channel_matrix<R: Rng + ?Sized>(
    topology: &Topology,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    let n = topology.len();
    if n < 2 {
        return Err(Error::InvalidTopology("at least 2 nodes required".into()));
    }
    let variances = link_variances(topology)?;
    Ok(ChannelMatrix::from_fn(n, |i, l| {
        draw_cn(rng, variances[i * n + l])
    }))
}

/// Mean fade power per node pair, row-major.
pub fn link_variances(topology: &Topology) -> Result<Vec<f64>> {
    let n = topology.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for l in (i + 1)..n {
            let d = topology.distance(i, l);
            if !(d > 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "nodes {i} and {l} are coincident"
                )));
            }
            let v = d.powf(-topology.path_loss_exponent);
            out[i * n + l] = v;
            out[l * n + i] = v;
        }
    }
    Ok(out)
}
