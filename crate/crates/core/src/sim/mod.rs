//! Closed-loop simulation: node layout, scenario configuration, the per-slot
//! loop and the single-source distance/ξ sweep.

mod episode;
mod output;
mod sweep;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cooperation::CoopConfig;
use crate::error::{invalid, Error, Result};
use crate::phy::{PhyConfig, Topology};
use crate::pricing::PriceSchedule;
use crate::traffic::GopSpec;

pub use episode::{
    build_models, run_episode, solved_policies, EpisodeOutput, SimStats, SlotRecord, UserStats,
};
pub use output::{
    read_summary, write_json, write_slot_csv, write_sweep_csv, OutputFormat, SWEEP_COLUMNS,
};
pub use sweep::{sweep_distance, SweepCell, SweepTable};

/// Config schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// One source position relative to the AP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcePlacement {
    pub distance: f64,
    /// Degrees counter-clockwise from the x axis.
    pub angle_deg: f64,
}

impl SourcePlacement {
    pub fn position(&self) -> [f64; 2] {
        let a = self.angle_deg.to_radians();
        [self.distance * a.cos(), self.distance * a.sin()]
    }
}

/// How allocations above the slot capacity are brought back in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Renormalization {
    /// Cut each user's packet count to what its scaled share carries.
    #[default]
    Truncate,
    /// Pick the best action that fits the scaled share, using the solved
    /// value function.
    Reoptimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub distances: Vec<f64>,
    pub xi_values: Vec<f64>,
    pub slots: usize,
    /// Redraw relay positions every slot rather than once per cell.
    pub redraw_layout: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            distances: (1..=10).map(|k| f64::from(k) * 10.0).collect(),
            xi_values: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            slots: 10_000,
            redraw_layout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub n_relays: usize,
    pub coverage_radius: f64,
    pub path_loss_exponent: f64,
    pub sources: Vec<SourcePlacement>,
    pub phy: PhyConfig,
    pub coop: CoopConfig,
    /// When false every user transmits directly.
    pub cooperation_enabled: bool,
    /// One spec per user, or a single spec shared by all users.
    pub gops: Vec<GopSpec>,
    pub alpha: f64,
    pub price: PriceSchedule,
    pub n_slots: usize,
    /// Channel draws per user when estimating its rate pmf.
    pub pmf_samples: usize,
    pub renormalization: Renormalization,
    /// Share of every slot reserved for signaling.
    pub overhead_fraction: f64,
    pub sweep: SweepConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            n_relays: 50,
            coverage_radius: 100.0,
            path_loss_exponent: 3.0,
            sources: vec![
                SourcePlacement {
                    distance: 20.0,
                    angle_deg: 25.0,
                },
                SourcePlacement {
                    distance: 45.0,
                    angle_deg: -30.0,
                },
                SourcePlacement {
                    distance: 80.0,
                    angle_deg: 0.0,
                },
            ],
            phy: PhyConfig::default(),
            coop: CoopConfig::default(),
            cooperation_enabled: true,
            gops: vec![GopSpec::default()],
            alpha: 0.9,
            price: PriceSchedule::default(),
            n_slots: 1000,
            pmf_samples: 2000,
            renormalization: Renormalization::Truncate,
            overhead_fraction: 0.0,
            sweep: SweepConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.phy.validate()?;
        self.coop.validate(&self.phy)?;
        self.price.validate()?;
        if !(self.coverage_radius > 0.0) {
            return Err(invalid("coverage_radius", "must be positive"));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(invalid("path_loss_exponent", "must be positive"));
        }
        if self.sources.is_empty() {
            return Err(invalid("sources", "need at least one source"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.distance > 0.0 && s.distance <= self.coverage_radius) {
                return Err(invalid(
                    "sources",
                    format!(
                        "source {i} at {} m is outside (0, {}]",
                        s.distance, self.coverage_radius
                    ),
                ));
            }
        }
        if self.gops.len() != 1 && self.gops.len() != self.sources.len() {
            return Err(invalid(
                "gops",
                format!(
                    "expected 1 or {} specs, got {}",
                    self.sources.len(),
                    self.gops.len()
                ),
            ));
        }
        for g in &self.gops {
            g.validate()?;
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid("alpha", "must lie in [0, 1)"));
        }
        if self.n_slots == 0 {
            return Err(invalid("n_slots", "must be at least 1"));
        }
        if self.pmf_samples == 0 {
            return Err(invalid("pmf_samples", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.overhead_fraction) {
            return Err(invalid("overhead_fraction", "must lie in [0, 1)"));
        }
        if self.sweep.slots == 0 {
            return Err(invalid("sweep.slots", "must be at least 1"));
        }
        if self
            .sweep
            .distances
            .iter()
            .any(|d| !(*d > 0.0 && *d <= self.coverage_radius))
        {
            return Err(invalid(
                "sweep.distances",
                "must lie in (0, coverage_radius]",
            ));
        }
        if self.sweep.xi_values.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(invalid("sweep.xi_values", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.sources.len()
    }

    pub fn gop_for(&self, user: usize) -> &GopSpec {
        if self.gops.len() == 1 {
            &self.gops[0]
        } else {
            &self.gops[user]
        }
    }
}

/// Independent random stream `stream`/`index` derived from `master`.
pub fn child_rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const LAYOUT: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const STBC: u64 = 3;
    pub const ERRORS: u64 = 4;
    pub const PMF: u64 = 5;
    pub const SWEEP: u64 = 6;
}

/// `n` points uniform over the disk of radius `radius` centred on the AP.
pub fn place_nodes<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            [r * theta.cos(), r * theta.sin()]
        })
        .collect()
}

/// AP at the origin, then the sources in order, then `n_relays` random relays.
pub fn build_topology<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Topology> {
    let mut positions = vec![[0.0, 0.0]];
    positions.extend(cfg.sources.iter().map(SourcePlacement::position));
    positions.extend(place_nodes(cfg.n_relays, cfg.coverage_radius, rng));
    let topo = Topology {
        positions,
        path_loss_exponent: cfg.path_loss_exponent,
        coverage_radius: cfg.coverage_radius,
    };
    topo.validate()?;
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_stays_in_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = place_nodes(1, 100.0, &mut rng);
        assert_eq!(p.len(), 1);
        assert!(p[0][0].hypot(p[0][1]) <= 100.0);
    }

    #[test]
    fn placement_mean_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = place_nodes(100_000, 100.0, &mut rng);
        let mean = pts.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / pts.len() as f64;
        let expected = 2.0 * 100.0 / 3.0;
        assert!((mean - expected).abs() / expected < 0.01, "{mean}");
    }

    #[test]
    fn placement_is_reproducible() {
        let a = place_nodes(10, 50.0, &mut child_rng(7, streams::LAYOUT, 0));
        let b = place_nodes(10, 50.0, &mut child_rng(7, streams::LAYOUT, 0));
        assert_eq!(a, b);
        let c = place_nodes(10, 50.0, &mut child_rng(7, streams::LAYOUT, 1));
        assert_ne!(a, c);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(SimConfig::from_toml_str("n_slots = 0").is_err());
        assert!(SimConfig::from_toml_str("bogus = 1").is_err());
        assert!(SimConfig::from_toml_str("schema_version = 9").is_err());
        let cfg = SimConfig::from_toml_str("seed = 5\n[phy]\nslot_seconds = 0.002").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.phy.slot_seconds, 0.002);
    }

    #[test]
    fn sources_follow_the_ap() {
        let cfg = SimConfig::default();
        let topo = build_topology(&cfg, &mut child_rng(1, streams::LAYOUT, 0)).unwrap();
        assert_eq!(topo.len(), 1 + 3 + 50);
        assert!((topo.distance(0, 3) - 80.0).abs() < 1e-9);
    }
}
