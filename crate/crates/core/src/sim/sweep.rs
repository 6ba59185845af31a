use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{child_rng, place_nodes, streams, SimConfig};
use crate::cooperation::{coop_energy, run_recruitment};
use crate::error::{invalid, Result};
use crate::phy::{direct_energy_per_packet, draw_cn, ChannelMatrix, PhyConfig};

/// Statistics for one (distance, ξ) pair. Rates are in bits per symbol and
/// energies in Joules per packet with a symbol power of 1/P.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub distance: f64,
    pub xi: f64,
    pub mean_rate: f64,
    pub coop_probability: f64,
    /// Self-selected relays per slot.
    pub mean_relays: f64,
    /// Total (source + relays) energy per packet over slots that transmit.
    pub energy_per_packet: f64,
    /// Rate-to-energy ratio relative to direct transmission on the same
    /// channels (direct = 1).
    pub throughput_to_energy: f64,
    /// Energy per packet direct transmission would need, at a raised
    /// symbol energy, to match the cooperative rate; cooperating slots only.
    pub direct_equivalent_energy: f64,
    pub slots: u64,
    pub cooperating_slots: u64,
    pub direct_mean_rate: f64,
    pub direct_energy_per_packet: f64,
    /// Mean total energy per packet over cooperating slots.
    pub coop_energy_when_cooperating: f64,
    /// Mean source-only energy per packet over cooperating slots.
    pub coop_source_energy: f64,
    /// Cooperating slots in which the source spent at least as much as it
    /// would have sending directly.
    pub source_energy_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

#[derive(Default)]
struct Acc {
    rate: f64,
    coop: u64,
    relays: u64,
    energy: f64,
    energy_n: u64,
    coop_energy: f64,
    coop_source: f64,
    direct_equiv: f64,
    direct_equiv_n: u64,
    violations: u64,
}

/// Single source at each distance (on the x axis), ξ swept at each distance.
///
/// All ξ values at one distance see the same layouts and channels.
pub fn sweep_distance(cfg: &SimConfig, distances: &[f64], xi_values: &[f64]) -> Result<SweepTable> {
    cfg.validate()?;
    if distances.is_empty() || xi_values.is_empty() {
        return Err(invalid("sweep", "distances and xi_values must be nonempty"));
    }
    for &d in distances {
        if !(d > 0.0 && d <= cfg.coverage_radius) {
            return Err(invalid(
                "distances",
                format!("{d} m is outside the coverage radius"),
            ));
        }
    }
    let mut coops = Vec::with_capacity(xi_values.len());
    for &xi in xi_values {
        let c = cfg.coop.clone().with_xi(xi);
        c.validate(&cfg.phy)?;
        coops.push(c);
    }
    let phy = PhyConfig {
        symbol_rate: 1.0,
        ..cfg.phy.clone()
    };
    let rows = distances
        .par_iter()
        .enumerate()
        .map(|(di, &d)| sweep_one(cfg, &phy, &coops, di as u64, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        cells: rows.into_iter().flatten().collect(),
    })
}

fn sweep_one(
    cfg: &SimConfig,
    phy: &PhyConfig,
    coops: &[crate::cooperation::CoopConfig],
    index: u64,
    distance: f64,
) -> Result<Vec<SweepCell>> {
    let mut rng = child_rng(cfg.seed, streams::SWEEP, index);
    let mut stbc: Vec<_> = coops
        .iter()
        .map(|_| child_rng(cfg.seed, streams::STBC, index))
        .collect();
    let gamma = phy.gamma_direct()?;
    let n_nodes = cfg.n_relays + 2;
    let source = [distance, 0.0];
    let mut relays = place_nodes(cfg.n_relays, cfg.coverage_radius, &mut rng);
    let mut acc: Vec<Acc> = coops.iter().map(|_| Acc::default()).collect();
    let (mut d_rate, mut d_energy, mut d_n) = (0.0, 0.0, 0u64);
    let slots = cfg.sweep.slots;

    for _ in 0..slots {
        if cfg.sweep.redraw_layout {
            relays = place_nodes(cfg.n_relays, cfg.coverage_radius, &mut rng);
        }
        let pos = |i: usize| match i {
            0 => [0.0, 0.0],
            1 => source,
            _ => relays[i - 2],
        };
        // Only AP and source links matter for a single source.
        let h = ChannelMatrix::from_fn(n_nodes, |i, l| {
            if i > 1 {
                return num_complex::Complex64::new(0.0, 0.0);
            }
            let (p, q) = (pos(i), pos(l));
            let dist = (p[0] - q[0]).hypot(p[1] - q[1]).max(1e-6);
            draw_cn(&mut rng, dist.powf(-cfg.path_loss_exponent))
        });

        let g0 = h.gain(1, 0);
        let direct = crate::phy::direct_rate(h.get(1, 0), gamma, phy);
        d_rate += direct;
        let direct_energy = if direct > 0.0 {
            let e = direct_energy_per_packet(phy, direct)?;
            d_energy += e;
            d_n += 1;
            e
        } else {
            f64::INFINITY
        };

        for ((coop, a), r) in coops.iter().zip(acc.iter_mut()).zip(stbc.iter_mut()) {
            let out = run_recruitment(1, &h, phy, coop, 0.0, r)?;
            let rate = out.effective_rate();
            a.rate += rate;
            a.relays += out.relay_ids.len() as u64;
            if out.decision {
                let rc = out.rate_coop.expect("cooperating outcome has a rate");
                let e = coop_energy(
                    phy,
                    rc,
                    out.rate_phase2,
                    coop.stbc_rate,
                    out.relay_ids.len(),
                    1,
                )?;
                a.coop += 1;
                a.energy += e.total;
                a.energy_n += 1;
                a.coop_energy += e.total;
                a.coop_source += e.source;
                if e.source >= direct_energy {
                    a.violations += 1;
                }
                if g0 > 0.0 {
                    // Symbol energy that lifts the direct link to rate rc.
                    let es = phy.symbol_energy() * (rc.exp2() - 1.0) / (gamma * g0);
                    a.direct_equiv += f64::from(phy.packet_bits) * es * phy.symbol_rate / rc;
                    a.direct_equiv_n += 1;
                }
            } else if rate > 0.0 {
                a.energy += direct_energy;
                a.energy_n += 1;
            }
        }
    }

    let n = slots as f64;
    let mean = |sum: f64, k: u64| if k > 0 { sum / k as f64 } else { 0.0 };
    let direct_mean_rate = d_rate / n;
    let direct_energy_pp = mean(d_energy, d_n);
    let direct_te = if direct_energy_pp > 0.0 {
        direct_mean_rate / direct_energy_pp
    } else {
        0.0
    };
    Ok(coops
        .iter()
        .zip(acc)
        .map(|(coop, a)| {
            let mean_rate = a.rate / n;
            let energy = mean(a.energy, a.energy_n);
            let te = if energy > 0.0 && direct_te > 0.0 {
                (mean_rate / energy) / direct_te
            } else {
                0.0
            };
            SweepCell {
                distance,
                xi: coop.self_select_xi,
                mean_rate,
                coop_probability: a.coop as f64 / n,
                mean_relays: a.relays as f64 / n,
                energy_per_packet: energy,
                throughput_to_energy: te,
                direct_equivalent_energy: mean(a.direct_equiv, a.direct_equiv_n),
                slots: slots as u64,
                cooperating_slots: a.coop,
                direct_mean_rate,
                direct_energy_per_packet: direct_energy_pp,
                coop_energy_when_cooperating: mean(a.coop_energy, a.coop),
                coop_source_energy: mean(a.coop_source, a.coop),
                source_energy_violations: a.violations,
            }
        })
        .collect())
}
