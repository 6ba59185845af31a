use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_topology, child_rng, streams, Renormalization, SimConfig};
use crate::cooperation::{coop_energy, run_recruitment};
use crate::error::{Error, Result};
use crate::mdp::{estimate_rate_pmf, expected_resource_from_start, RatePmf, UserModel, UserState};
use crate::phy::{
    ber_bound_from_gain, bits_for_gain, direct_energy_per_packet, draw_channel_matrix,
    packet_error_probability, ChannelMatrix, PhyConfig, Topology,
};
use crate::pricing::{price_iteration, PriceStep};
use crate::traffic::{advance, utility, GopSpec, SchedulingAction, TrafficState};

/// One user in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub user: usize,
    /// Opportunistic rate in bits/s.
    pub rate: f64,
    pub cooperating: bool,
    /// Relays that self-selected.
    pub relays: usize,
    pub requested_packets: u32,
    pub requested_x: f64,
    pub granted_x: f64,
    pub sent_packets: u32,
    pub delivered_packets: u32,
    pub delivered_utility: f64,
    pub energy_source: f64,
    pub energy_relays: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    pub user: usize,
    pub distance: f64,
    pub mean_rate: f64,
    pub cooperation_probability: f64,
    /// Mean self-selected relay count over all slots.
    pub mean_relays: f64,
    pub energy_source_per_packet: f64,
    pub energy_relays_per_packet: f64,
    pub energy_total_per_packet: f64,
    /// Delivered bits per Joule.
    pub throughput_to_energy: f64,
    pub delivered_utility: f64,
    /// Discounted demand X at the final price.
    pub demand: f64,
    pub packets_admitted: u64,
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_expired: u64,
    pub packets_dropped: u64,
    pub packets_buffered: u64,
    pub undecodable_frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub slots: u64,
    pub cooperation_enabled: bool,
    pub lambda: f64,
    pub price_converged: bool,
    pub price_history: Vec<PriceStep>,
    pub users: Vec<UserStats>,
    /// Mean of Σx after normalization.
    pub mean_utilization: f64,
    pub max_utilization: f64,
    /// Slots whose requests exceeded the capacity before normalization.
    pub oversubscribed_slots: u64,
    /// Fraction of slots each node spent relaying, indexed by node id.
    pub relay_activation: Vec<f64>,
    pub total_energy: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub stats: SimStats,
    pub records: Vec<SlotRecord>,
}

/// What the link offers a user in the current slot.
struct LinkChoice {
    rate: f64,
    cooperating: bool,
    relay_ids: Vec<usize>,
    rate_direct: f64,
    rate_coop: f64,
    rate_phase2: f64,
    ber: f64,
}

fn direct_choice(source: usize, h: &ChannelMatrix, phy: &PhyConfig) -> Result<LinkChoice> {
    let gain = h.gain(source, 0);
    let bits = bits_for_gain(gain, phy.gamma_direct()?, phy.max_bits_per_symbol);
    let rate = phy.rate_of_bits(bits);
    Ok(LinkChoice {
        rate,
        cooperating: false,
        relay_ids: Vec::new(),
        rate_direct: rate,
        rate_coop: 0.0,
        rate_phase2: 0.0,
        ber: if bits > 0 {
            ber_bound_from_gain(gain, bits, phy.avg_snr_gamma)
        } else {
            1.0
        },
    })
}

fn link_choice<R: Rng + ?Sized>(
    cfg: &SimConfig,
    source: usize,
    h: &ChannelMatrix,
    stbc_rng: &mut R,
    price: f64,
) -> Result<LinkChoice> {
    if !cfg.cooperation_enabled {
        return direct_choice(source, h, &cfg.phy);
    }
    let out = run_recruitment(source, h, &cfg.phy, &cfg.coop, price, stbc_rng)?;
    Ok(LinkChoice {
        rate: out.effective_rate(),
        cooperating: out.decision,
        ber: out.binding_ber(&cfg.phy),
        rate_direct: out.rate_direct,
        rate_coop: out.rate_coop.unwrap_or(0.0),
        rate_phase2: out.rate_phase2,
        relay_ids: out.relay_ids,
    })
}

fn estimate_pmf(cfg: &SimConfig, topo: &Topology, user: usize) -> Result<RatePmf> {
    let source = user + 1;
    let mut rng = child_rng(cfg.seed, streams::PMF, user as u64);
    if cfg.cooperation_enabled {
        return estimate_rate_pmf(source, topo, &cfg.phy, &cfg.coop, cfg.pmf_samples, &mut rng);
    }
    let mut samples = Vec::with_capacity(cfg.pmf_samples);
    for _ in 0..cfg.pmf_samples {
        let h = draw_channel_matrix(topo, &mut rng)?;
        samples.push(direct_choice(source, &h, &cfg.phy)?.rate);
    }
    RatePmf::from_samples(cfg.phy.rate_grid(), &samples)
}

/// Topology plus one compiled MDP per user.
pub fn build_models(cfg: &SimConfig) -> Result<(Topology, Vec<UserModel>)> {
    cfg.validate()?;
    let topo = build_topology(cfg, &mut child_rng(cfg.seed, streams::LAYOUT, 0))?;
    let models = (0..cfg.users())
        .map(|u| {
            let pmf = estimate_pmf(cfg, &topo, u)?;
            UserModel::for_phy(cfg.gop_for(u), pmf, &cfg.phy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((topo, models))
}

/// Scales `requested` to fit `capacity` when it is exceeded.
fn normalize_to(requested: &[f64], capacity: f64) -> Vec<f64> {
    let scaled: Vec<f64> = requested.iter().map(|x| x / capacity).collect();
    crate::pricing::normalize_allocations(&scaled)
        .into_iter()
        .map(|x| x * capacity)
        .collect()
}

/// Drops packets from `counts` until at most `budget` remain, emptying
/// later frames (in dependency order) first so the result stays feasible.
fn truncate(state: &TrafficState, counts: &[u32], budget: u32, gop: &GopSpec) -> Vec<u32> {
    let mut out = counts.to_vec();
    let mut excess = out.iter().sum::<u32>().saturating_sub(budget);
    if excess == 0 {
        return out;
    }
    let rank = class_rank(gop);
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by_key(|&i| (state.frames[i].gop, rank[state.frames[i].class]));
    for &i in order.iter().rev() {
        let cut = out[i].min(excess);
        out[i] -= cut;
        excess -= cut;
        if excess == 0 {
            break;
        }
    }
    out
}

/// Position of each class in a topological order of the dependencies.
fn class_rank(gop: &GopSpec) -> Vec<usize> {
    let n = gop.frames_per_gop;
    let mut rank = vec![0usize; n];
    // Longest-path depth is a valid topological key for a DAG.
    for _ in 0..n {
        for &(k, j) in &gop.dependencies {
            rank[j] = rank[j].max(rank[k] + 1);
        }
    }
    rank
}

struct UserAcc {
    state: TrafficState,
    rate_sum: f64,
    coop_slots: u64,
    relay_sum: u64,
    energy_source: f64,
    energy_relays: f64,
    utility: f64,
    admitted: u64,
    sent: u64,
    delivered: u64,
    expired: u64,
    dropped: u64,
    undecodable: u64,
}

/// Runs `cfg.n_slots` slots of the multi-user closed loop.
pub fn run_episode(cfg: &SimConfig) -> Result<EpisodeOutput> {
    let (topo, models) = build_models(cfg)?;
    let price = price_iteration(&models, cfg.alpha, &cfg.price)?;
    let solutions = &price.solutions;
    let phy = &cfg.phy;
    let capacity = 1.0 - cfg.overhead_fraction;
    let n_users = cfg.users();

    let mut chan_rng = child_rng(cfg.seed, streams::CHANNEL, 0);
    let mut stbc_rng = child_rng(cfg.seed, streams::STBC, 0);
    let mut err_rng = child_rng(cfg.seed, streams::ERRORS, 0);

    let mut acc: Vec<UserAcc> = (0..n_users)
        .map(|u| {
            let state = TrafficState::initial(cfg.gop_for(u));
            UserAcc {
                admitted: state.total_buffered(),
                state,
                rate_sum: 0.0,
                coop_slots: 0,
                relay_sum: 0,
                energy_source: 0.0,
                energy_relays: 0.0,
                utility: 0.0,
                sent: 0,
                delivered: 0,
                expired: 0,
                dropped: 0,
                undecodable: 0,
            }
        })
        .collect();
    let mut activation = vec![0u64; topo.len()];
    let mut records = Vec::with_capacity(cfg.n_slots * n_users);
    let mut util_sum = 0.0;
    let mut util_max: f64 = 0.0;
    let mut oversubscribed = 0u64;

    for slot in 0..cfg.n_slots as u64 {
        let h = draw_channel_matrix(&topo, &mut chan_rng)?;
        let mut choices = Vec::with_capacity(n_users);
        let mut picks = Vec::with_capacity(n_users);
        let mut requested = Vec::with_capacity(n_users);
        for u in 0..n_users {
            let choice = link_choice(cfg, u + 1, &h, &mut stbc_rng, price.lambda)?;
            let model = &models[u];
            let bin = model.pmf.bin_of(choice.rate);
            let traffic = model.traffic.index_of(&acc[u].state).ok_or_else(|| {
                Error::ContractViolation(format!(
                    "user {u} reached a traffic state outside its model"
                ))
            })?;
            let s = UserState {
                traffic,
                rate_bin: bin,
            };
            let ai = solutions[u].action_index(s);
            let packets = model.traffic.state(traffic).actions[ai].packets;
            requested.push(model.allocation(packets, bin));
            picks.push((s, ai));
            choices.push(choice);
        }
        let req_total: f64 = requested.iter().sum();
        if req_total > capacity + 1e-12 {
            oversubscribed += 1;
        }
        let granted = normalize_to(&requested, capacity);

        let mut slot_util = 0.0;
        for u in 0..n_users {
            let model = &models[u];
            let gop = cfg.gop_for(u);
            let (s, ai) = picks[u];
            let action = &model.traffic.state(s.traffic).actions[ai];
            let bin_rate = model.pmf.bins()[s.rate_bin];
            let budget = if granted[u] < requested[u] {
                (phy.slot_seconds * bin_rate * granted[u] / f64::from(phy.packet_bits) + 1e-9)
                    .floor() as u32
            } else {
                action.packets
            };
            let counts = if action.packets <= budget {
                action.counts.clone()
            } else {
                match cfg.renormalization {
                    Renormalization::Truncate => {
                        truncate(&acc[u].state, &action.counts, budget, gop)
                    }
                    Renormalization::Reoptimize => {
                        let alt = solutions[u].best_within(model, s, budget);
                        model.traffic.state(s.traffic).actions[alt].counts.clone()
                    }
                }
            };
            let sent: u32 = counts.iter().sum();
            let x = model.allocation(sent, s.rate_bin);
            slot_util += x;

            let choice = &choices[u];
            let per = packet_error_probability(choice.ber, phy.packet_bits);
            let delivered: Vec<u32> = counts
                .iter()
                .map(|&c| (0..c).filter(|_| err_rng.random::<f64>() >= per).count() as u32)
                .collect();
            let got: u32 = delivered.iter().sum();
            let gained = utility(
                &acc[u].state,
                &SchedulingAction {
                    counts: delivered.clone(),
                },
                gop,
            );

            let (e_src, e_rel) = if sent == 0 {
                (0.0, 0.0)
            } else if choice.cooperating {
                let e = coop_energy(
                    phy,
                    choice.rate_coop,
                    choice.rate_phase2,
                    cfg.coop.stbc_rate,
                    choice.relay_ids.len(),
                    sent,
                )?;
                for &r in &choice.relay_ids {
                    activation[r] += 1;
                }
                (e.source, e.total - e.source)
            } else {
                (
                    direct_energy_per_packet(phy, choice.rate_direct)? * f64::from(sent),
                    0.0,
                )
            };

            let a = &mut acc[u];
            let (next, rep) = advance(&a.state, &delivered, gop)?;
            a.state = next;
            a.rate_sum += choice.rate;
            a.coop_slots += u64::from(choice.cooperating);
            a.relay_sum += choice.relay_ids.len() as u64;
            a.energy_source += e_src;
            a.energy_relays += e_rel;
            a.utility += gained;
            a.sent += u64::from(sent);
            a.delivered += rep.delivered_packets;
            a.admitted += rep.admitted_packets;
            a.expired += rep.expired_packets;
            a.dropped += rep.dropped_packets;
            a.undecodable += rep.incomplete_frames + rep.doomed_frames;

            records.push(SlotRecord {
                slot,
                user: u,
                rate: choice.rate,
                cooperating: choice.cooperating,
                relays: choice.relay_ids.len(),
                requested_packets: action.packets,
                requested_x: requested[u],
                granted_x: granted[u],
                sent_packets: sent,
                delivered_packets: got,
                delivered_utility: gained,
                energy_source: e_src,
                energy_relays: e_rel,
            });
        }
        util_sum += slot_util;
        util_max = util_max.max(slot_util);
    }

    let n = cfg.n_slots as f64;
    let users = acc
        .iter()
        .enumerate()
        .map(|(u, a)| {
            let energy = a.energy_source + a.energy_relays;
            let per_packet = |e: f64| if a.sent > 0 { e / a.sent as f64 } else { 0.0 };
            UserStats {
                user: u,
                distance: cfg.sources[u].distance,
                mean_rate: a.rate_sum / n,
                cooperation_probability: a.coop_slots as f64 / n,
                mean_relays: a.relay_sum as f64 / n,
                energy_source_per_packet: per_packet(a.energy_source),
                energy_relays_per_packet: per_packet(a.energy_relays),
                energy_total_per_packet: per_packet(energy),
                throughput_to_energy: if energy > 0.0 {
                    a.delivered as f64 * f64::from(phy.packet_bits) / energy
                } else {
                    0.0
                },
                delivered_utility: a.utility,
                demand: expected_resource_from_start(&models[u], &solutions[u], cfg.alpha),
                packets_admitted: a.admitted,
                packets_sent: a.sent,
                packets_delivered: a.delivered,
                packets_expired: a.expired,
                packets_dropped: a.dropped,
                packets_buffered: a.state.total_buffered(),
                undecodable_frames: a.undecodable,
            }
        })
        .collect::<Vec<_>>();
    let total_energy = acc.iter().map(|a| a.energy_source + a.energy_relays).sum();
    Ok(EpisodeOutput {
        stats: SimStats {
            slots: cfg.n_slots as u64,
            cooperation_enabled: cfg.cooperation_enabled,
            lambda: price.lambda,
            price_converged: price.converged,
            price_history: price.history,
            users,
            mean_utilization: util_sum / n,
            max_utilization: util_max,
            oversubscribed_slots: oversubscribed,
            relay_activation: activation.iter().map(|&c| c as f64 / n).collect(),
            total_energy,
        },
        records,
    })
}

/// Solutions at the final price, for the `price` subcommand.
pub fn solved_policies(cfg: &SimConfig) -> Result<(Vec<UserModel>, crate::pricing::PriceOutcome)> {
    let (_, models) = build_models(cfg)?;
    let out = price_iteration(&models, cfg.alpha, &cfg.price)?;
    Ok((models, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig {
            n_relays: 10,
            n_slots: 200,
            pmf_samples: 200,
            ..SimConfig::default()
        }
    }

    #[test]
    fn conservation_and_capacity() {
        let out = run_episode(&small_cfg()).unwrap();
        for u in &out.stats.users {
            assert_eq!(
                u.packets_admitted,
                u.packets_delivered + u.packets_expired + u.packets_dropped + u.packets_buffered,
                "{u:?}"
            );
        }
        assert!(out.stats.max_utilization <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_quality_schedules_nothing() {
        let gop = GopSpec {
            quality_increment: vec![0.0; 4],
            ..GopSpec::default()
        };
        let cfg = SimConfig {
            gops: vec![gop],
            ..small_cfg()
        };
        let out = run_episode(&cfg).unwrap();
        assert!(out.records.iter().all(|r| r.sent_packets == 0));
        assert_eq!(out.stats.total_energy, 0.0);
    }

    #[test]
    fn truncation_keeps_dependencies() {
        let gop = GopSpec::default();
        let state = TrafficState::initial(&gop);
        // I, B2, P3 of GOP 0: B2 depends on both I and P3.
        let cut = truncate(&state, &[4, 2, 4], 8, &gop);
        assert_eq!(cut, vec![4, 0, 4]);
        let cut = truncate(&state, &[4, 2, 4], 5, &gop);
        assert_eq!(cut, vec![4, 0, 1]);
        assert!(crate::traffic::is_feasible(
            &state,
            &SchedulingAction { counts: cut },
            5,
            &gop
        ));
    }

    #[test]
    fn direct_only_never_cooperates() {
        let cfg = SimConfig {
            cooperation_enabled: false,
            ..small_cfg()
        };
        let out = run_episode(&cfg).unwrap();
        assert!(out
            .records
            .iter()
            .all(|r| !r.cooperating && r.energy_relays == 0.0));
    }
}
