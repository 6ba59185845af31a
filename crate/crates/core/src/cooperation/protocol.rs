//! Four-way RTS/CRS/HTS/CTS relay recruitment followed by data and ACK.

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    ap_accept_condition, assigned_phase1_rate, coop_rate, cooperation_wins, phase2_rate,
    phase_split, self_select, CoopConfig, RandomizationMatrix,
};
use crate::error::{invalid, Result};
use crate::phy::{bits_for_gain, ChannelMatrix, PhyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Rts,
    Crs,
    Hts,
    Cts,
    PhaseOne,
    PhaseTwo,
    Direct,
    Ack,
}

impl MessageKind {
    pub fn is_control(self) -> bool {
        matches!(
            self,
            Self::Rts | Self::Crs | Self::Hts | Self::Cts | Self::Ack
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rts => "RTS",
            Self::Crs => "CRS",
            Self::Hts => "HTS",
            Self::Cts => "CTS",
            Self::PhaseOne => "PHASE1",
            Self::PhaseTwo => "PHASE2",
            Self::Direct => "DIRECT",
            Self::Ack => "ACK",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sender {
    Node(usize),
    AccessPoint,
    /// The relay group transmitting jointly, optionally with the source.
    Relays {
        with_source: Option<usize>,
    },
}

impl fmt::Display for Sender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sender::Node(id) => write!(f, "node{id}"),
            Sender::AccessPoint => f.write_str("ap"),
            Sender::Relays { with_source: None } => f.write_str("relays"),
            Sender::Relays {
                with_source: Some(id),
            } => write!(f, "relays+node{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    /// Protocol step (1..=9) that emitted the message.
    pub step: u8,
    pub kind: MessageKind,
    pub sender: Sender,
    pub relay_count: usize,
    /// Rates carried or used by the message, bits/s.
    pub rates: Vec<f64>,
    pub note: String,
}

/// Result of one recruitment round for a single source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopOutcome {
    pub source: usize,
    pub decision: bool,
    pub relay_ids: Vec<usize>,
    pub rate_direct: f64,
    /// Rate assigned to Phase I by the CRS exchange.
    pub rate_phase1: f64,
    pub rate_phase2: f64,
    pub rate_coop: Option<f64>,
    pub rho: Option<f64>,
    /// |h_source→AP|².
    pub direct_gain: f64,
    /// Weakest source-to-relay power gain over the relay set.
    pub weakest_relay_gain: Option<f64>,
    /// Power of the equivalent Phase-II channel.
    pub equivalent_gain: f64,
    pub ap_condition: bool,
    pub rate_condition: bool,
    pub messages: Vec<Message>,
}

impl CoopOutcome {
    pub fn effective_rate(&self) -> f64 {
        match self.rate_coop {
            Some(r) if self.decision => r,
            _ => self.rate_direct,
        }
    }

    pub fn control_message_count(&self) -> usize {
        self.messages.iter().filter(|m| m.kind.is_control()).count()
    }

    /// Control messages sent before the first data message.
    pub fn handshake_len(&self) -> usize {
        self.messages
            .iter()
            .take_while(|m| m.kind.is_control())
            .count()
    }

    /// BER bound of the hop that limits end-to-end reliability.
    pub fn binding_ber(&self, phy: &PhyConfig) -> f64 {
        let gamma = phy.avg_snr_gamma;
        let bits = |rate: f64| phy.floor_to_grid(rate);
        if self.decision {
            let hop1 = crate::phy::ber_bound_from_gain(
                self.weakest_relay_gain.unwrap_or(0.0),
                bits(self.rate_phase1),
                gamma,
            );
            let hop2 = crate::phy::ber_bound_from_gain(
                self.equivalent_gain,
                bits(self.rate_phase2),
                gamma,
            );
            hop1.max(hop2)
        } else if self.rate_direct > 0.0 {
            crate::phy::ber_bound_from_gain(self.direct_gain, bits(self.rate_direct), gamma)
        } else {
            1.0
        }
    }
}

/// Runs the nine protocol steps for `source` over one channel realization.
///
/// Relay candidates are every non-AP node other than the source. `rng`
/// supplies the relays' randomization weights only, so callers can keep
/// channel draws on a separate stream.
pub fn run_recruitment<R: Rng + ?Sized>(
    source: usize,
    h: &ChannelMatrix,
    phy: &PhyConfig,
    coop: &CoopConfig,
    price: f64,
    rng: &mut R,
) -> Result<CoopOutcome> {
    if source == 0 || source >= h.nodes() {
        return Err(invalid("source", format!("node {source} is not a user")));
    }
    let gamma = phy.gamma_direct()?;
    let gamma1 = coop.gamma_phase1(phy)?;
    let gamma2 = coop.gamma_phase2(phy)?;
    let xi = coop.self_select_xi;
    let rc = coop.stbc_rate;
    let cap = phy.max_bits_per_symbol;
    let mut messages = Vec::with_capacity(8);

    // Step 1.
    messages.push(Message {
        step: 1,
        kind: MessageKind::Rts,
        sender: Sender::Node(source),
        relay_count: 0,
        rates: vec![],
        note: "training".into(),
    });

    // Step 2: AP and candidates estimate their links from the RTS.
    let direct_gain = h.gain(source, 0);
    let rate_direct = phy.rate_of_bits(bits_for_gain(direct_gain, gamma, cap));

    // Step 3. Without a usable direct link the AP announces the base rate
    // as the reference so that ξ still sets the Phase-I rate.
    let reference = if rate_direct > 0.0 {
        rate_direct
    } else {
        phy.rate_of_bits(phy.base_bits_per_symbol)
    };
    messages.push(Message {
        step: 3,
        kind: MessageKind::Crs,
        sender: Sender::AccessPoint,
        relay_count: 0,
        rates: vec![rate_direct],
        note: format!("xi={xi}"),
    });

    // Step 4.
    let rate_phase1 = assigned_phase1_rate(reference, xi, phy)?;

    // Step 5: each candidate decides alone from its own link.
    let relay_ids: Vec<usize> = (1..h.nodes())
        .filter(|&l| l != source)
        .filter(|&l| {
            let r = phy.rate_of_bits(bits_for_gain(h.gain(source, l), gamma1, cap));
            self_select(reference, r, xi)
        })
        .collect();
    let weakest_relay_gain = relay_ids
        .iter()
        .map(|&l| h.gain(source, l))
        .reduce(f64::min);

    let weights = RandomizationMatrix::draw(coop.stbc_length, relay_ids.len(), rng);
    let h_relays: Vec<_> = relay_ids.iter().map(|&l| h.get(l, 0)).collect();
    let rh = weights.apply(&h_relays)?;
    messages.push(Message {
        step: 5,
        kind: MessageKind::Hts,
        sender: Sender::Relays { with_source: None },
        relay_count: relay_ids.len(),
        rates: vec![],
        note: "randomized-stbc training".into(),
    });

    // Step 6: the AP estimates the equivalent channel and decides.
    let h_source = h.get(source, 0);
    let equivalent_gain = direct_gain + rh.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let rate_phase2 = if relay_ids.is_empty() {
        0.0
    } else {
        phase2_rate(h_source, &rh, gamma2, phy)
    };
    let ap_condition =
        !relay_ids.is_empty() && ap_accept_condition(rate_direct, rate_phase2, rc, xi);
    let rate_condition =
        !relay_ids.is_empty() && cooperation_wins(rate_direct, rate_phase1, rate_phase2, rc);
    let decision = ap_condition && rate_condition;
    let mut note = format!("z={} price={price}", u8::from(decision));
    if ap_condition != rate_condition {
        note.push_str(" grid-rounding: AP test and rate test disagree");
    }
    messages.push(Message {
        step: 6,
        kind: MessageKind::Cts,
        sender: Sender::AccessPoint,
        relay_count: relay_ids.len(),
        rates: if decision { vec![rate_phase2] } else { vec![] },
        note,
    });

    // Steps 7-8.
    let (rate_coop, rho) = if decision {
        let rate = coop_rate(rate_phase1, rate_phase2, rc)?;
        let rho = phase_split(rate_phase1, rate_phase2, rc)?;
        messages.push(Message {
            step: 7,
            kind: MessageKind::PhaseOne,
            sender: Sender::Node(source),
            relay_count: relay_ids.len(),
            rates: vec![rate_phase1],
            note: format!("rho={rho:.6}"),
        });
        messages.push(Message {
            step: 8,
            kind: MessageKind::PhaseTwo,
            sender: Sender::Relays {
                with_source: Some(source),
            },
            relay_count: relay_ids.len(),
            rates: vec![rate_phase2],
            note: String::new(),
        });
        (Some(rate), Some(rho))
    } else {
        messages.push(Message {
            step: 7,
            kind: MessageKind::Direct,
            sender: Sender::Node(source),
            relay_count: 0,
            rates: vec![rate_direct],
            note: if rate_direct > 0.0 {
                String::new()
            } else {
                "link unusable".into()
            },
        });
        (None, None)
    };

    // Step 9.
    messages.push(Message {
        step: 9,
        kind: MessageKind::Ack,
        sender: Sender::AccessPoint,
        relay_count: 0,
        rates: vec![],
        note: String::new(),
    });

    Ok(CoopOutcome {
        source,
        decision,
        relay_ids,
        rate_direct,
        rate_phase1,
        rate_phase2,
        rate_coop,
        rho,
        direct_gain,
        weakest_relay_gain,
        equivalent_gain,
        ap_condition,
        rate_condition,
        messages,
    })
}

/// Writes one tab-separated line per message:
/// `slot step kind sender relays rates note`.
pub fn write_trace_log<W: Write>(
    out: &mut W,
    slot: u64,
    outcome: &CoopOutcome,
) -> std::io::Result<()> {
    for m in &outcome.messages {
        let rates = m
            .rates
            .iter()
            .map(|r| format!("{r}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            out,
            "{slot}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.step,
            m.kind.as_str(),
            m.sender,
            m.relay_count,
            if rates.is_empty() { "-" } else { &rates },
            if m.note.is_empty() { "-" } else { &m.note },
        )?;
    }
    Ok(())
}
