//! Application-layer video traffic: GOP frames with deadlines, a sliding
//! scheduling window, per-frame packet buffers and decoding dependencies.
//!
//! Frame instance `(gop, class)` has deadline `gop·period + deadlines[class]`
//! and is schedulable in slot `t` while its deadline lies in `[t, t + window]`.
//! Packets still buffered when a frame leaves the window are lost, and every
//! frame that (transitively) depends on an incomplete frame is dropped.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GopSpec {
    pub frames_per_gop: usize,
    /// Slots between consecutive GOPs.
    pub period: u64,
    /// Scheduling window length in slots.
    pub window: u64,
    /// `(k, j)` means class `k` must be fully sent before class `j`.
    pub dependencies: Vec<(usize, usize)>,
    pub packets_per_frame: Vec<u32>,
    /// Utility per delivered packet, per class.
    pub quality_increment: Vec<f64>,
    /// Deadline of each class, in slots after the GOP start.
    pub deadlines: Vec<u64>,
}

impl Default for GopSpec {
    /// IBPB with four packets per frame.
    fn default() -> Self {
        Self::ibpb(4)
    }
}

impl GopSpec {
    /// Classes in display order I, B, P, B. B frames lean on both the I and
    /// the P frame; the P frame leans on the I frame.
    pub fn ibpb(packets_per_frame: u32) -> Self {
        Self {
            frames_per_gop: 4,
            period: 3,
            window: 2,
            dependencies: vec![(0, 1), (0, 2), (2, 1), (2, 3)],
            packets_per_frame: vec![packets_per_frame; 4],
            quality_increment: vec![1.0, 0.125, 0.5, 0.125],
            deadlines: vec![0, 1, 1, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames_per_gop;
        if n == 0 {
            return Err(invalid("frames_per_gop", "must be at least 1"));
        }
        if self.period == 0 {
            return Err(invalid("period", "must be at least 1"));
        }
        for (name, len) in [
            ("packets_per_frame", self.packets_per_frame.len()),
            ("quality_increment", self.quality_increment.len()),
            ("deadlines", self.deadlines.len()),
        ] {
            if len != n {
                return Err(invalid(name, format!("expected {n} entries, got {len}")));
            }
        }
        if self
            .quality_increment
            .iter()
            .any(|q| !(*q >= 0.0) || !q.is_finite())
        {
            return Err(invalid(
                "quality_increment",
                "must be finite and nonnegative",
            ));
        }
        for &(k, j) in &self.dependencies {
            if k >= n || j >= n {
                return Err(invalid(
                    "dependencies",
                    format!("({k}, {j}) names a missing class"),
                ));
            }
            if k == j {
                return Err(invalid(
                    "dependencies",
                    format!("class {k} depends on itself"),
                ));
            }
        }
        if self.topological_order().is_none() {
            return Err(invalid("dependencies", "relation has a cycle"));
        }
        Ok(())
    }

    fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.frames_per_gop;
        let mut indegree = vec![0usize; n];
        for &(_, j) in &self.dependencies {
            indegree[j] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&c| indegree[c] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(k) = ready.pop() {
            order.push(k);
            for &(a, j) in &self.dependencies {
                if a == k {
                    indegree[j] -= 1;
                    if indegree[j] == 0 {
                        ready.push(j);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Classes that transitively depend on `class`.
    pub fn descendants(&self, class: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![class];
        while let Some(k) = stack.pop() {
            for &(a, j) in &self.dependencies {
                if a == k && out.insert(j) {
                    stack.push(j);
                }
            }
        }
        out
    }

    pub fn deadline(&self, frame: FrameId) -> u64 {
        frame.gop * self.period + self.deadlines[frame.class]
    }

    /// Slots before which the absence of GOPs preceding GOP 0 is visible.
    fn warmup_slots(&self) -> u64 {
        let max_off = self.deadlines.iter().copied().max().unwrap_or(0);
        (max_off + 1).saturating_sub(self.period)
    }

    /// Total packets over one GOP.
    pub fn packets_per_gop(&self) -> u64 {
        self.packets_per_frame.iter().map(|&p| u64::from(p)).sum()
    }
}

/// One frame instance: GOP index and frame class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameId {
    pub gop: u64,
    pub class: usize,
}

/// Frames whose deadlines fall in `[slot, slot + window]`, ordered by
/// `(gop, class)`.
pub fn schedulable_set(slot: u64, gop: &GopSpec) -> Vec<FrameId> {
    let max_off = gop.deadlines.iter().copied().max().unwrap_or(0);
    let first = slot.saturating_sub(max_off) / gop.period;
    let last = (slot + gop.window) / gop.period;
    let mut out = Vec::new();
    for g in first..=last {
        for class in 0..gop.frames_per_gop {
            let f = FrameId { gop: g, class };
            let d = gop.deadline(f);
            if d >= slot && d <= slot + gop.window {
                out.push(f);
            }
        }
    }
    out
}

/// Number of packets scheduled from each frame of the current frame set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SchedulingAction {
    pub counts: Vec<u32>,
}

impl SchedulingAction {
    pub fn zero(len: usize) -> Self {
        Self {
            counts: vec![0; len],
        }
    }

    pub fn packets(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Relative, slot-free encoding of a traffic state. Two states with equal
/// keys have identical futures under identical deliveries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrafficKey {
    /// Exact slot during warm-up, `None` afterwards.
    pub epoch: Option<u64>,
    pub phase: u64,
    pub frames: Vec<(i64, usize)>,
    pub buffers: Vec<u32>,
    pub doomed: Vec<(i64, usize)>,
}

impl std::fmt::Display for TrafficKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.epoch {
            Some(e) => write!(f, "e{e}")?,
            None => write!(f, "p{}", self.phase)?,
        }
        f.write_str("|")?;
        for (i, ((g, c), b)) in self.frames.iter().zip(&self.buffers).enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{g}:{c}={b}")?;
        }
        if !self.doomed.is_empty() {
            f.write_str("|x")?;
            for (g, c) in &self.doomed {
                write!(f, " {g}:{c}")?;
            }
        }
        Ok(())
    }
}

/// Buffered packets of every frame in the scheduling window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrafficState {
    pub slot: u64,
    pub frames: Vec<FrameId>,
    pub buffers: Vec<u32>,
    /// Frames (in the window or yet to enter it) that can no longer be
    /// decoded because an ancestor expired incomplete.
    pub doomed: BTreeSet<FrameId>,
}

/// Packet bookkeeping for one transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvanceReport {
    pub delivered_packets: u64,
    pub admitted_packets: u64,
    pub expired_packets: u64,
    pub dropped_packets: u64,
    /// Frames that left the window with packets still buffered.
    pub incomplete_frames: u64,
    /// Frames newly marked undecodable because of an incomplete ancestor.
    pub doomed_frames: u64,
}

impl TrafficState {
    /// State at slot 0 with every frame of the first window fully buffered.
    pub fn initial(gop: &GopSpec) -> Self {
        let frames = schedulable_set(0, gop);
        let buffers = frames
            .iter()
            .map(|f| gop.packets_per_frame[f.class])
            .collect();
        Self {
            slot: 0,
            frames,
            buffers,
            doomed: BTreeSet::new(),
        }
    }

    pub fn total_buffered(&self) -> u64 {
        self.buffers.iter().map(|&b| u64::from(b)).sum()
    }

    pub fn key(&self, gop: &GopSpec) -> TrafficKey {
        let base = (self.slot / gop.period) as i64;
        let rel = |f: &FrameId| (f.gop as i64 - base, f.class);
        TrafficKey {
            epoch: (self.slot < gop.warmup_slots()).then_some(self.slot),
            phase: self.slot % gop.period,
            frames: self.frames.iter().map(rel).collect(),
            buffers: self.buffers.clone(),
            doomed: self.doomed.iter().map(rel).collect(),
        }
    }

    /// Index pairs `(k, j)` into the frame set with `k ≺ j` in the same GOP.
    pub fn active_dependencies(&self, gop: &GopSpec) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &(ck, cj) in &gop.dependencies {
            for (ik, fk) in self.frames.iter().enumerate() {
                if fk.class != ck {
                    continue;
                }
                for (ij, fj) in self.frames.iter().enumerate() {
                    if fj.class == cj && fj.gop == fk.gop {
                        out.push((ik, ij));
                    }
                }
            }
        }
        out
    }
}

/// Every action meeting the buffer, packet-budget and dependency constraints.
///
/// `budget` is the packet constraint `floor(R·β/P)`.
pub fn feasible_actions_with_budget(
    state: &TrafficState,
    budget: u32,
    gop: &GopSpec,
) -> Vec<SchedulingAction> {
    let deps = state.active_dependencies(gop);
    let n = state.frames.len();
    let mut out = Vec::new();
    let mut counts = vec![0u32; n];
    enumerate(state, &deps, 0, budget, &mut counts, &mut out);
    out
}

fn enumerate(
    state: &TrafficState,
    deps: &[(usize, usize)],
    idx: usize,
    budget: u32,
    counts: &mut Vec<u32>,
    out: &mut Vec<SchedulingAction>,
) {
    if idx == counts.len() {
        out.push(SchedulingAction {
            counts: counts.clone(),
        });
        return;
    }
    let cap = state.buffers[idx].min(budget);
    for y in 0..=cap {
        counts[idx] = y;
        // Check every dependency whose later index is `idx`.
        let ok = deps.iter().all(|&(k, j)| {
            let last = k.max(j);
            if last != idx {
                return true;
            }
            counts[j] == 0 || counts[k] == state.buffers[k]
        });
        if ok {
            enumerate(state, deps, idx + 1, budget - y, counts, out);
        }
    }
    counts[idx] = 0;
}

/// Feasible actions at transmission rate `rate` (bits/s) in a slot of
/// `slot_seconds` with `packet_bits`-bit packets.
pub fn feasible_actions(
    state: &TrafficState,
    rate: f64,
    slot_seconds: f64,
    packet_bits: u32,
    gop: &GopSpec,
) -> Vec<SchedulingAction> {
    let budget = if rate > 0.0 {
        (slot_seconds * rate / f64::from(packet_bits) + 1e-9).floor() as u32
    } else {
        0
    };
    feasible_actions_with_budget(state, budget, gop)
}

/// Checks one action against the three constraints.
pub fn is_feasible(
    state: &TrafficState,
    action: &SchedulingAction,
    budget: u32,
    gop: &GopSpec,
) -> bool {
    if action.counts.len() != state.buffers.len() {
        return false;
    }
    if action.counts.iter().zip(&state.buffers).any(|(y, b)| y > b) {
        return false;
    }
    if action.packets() > budget {
        return false;
    }
    state
        .active_dependencies(gop)
        .iter()
        .all(|&(k, j)| (state.buffers[k] - action.counts[k]) * action.counts[j] == 0)
}

/// Quality gained by sending `action`: Σ q_class · y.
pub fn utility(state: &TrafficState, action: &SchedulingAction, gop: &GopSpec) -> f64 {
    state
        .frames
        .iter()
        .zip(&action.counts)
        .map(|(f, &y)| gop.quality_increment[f.class] * f64::from(y))
        .sum()
}

/// Moves one slot forward after `delivered` packets got through.
pub fn advance(
    state: &TrafficState,
    delivered: &[u32],
    gop: &GopSpec,
) -> Result<(TrafficState, AdvanceReport)> {
    if delivered.len() != state.buffers.len() {
        return Err(Error::DimensionMismatch {
            expected: state.buffers.len(),
            got: delivered.len(),
        });
    }
    let mut report = AdvanceReport::default();
    let mut remaining = Vec::with_capacity(delivered.len());
    for (i, (&d, &b)) in delivered.iter().zip(&state.buffers).enumerate() {
        if d > b {
            return Err(Error::ContractViolation(format!(
                "delivered {d} packets of frame {i} with only {b} buffered"
            )));
        }
        report.delivered_packets += u64::from(d);
        remaining.push(b - d);
    }

    let next_slot = state.slot + 1;
    let next_frames = schedulable_set(next_slot, gop);
    let mut doomed = state.doomed.clone();

    // Frames leaving the window.
    let mut failed = Vec::new();
    for (f, &r) in state.frames.iter().zip(&remaining) {
        if gop.deadline(*f) < next_slot && r > 0 {
            report.expired_packets += u64::from(r);
            report.incomplete_frames += 1;
            failed.push(*f);
        }
    }

    let mut next_buffers: Vec<u32> = next_frames
        .iter()
        .map(|f| match state.frames.iter().position(|g| g == f) {
            Some(i) => remaining[i],
            None => gop.packets_per_frame[f.class],
        })
        .collect();
    for f in &next_frames {
        if !state.frames.contains(f) {
            report.admitted_packets += u64::from(gop.packets_per_frame[f.class]);
        }
    }

    for f in &failed {
        for class in gop.descendants(f.class) {
            let d = FrameId { gop: f.gop, class };
            if gop.deadline(d) < next_slot {
                continue;
            }
            if doomed.insert(d) {
                report.doomed_frames += 1;
            }
        }
    }

    // Drop whatever is buffered for undecodable frames.
    for (f, b) in next_frames.iter().zip(next_buffers.iter_mut()) {
        if doomed.contains(f) && *b > 0 {
            report.dropped_packets += u64::from(*b);
            *b = 0;
        }
    }
    doomed.retain(|f| gop.deadline(*f) >= next_slot);

    Ok((
        TrafficState {
            slot: next_slot,
            frames: next_frames,
            buffers: next_buffers,
            doomed,
        },
        report,
    ))
}
