use std::collections::{HashMap, VecDeque};

use crate::error::{invalid, Error, Result};
use crate::traffic::{
    advance, feasible_actions_with_budget, utility, GopSpec, TrafficKey, TrafficState,
};

/// Refuse to compile traffic models with more states than this.
pub const DEFAULT_STATE_LIMIT: usize = 200_000;

/// Largest delivery box enumerated per state when closing the state space.
const DELIVERY_BOX_LIMIT: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledAction {
    pub counts: Vec<u32>,
    pub packets: u32,
    pub utility: f64,
    /// Successor traffic state when every scheduled packet is delivered.
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub label: String,
    /// Representative traffic state; `None` for hand-built models.
    pub traffic: Option<TrafficState>,
    /// Sorted by packet count, then by counts; the zero action comes first.
    pub actions: Vec<CompiledAction>,
}

/// Actions of all states in contiguous arrays, for the solver's inner loop.
#[derive(Debug, Clone, Default)]
pub(crate) struct FlatActions {
    /// Actions of state `t` occupy `offsets[t]..offsets[t + 1]`.
    pub offsets: Vec<usize>,
    pub packets: Vec<u32>,
    pub utility: Vec<f64>,
    pub next: Vec<usize>,
}

/// Finite traffic MDP skeleton: states, feasible actions and deterministic
/// successors. State 0 is the start state.
#[derive(Debug, Clone, Default)]
pub struct TrafficModel {
    states: Vec<ModelState>,
    index: HashMap<TrafficKey, usize>,
    gop: Option<GopSpec>,
    max_budget: u32,
    flat: FlatActions,
}

impl TrafficModel {
    pub(crate) fn empty() -> Self {
        Self::default()
    }

    /// Compiles every traffic state reachable from slot 0.
    ///
    /// Successors are explored for every delivery vector that some feasible
    /// action dominates, not only for full deliveries: the simulator loses
    /// packets to channel errors and to allocation truncation, and the
    /// policy must be defined wherever it can land.
    pub fn compile(gop: &GopSpec, max_budget: u32, state_limit: usize) -> Result<Self> {
        gop.validate()?;
        let mut model = Self {
            gop: Some(gop.clone()),
            max_budget,
            ..Self::default()
        };
        let mut queue = VecDeque::new();
        let start = TrafficState::initial(gop);
        model.intern(start.clone(), gop, &mut queue, state_limit)?;

        while let Some(idx) = queue.pop_front() {
            let state = model.states[idx].traffic.clone().expect("compiled state");
            let deps = state.active_dependencies(gop);
            let mut successor_of = HashMap::new();
            for d in deliveries(&state, &deps, max_budget)? {
                let (next, _) = advance(&state, &d, gop)?;
                let n = model.intern(next, gop, &mut queue, state_limit)?;
                successor_of.insert(d, n);
            }
            let mut actions: Vec<CompiledAction> =
                feasible_actions_with_budget(&state, max_budget, gop)
                    .into_iter()
                    .map(|a| CompiledAction {
                        packets: a.packets(),
                        utility: utility(&state, &a, gop),
                        next: successor_of[&a.counts],
                        counts: a.counts,
                    })
                    .collect();
            sort_actions(&mut actions);
            model.states[idx].actions = actions;
        }
        model.flatten();
        Ok(model)
    }

    fn intern(
        &mut self,
        state: TrafficState,
        gop: &GopSpec,
        queue: &mut VecDeque<usize>,
        limit: usize,
    ) -> Result<usize> {
        let key = state.key(gop);
        if let Some(&i) = self.index.get(&key) {
            return Ok(i);
        }
        if self.states.len() >= limit {
            return Err(Error::InstanceTooLarge {
                pairs: self.states.len() + 1,
                limit,
            });
        }
        let i = self.states.len();
        self.states.push(ModelState {
            label: key.to_string(),
            traffic: Some(state),
            actions: Vec::new(),
        });
        self.index.insert(key, i);
        queue.push_back(i);
        Ok(i)
    }

    /// Builds a model from explicit `(packets, utility, next)` action lists.
    /// Every state needs a zero-packet action.
    pub fn from_table(table: Vec<Vec<(u32, f64, usize)>>) -> Result<Self> {
        let n = table.len();
        if n == 0 {
            return Err(invalid("table", "need at least one state"));
        }
        let mut states = Vec::with_capacity(n);
        let mut max_budget = 0;
        for (i, row) in table.into_iter().enumerate() {
            let mut actions = Vec::with_capacity(row.len());
            for (packets, u, next) in row {
                if next >= n {
                    return Err(invalid(
                        "table",
                        format!("state {i} points at missing state {next}"),
                    ));
                }
                if !u.is_finite() {
                    return Err(invalid(
                        "table",
                        format!("state {i} has a non-finite utility"),
                    ));
                }
                max_budget = max_budget.max(packets);
                actions.push(CompiledAction {
                    counts: vec![packets],
                    packets,
                    utility: u,
                    next,
                });
            }
            sort_actions(&mut actions);
            if actions.first().map(|a| a.packets) != Some(0) {
                return Err(invalid(
                    "table",
                    format!("state {i} lacks a zero-packet action"),
                ));
            }
            states.push(ModelState {
                label: format!("s{i}"),
                traffic: None,
                actions,
            });
        }
        let mut model = Self {
            states,
            index: HashMap::new(),
            gop: None,
            max_budget,
            flat: FlatActions::default(),
        };
        model.flatten();
        Ok(model)
    }

    fn flatten(&mut self) {
        let mut flat = FlatActions {
            offsets: vec![0],
            ..FlatActions::default()
        };
        for s in &self.states {
            for a in &s.actions {
                flat.packets.push(a.packets);
                flat.utility.push(a.utility);
                flat.next.push(a.next);
            }
            flat.offsets.push(flat.packets.len());
        }
        self.flat = flat;
    }

    pub(crate) fn flat(&self) -> &FlatActions {
        &self.flat
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &ModelState {
        &self.states[i]
    }

    pub fn states(&self) -> &[ModelState] {
        &self.states
    }

    pub fn max_budget(&self) -> u32 {
        self.max_budget
    }

    pub fn gop(&self) -> Option<&GopSpec> {
        self.gop.as_ref()
    }

    /// Model index of a live traffic state.
    pub fn index_of(&self, state: &TrafficState) -> Option<usize> {
        let gop = self.gop.as_ref()?;
        self.index.get(&state.key(gop)).copied()
    }

    pub fn state_action_pairs(&self) -> usize {
        self.states.iter().map(|s| s.actions.len()).sum()
    }
}

fn sort_actions(actions: &mut [CompiledAction]) {
    actions.sort_by(|a, b| {
        a.packets
            .cmp(&b.packets)
            .then_with(|| a.counts.cmp(&b.counts))
    });
}

/// Delivery vectors `d ≤ buffers` dominated by a feasible action.
fn deliveries(state: &TrafficState, deps: &[(usize, usize)], budget: u32) -> Result<Vec<Vec<u32>>> {
    let size: u64 = state
        .buffers
        .iter()
        .map(|&b| u64::from(b) + 1)
        .try_fold(1u64, |acc, x| acc.checked_mul(x))
        .unwrap_or(u64::MAX);
    if size > DELIVERY_BOX_LIMIT {
        return Err(Error::InstanceTooLarge {
            pairs: usize::try_from(size).unwrap_or(usize::MAX),
            limit: DELIVERY_BOX_LIMIT as usize,
        });
    }
    let n = state.buffers.len();
    let mut out = Vec::new();
    let mut d = vec![0u32; n];
    loop {
        if minimal_cover(state, deps, &d) <= budget {
            out.push(d.clone());
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == n {
                return Ok(out);
            }
            if d[i] < state.buffers[i] {
                d[i] += 1;
                break;
            }
            d[i] = 0;
            i += 1;
        }
    }
}

/// Packets in the smallest dependency-respecting action covering `d`.
fn minimal_cover(state: &TrafficState, deps: &[(usize, usize)], d: &[u32]) -> u32 {
    let mut y = d.to_vec();
    let mut changed = true;
    while changed {
        changed = false;
        for &(k, j) in deps {
            if y[j] > 0 && y[k] != state.buffers[k] {
                y[k] = state.buffers[k];
                changed = true;
            }
        }
    }
    y.iter().sum()
}
