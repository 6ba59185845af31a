use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CompiledAction, UserModel, UserState};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub lambda: f64,
    pub alpha: f64,
    /// User count M in the λ/M rebate.
    pub users: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha: 0.9,
            users: 1,
            tol: 1e-6,
            max_iter: 100_000,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid("alpha", "must lie in [0, 1)"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda", "must be finite and nonnegative"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if self.users == 0 {
            return Err(invalid("users", "must be at least 1"));
        }
        Ok(())
    }
}

/// Value function and greedy policy over (traffic state, rate bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub params: SolveParams,
    bins: usize,
    values: Vec<f64>,
    policy: Vec<usize>,
    /// Sup-norm change of every iteration.
    pub deltas: Vec<f64>,
}

impl Solution {
    pub fn value(&self, s: UserState) -> f64 {
        self.values[s.traffic * self.bins + s.rate_bin]
    }

    /// Index into the state's action list.
    pub fn action_index(&self, s: UserState) -> usize {
        self.policy[s.traffic * self.bins + s.rate_bin]
    }

    pub fn action<'m>(&self, model: &'m UserModel, s: UserState) -> &'m CompiledAction {
        &model.traffic.state(s.traffic).actions[self.action_index(s)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iterations(&self) -> usize {
        self.deltas.len()
    }

    /// Expected value at the start traffic state over the rate pmf.
    pub fn start_value(&self, model: &UserModel) -> f64 {
        model
            .pmf
            .probabilities()
            .iter()
            .enumerate()
            .map(|(b, p)| p * self.values[b])
            .sum()
    }

    /// Greedy action among those with at most `budget` packets, scored with
    /// the solved value function.
    pub fn best_within(&self, model: &UserModel, s: UserState, budget: u32) -> usize {
        let probs = model.pmf.probabilities();
        let cost = model.cost_per_packet(s.rate_bin);
        let mut best: Option<(f64, usize)> = None;
        for (ai, a) in model.traffic.state(s.traffic).actions.iter().enumerate() {
            if a.packets > budget {
                break;
            }
            let w: f64 = (0..self.bins)
                .map(|b| probs[b] * self.values[a.next * self.bins + b])
                .sum();
            let penalty = if a.packets == 0 {
                0.0
            } else {
                self.params.lambda * cost * f64::from(a.packets)
            };
            let q = a.utility - penalty + self.params.alpha * w;
            if best.is_none_or(|(bq, _)| q > bq) {
                best = Some((q, ai));
            }
        }
        best.map_or(0, |(_, ai)| ai)
    }

    /// One line per (state, bin): label, rate, value, action counts.
    pub fn dump(&self, model: &UserModel) -> String {
        let mut out = String::from("state\trate\tvalue\taction\n");
        for (t, st) in model.traffic.states().iter().enumerate() {
            for (b, rate) in model.pmf.bins().iter().enumerate() {
                let s = UserState {
                    traffic: t,
                    rate_bin: b,
                };
                let a = self.action(model, s);
                let counts: Vec<String> = a.counts.iter().map(u32::to_string).collect();
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.12e}\t{}",
                    st.label,
                    rate,
                    self.value(s),
                    counts.join(",")
                );
            }
        }
        out
    }
}

/// Solves V(T,β) = max_y [u − λ(x − 1/M) + α Σ p(β′) V(T′,β′)] from V = 0.
pub fn value_iteration(model: &UserModel, params: &SolveParams) -> Result<Solution> {
    value_iteration_from(model, params, None)
}

/// [`value_iteration`] warm-started from `initial` values.
pub fn value_iteration_from(
    model: &UserModel,
    params: &SolveParams,
    initial: Option<&[f64]>,
) -> Result<Solution> {
    params.validate()?;
    let n_states = model.traffic.len();
    let n_bins = model.pmf.len();
    if n_states == 0 {
        return Err(invalid("model", "has no states"));
    }
    let size = n_states * n_bins;
    let mut v = match initial {
        Some(init) if init.len() == size => init.to_vec(),
        Some(init) => {
            return Err(Error::DimensionMismatch {
                expected: size,
                got: init.len(),
            })
        }
        None => vec![0.0; size],
    };
    let probs = model.pmf.probabilities();
    let budgets: Vec<u32> = (0..n_bins).map(|b| model.budget(b)).collect();
    let costs: Vec<f64> = (0..n_bins).map(|b| model.cost_per_packet(b)).collect();
    let rebate = params.lambda / params.users as f64;
    let max_packets = model.traffic.max_budget() as usize;

    let flat = model.traffic.flat();
    let mut next_v = vec![0.0; size];
    let mut policy = vec![0usize; size];
    let mut w = vec![0.0; n_states];
    // Best continuation per packet count and the action attaining it.
    let mut best_q = vec![f64::NEG_INFINITY; max_packets + 1];
    let mut best_a = vec![usize::MAX; max_packets + 1];
    let mut deltas = Vec::new();

    loop {
        for (t, wt) in w.iter_mut().enumerate() {
            *wt = (0..n_bins).map(|b| probs[b] * v[t * n_bins + b]).sum();
        }
        let mut delta: f64 = 0.0;
        for t in 0..n_states {
            best_q.fill(f64::NEG_INFINITY);
            let (lo, hi) = (flat.offsets[t], flat.offsets[t + 1]);
            let mut top = 0usize;
            for i in lo..hi {
                let n = flat.packets[i] as usize;
                let q = flat.utility[i] + params.alpha * w[flat.next[i]];
                if q > best_q[n] {
                    best_q[n] = q;
                    best_a[n] = i - lo;
                }
                top = n;
            }
            for b in 0..n_bins {
                let mut val = best_q[0];
                let mut ai = best_a[0];
                for n in 1..=top.min(budgets[b] as usize) {
                    if best_q[n] == f64::NEG_INFINITY {
                        continue;
                    }
                    let cand = best_q[n] - params.lambda * costs[b] * n as f64;
                    if cand > val {
                        val = cand;
                        ai = best_a[n];
                    }
                }
                let i = t * n_bins + b;
                next_v[i] = val + rebate;
                policy[i] = ai;
                delta = delta.max((next_v[i] - v[i]).abs());
            }
        }
        std::mem::swap(&mut v, &mut next_v);
        deltas.push(delta);
        if delta < params.tol {
            break;
        }
        if deltas.len() >= params.max_iter {
            return Err(Error::NonConvergence {
                iterations: deltas.len(),
                last_delta: delta,
            });
        }
    }
    Ok(Solution {
        params: *params,
        bins: n_bins,
        values: v,
        policy,
        deltas,
    })
}

/// Y(T) = Σ_b p(b)·X(T, b) for the policy of `solution`.
fn average_demand(model: &UserModel, solution: &Solution, alpha: f64) -> Vec<f64> {
    let n_states = model.traffic.len();
    let probs = model.pmf.probabilities();
    // Per state: Σ_b p(b)·x(T,b) and the successor distribution.
    let mut stage = vec![0.0; n_states];
    let mut succ: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_states];
    for t in 0..n_states {
        for (b, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let s = UserState {
                traffic: t,
                rate_bin: b,
            };
            let a = solution.action(model, s);
            stage[t] += p * model.allocation(a.packets, b);
            match succ[t].iter_mut().find(|(n, _)| *n == a.next) {
                Some(e) => e.1 += p,
                None => succ[t].push((a.next, p)),
            }
        }
    }
    let mut y = stage.clone();
    if alpha == 0.0 {
        return y;
    }
    let mut next = vec![0.0; n_states];
    let cap = ((1e-15f64).ln() / alpha.ln()).ceil() as usize + 10;
    for _ in 0..cap {
        let mut delta: f64 = 0.0;
        for t in 0..n_states {
            next[t] = stage[t] + alpha * succ[t].iter().map(|&(n, p)| p * y[n]).sum::<f64>();
            delta = delta.max((next[t] - y[t]).abs());
        }
        std::mem::swap(&mut y, &mut next);
        if delta < 1e-14 {
            break;
        }
    }
    y
}

/// X(s) = E[Σ_t α^t x_t | s_0 = s] under the policy of `solution`.
pub fn expected_resource(
    model: &UserModel,
    solution: &Solution,
    alpha: f64,
    start: UserState,
) -> f64 {
    let a = solution.action(model, start);
    let x0 = model.allocation(a.packets, start.rate_bin);
    if alpha == 0.0 {
        return x0;
    }
    let y = average_demand(model, solution, alpha);
    x0 + alpha * y[a.next]
}

/// Discounted demand from the start traffic state with the first rate
/// drawn from the pmf.
pub fn expected_resource_from_start(model: &UserModel, solution: &Solution, alpha: f64) -> f64 {
    average_demand(model, solution, alpha)[0]
}

#[cfg(test)]
mod tests {
    use super::super::{RatePmf, TrafficModel};
    use super::*;

    /// Two traffic states, two rate bins of budget 1 and 2.
    fn small() -> UserModel {
        let traffic = TrafficModel::from_table(vec![
            vec![(0, 0.0, 0), (1, 2.0, 1), (2, 3.0, 0)],
            vec![(0, 0.0, 0), (1, 1.0, 1)],
        ])
        .unwrap();
        let pmf = RatePmf::new(vec![1.0, 2.0], vec![0.3, 0.7]).unwrap();
        UserModel::from_parts(traffic, pmf, 1.0, 1).unwrap()
    }

    #[test]
    fn myopic_collapse() {
        let m = small();
        let p = SolveParams {
            lambda: 1.5,
            alpha: 0.0,
            users: 2,
            ..SolveParams::default()
        };
        let sol = value_iteration(&m, &p).unwrap();
        for t in 0..2 {
            for b in 0..2 {
                let s = UserState {
                    traffic: t,
                    rate_bin: b,
                };
                let best = m
                    .traffic
                    .state(t)
                    .actions
                    .iter()
                    .filter(|a| a.packets <= m.budget(b))
                    .map(|a| a.utility - p.lambda * (m.allocation(a.packets, b) - 0.5))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((sol.value(s) - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_price_schedules_maximal_action() {
        let m = small();
        let p = SolveParams {
            alpha: 0.0,
            ..SolveParams::default()
        };
        let sol = value_iteration(&m, &p).unwrap();
        let s = UserState {
            traffic: 0,
            rate_bin: 1,
        };
        assert_eq!(sol.action(&m, s).packets, 2);
        let s = UserState {
            traffic: 0,
            rate_bin: 0,
        };
        assert_eq!(sol.action(&m, s).packets, 1);
    }

    #[test]
    fn deltas_contract() {
        let m = small();
        let p = SolveParams {
            lambda: 0.7,
            alpha: 0.9,
            tol: 1e-10,
            ..SolveParams::default()
        };
        let sol = value_iteration(&m, &p).unwrap();
        for w in sol.deltas.windows(2) {
            assert!(w[1] <= 0.9 * w[0] + 1e-9, "{:?}", w);
        }
    }

    #[test]
    fn non_convergence_reports_delta() {
        let m = small();
        let p = SolveParams {
            alpha: 0.99,
            tol: 1e-12,
            max_iter: 5,
            ..SolveParams::default()
        };
        match value_iteration(&m, &p) {
            Err(Error::NonConvergence {
                iterations: 5,
                last_delta,
            }) => assert!(last_delta > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resource_of_zero_policy_is_zero() {
        let m = small();
        let p = SolveParams {
            lambda: 1e6,
            ..SolveParams::default()
        };
        let sol = value_iteration(&m, &p).unwrap();
        assert_eq!(expected_resource_from_start(&m, &sol, 0.9), 0.0);
    }

    #[test]
    fn myopic_resource_is_stage_allocation() {
        let m = small();
        let p = SolveParams::default();
        let sol = value_iteration(&m, &p).unwrap();
        let s = UserState {
            traffic: 0,
            rate_bin: 1,
        };
        let a = sol.action(&m, s);
        assert_eq!(
            expected_resource(&m, &sol, 0.0, s),
            m.allocation(a.packets, 1)
        );
    }

    #[test]
    fn dump_has_one_line_per_pair() {
        let m = small();
        let sol = value_iteration(&m, &SolveParams::default()).unwrap();
        assert_eq!(sol.dump(&m).lines().count(), 1 + 4);
    }

    #[test]
    fn warm_start_checks_size() {
        let m = small();
        assert!(value_iteration_from(&m, &SolveParams::default(), Some(&[0.0; 3])).is_err());
    }
}
