//! Uniform resource price set by the AP.
//!
//! Each user solves its own priced MDP and reports its discounted demand X;
//! the AP moves the price along the subgradient ΣX − 1/(1−α) with a
//! diminishing step, projecting onto λ ≥ 0.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{
    expected_resource_from_start, value_iteration_from, Solution, SolveParams, UserModel,
};

/// λ′ = max(0, λ + μ(ΣX − 1/(1−α))).
pub fn subgradient_step(lambda: f64, mu: f64, sum_x: f64, alpha: f64) -> f64 {
    (lambda + mu * (sum_x - 1.0 / (1.0 - alpha))).max(0.0)
}

/// Scales requests down proportionally when they oversubscribe the slot.
pub fn normalize_allocations(requested: &[f64]) -> Vec<f64> {
    let total: f64 = requested.iter().sum();
    if total <= 1.0 {
        requested.to_vec()
    } else {
        requested.iter().map(|x| x / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceSchedule {
    /// Step μ_k = mu0 / k.
    pub mu0: f64,
    /// Stop when |ΣX − 1/(1−α)| falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Consecutive iterations with λ moving less than `tol` that end the run.
    pub stable_window: usize,
    /// Value-iteration tolerance for the per-user solves.
    pub solve_tol: f64,
    pub initial_lambda: f64,
}

impl Default for PriceSchedule {
    fn default() -> Self {
        Self {
            mu0: 0.5,
            tol: 1e-3,
            max_iter: 200,
            stable_window: 5,
            solve_tol: 1e-6,
            initial_lambda: 0.0,
        }
    }
}

impl PriceSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) || !self.mu0.is_finite() {
            return Err(invalid("mu0", "must be positive and finite"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if !(self.solve_tol > 0.0) {
            return Err(invalid("solve_tol", "must be positive"));
        }
        if !(self.initial_lambda >= 0.0) {
            return Err(invalid("initial_lambda", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn step(&self, k: usize) -> f64 {
        self.mu0 / k as f64
    }
}

/// One row of the price trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceStep {
    pub iteration: usize,
    pub lambda: f64,
    pub sum_x: f64,
}

#[derive(Debug, Clone)]
pub struct PriceOutcome {
    pub lambda: f64,
    pub solutions: Vec<Solution>,
    pub demands: Vec<f64>,
    /// Final |ΣX − 1/(1−α)|, or 0 when the price rests at 0 with slack.
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<PriceStep>,
}

/// Solves every user at price `lambda`, optionally warm-started.
pub fn solve_users(
    users: &[UserModel],
    lambda: f64,
    alpha: f64,
    solve_tol: f64,
    warm: Option<&[Solution]>,
) -> Result<(Vec<Solution>, Vec<f64>)> {
    let params = SolveParams {
        lambda,
        alpha,
        users: users.len(),
        tol: solve_tol,
        ..SolveParams::default()
    };
    let solved: Result<Vec<(Solution, f64)>> = users
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let init = warm.map(|w| w[i].values());
            let sol = value_iteration_from(m, &params, init)?;
            let x = expected_resource_from_start(m, &sol, alpha);
            Ok((sol, x))
        })
        .collect();
    Ok(solved?.into_iter().unzip())
}

/// Subgradient search for the uniform price.
pub fn price_iteration(
    users: &[UserModel],
    alpha: f64,
    schedule: &PriceSchedule,
) -> Result<PriceOutcome> {
    schedule.validate()?;
    if users.is_empty() {
        return Err(invalid("users", "need at least one user"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid("alpha", "must lie in [0, 1)"));
    }
    let target = 1.0 / (1.0 - alpha);
    let mut lambda = schedule.initial_lambda;
    let mut history = Vec::new();
    let mut warm: Option<Vec<Solution>> = None;
    let mut best: Option<(f64, f64, Vec<Solution>, Vec<f64>)> = None;
    let mut stable = 0usize;

    for k in 1..=schedule.max_iter {
        let (solutions, demands) =
            solve_users(users, lambda, alpha, schedule.solve_tol, warm.as_deref())?;
        let sum_x: f64 = demands.iter().sum();
        history.push(PriceStep {
            iteration: k,
            lambda,
            sum_x,
        });
        let g = sum_x - target;
        // With slack demand at λ = 0 the projection pins the price at 0.
        let residual = if lambda == 0.0 && g <= 0.0 {
            0.0
        } else {
            g.abs()
        };
        if residual < schedule.tol {
            return Ok(PriceOutcome {
                lambda,
                solutions,
                demands,
                residual,
                converged: true,
                history,
            });
        }
        if best.as_ref().is_none_or(|b| residual <= b.1) {
            best = Some((lambda, residual, solutions.clone(), demands.clone()));
        }
        let next = subgradient_step(lambda, schedule.step(k), sum_x, alpha);
        stable = if (next - lambda).abs() < schedule.tol {
            stable + 1
        } else {
            0
        };
        if stable >= schedule.stable_window {
            return Ok(PriceOutcome {
                lambda,
                solutions,
                demands,
                residual,
                converged: false,
                history,
            });
        }
        lambda = next;
        warm = Some(solutions);
    }
    let (lambda, residual, solutions, demands) = best.expect("at least one iteration");
    Ok(PriceOutcome {
        lambda,
        solutions,
        demands,
        residual,
        converged: false,
        history,
    })
}

/// Writes the trajectory as `iteration,lambda,sum_x` CSV.
pub fn write_price_csv<W: Write>(out: W, history: &[PriceStep]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "lambda", "sum_x"])?;
    for s in history {
        w.write_record([
            s.iteration.to_string(),
            format!("{:.9}", s.lambda),
            format!("{:.9}", s.sum_x),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{RatePmf, TrafficModel};

    #[test]
    fn step_examples() {
        assert_eq!(subgradient_step(2.0, 0.3, 2.0, 0.5), 2.0);
        assert_eq!(subgradient_step(0.0, 1.0, 0.5, 0.5), 0.0);
        assert!((subgradient_step(1.0, 0.1, 3.0, 0.5) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_allocations(&[0.3, 0.4]), vec![0.3, 0.4]);
        assert_eq!(normalize_allocations(&[0.8, 0.8]), vec![0.5, 0.5]);
        assert_eq!(normalize_allocations(&[0.0, 1.5]), vec![0.0, 1.0]);
        assert!(normalize_allocations(&[]).is_empty());
    }

    /// One traffic state; sending 1 packet earns 1, costs the whole slot.
    fn greedy_user(utility: f64) -> UserModel {
        let t = TrafficModel::from_table(vec![vec![(0, 0.0, 0), (1, utility, 0)]]).unwrap();
        UserModel::from_parts(t, RatePmf::point(1.0).unwrap(), 1.0, 1).unwrap()
    }

    #[test]
    fn slack_demand_keeps_zero_price() {
        // A lone user can use at most 1/(1−α), so the constraint is slack.
        let out = price_iteration(&[greedy_user(1.0)], 0.5, &PriceSchedule::default()).unwrap();
        assert_eq!(out.lambda, 0.0);
        assert!(out.converged);
    }

    #[test]
    fn congestion_raises_price() {
        let users = vec![greedy_user(1.0), greedy_user(1.0)];
        let out = price_iteration(&users, 0.5, &PriceSchedule::default()).unwrap();
        assert!(out.lambda > 0.0);
        assert!(out.history.iter().all(|s| s.lambda >= 0.0));
        assert_eq!(out.solutions[0], out.solutions[1]);
    }

    #[test]
    fn trajectory_csv() {
        let mut buf = Vec::new();
        write_price_csv(
            &mut buf,
            &[PriceStep {
                iteration: 1,
                lambda: 0.0,
                sum_x: 2.5,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,lambda,sum_x\n1,0.000000000,2.500000000\n"
        );
    }
}
