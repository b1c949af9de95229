//! Budget-constrained agent selection.
//!
//! Small registries are solved exactly by enumeration. The primal-dual path
//! runs projected saddle-point dynamics on the LP relaxation, rounds at 0.5
//! and repairs the rounded set greedily until it fits the budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest candidate count the exhaustive solver accepts.
pub const EXACT_CAP: usize = 20;

const TIE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("{0} candidates exceed the exhaustive cap of {EXACT_CAP}; use the primal-dual solver")]
    TooLarge(usize),
    #[error("invalid candidate {label}: {reason}")]
    BadCandidate { label: u32, reason: &'static str },
    #[error("budget must be finite and >= 0, got {0}")]
    BadBudget(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Stable identifier; lower labels win lexicographic ties.
    pub label: u32,
    pub utility: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionProblem {
    pub candidates: Vec<Candidate>,
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen labels in ascending order.
    pub chosen: Vec<u32>,
    pub total_utility: f64,
    pub total_cost: f64,
    pub mu: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualParams {
    pub steps: usize,
    pub alpha_x: f64,
    pub alpha_mu: f64,
    pub mu_max: f64,
}

impl Default for PrimalDualParams {
    fn default() -> Self {
        PrimalDualParams {
            steps: 2000,
            alpha_x: 0.10,
            alpha_mu: 0.05,
            mu_max: 10.0,
        }
    }
}

impl SelectionProblem {
    pub fn validate(&self) -> Result<(), SelectError> {
        if !self.budget.is_finite() || self.budget < 0.0 {
            return Err(SelectError::BadBudget(self.budget));
        }
        for c in &self.candidates {
            if !c.utility.is_finite() {
                return Err(SelectError::BadCandidate {
                    label: c.label,
                    reason: "utility is not finite",
                });
            }
            if !(c.cost.is_finite() && c.cost > 0.0) {
                return Err(SelectError::BadCandidate {
                    label: c.label,
                    reason: "cost must be finite and > 0",
                });
            }
        }
        Ok(())
    }

    fn result_from(&self, idx: &[usize], mu: Option<f64>) -> SelectionResult {
        let mut chosen: Vec<u32> = idx.iter().map(|&i| self.candidates[i].label).collect();
        chosen.sort_unstable();
        SelectionResult {
            chosen,
            total_utility: idx.iter().map(|&i| self.candidates[i].utility).sum(),
            total_cost: idx.iter().map(|&i| self.candidates[i].cost).sum(),
            mu,
        }
    }
}

/// Utility-maximal feasible subset by exhaustive enumeration.
///
/// Ties (within 1e-12) go to the cheaper subset, then to the lexicographically
/// smaller sorted label list.
pub fn solve_exact(problem: &SelectionProblem) -> Result<SelectionResult, SelectError> {
    problem.validate()?;
    let n = problem.candidates.len();
    if n > EXACT_CAP {
        return Err(SelectError::TooLarge(n));
    }
    let c = &problem.candidates;
    let mut best: Option<(f64, f64, Vec<u32>, u32)> = None;
    for mask in 0u32..(1u32 << n) {
        let (mut u, mut cost) = (0.0, 0.0);
        for (i, cand) in c.iter().enumerate() {
            if mask >> i & 1 == 1 {
                u += cand.utility;
                cost += cand.cost;
            }
        }
        if cost > problem.budget + TIE {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bu, bc, blabels, _)) => {
                if u > bu + TIE {
                    true
                } else if u < bu - TIE {
                    false
                } else if cost < bc - TIE {
                    true
                } else if cost > bc + TIE {
                    false
                } else {
                    sorted_labels(c, mask) < *blabels
                }
            }
        };
        if better {
            best = Some((u, cost, sorted_labels(c, mask), mask));
        }
    }
    let mask = best.map(|b| b.3).unwrap_or(0);
    let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
    Ok(problem.result_from(&idx, None))
}

fn sorted_labels(c: &[Candidate], mask: u32) -> Vec<u32> {
    let mut v: Vec<u32> = c
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, c)| c.label)
        .collect();
    v.sort_unstable();
    v
}

/// Projected primal-dual dynamics on the LP relaxation, threshold rounding
/// and greedy feasibility repair.
///
/// Several feasible roundings are completed with the candidates that still
/// fit and the best one is returned: the ratio-order repair, the single
/// least-loss drop, and the most useful lone candidate.
///
/// The relaxed iterate that is rounded is the average over the second half of
/// the run: the last iterate of constant-step saddle dynamics cycles around
/// the saddle point, while its running average settles on it.
pub fn solve_primal_dual(
    problem: &SelectionProblem,
    params: &PrimalDualParams,
) -> Result<SelectionResult, SelectError> {
    problem.validate()?;
    let c = &problem.candidates;
    let n = c.len();
    let steps = params.steps.max(1);
    let mut x = vec![0.0; n];
    let mut mu = 0.0_f64;
    let mut avg = vec![0.0; n];
    let tail_start = steps / 2;
    for step in 0..steps {
        for (xi, cand) in x.iter_mut().zip(c) {
            *xi = (*xi + params.alpha_x * (cand.utility - mu * cand.cost)).clamp(0.0, 1.0);
        }
        let spend: f64 = x.iter().zip(c).map(|(xi, cand)| xi * cand.cost).sum();
        mu = (mu + params.alpha_mu * (spend - problem.budget)).clamp(0.0, params.mu_max);
        if step >= tail_start {
            for (a, xi) in avg.iter_mut().zip(&x) {
                *a += xi;
            }
        }
    }
    let samples = (steps - tail_start) as f64;
    let relaxed: Vec<f64> = avg.iter().map(|a| a / samples).collect();
    let rounded: Vec<usize> = (0..n).filter(|&i| relaxed[i] > 0.5).collect();
    let budget = problem.budget;
    let mut candidates = Vec::new();
    let mut chosen = rounded.clone();
    repair(c, &mut chosen, budget);
    candidates.push(chosen);
    // Dropping the one member whose removal restores feasibility at least
    // utility loss can beat ratio order when a cheap member is in the way.
    let cost: f64 = rounded.iter().map(|&i| c[i].cost).sum();
    if let Some(drop) = rounded
        .iter()
        .copied()
        .filter(|&i| cost - c[i].cost <= budget + TIE)
        .min_by(|&a, &b| {
            c[a].utility
                .total_cmp(&c[b].utility)
                .then(c[b].label.cmp(&c[a].label))
        })
    {
        candidates.push(rounded.iter().copied().filter(|&i| i != drop).collect());
    }
    // Ratio-ordered rounding misses instances won by one bulky candidate.
    if let Some(i) = (0..n)
        .filter(|&i| c[i].cost <= budget + TIE && c[i].utility > 0.0)
        .max_by(|&a, &b| {
            c[a].utility
                .total_cmp(&c[b].utility)
                .then(c[b].label.cmp(&c[a].label))
        })
    {
        candidates.push(vec![i]);
    }
    let value = |set: &[usize]| set.iter().map(|&k| c[k].utility).sum::<f64>();
    let mut chosen = Vec::new();
    for mut set in candidates {
        fill(c, &relaxed, &mut set, budget);
        if chosen.is_empty() || value(&set) > value(&chosen) + TIE {
            chosen = set;
        }
    }
    chosen.sort_unstable();
    Ok(problem.result_from(&chosen, Some(mu)))
}

/// Drops the lowest utility-per-cost members until the set fits the budget.
fn repair(c: &[Candidate], chosen: &mut Vec<usize>, budget: f64) {
    let mut cost: f64 = chosen.iter().map(|&i| c[i].cost).sum();
    while cost > budget + TIE && !chosen.is_empty() {
        let (pos, _) = chosen
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                let ra = c[a].utility / c[a].cost;
                let rb = c[b].utility / c[b].cost;
                ra.total_cmp(&rb).then(c[b].label.cmp(&c[a].label))
            })
            .expect("non-empty");
        cost -= c[chosen[pos]].cost;
        chosen.remove(pos);
    }
}

/// Adds left-out candidates that still fit, highest relaxed value first, then
/// highest utility per cost.
fn fill(c: &[Candidate], relaxed: &[f64], chosen: &mut Vec<usize>, budget: f64) {
    let mut cost: f64 = chosen.iter().map(|&i| c[i].cost).sum();
    let mut rest: Vec<usize> = (0..c.len()).filter(|i| !chosen.contains(i)).collect();
    rest.sort_by(|&a, &b| {
        relaxed[b]
            .total_cmp(&relaxed[a])
            .then((c[b].utility / c[b].cost).total_cmp(&(c[a].utility / c[a].cost)))
            .then(c[a].label.cmp(&c[b].label))
    });
    for i in rest {
        if c[i].utility > 0.0 && cost + c[i].cost <= budget + TIE {
            cost += c[i].cost;
            chosen.push(i);
        }
    }
}

/// Per-cycle budget shrunk by Energexine.
pub fn cycle_budget(b_max: f64, h_ene: f64, beta_b: f64) -> f64 {
    (b_max * (1.0 - beta_b * h_ene.clamp(0.0, 1.0))).max(0.0)
}
