//! The twelve-agent registry, per-cycle eligibility and agent execution.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hormones::HormoneVector;
use crate::observe::{
    build_observation, l2_diff, CognitiveState, Observation, ObservationHistory, ObservationParams,
    OutputDistribution,
};
use crate::tasks::{TaskAdapter, TaskError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    R1A,
    R1B,
    R1C,
    R1D,
    R2A,
    R2B,
    R2C,
    R2D,
    R3A,
    R3B,
    R3C,
    R3D,
}

impl AgentId {
    pub const ALL: [AgentId; 12] = [
        AgentId::R1A,
        AgentId::R1B,
        AgentId::R1C,
        AgentId::R1D,
        AgentId::R2A,
        AgentId::R2B,
        AgentId::R2C,
        AgentId::R2D,
        AgentId::R3A,
        AgentId::R3B,
        AgentId::R3C,
        AgentId::R3D,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_emission(self) -> bool {
        self.index() < 4
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentId::R1A => "R1A",
            AgentId::R1B => "R1B",
            AgentId::R1C => "R1C",
            AgentId::R1D => "R1D",
            AgentId::R2A => "R2A",
            AgentId::R2B => "R2B",
            AgentId::R2C => "R2C",
            AgentId::R2D => "R2D",
            AgentId::R3A => "R3A",
            AgentId::R3B => "R3B",
            AgentId::R3C => "R3C",
            AgentId::R3D => "R3D",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Emission,
    Verification,
    Governance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ttl {
    Persistent,
    Cycles(u32),
}

/// How an agent enters a cycle's active set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheduling {
    /// Active every cycle, outside the knapsack.
    Persistent,
    /// Competes for the cycle budget.
    Knapsack,
    /// Fires on an episode event (start or termination), outside the knapsack.
    Event,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub threshold: f64,
    pub cost: f64,
    pub ttl: Ttl,
    pub cooldown: u32,
    pub kind: AgentKind,
    pub scheduling: Scheduling,
}

/// Per-cycle facts the indicator utilities depend on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleContext {
    pub t: usize,
    pub t_eff: usize,
    pub stop_flag: bool,
    pub psm_size: usize,
    pub k_ret: usize,
    /// Normalized error from the previous cycle's observation.
    pub err_norm_prev: f64,
}

impl AgentSpec {
    /// Raw utility before the termination guard.
    pub fn utility(&self, h: &HormoneVector, ctx: &CycleContext) -> f64 {
        let (hc, hu) = (h.h_c, h.h_u);
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match self.id {
            AgentId::R1A => 0.6 * hu + 0.4 * (1.0 - hc),
            AgentId::R1B => 0.5 * hu + 0.3 * h.h_cur + 0.2 * (1.0 - hc),
            AgentId::R1C => 0.7 * hu - 0.3 * h.h_ene,
            AgentId::R1D => 0.6 * hu + 0.2 * h.h_ale,
            AgentId::R2A | AgentId::R2B | AgentId::R3A => 1.0,
            AgentId::R2C => 0.5 * hc + 0.3 * (1.0 - hu) + 0.2 * (1.0 - ctx.err_norm_prev),
            AgentId::R2D => 0.6 * hu + 0.3 * h.h_ale,
            AgentId::R3B => 0.5 * hc + 0.3 * (1.0 - hu) + 0.2 * (1.0 - h.h_ene),
            AgentId::R3C => ind(ctx.t == 0) * ind(ctx.psm_size >= ctx.k_ret),
            AgentId::R3D => ind(ctx.stop_flag || ctx.t >= ctx.t_eff),
        }
    }

    pub fn is_persistent(&self) -> bool {
        self.ttl == Ttl::Persistent
    }
}

/// Registry of all twelve agents with their thresholds, costs and schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    specs: Vec<AgentSpec>,
}

/// Default costs in normalized compute units, indexed like [`AgentId::ALL`].
pub const DEFAULT_COSTS: [f64; 12] = [4.0, 2.0, 1.5, 2.5, 0.5, 0.5, 0.5, 2.0, 0.1, 1.0, 0.5, 0.5];

impl Registry {
    /// `t_max0` sets the cooldown of the warm-start agent, which fires once per episode.
    pub fn new(t_max0: u32) -> Self {
        Self::with_costs(t_max0, DEFAULT_COSTS)
    }

    pub fn with_costs(t_max0: u32, costs: [f64; 12]) -> Self {
        use AgentId::*;
        use AgentKind::*;
        let spec = |id: AgentId, threshold, ttl, cooldown, kind, scheduling| AgentSpec {
            id,
            threshold,
            cost: costs[id.index()],
            ttl,
            cooldown,
            kind,
            scheduling,
        };
        let p = Ttl::Persistent;
        let c = Ttl::Cycles;
        let specs = vec![
            spec(R1A, 0.25, p, 0, Emission, Scheduling::Knapsack),
            spec(R1B, 0.35, c(3), 2, Emission, Scheduling::Knapsack),
            spec(R1C, 0.30, c(2), 1, Emission, Scheduling::Knapsack),
            spec(R1D, 0.40, c(3), 2, Emission, Scheduling::Knapsack),
            spec(R2A, 0.0, p, 0, Verification, Scheduling::Persistent),
            spec(R2B, 0.0, p, 0, Verification, Scheduling::Persistent),
            spec(R2C, 0.30, p, 0, Verification, Scheduling::Persistent),
            spec(R2D, 0.35, c(5), 2, Verification, Scheduling::Knapsack),
            spec(R3A, 0.0, p, 0, Governance, Scheduling::Persistent),
            spec(R3B, 0.25, c(2), 1, Governance, Scheduling::Event),
            spec(R3C, 0.5, c(1), t_max0, Governance, Scheduling::Event),
            spec(R3D, 0.5, c(1), 0, Governance, Scheduling::Event),
        ];
        Registry { specs }
    }

    pub fn get(&self, id: AgentId) -> &AgentSpec {
        &self.specs[id.index()]
    }

    pub fn specs(&self) -> &[AgentSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentRuntime {
    pub ttl_remaining: u32,
    pub cooldown_remaining: u32,
    pub last_active_cycle: Option<usize>,
}

impl AgentRuntime {
    pub fn fresh(spec: &AgentSpec) -> Self {
        AgentRuntime {
            ttl_remaining: match spec.ttl {
                Ttl::Persistent => 0,
                Ttl::Cycles(n) => n,
            },
            cooldown_remaining: 0,
            last_active_cycle: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eligibility {
    pub eligible: bool,
    pub utility: f64,
}

/// Eligibility of one agent this cycle.
///
/// Knapsack agents are subject to the termination guard: their utility is
/// zeroed once `t >= t_eff`.
pub fn eligibility(
    spec: &AgentSpec,
    runtime: &AgentRuntime,
    h: &HormoneVector,
    ctx: &CycleContext,
) -> Eligibility {
    if spec.scheduling == Scheduling::Persistent {
        let utility = if spec.id == AgentId::R2C {
            spec.utility(h, ctx)
        } else {
            1.0
        };
        return Eligibility {
            eligible: true,
            utility,
        };
    }
    let mut utility = spec.utility(h, ctx);
    if spec.scheduling == Scheduling::Knapsack && ctx.t >= ctx.t_eff {
        utility = 0.0;
    }
    Eligibility {
        eligible: runtime.cooldown_remaining == 0 && utility > spec.threshold,
        utility,
    }
}

/// Advances TTL and cooldown counters after a cycle.
pub fn tick(spec: &AgentSpec, runtime: &AgentRuntime, activated: bool, t: usize) -> AgentRuntime {
    let mut next = *runtime;
    if activated {
        next.last_active_cycle = Some(t);
    }
    match spec.ttl {
        Ttl::Persistent => next,
        Ttl::Cycles(ttl) => {
            if activated {
                next.ttl_remaining = next.ttl_remaining.saturating_sub(1);
                if next.ttl_remaining == 0 {
                    next.cooldown_remaining = spec.cooldown;
                    next.ttl_remaining = ttl;
                }
            } else {
                next.cooldown_remaining = next.cooldown_remaining.saturating_sub(1);
            }
            next
        }
    }
}

/// Candidate outputs kept alive across cycles, as `(candidate index, probability)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    entries: Vec<(usize, f64)>,
}

impl HypothesisSet {
    pub const CAPACITY: usize = 32;
    /// Sampled candidates below this probability are not admitted.
    pub const ADMIT: f64 = 0.05;
    /// Entries whose probability falls below this floor are dropped.
    pub const FLOOR: f64 = 0.01;
    const DRAWS: usize = 4;

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn top(&self) -> Option<(usize, f64)> {
        self.entries
            .iter()
            .copied()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }

    fn rescore(&mut self, p: &OutputDistribution) {
        let probs = p.probs();
        self.entries.retain(|(i, _)| *i < probs.len());
        for e in &mut self.entries {
            e.1 = probs[e.0];
        }
    }

    fn insert(&mut self, idx: usize, prob: f64) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == idx) {
            e.1 = prob;
            return;
        }
        self.entries.push((idx, prob));
        if self.entries.len() > Self::CAPACITY {
            let (pos, _) = self
                .entries
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.1 .0.cmp(&a.1 .0)))
                .expect("non-empty");
            self.entries.remove(pos);
        }
    }

    /// Sample-above-threshold, prune-below-floor maintenance.
    pub fn refresh<R: Rng + ?Sized>(&mut self, p: &OutputDistribution, rng: &mut R) {
        self.rescore(p);
        let probs = p.probs();
        for _ in 0..Self::DRAWS {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            if probs[pick] >= Self::ADMIT {
                self.insert(pick, probs[pick]);
            }
        }
        let before = self.top();
        self.entries.retain(|e| e.1 >= Self::FLOOR);
        if self.entries.is_empty() {
            if let Some(top) = before {
                self.entries.push(top);
            }
        }
    }

    /// Drops entries the task rules out, always keeping the previous top-1.
    pub fn prune<F: Fn(usize) -> bool>(&mut self, feasible: F) {
        let before = self.top();
        self.entries.retain(|e| feasible(e.0));
        if self.entries.is_empty() {
            if let Some(top) = before {
                self.entries.push(top);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmissionOutcome {
    /// Agents that proposed a state change, with their deltas.
    pub contributions: Vec<(AgentId, Vec<f64>)>,
    pub violations: Vec<String>,
}

/// Runs the active emission agents in fixed id order against the pre-update state.
pub fn execute_emission_agents<T: TaskAdapter, R: Rng + ?Sized>(
    active: &[AgentId],
    s_t: &CognitiveState,
    y_t: &T::Output,
    task: &T,
    hypotheses: &mut HypothesisSet,
    rng: &mut R,
) -> Result<EmissionOutcome, TaskError> {
    let mut out = EmissionOutcome::default();
    let mut ids: Vec<AgentId> = active.iter().copied().filter(|a| a.is_emission()).collect();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        if id == AgentId::R1B {
            hypotheses.refresh(&task.distribution(s_t), rng);
        }
        if id == AgentId::R1D {
            hypotheses.prune(|i| task.hypothesis_feasible(s_t, i));
        }
        let proposal = task.delta(s_t, y_t, id)?;
        out.violations.extend(proposal.violations);
        if let Some(delta) = proposal.delta {
            if delta.len() != s_t.dim() {
                return Err(TaskError::Dimension {
                    expected: s_t.dim(),
                    got: delta.len(),
                });
            }
            out.contributions.push((id, delta));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationOutcome {
    pub observation: Observation,
    pub stop_precheck: bool,
    pub consistency: f64,
    pub violations: Vec<String>,
}

/// Inputs the verification agents read from the running episode.
pub struct VerificationInput<'a, T: TaskAdapter> {
    pub task: &'a T,
    pub s_t: &'a CognitiveState,
    pub s_prev: Option<&'a CognitiveState>,
    pub y_t: &'a T::Output,
    pub y_prev: Option<&'a T::Output>,
    pub h: &'a HormoneVector,
    /// `(eps_s, theta_c, theta_u)`.
    pub thresholds: (f64, f64, f64),
    /// Consistency from the last cycle in which the axiom checker ran.
    pub prev_consistency: f64,
    pub params: &'a ObservationParams,
}

/// Runs the verification agents: error and entropy fields, direction tracking
/// with the stop precheck, and the axiom check when its agent is active.
pub fn execute_verification_agents<T: TaskAdapter>(
    active: &[AgentId],
    input: VerificationInput<'_, T>,
    history: &mut ObservationHistory,
) -> Result<VerificationOutcome, TaskError> {
    let (consistency, violations) = if active.contains(&AgentId::R2D) {
        let v = input.task.axioms(input.y_t);
        let total = input.task.axiom_count();
        let c = if total == 0 {
            1.0
        } else {
            1.0 - v.len() as f64 / total as f64
        };
        (c.clamp(0.0, 1.0), v)
    } else {
        (input.prev_consistency, Vec::new())
    };
    let p = input.task.distribution(input.s_t);
    let y = input.task.canonical_encoding(input.y_t);
    let y_prev = input.y_prev.map(|yp| input.task.canonical_encoding(yp));
    let observation = build_observation(
        input.s_t,
        input.s_prev,
        &p,
        &y,
        y_prev.as_deref(),
        consistency,
        history,
        input.params,
    )
    .map_err(|e| TaskError::Adapter(e.to_string()))?;
    let (eps_s, theta_c, theta_u) = input.thresholds;
    let stop_precheck = match input.s_prev {
        Some(prev) => {
            l2_diff(input.s_t.values(), prev.values()) <= eps_s
                && input.h.h_c >= theta_c
                && input.h.h_u <= theta_u
        }
        None => false,
    };
    Ok(VerificationOutcome {
        observation,
        stop_precheck,
        consistency,
        violations,
    })
}
