//! The recursive reasoning cycle: hormone-driven iteration of a task state
//! until the hormonal stopping criterion fires or the effective budget runs out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    eligibility, execute_emission_agents, execute_verification_agents, tick, AgentId, AgentRuntime,
    CycleContext, HypothesisSet, Registry, Scheduling, VerificationInput, DEFAULT_COSTS,
};
use crate::engrams::{should_write, warm_start, Engram, EngramStore, RetrievalParams};
use crate::hormones::{
    check_stability, dt_bound, emit, estimate_equilibrium, lyapunov, phi_clarifine,
    phi_confusionin, sigmoid, step_dynamics, Drive, EmissionDelay, EmissionWeights, HormoneError,
    HormoneParams, HormoneVector, InheritedLevels,
};
use crate::observe::{l2_diff, CognitiveState, Observation, ObservationHistory, ObservationParams};
use crate::select::{
    cycle_budget, solve_exact, solve_primal_dual, Candidate, PrimalDualParams, SelectionProblem,
};
use crate::tasks::{TaskAdapter, TaskError, TaskKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Hormone(#[from] HormoneError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingThresholds {
    pub eps_s: f64,
    pub theta_c: f64,
    pub theta_u: f64,
}

impl Default for StoppingThresholds {
    fn default() -> Self {
        StoppingThresholds {
            eps_s: 1e-3,
            theta_c: 0.70,
            theta_u: 0.30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub t_max0: u32,
    pub beta_e: f64,
    pub kappa_u: f64,
    pub t_min: u32,
}

impl Default for BudgetParams {
    fn default() -> Self {
        BudgetParams {
            t_max0: 20,
            beta_e: 0.80,
            kappa_u: 0.80,
            t_min: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub c_base: f64,
    pub c_iter: f64,
    pub c_mem: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            c_base: 1.0,
            c_iter: 0.5,
            c_mem: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Exact,
    PrimalDual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub b_max: f64,
    pub beta_b: f64,
    pub solver: Solver,
    pub primal_dual: PrimalDualParams,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            b_max: 8.0,
            beta_b: 0.80,
            solver: Solver::Exact,
            primal_dual: PrimalDualParams::default(),
        }
    }
}

/// Inherited hormone levels per cycle: constant, except Energexine which
/// ramps linearly by `ene_rate` per cycle (capped at 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InheritedSchedule {
    pub levels: InheritedLevels,
    pub ene_rate: f64,
}

impl Default for InheritedSchedule {
    fn default() -> Self {
        InheritedSchedule {
            levels: InheritedLevels::default(),
            ene_rate: 0.0,
        }
    }
}

impl InheritedSchedule {
    pub fn at(&self, t: usize) -> InheritedLevels {
        let mut l = self.levels;
        l.ene = (l.ene + self.ene_rate * t as f64).clamp(0.0, 1.0);
        l
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub hormones: HormoneParams,
    pub weights: EmissionWeights,
    pub observation: ObservationParams,
    pub stopping: StoppingThresholds,
    pub budget: BudgetParams,
    pub energy: EnergyModel,
    pub retrieval: RetrievalParams,
    pub selection: SelectionParams,
    pub inherited: InheritedSchedule,
    pub costs: [f64; 12],
    pub eta0: f64,
    pub eps_sig: f64,
    /// Fraction of the effective budget after which resource damping of
    /// Confusionin switches on.
    pub rho_u_onset: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            hormones: HormoneParams::default(),
            weights: EmissionWeights::default(),
            observation: ObservationParams::default(),
            stopping: StoppingThresholds::default(),
            budget: BudgetParams::default(),
            energy: EnergyModel::default(),
            retrieval: RetrievalParams::default(),
            selection: SelectionParams::default(),
            inherited: InheritedSchedule::default(),
            costs: DEFAULT_COSTS,
            eta0: 0.3,
            eps_sig: 1e-3,
            rho_u_onset: 0.8,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(msg()))
    }
}

fn unit_open(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl EngineConfig {
    /// Domain checks on every field. Does not apply the deployability gates.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.hormones.validate()?;
        self.weights.validate()?;
        let s = &self.stopping;
        check(s.eps_s > 0.0 && s.eps_s.is_finite(), || {
            format!("eps_s = {} must be > 0", s.eps_s)
        })?;
        check(unit_open(s.theta_c), || {
            format!("theta_c = {} outside (0,1)", s.theta_c)
        })?;
        check(unit_open(s.theta_u), || {
            format!("theta_u = {} outside (0,1)", s.theta_u)
        })?;
        let b = &self.budget;
        check(b.t_min >= 1 && b.t_max0 >= b.t_min, || {
            format!(
                "need t_max0 >= t_min >= 1 (t_max0 = {}, t_min = {})",
                b.t_max0, b.t_min
            )
        })?;
        check(unit_open(b.beta_e), || {
            format!("beta_e = {} outside (0,1)", b.beta_e)
        })?;
        check(unit_open(b.kappa_u), || {
            format!("kappa_u = {} outside (0,1)", b.kappa_u)
        })?;
        let e = &self.energy;
        check(
            [e.c_base, e.c_iter, e.c_mem]
                .iter()
                .all(|c| *c >= 0.0 && c.is_finite()),
            || "energy costs must be finite and >= 0".into(),
        )?;
        self.retrieval
            .validate()
            .map_err(|err| ConfigError::Invalid(err.to_string()))?;
        let sel = &self.selection;
        check(sel.b_max >= 0.0 && sel.b_max.is_finite(), || {
            format!("b_max = {} must be >= 0", sel.b_max)
        })?;
        check(unit_open(sel.beta_b), || {
            format!("beta_b = {} outside (0,1)", sel.beta_b)
        })?;
        let pd = &sel.primal_dual;
        check(
            pd.steps >= 1
                && pd.alpha_x > 0.0
                && pd.alpha_mu > 0.0
                && pd.mu_max >= 0.0
                && pd.mu_max.is_finite(),
            || "primal-dual steps, step sizes and mu_max must be positive".into(),
        )?;
        check(self.costs.iter().all(|c| *c > 0.0 && c.is_finite()), || {
            "agent costs must be finite and > 0".into()
        })?;
        check(self.eta0 > 0.0 && self.eta0.is_finite(), || {
            format!("eta0 = {} must be > 0", self.eta0)
        })?;
        check(self.eps_sig >= 0.0 && self.eps_sig.is_finite(), || {
            "eps_sig must be >= 0".into()
        })?;
        check((0.0..=1.0).contains(&self.rho_u_onset), || {
            "rho_u_onset outside [0,1]".into()
        })?;
        let l = &self.inherited.levels;
        check(
            [l.conf, l.inh, l.cur, l.ene, l.ale]
                .iter()
                .all(|v| (0.0..=1.0).contains(v)),
            || "inherited levels must lie in [0,1]".into(),
        )?;
        check(self.inherited.ene_rate.is_finite(), || {
            "ene_rate must be finite".into()
        })?;
        Ok(())
    }

    /// Deployability gates: stability at full resource load and the step bound.
    pub fn gate(&self) -> Result<(), HormoneError> {
        self.hormones.gate(1.0)
    }
}

/// Human-readable report of both gates.
pub fn gate_report(params: &HormoneParams) -> (bool, String) {
    let stab = check_stability(params, 1.0);
    let bound = dt_bound(params, 1.0);
    let mut out = String::new();
    for row in &stab.rows {
        out.push_str(&format!(
            "stability h_{}: lambda = {:.4} > {:.4} = gamma + rho*chi_max ... {}\n",
            row.hormone,
            row.lhs,
            row.rhs,
            if row.pass { "pass" } else { "FAIL" }
        ));
    }
    let dt_ok = params.dt < bound.overall;
    out.push_str(&format!(
        "dt bound: bound_c = {:.4}, bound_u = {:.4}, overall = {:.4}; dt = {:.4} ... {}\n",
        bound.bound_c,
        bound.bound_u,
        bound.overall,
        params.dt,
        if dt_ok { "pass" } else { "FAIL" }
    ));
    (stab.passed() && dt_ok, out)
}

/// Three-condition stopping criterion.
pub fn should_stop(
    s_t: &CognitiveState,
    s_prev: &CognitiveState,
    h: &HormoneVector,
    thr: &StoppingThresholds,
) -> bool {
    l2_diff(s_t.values(), s_prev.values()) <= thr.eps_s
        && h.h_c >= thr.theta_c
        && h.h_u <= thr.theta_u
}

/// Energexine-shrunk cycle budget with the Confusionin override, rounded up.
pub fn effective_budget(h: &HormoneVector, p: &BudgetParams) -> usize {
    let t_max0 = p.t_max0 as f64;
    let t_min = p.t_min as f64;
    let base = t_max0 * (1.0 - p.beta_e * h.h_ene);
    let over = t_min + p.kappa_u * h.h_u * (t_max0 - t_min);
    let t = (base.max(over) - 1e-9).ceil().max(0.0) as usize;
    t.max(p.t_min as usize)
}

pub fn cycle_energy(n_active: usize, n_retrieved: usize, m: &EnergyModel) -> f64 {
    m.c_base + m.c_iter * n_active as f64 + m.c_mem * n_retrieved as f64
}

/// `clip(s + eta(h) * mean(deltas))` with `eta(h) = eta0 (0.5 + 0.5 h_u)`.
pub fn compose_step(
    s: &CognitiveState,
    deltas: &[Vec<f64>],
    h_u: f64,
    eta0: f64,
) -> CognitiveState {
    if deltas.is_empty() {
        return s.clone();
    }
    let eta = eta0 * (0.5 + 0.5 * h_u);
    let w = 1.0 / deltas.len() as f64;
    let mut next = s.values().to_vec();
    for d in deltas {
        for (x, v) in next.iter_mut().zip(d) {
            *x += eta * w * v;
        }
    }
    CognitiveState::clipped(next)
}

/// One application of the iteration operator: runs the active emission
/// agents, composes their deltas and decodes the new output.
#[allow(clippy::too_many_arguments)]
pub fn iterate<T: TaskAdapter, R: Rng + ?Sized>(
    s_t: &CognitiveState,
    y_t: &T::Output,
    h: &HormoneVector,
    active: &[AgentId],
    task: &T,
    eta0: f64,
    hypotheses: &mut HypothesisSet,
    rng: &mut R,
) -> Result<(CognitiveState, T::Output, Vec<String>), TaskError> {
    let out = execute_emission_agents(active, s_t, y_t, task, hypotheses, rng)?;
    let deltas: Vec<Vec<f64>> = out.contributions.into_iter().map(|(_, d)| d).collect();
    let s_next = compose_step(s_t, &deltas, h.h_u, eta0);
    let y_next = task.decode(&s_next);
    Ok((s_next, y_next, out.violations))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Criterion,
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub t: usize,
    pub state: Vec<f64>,
    /// Canonical encoding of the decoded output.
    pub output: Vec<f64>,
    pub h: HormoneVector,
    pub active: Vec<AgentId>,
    pub observation: Observation,
    /// Lyapunov value against the episode's equilibrium estimate.
    pub lyapunov: f64,
    pub entropy: f64,
    /// `‖s_t − s_{t−1}‖₂` (0 at the first record).
    pub residual: f64,
    pub energy: f64,
    pub t_eff: usize,
    pub chi: f64,
    pub budget: f64,
    pub retrieved: usize,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task: TaskKind,
    pub seed: u64,
    pub t_star: usize,
    pub stop_reason: StopReason,
    pub total_energy: f64,
    pub warm_flag: bool,
    pub retrieved: usize,
    pub correct: bool,
    pub engram_written: bool,
    pub h_star: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub records: Vec<CycleRecord>,
    pub summary: EpisodeSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
enum TraceLine {
    Cycle(CycleRecord),
    Summary(EpisodeSummary),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("trace has no summary line")]
    MissingSummary,
    #[error("trace violates an invariant: {0}")]
    Invariant(String),
}

impl EpisodeTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(
                &serde_json::to_string(&TraceLine::Cycle(r.clone())).expect("record serializes"),
            );
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&TraceLine::Summary(self.summary.clone()))
                .expect("summary serializes"),
        );
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| TraceError::Line {
                line: i + 1,
                message,
            };
            if summary.is_some() {
                return Err(err("content after the summary line".into()));
            }
            match serde_json::from_str::<TraceLine>(line).map_err(|e| err(e.to_string()))? {
                TraceLine::Cycle(r) => {
                    if r.t != records.len() {
                        return Err(err(format!(
                            "expected cycle {}, found {}",
                            records.len(),
                            r.t
                        )));
                    }
                    records.push(r);
                }
                TraceLine::Summary(s) => summary = Some(s),
            }
        }
        let trace = EpisodeTrace {
            records,
            summary: summary.ok_or(TraceError::MissingSummary)?,
        };
        trace.check()?;
        Ok(trace)
    }

    /// Structural invariants: record count, bounded states, energy ledger.
    pub fn check(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Invariant(m));
        if self.records.len() != self.summary.t_star + 1 {
            return bad(format!(
                "{} records for t* = {}",
                self.records.len(),
                self.summary.t_star
            ));
        }
        if self
            .records
            .iter()
            .any(|r| r.state.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return bad("state leaves [0,1]".into());
        }
        let total: f64 = self.records.iter().map(|r| r.energy).sum();
        if total != self.summary.total_energy {
            return bad(format!(
                "energy ledger {} != {}",
                total, self.summary.total_energy
            ));
        }
        Ok(())
    }
}

/// An aborted episode with the records completed before the failure.
#[derive(Debug, Error)]
#[error("episode aborted at cycle {}: {message}", prefix.len())]
pub struct EpisodeError {
    pub prefix: Vec<CycleRecord>,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeOptions {
    pub warm_start: bool,
    /// Single forced pass with every non-persistent agent active.
    pub baseline: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions {
            warm_start: true,
            baseline: false,
        }
    }
}

struct Running<'a, T: TaskAdapter> {
    task: &'a T,
    cfg: &'a EngineConfig,
    registry: Registry,
    runtimes: Vec<AgentRuntime>,
    records: Vec<CycleRecord>,
    ledger: f64,
    phi_sum: (f64, f64),
    chi_sum: f64,
}

impl<T: TaskAdapter> Running<'_, T> {
    fn abort(&self, message: String) -> EpisodeError {
        EpisodeError {
            prefix: self.records.clone(),
            message,
        }
    }

    fn advance(&mut self, active: &[AgentId], t: usize) {
        for spec in self.registry.specs() {
            let i = spec.id.index();
            self.runtimes[i] = tick(spec, &self.runtimes[i], active.contains(&spec.id), t);
        }
    }

    fn persistent(&self) -> Vec<AgentId> {
        self.registry
            .specs()
            .iter()
            .filter(|s| s.scheduling == Scheduling::Persistent)
            .map(|s| s.id)
            .collect()
    }

    fn event_fires(
        &self,
        id: AgentId,
        h: &HormoneVector,
        ctx: &CycleContext,
        forced: bool,
    ) -> bool {
        let spec = self.registry.get(id);
        forced || eligibility(spec, &self.runtimes[id.index()], h, ctx).eligible
    }

    #[allow(clippy::too_many_arguments)]
    fn push_record(
        &mut self,
        t: usize,
        s: &CognitiveState,
        y: &T::Output,
        h: &HormoneVector,
        mut active: Vec<AgentId>,
        observation: Observation,
        residual: f64,
        t_eff: usize,
        chi: f64,
        budget: f64,
        retrieved: usize,
        violations: Vec<String>,
    ) {
        active.sort_unstable();
        active.dedup();
        let energy = cycle_energy(active.len(), retrieved, &self.cfg.energy);
        self.ledger += energy;
        self.records.push(CycleRecord {
            t,
            state: s.values().to_vec(),
            output: self.task.canonical_encoding(y),
            h: *h,
            active,
            entropy: observation.entropy.entropy,
            observation,
            lyapunov: 0.0,
            residual,
            energy,
            t_eff,
            chi,
            budget,
            retrieved,
            violations,
        });
    }
}

/// Runs one episode against `task`, reading from and writing to `store`.
pub fn run_episode<T: TaskAdapter>(
    task: &T,
    cfg: &EngineConfig,
    store: &mut EngramStore,
    seed: u64,
    opts: EpisodeOptions,
) -> Result<EpisodeTrace, EpisodeError> {
    let mut cfg_local;
    let cfg = if opts.baseline {
        cfg_local = cfg.clone();
        cfg_local.budget.t_max0 = 1;
        cfg_local.budget.t_min = 1;
        &cfg_local
    } else {
        cfg
    };
    let registry = Registry::with_costs(cfg.budget.t_max0, cfg.costs);
    let runtimes = registry.specs().iter().map(AgentRuntime::fresh).collect();
    let mut run = Running {
        task,
        cfg,
        registry,
        runtimes,
        records: Vec::new(),
        ledger: 0.0,
        phi_sum: (0.0, 0.0),
        chi_sum: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hypotheses = HypothesisSet::default();
    let mut history = ObservationHistory::new();
    let mut delay = EmissionDelay::new(cfg.hormones.delta_c, cfg.hormones.delta_u);
    let thresholds = (
        cfg.stopping.eps_s,
        cfg.stopping.theta_c,
        cfg.stopping.theta_u,
    );

    // Cycle 0: warm start, initial output and neutral observation.
    let mut h = HormoneVector::with_inherited(&cfg.inherited.at(0));
    let context = h.to_array();
    let mut t_eff = effective_budget(&h, &cfg.budget);
    let ctx0 = CycleContext {
        t: 0,
        t_eff,
        stop_flag: false,
        psm_size: store.len(),
        k_ret: cfg.retrieval.k_ret,
        err_norm_prev: 1.0,
    };
    let mut s = task.encode();
    let mut active = run.persistent();
    let mut retrieved = Vec::new();
    if opts.baseline {
        active.push(AgentId::R3C);
    } else if opts.warm_start && run.event_fires(AgentId::R3C, &h, &ctx0, false) {
        active.push(AgentId::R3C);
        retrieved = store.retrieve(&context, &cfg.retrieval);
        if let Ok(ws) = warm_start(&retrieved) {
            if ws.dim() == s.dim() {
                s = task.reconcile(ws);
            }
        }
    }
    let warm_flag = !retrieved.is_empty() && active.contains(&AgentId::R3C);
    let mut y = task.decode(&s);
    let mut consistency = 1.0;
    let ver = execute_verification_agents(
        &active,
        VerificationInput {
            task,
            s_t: &s,
            s_prev: None,
            y_t: &y,
            y_prev: None,
            h: &h,
            thresholds,
            prev_consistency: consistency,
            params: &cfg.observation,
        },
        &mut history,
    )
    .map_err(|e| run.abort(e.to_string()))?;
    let mut obs = ver.observation;
    let budget0 = cycle_budget(cfg.selection.b_max, h.h_ene, cfg.selection.beta_b);
    run.push_record(
        0,
        &s,
        &y,
        &h,
        active.clone(),
        obs,
        0.0,
        t_eff,
        0.0,
        budget0,
        retrieved.len(),
        Vec::new(),
    );
    run.advance(&active, 0);

    let mut ever_active = [false; 12];
    for a in &active {
        ever_active[a.index()] = true;
    }
    let w = cfg.weights;
    let hp = cfg.hormones;
    let mut t = 0;
    let stop_reason = loop {
        t += 1;
        h.set_inherited(&cfg.inherited.at(t));
        let phi_u = phi_confusionin(
            obs.entropy.entropy_norm,
            obs.error.err_norm,
            obs.output.conf_max,
            &w,
        );
        let phi_c = phi_clarifine(
            obs.entropy.entropy_norm,
            obs.error.err_norm,
            obs.update.cos_align,
            &w,
        );
        run.phi_sum.0 += phi_c;
        run.phi_sum.1 += phi_u;
        let e_now = (
            emit(phi_c, h.h_c, hp.a_c, hp.b_c),
            emit(phi_u, h.h_u, hp.a_u, hp.b_u),
        );
        let e_delayed = delay.push(e_now);
        let chi = (t as f64 / t_eff as f64).clamp(0.0, 1.0);
        run.chi_sum += chi;
        let mut step_params = hp;
        if (t as f64) < cfg.rho_u_onset * t_eff as f64 {
            step_params.rho_u = 0.0;
        }
        let noise = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        h = step_dynamics(&h, e_delayed, chi, &step_params, noise)
            .map_err(|e| run.abort(e.to_string()))?;

        t_eff = effective_budget(&h, &cfg.budget);
        let terminal = t >= t_eff;
        let ctx = CycleContext {
            t,
            t_eff,
            stop_flag: false,
            psm_size: store.len(),
            k_ret: cfg.retrieval.k_ret,
            err_norm_prev: obs.error.err_norm,
        };
        let budget = cycle_budget(cfg.selection.b_max, h.h_ene, cfg.selection.beta_b);
        let mut active = run.persistent();
        let mut violations = Vec::new();
        let s_prev = s.clone();
        let mut criterion = false;

        if !terminal || opts.baseline {
            if opts.baseline {
                active.extend(
                    run.registry
                        .specs()
                        .iter()
                        .filter(|sp| sp.scheduling == Scheduling::Knapsack)
                        .map(|sp| sp.id),
                );
            } else {
                let candidates: Vec<Candidate> = run
                    .registry
                    .specs()
                    .iter()
                    .filter(|sp| sp.scheduling == Scheduling::Knapsack)
                    .filter_map(|sp| {
                        let e = eligibility(sp, &run.runtimes[sp.id.index()], &h, &ctx);
                        e.eligible.then_some(Candidate {
                            label: sp.id.index() as u32,
                            utility: e.utility,
                            cost: sp.cost,
                        })
                    })
                    .collect();
                let problem = SelectionProblem { candidates, budget };
                let chosen = match cfg.selection.solver {
                    Solver::Exact => solve_exact(&problem),
                    Solver::PrimalDual => solve_primal_dual(&problem, &cfg.selection.primal_dual),
                }
                .map_err(|e| run.abort(e.to_string()))?;
                active.extend(chosen.chosen.iter().map(|&l| AgentId::ALL[l as usize]));
            }

            let (s_next, y_next, emitted) = iterate(
                &s,
                &y,
                &h,
                &active,
                task,
                cfg.eta0,
                &mut hypotheses,
                &mut rng,
            )
            .map_err(|e| run.abort(e.to_string()))?;
            violations.extend(emitted);
            let ver = execute_verification_agents(
                &active,
                VerificationInput {
                    task,
                    s_t: &s_next,
                    s_prev: Some(&s),
                    y_t: &y_next,
                    y_prev: Some(&y),
                    h: &h,
                    thresholds,
                    prev_consistency: consistency,
                    params: &cfg.observation,
                },
                &mut history,
            )
            .map_err(|e| run.abort(e.to_string()))?;
            violations.extend(ver.violations);
            consistency = ver.consistency;
            obs = ver.observation;
            criterion = ver.stop_precheck;
            s = s_next;
            y = y_next;
        }

        let stop = terminal || criterion;
        if stop {
            let ctx_stop = CycleContext {
                stop_flag: true,
                ..ctx
            };
            for id in [AgentId::R3B, AgentId::R3D] {
                if run.event_fires(id, &h, &ctx_stop, opts.baseline) {
                    active.push(id);
                }
            }
        }
        for a in &active {
            ever_active[a.index()] = true;
        }
        let residual = l2_diff(s.values(), s_prev.values());
        run.push_record(
            t,
            &s,
            &y,
            &h,
            active.clone(),
            obs,
            residual,
            t_eff,
            chi,
            budget,
            0,
            violations,
        );
        run.advance(&active, t);
        if stop {
            break if terminal {
                StopReason::Budget
            } else {
                StopReason::Criterion
            };
        }
    };

    let t_star = t;
    let h_star = equilibrium_estimate(&run, t_star, &h);
    for r in &mut run.records {
        r.lyapunov = lyapunov(&r.h, h_star, &cfg.hormones);
    }

    let y_final = task.canonical_encoding(&y);
    let correct = task.is_correct(&y);
    let mut engram_written = false;
    let last_active = &run.records[t_star].active;
    if !opts.baseline
        && last_active.contains(&AgentId::R3B)
        && should_write(&y_final, store.previous_output(), cfg.eps_sig)
    {
        let max_energy = (cfg.budget.t_max0 as f64 + 1.0)
            * cycle_energy(AgentId::ALL.len(), cfg.retrieval.k_ret, &cfg.energy);
        let beta = if max_energy > 0.0 {
            (run.ledger / max_energy).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let trajectory = run.records[1..].iter().map(|r| r.state.clone()).collect();
        if let Ok(e) = Engram::new(
            context,
            ever_active,
            run.records[0].state.clone(),
            trajectory,
            y_final.clone(),
            beta,
        ) {
            store.insert(e, cfg.retrieval.m_max);
            engram_written = true;
        }
    }
    if !opts.baseline {
        store.set_previous_output(y_final);
    }

    let summary = EpisodeSummary {
        task: task.kind(),
        seed,
        t_star,
        stop_reason,
        total_energy: run.ledger,
        warm_flag,
        retrieved: retrieved.len(),
        correct,
        engram_written,
        h_star,
    };
    Ok(EpisodeTrace {
        records: run.records,
        summary,
    })
}

/// Noiseless fixed point of the recursive pair under the episode's mean drive
/// and mean resource load. Falls back to the final levels if none is found.
fn equilibrium_estimate<T: TaskAdapter>(
    run: &Running<'_, T>,
    t_star: usize,
    h_last: &HormoneVector,
) -> (f64, f64) {
    let n = t_star as f64;
    let hp = &run.cfg.hormones;
    let g_c = sigmoid(hp.a_c * run.phi_sum.0 / n + hp.b_c);
    let g_u = sigmoid(hp.a_u * run.phi_sum.1 / n + hp.b_u);
    let chi = run.chi_sum / n;
    estimate_equilibrium(
        hp,
        Drive::Saturating { g_c, g_u },
        chi,
        &run.cfg.inherited.at(t_star),
    )
    .unwrap_or_else(|_| h_last.recursive())
}
