//! Flat JSON run configuration keyed by parameter symbol.

use serde::{Deserialize, Serialize};

use crate::engrams::RetrievalParams;
use crate::hormones::{EmissionWeights, HormoneParams, InheritedLevels};
use crate::observe::ObservationParams;
use crate::rrc::{
    BudgetParams, ConfigError, EnergyModel, EngineConfig, InheritedSchedule, SelectionParams,
    Solver, StoppingThresholds,
};
use crate::select::PrimalDualParams;
use crate::tasks::{Difficulty, TaskKind};

/// Parameters that may be swept one at a time.
pub const SWEEPABLE: [&str; 6] = [
    "gamma_cu", "gamma_uc", "lambda_c", "lambda_u", "theta_c", "theta_u",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub difficulty: Difficulty,
    pub n_episodes: usize,
    /// Defaults to a fifth of `n_episodes` when unset.
    pub warmup_episodes: Option<usize>,
    pub n_seeds: usize,
    pub seed: u64,
    pub warm_start: bool,
    pub engine: EngineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Dde,
            difficulty: Difficulty::Default,
            n_episodes: 500,
            warmup_episodes: None,
            n_seeds: 5,
            seed: 0,
            warm_start: true,
            engine: EngineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_episodes.unwrap_or(self.n_episodes / 5)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|k| self.seed + k).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine.validate()?;
        if self.n_episodes == 0 || self.n_seeds == 0 {
            return Err(ConfigError::Invalid(
                "n_episodes and n_seeds must be >= 1".into(),
            ));
        }
        if self.warmup() >= self.n_episodes {
            return Err(ConfigError::Invalid(format!(
                "warmup_episodes ({}) must be < n_episodes ({})",
                self.warmup(),
                self.n_episodes
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile =
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(format!("config: {e}")))?;
        Ok(file.into_run())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ConfigFile::from_run(self)).expect("config serializes")
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        let e = &self.engine;
        Some(match name {
            "gamma_cu" => e.hormones.gamma_cu,
            "gamma_uc" => e.hormones.gamma_uc,
            "lambda_c" => e.hormones.lambda_c,
            "lambda_u" => e.hormones.lambda_u,
            "theta_c" => e.stopping.theta_c,
            "theta_u" => e.stopping.theta_u,
            _ => return None,
        })
    }

    pub fn with_param(&self, name: &str, value: f64) -> Option<Self> {
        let mut c = self.clone();
        let e = &mut c.engine;
        match name {
            "gamma_cu" => e.hormones.gamma_cu = value,
            "gamma_uc" => e.hormones.gamma_uc = value,
            "lambda_c" => e.hormones.lambda_c = value,
            "lambda_u" => e.hormones.lambda_u = value,
            "theta_c" => e.stopping.theta_c = value,
            "theta_u" => e.stopping.theta_u = value,
            _ => return None,
        }
        Some(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    task: TaskKind,
    difficulty: Difficulty,
    n_episodes: usize,
    warmup_episodes: Option<usize>,
    n_seeds: usize,
    seed: u64,
    warm_start_enabled: bool,

    tau_c: f64,
    tau_u: f64,
    lambda_c: f64,
    lambda_u: f64,
    delta_c: usize,
    delta_u: usize,
    rho_c: f64,
    rho_u: f64,
    sigma_eta_c: f64,
    sigma_eta_u: f64,
    a_c: f64,
    a_u: f64,
    b_c: f64,
    b_u: f64,
    gamma_cu: f64,
    gamma_uc: f64,
    gamma_cur_u: f64,
    gamma_inh_c: f64,
    dt: f64,

    alpha_u: f64,
    beta_u: f64,
    gamma_u: f64,
    alpha_c: f64,
    beta_c: f64,
    gamma_c: f64,

    w: usize,
    ema_decay: f64,

    eps_s: f64,
    theta_c: f64,
    theta_u: f64,

    t_max0: u32,
    beta_e: f64,
    kappa_u: f64,
    t_min: u32,

    c_base: f64,
    c_iter: f64,
    c_mem: f64,

    alpha: f64,
    k_ret: usize,
    theta_ret: f64,
    m_max: usize,

    b_max: f64,
    beta_b: f64,
    solver: Solver,
    t_pd: usize,
    alpha_x: f64,
    alpha_mu: f64,
    mu_max: f64,
    costs: [f64; 12],

    eta0: f64,
    eps_sig: f64,
    rho_u_onset: f64,

    h_conf: f64,
    h_inh: f64,
    h_cur: f64,
    h_ene: f64,
    h_ale: f64,
    ene_rate: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile::from_run(&RunConfig::default())
    }
}

impl ConfigFile {
    fn from_run(r: &RunConfig) -> Self {
        let e = &r.engine;
        let h = &e.hormones;
        let w = &e.weights;
        let l = &e.inherited.levels;
        ConfigFile {
            task: r.task,
            difficulty: r.difficulty,
            n_episodes: r.n_episodes,
            warmup_episodes: r.warmup_episodes,
            n_seeds: r.n_seeds,
            seed: r.seed,
            warm_start_enabled: r.warm_start,
            tau_c: h.tau_c,
            tau_u: h.tau_u,
            lambda_c: h.lambda_c,
            lambda_u: h.lambda_u,
            delta_c: h.delta_c,
            delta_u: h.delta_u,
            rho_c: h.rho_c,
            rho_u: h.rho_u,
            sigma_eta_c: h.sigma_eta_c,
            sigma_eta_u: h.sigma_eta_u,
            a_c: h.a_c,
            a_u: h.a_u,
            b_c: h.b_c,
            b_u: h.b_u,
            gamma_cu: h.gamma_cu,
            gamma_uc: h.gamma_uc,
            gamma_cur_u: h.gamma_cur_u,
            gamma_inh_c: h.gamma_inh_c,
            dt: h.dt,
            alpha_u: w.alpha_u,
            beta_u: w.beta_u,
            gamma_u: w.gamma_u,
            alpha_c: w.alpha_c,
            beta_c: w.beta_c,
            gamma_c: w.gamma_c,
            w: e.observation.window,
            ema_decay: e.observation.ema_decay,
            eps_s: e.stopping.eps_s,
            theta_c: e.stopping.theta_c,
            theta_u: e.stopping.theta_u,
            t_max0: e.budget.t_max0,
            beta_e: e.budget.beta_e,
            kappa_u: e.budget.kappa_u,
            t_min: e.budget.t_min,
            c_base: e.energy.c_base,
            c_iter: e.energy.c_iter,
            c_mem: e.energy.c_mem,
            alpha: e.retrieval.alpha,
            k_ret: e.retrieval.k_ret,
            theta_ret: e.retrieval.theta_ret,
            m_max: e.retrieval.m_max,
            b_max: e.selection.b_max,
            beta_b: e.selection.beta_b,
            solver: e.selection.solver,
            t_pd: e.selection.primal_dual.steps,
            alpha_x: e.selection.primal_dual.alpha_x,
            alpha_mu: e.selection.primal_dual.alpha_mu,
            mu_max: e.selection.primal_dual.mu_max,
            costs: e.costs,
            eta0: e.eta0,
            eps_sig: e.eps_sig,
            rho_u_onset: e.rho_u_onset,
            h_conf: l.conf,
            h_inh: l.inh,
            h_cur: l.cur,
            h_ene: l.ene,
            h_ale: l.ale,
            ene_rate: e.inherited.ene_rate,
        }
    }

    fn into_run(self) -> RunConfig {
        RunConfig {
            task: self.task,
            difficulty: self.difficulty,
            n_episodes: self.n_episodes,
            warmup_episodes: self.warmup_episodes,
            n_seeds: self.n_seeds,
            seed: self.seed,
            warm_start: self.warm_start_enabled,
            engine: EngineConfig {
                hormones: HormoneParams {
                    tau_c: self.tau_c,
                    tau_u: self.tau_u,
                    lambda_c: self.lambda_c,
                    lambda_u: self.lambda_u,
                    delta_c: self.delta_c,
                    delta_u: self.delta_u,
                    rho_c: self.rho_c,
                    rho_u: self.rho_u,
                    sigma_eta_c: self.sigma_eta_c,
                    sigma_eta_u: self.sigma_eta_u,
                    a_c: self.a_c,
                    a_u: self.a_u,
                    b_c: self.b_c,
                    b_u: self.b_u,
                    gamma_cu: self.gamma_cu,
                    gamma_uc: self.gamma_uc,
                    gamma_cur_u: self.gamma_cur_u,
                    gamma_inh_c: self.gamma_inh_c,
                    dt: self.dt,
                },
                weights: EmissionWeights {
                    alpha_u: self.alpha_u,
                    beta_u: self.beta_u,
                    gamma_u: self.gamma_u,
                    alpha_c: self.alpha_c,
                    beta_c: self.beta_c,
                    gamma_c: self.gamma_c,
                },
                observation: ObservationParams {
                    window: self.w,
                    ema_decay: self.ema_decay,
                },
                stopping: StoppingThresholds {
                    eps_s: self.eps_s,
                    theta_c: self.theta_c,
                    theta_u: self.theta_u,
                },
                budget: BudgetParams {
                    t_max0: self.t_max0,
                    beta_e: self.beta_e,
                    kappa_u: self.kappa_u,
                    t_min: self.t_min,
                },
                energy: EnergyModel {
                    c_base: self.c_base,
                    c_iter: self.c_iter,
                    c_mem: self.c_mem,
                },
                retrieval: RetrievalParams {
                    alpha: self.alpha,
                    k_ret: self.k_ret,
                    theta_ret: self.theta_ret,
                    m_max: self.m_max,
                },
                selection: SelectionParams {
                    b_max: self.b_max,
                    beta_b: self.beta_b,
                    solver: self.solver,
                    primal_dual: PrimalDualParams {
                        steps: self.t_pd,
                        alpha_x: self.alpha_x,
                        alpha_mu: self.alpha_mu,
                        mu_max: self.mu_max,
                    },
                },
                inherited: InheritedSchedule {
                    levels: InheritedLevels {
                        conf: self.h_conf,
                        inh: self.h_inh,
                        cur: self.h_cur,
                        ene: self.h_ene,
                        ale: self.h_ale,
                    },
                    ene_rate: self.ene_rate,
                },
                costs: self.costs,
                eta0: self.eta0,
                eps_sig: self.eps_sig,
                rho_u_onset: self.rho_u_onset,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn keys_override_fields() {
        let c = RunConfig::from_json(
            r#"{"lambda_c": 0.65, "theta_c": 0.5, "k_ret": 5, "task": "maze"}"#,
        )
        .unwrap();
        assert_eq!(c.engine.hormones.lambda_c, 0.65);
        assert_eq!(c.engine.stopping.theta_c, 0.5);
        assert_eq!(c.engine.retrieval.k_ret, 5);
        assert_eq!(c.task, TaskKind::Maze);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"lambda": 0.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"lambda_c": "high"}"#).is_err());
        assert!(RunConfig::from_json("[1,2]").is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut c = RunConfig::default();
        c.engine.hormones.gamma_cu = 0.42;
        c.warmup_episodes = Some(7);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn warmup_must_precede_evaluation() {
        let c = RunConfig {
            n_episodes: 10,
            warmup_episodes: Some(10),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            n_episodes: 10,
            ..Default::default()
        };
        assert_eq!(c.warmup(), 2);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn sweep_parameters_round_trip() {
        let c = RunConfig::default();
        for name in SWEEPABLE {
            let v = c.param(name).unwrap();
            assert_eq!(
                c.with_param(name, v * 1.3).unwrap().param(name),
                Some(v * 1.3)
            );
        }
        assert!(c.param("dt").is_none());
    }
}
