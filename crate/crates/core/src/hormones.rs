//! Two-hormone convergence/uncertainty dynamics.
//!
//! The recursive pair (Clarifine `h_c`, Confusionin `h_u`) evolves under a
//! projected Euler–Maruyama discretisation of
//!
//! ```text
//! tau_k dh_k/dt = -lambda_k h_k + E_k(t - delta_k) - gamma_km h_k h_m
//!                 - rho_k chi h_k + X_k + sigma_k eta_k
//! ```
//!
//! where `X_k` is the bounded excitation contributed by an inherited hormone
//! (Curiosine drives `h_u`, Inhibitine drives `h_c`). The five inherited
//! hormones are exogenous here and pass through every step unchanged.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HormoneError {
    #[error("invalid hormone parameter `{name}` = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("dt = {dt} is not below the admissible bound {bound:.6}")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("stability condition fails for h_{hormone}: lambda = {lhs} <= {rhs}")]
    Unstable { hormone: char, lhs: f64, rhs: f64 },
    #[error(
        "equilibrium search did not converge after {steps} steps (residual drift {residual:e})"
    )]
    NoEquilibrium { steps: usize, residual: f64 },
}

/// Full hormonal field: the recursive pair plus the five inherited hormones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HormoneVector {
    pub h_c: f64,
    pub h_u: f64,
    pub h_conf: f64,
    pub h_inh: f64,
    pub h_cur: f64,
    pub h_ene: f64,
    pub h_ale: f64,
}

impl HormoneVector {
    pub const LEN: usize = 7;

    /// Quiescent recursive pair with the given inherited levels.
    pub fn with_inherited(inherited: &InheritedLevels) -> Self {
        HormoneVector {
            h_c: 0.0,
            h_u: 0.0,
            h_conf: inherited.conf,
            h_inh: inherited.inh,
            h_cur: inherited.cur,
            h_ene: inherited.ene,
            h_ale: inherited.ale,
        }
        .clamped()
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.h_c,
            self.h_u,
            self.h_conf,
            self.h_inh,
            self.h_cur,
            self.h_ene,
            self.h_ale,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        HormoneVector {
            h_c: a[0],
            h_u: a[1],
            h_conf: a[2],
            h_inh: a[3],
            h_cur: a[4],
            h_ene: a[5],
            h_ale: a[6],
        }
    }

    pub fn clamped(self) -> Self {
        Self::from_array(self.to_array().map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn is_valid(&self) -> bool {
        self.to_array()
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn recursive(&self) -> (f64, f64) {
        (self.h_c, self.h_u)
    }

    /// Replaces the inherited components, keeping the recursive pair.
    pub fn set_inherited(&mut self, inherited: &InheritedLevels) {
        self.h_conf = inherited.conf.clamp(0.0, 1.0);
        self.h_inh = inherited.inh.clamp(0.0, 1.0);
        self.h_cur = inherited.cur.clamp(0.0, 1.0);
        self.h_ene = inherited.ene.clamp(0.0, 1.0);
        self.h_ale = inherited.ale.clamp(0.0, 1.0);
    }
}

/// Levels of the five inherited hormones for one cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InheritedLevels {
    pub conf: f64,
    pub inh: f64,
    pub cur: f64,
    pub ene: f64,
    pub ale: f64,
}

impl Default for InheritedLevels {
    fn default() -> Self {
        InheritedLevels {
            conf: 0.5,
            inh: 0.5,
            cur: 0.3,
            ene: 0.0,
            ale: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormoneParams {
    pub tau_c: f64,
    pub tau_u: f64,
    pub lambda_c: f64,
    pub lambda_u: f64,
    pub delta_c: usize,
    pub delta_u: usize,
    pub rho_c: f64,
    pub rho_u: f64,
    pub sigma_eta_c: f64,
    pub sigma_eta_u: f64,
    pub a_c: f64,
    pub a_u: f64,
    pub b_c: f64,
    pub b_u: f64,
    pub gamma_cu: f64,
    pub gamma_uc: f64,
    pub gamma_cur_u: f64,
    pub gamma_inh_c: f64,
    pub dt: f64,
}

impl Default for HormoneParams {
    fn default() -> Self {
        HormoneParams {
            tau_c: 1.5,
            tau_u: 1.0,
            lambda_c: 0.75,
            lambda_u: 0.70,
            delta_c: 1,
            delta_u: 0,
            rho_c: 0.10,
            rho_u: 0.10,
            sigma_eta_c: 0.02,
            sigma_eta_u: 0.02,
            a_c: 5.0,
            a_u: 5.0,
            b_c: -2.5,
            b_u: -2.5,
            gamma_cu: 0.60,
            gamma_uc: 0.55,
            gamma_cur_u: 0.25,
            gamma_inh_c: 0.20,
            dt: 1.0,
        }
    }
}

fn require(
    ok: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<(), HormoneError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(HormoneError::InvalidParam {
            name,
            value,
            reason,
        })
    }
}

impl HormoneParams {
    /// Domain checks on every field. Does not apply the deployability gates.
    pub fn validate(&self) -> Result<(), HormoneError> {
        require(self.tau_c > 0.0, "tau_c", self.tau_c, "must be > 0")?;
        require(self.tau_u > 0.0, "tau_u", self.tau_u, "must be > 0")?;
        require(
            self.tau_u <= self.tau_c,
            "tau_u",
            self.tau_u,
            "Confusionin must not be slower than Clarifine (tau_u <= tau_c)",
        )?;
        for (name, v) in [("lambda_c", self.lambda_c), ("lambda_u", self.lambda_u)] {
            require(v > 0.0 && v < 1.0, name, v, "must lie in (0,1)")?;
        }
        for (name, v) in [
            ("rho_c", self.rho_c),
            ("rho_u", self.rho_u),
            ("gamma_cu", self.gamma_cu),
            ("gamma_uc", self.gamma_uc),
            ("gamma_cur_u", self.gamma_cur_u),
            ("gamma_inh_c", self.gamma_inh_c),
        ] {
            require((0.0..1.0).contains(&v), name, v, "must lie in [0,1)")?;
        }
        for (name, v) in [
            ("sigma_eta_c", self.sigma_eta_c),
            ("sigma_eta_u", self.sigma_eta_u),
        ] {
            require(v >= 0.0, name, v, "must be >= 0")?;
        }
        for (name, v) in [("a_c", self.a_c), ("a_u", self.a_u)] {
            require(v > 0.0, name, v, "must be > 0")?;
        }
        require(self.b_c.is_finite(), "b_c", self.b_c, "must be finite")?;
        require(self.b_u.is_finite(), "b_u", self.b_u, "must be finite")?;
        require(self.dt > 0.0, "dt", self.dt, "must be > 0")?;
        Ok(())
    }

    /// Domain checks plus the stability and step-size gates at `chi_max`.
    pub fn gate(&self, chi_max: f64) -> Result<(), HormoneError> {
        self.validate()?;
        let report = check_stability(self, chi_max);
        if let Some(row) = report.rows.iter().find(|r| !r.pass) {
            return Err(HormoneError::Unstable {
                hormone: row.hormone,
                lhs: row.lhs,
                rhs: row.rhs,
            });
        }
        let bound = dt_bound(self, chi_max).overall;
        if self.dt >= bound {
            return Err(HormoneError::StepTooLarge { dt: self.dt, bound });
        }
        Ok(())
    }
}

/// Convex aggregation weights for the two recursive emissions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionWeights {
    pub alpha_u: f64,
    pub beta_u: f64,
    pub gamma_u: f64,
    pub alpha_c: f64,
    pub beta_c: f64,
    pub gamma_c: f64,
}

impl Default for EmissionWeights {
    fn default() -> Self {
        EmissionWeights {
            alpha_u: 0.45,
            beta_u: 0.35,
            gamma_u: 0.20,
            alpha_c: 0.40,
            beta_c: 0.35,
            gamma_c: 0.25,
        }
    }
}

impl EmissionWeights {
    pub fn validate(&self) -> Result<(), HormoneError> {
        for (name, triple) in [
            (
                "alpha_u+beta_u+gamma_u",
                [self.alpha_u, self.beta_u, self.gamma_u],
            ),
            (
                "alpha_c+beta_c+gamma_c",
                [self.alpha_c, self.beta_c, self.gamma_c],
            ),
        ] {
            let sum: f64 = triple.iter().sum();
            require(
                triple.iter().all(|w| *w >= 0.0) && (sum - 1.0).abs() <= 1e-9,
                name,
                sum,
                "weights must be non-negative and sum to 1",
            )?;
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic emission with the anti-saturation factor `(1 - h_k)`.
pub fn emit(phi: f64, h_k: f64, a_k: f64, b_k: f64) -> f64 {
    let phi = phi.clamp(0.0, 1.0);
    let h_k = h_k.clamp(0.0, 1.0);
    (sigmoid(a_k * phi + b_k) * (1.0 - h_k)).clamp(0.0, 1.0)
}

/// Confusionin aggregation: entropy, residual error and lack of confidence.
pub fn phi_confusionin(
    entropy_norm: f64,
    err_norm: f64,
    conf_max: f64,
    w: &EmissionWeights,
) -> f64 {
    let v = w.alpha_u * entropy_norm.clamp(0.0, 1.0)
        + w.beta_u * err_norm.clamp(0.0, 1.0)
        + w.gamma_u * (1.0 - conf_max.clamp(0.0, 1.0));
    v.clamp(0.0, 1.0)
}

/// Clarifine aggregation. The directional cosine is mapped from [-1,1] onto
/// [0,1] before it enters the convex combination.
pub fn phi_clarifine(entropy_norm: f64, err_norm: f64, cos_align: f64, w: &EmissionWeights) -> f64 {
    let direction = (cos_align.clamp(-1.0, 1.0) + 1.0) / 2.0;
    let v = w.alpha_c * (1.0 - entropy_norm.clamp(0.0, 1.0))
        + w.beta_c * (1.0 - err_norm.clamp(0.0, 1.0))
        + w.gamma_c * direction;
    v.clamp(0.0, 1.0)
}

/// Noiseless right-hand side of the recursive pair (before division by tau).
///
/// `emissions` are the already-delayed, already anti-saturated emission
/// values. The inherited excitations use `h.h_inh` and `h.h_cur`.
pub fn drift(h: &HormoneVector, emissions: (f64, f64), chi: f64, p: &HormoneParams) -> (f64, f64) {
    let (hc, hu) = h.recursive();
    let x_c = p.gamma_inh_c * h.h_inh * (1.0 - hc);
    let x_u = p.gamma_cur_u * h.h_cur * (1.0 - hu);
    let dc = -p.lambda_c * hc + emissions.0 - p.gamma_cu * hc * hu - p.rho_c * chi * hc + x_c;
    let du = -p.lambda_u * hu + emissions.1 - p.gamma_uc * hu * hc - p.rho_u * chi * hu + x_u;
    (dc, du)
}

/// One projected Euler–Maruyama step of the recursive pair.
///
/// `noise` holds standard-normal draws `(xi_c, xi_u)`. Inherited hormones are
/// copied through. Fails if `dt` is not below the admissible bound at
/// `chi_max = 1`.
pub fn step_dynamics(
    h: &HormoneVector,
    emissions_delayed: (f64, f64),
    chi: f64,
    params: &HormoneParams,
    noise: (f64, f64),
) -> Result<HormoneVector, HormoneError> {
    let bound = dt_bound(params, 1.0).overall;
    if params.dt.is_nan() || params.dt >= bound {
        return Err(HormoneError::StepTooLarge {
            dt: params.dt,
            bound,
        });
    }
    Ok(euler_step(
        h,
        emissions_delayed,
        chi,
        params,
        params.dt,
        noise,
    ))
}

fn euler_step(
    h: &HormoneVector,
    emissions: (f64, f64),
    chi: f64,
    p: &HormoneParams,
    dt: f64,
    noise: (f64, f64),
) -> HormoneVector {
    let chi = chi.clamp(0.0, 1.0);
    let (dc, du) = drift(h, emissions, chi, p);
    let sq = dt.sqrt();
    let mut next = *h;
    next.h_c = (h.h_c + dt / p.tau_c * dc + sq * p.sigma_eta_c * noise.0).clamp(0.0, 1.0);
    next.h_u = (h.h_u + dt / p.tau_u * du + sq * p.sigma_eta_u * noise.1).clamp(0.0, 1.0);
    next
}

/// Fixed-length delay lines for the two emissions.
///
/// Before a line has filled, the delayed emission is zero (quiescent start).
#[derive(Clone, Debug)]
pub struct EmissionDelay {
    c: VecDeque<f64>,
    u: VecDeque<f64>,
}

impl EmissionDelay {
    pub fn new(delta_c: usize, delta_u: usize) -> Self {
        EmissionDelay {
            c: std::iter::repeat_n(0.0, delta_c).collect(),
            u: std::iter::repeat_n(0.0, delta_u).collect(),
        }
    }

    /// Pushes the current emissions and returns those from `delta_k` cycles ago.
    pub fn push(&mut self, current: (f64, f64)) -> (f64, f64) {
        self.c.push_back(current.0);
        self.u.push_back(current.1);
        (
            self.c.pop_front().unwrap_or(0.0),
            self.u.pop_front().unwrap_or(0.0),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub hormone: char,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub chi_max: f64,
    pub rows: [StabilityRow; 2],
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Deployability inequality `lambda_k > gamma_km + rho_k * chi_max` per hormone.
pub fn check_stability(params: &HormoneParams, chi_max: f64) -> StabilityReport {
    let row = |hormone, lambda: f64, gamma: f64, rho: f64| {
        let rhs = gamma + rho * chi_max;
        StabilityRow {
            hormone,
            lhs: lambda,
            rhs,
            pass: lambda > rhs,
        }
    };
    StabilityReport {
        chi_max,
        rows: [
            row('c', params.lambda_c, params.gamma_cu, params.rho_c),
            row('u', params.lambda_u, params.gamma_uc, params.rho_u),
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtBound {
    pub bound_c: f64,
    pub bound_u: f64,
    pub overall: f64,
}

/// Largest admissible explicit step, `min_k 2 tau_k / (lambda_k + gamma_km + rho_k chi_max)`.
pub fn dt_bound(params: &HormoneParams, chi_max: f64) -> DtBound {
    let bound_c = 2.0 * params.tau_c / (params.lambda_c + params.gamma_cu + params.rho_c * chi_max);
    let bound_u = 2.0 * params.tau_u / (params.lambda_u + params.gamma_uc + params.rho_u * chi_max);
    DtBound {
        bound_c,
        bound_u,
        overall: bound_c.min(bound_u),
    }
}

/// `V = 1/2 sum_k tau_k (h_k - h_k*)^2` over the recursive pair.
pub fn lyapunov(h: &HormoneVector, h_star: (f64, f64), params: &HormoneParams) -> f64 {
    let ec = h.h_c - h_star.0;
    let eu = h.h_u - h_star.1;
    0.5 * (params.tau_c * ec * ec + params.tau_u * eu * eu)
}

/// How the emission term behaves while searching for an equilibrium.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Drive {
    /// Emissions held at fixed values, independent of the state.
    Constant { e_c: f64, e_u: f64 },
    /// Sigmoid drives `g_k`; the emission is `g_k (1 - h_k)` at the current state.
    Saturating { g_c: f64, g_u: f64 },
}

impl Drive {
    pub fn emissions(&self, h: &HormoneVector) -> (f64, f64) {
        match *self {
            Drive::Constant { e_c, e_u } => (e_c, e_u),
            Drive::Saturating { g_c, g_u } => (g_c * (1.0 - h.h_c), g_u * (1.0 - h.h_u)),
        }
    }
}

/// Drift with the outward component removed at the faces of [0,1]; zero at a
/// fixed point of the projected dynamics, including ones on the boundary.
fn projected(h: f64, d: f64) -> f64 {
    if (h <= 0.0 && d < 0.0) || (h >= 1.0 && d > 0.0) {
        0.0
    } else {
        d
    }
}

/// Noiseless fixed point of the recursive pair under a constant drive.
///
/// Integrates the deterministic dynamics until both drift components fall
/// below 1e-9. The internal step is capped at a quarter of the fastest
/// timescale: fixed points do not depend on the step, and the saturating drive
/// adds damping that the explicit bound does not account for.
pub fn estimate_equilibrium(
    params: &HormoneParams,
    drive: Drive,
    chi: f64,
    inherited: &InheritedLevels,
) -> Result<(f64, f64), HormoneError> {
    const MAX_STEPS: usize = 100_000;
    const TOL: f64 = 1e-9;
    let dt = params.dt.min(0.25 * params.tau_u.min(params.tau_c));
    let mut h = HormoneVector::with_inherited(inherited);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_STEPS {
        let e = drive.emissions(&h);
        let (dc, du) = drift(&h, e, chi, params);
        residual = projected(h.h_c, dc).abs().max(projected(h.h_u, du).abs());
        if residual < TOL {
            return Ok(h.recursive());
        }
        h = euler_step(&h, e, chi, params, dt, (0.0, 0.0));
    }
    Err(HormoneError::NoEquilibrium {
        steps: MAX_STEPS,
        residual,
    })
}
