//! Parameter identification for second-order linear recurrences
//! `x[t+1] = a1 x[t] + a2 x[t-1]`.
//!
//! The state is the parameter estimate mapped affinely from `[-1,1]^2` onto
//! `[0,1]^2`. Refinement minimizes the one-step prediction residual over the
//! observed trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Difficulty, Proposal, TaskAdapter, TaskError, TaskKind};
use crate::agents::AgentId;
use crate::observe::{CognitiveState, OutputDistribution};

/// Correctness tolerance on the Euclidean parameter error.
pub const TOLERANCE: f64 = 1e-2;
/// Resolution of the canonical output encoding.
const QUANTUM: f64 = 1e-3;
/// Stability margin used by constraint projection.
const MARGIN: f64 = 1e-3;
const GRID_HALF: i32 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdeInstance {
    pub theta: [f64; 2],
    pub x: Vec<f64>,
    #[serde(default = "default_family")]
    pub family: String,
}

fn default_family() -> String {
    "linear2".to_string()
}

/// Strict stability of the recurrence: both characteristic roots inside the unit circle.
pub fn is_stable(theta: [f64; 2]) -> bool {
    let [a1, a2] = theta;
    a2.abs() < 1.0 && a1 + a2 < 1.0 && a2 - a1 < 1.0
}

impl DdeInstance {
    pub fn new(theta: [f64; 2], x: Vec<f64>) -> Result<Self, TaskError> {
        let inst = DdeInstance {
            theta,
            x,
            family: default_family(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.family != "linear2" {
            return Err(TaskError::Invalid(format!(
                "unknown family `{}`",
                self.family
            )));
        }
        if self.theta.iter().any(|t| !t.is_finite() || t.abs() > 1.0) {
            return Err(TaskError::Invalid("parameters must lie in [-1,1]".into()));
        }
        if self.x.len() < 4 || self.x.iter().any(|v| !v.is_finite()) {
            return Err(TaskError::Invalid(
                "trajectory needs at least 4 finite samples".into(),
            ));
        }
        let scale = self.x.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for t in 1..self.x.len() - 1 {
            let pred = self.theta[0] * self.x[t] + self.theta[1] * self.x[t - 1];
            if (pred - self.x[t + 1]).abs() > 1e-9 * scale {
                return Err(TaskError::Invalid(format!(
                    "sample {} does not follow the recurrence",
                    t + 1
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let inst: DdeInstance =
            serde_json::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }

    /// Parameters uniform in `[-0.9, 0.9]^2` conditioned on stability, initial
    /// samples uniform in `[-1, 1]`, ten samples in total. Draws whose
    /// trajectory leaves the parameters unidentifiable are repeated.
    pub fn generate(seed: u64, _difficulty: Difficulty) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let theta = [rng.random_range(-0.9..=0.9), rng.random_range(-0.9..=0.9)];
            if !is_stable(theta) {
                continue;
            }
            let mut x = vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            while x.len() < 10 {
                let t = x.len() - 1;
                x.push(theta[0] * x[t] + theta[1] * x[t - 1]);
            }
            let sys = Normal::from_series(&x);
            if sys.min_eigenvalue() >= 1e-6 {
                return DdeInstance {
                    theta,
                    x,
                    family: default_family(),
                };
            }
        }
    }
}

/// Normal equations `G theta = r` of the one-step prediction problem.
#[derive(Clone, Copy, Debug)]
struct Normal {
    g: [[f64; 2]; 2],
    r: [f64; 2],
    bb: f64,
}

impl Normal {
    fn from_series(x: &[f64]) -> Self {
        let mut g = [[0.0; 2]; 2];
        let mut r = [0.0; 2];
        let mut bb = 0.0;
        for t in 1..x.len() - 1 {
            let a = [x[t], x[t - 1]];
            let b = x[t + 1];
            for i in 0..2 {
                for j in 0..2 {
                    g[i][j] += a[i] * a[j];
                }
                r[i] += a[i] * b;
            }
            bb += b * b;
        }
        Normal { g, r, bb }
    }

    fn gradient(&self, th: [f64; 2]) -> [f64; 2] {
        let g = &self.g;
        [
            2.0 * (g[0][0] * th[0] + g[0][1] * th[1] - self.r[0]),
            2.0 * (g[1][0] * th[0] + g[1][1] * th[1] - self.r[1]),
        ]
    }

    fn solve(&self, rhs: [f64; 2]) -> [f64; 2] {
        let g = &self.g;
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        [
            (g[1][1] * rhs[0] - g[0][1] * rhs[1]) / det,
            (g[0][0] * rhs[1] - g[1][0] * rhs[0]) / det,
        ]
    }

    fn min_eigenvalue(&self) -> f64 {
        let g = &self.g;
        let tr = g[0][0] + g[1][1];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        tr / 2.0 - disc
    }

    fn trace(&self) -> f64 {
        self.g[0][0] + self.g[1][1]
    }
}

/// Least-squares parameters from the normal equations.
pub fn least_squares(x: &[f64]) -> [f64; 2] {
    let n = Normal::from_series(x);
    n.solve(n.r)
}

/// Projection onto the stability triangle shrunk by `MARGIN`, by alternating
/// projections onto its three half-planes (Dykstra's correction keeps the
/// limit the true Euclidean projection).
fn project_stable(theta: [f64; 2]) -> [f64; 2] {
    let planes: [([f64; 2], f64); 3] = [
        ([0.0, -1.0], 1.0 - MARGIN),
        ([1.0, 1.0], 1.0 - MARGIN),
        ([-1.0, 1.0], 1.0 - MARGIN),
    ];
    let inside = |p: [f64; 2]| {
        planes
            .iter()
            .all(|(n, c)| n[0] * p[0] + n[1] * p[1] <= *c + 1e-15)
    };
    if inside(theta) {
        return theta;
    }
    let mut x = theta;
    let mut corr = [[0.0; 2]; 3];
    for _ in 0..200 {
        for (k, (n, c)) in planes.iter().enumerate() {
            let y = [x[0] + corr[k][0], x[1] + corr[k][1]];
            let viol = n[0] * y[0] + n[1] * y[1] - c;
            let nn = n[0] * n[0] + n[1] * n[1];
            let p = if viol > 0.0 {
                [y[0] - viol * n[0] / nn, y[1] - viol * n[1] / nn]
            } else {
                y
            };
            corr[k] = [y[0] - p[0], y[1] - p[1]];
            x = p;
        }
    }
    x
}

pub struct DdeAdapter {
    inst: DdeInstance,
    normal: Normal,
    truth: [f64; 2],
    /// Scale applied to refinement steps, relative to the engine's step gain.
    gain: f64,
    spacing: f64,
    floor: f64,
}

impl DdeAdapter {
    pub fn new(inst: DdeInstance) -> Self {
        let normal = Normal::from_series(&inst.x);
        let truth = normal.solve(normal.r);
        DdeAdapter {
            inst,
            normal,
            truth,
            gain: 3.0,
            spacing: 0.005,
            floor: 1e-4,
        }
    }

    pub fn instance(&self) -> &DdeInstance {
        &self.inst
    }

    /// Oracle answer from the normal equations.
    pub fn truth(&self) -> [f64; 2] {
        self.truth
    }

    /// Sum of squared one-step prediction errors.
    pub fn residual(&self, theta: [f64; 2]) -> f64 {
        let x = &self.inst.x;
        (1..x.len() - 1)
            .map(|t| {
                let e = theta[0] * x[t] + theta[1] * x[t - 1] - x[t + 1];
                e * e
            })
            .sum()
    }

    /// Gradient of the residual with respect to the parameters.
    pub fn gradient(&self, theta: [f64; 2]) -> [f64; 2] {
        self.normal.gradient(theta)
    }

    fn theta_of(s: &CognitiveState) -> [f64; 2] {
        let v = s.values();
        [2.0 * v[0] - 1.0, 2.0 * v[1] - 1.0]
    }

    /// Converts a parameter-space step into a bounded state-space delta.
    fn state_delta(&self, step: [f64; 2]) -> Vec<f64> {
        let mut d = vec![self.gain * step[0] / 2.0, self.gain * step[1] / 2.0];
        let peak = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if peak > 1.0 {
            d.iter_mut().for_each(|v| *v /= peak);
        }
        d
    }

    fn grid_offset(idx: usize) -> (f64, f64) {
        let side = (2 * GRID_HALF + 1) as usize;
        (
            (idx / side) as f64 - GRID_HALF as f64,
            (idx % side) as f64 - GRID_HALF as f64,
        )
    }
}

impl TaskAdapter for DdeAdapter {
    type Output = [f64; 2];

    fn kind(&self) -> TaskKind {
        TaskKind::Dde
    }

    fn dim(&self) -> usize {
        2
    }

    fn encode(&self) -> CognitiveState {
        CognitiveState::clipped(vec![0.5, 0.5])
    }

    fn decode(&self, s: &CognitiveState) -> [f64; 2] {
        Self::theta_of(s)
    }

    fn delta(
        &self,
        _s: &CognitiveState,
        y: &[f64; 2],
        agent: AgentId,
    ) -> Result<Proposal, TaskError> {
        let th = *y;
        Ok(match agent {
            AgentId::R1A => {
                // Curvature-normalized descent: -G^{-1} grad / 2.
                let g = self.normal.gradient(th);
                let step = self.normal.solve([g[0], g[1]]);
                Proposal::delta(self.state_delta([-step[0] / 2.0, -step[1] / 2.0]))
            }
            AgentId::R1C => {
                // One exact coordinate sweep on the residual.
                let g = &self.normal.g;
                let r = &self.normal.r;
                let a1 = (r[0] - g[0][1] * th[1]) / g[0][0];
                let a2 = (r[1] - g[1][0] * a1) / g[1][1];
                Proposal::delta(self.state_delta([a1 - th[0], a2 - th[1]]))
            }
            AgentId::R1D => {
                let p = project_stable(th);
                if p == th {
                    Proposal::none()
                } else {
                    Proposal::delta(self.state_delta([p[0] - th[0], p[1] - th[1]]))
                }
            }
            _ => Proposal::none(),
        })
    }

    /// Gaussian weights over a 21×21 grid centred on the estimate. The kernel
    /// width tracks the residual-implied parameter uncertainty, so the
    /// distribution sharpens as the fit improves.
    fn distribution(&self, s: &CognitiveState) -> OutputDistribution {
        let th = Self::theta_of(s);
        let width = (self.residual(th) / self.normal.trace().max(1e-300)).sqrt() + self.floor;
        let side = (2 * GRID_HALF + 1) as usize;
        let w: Vec<f64> = (0..side * side)
            .map(|i| {
                let (a, b) = Self::grid_offset(i);
                let d2 = (a * a + b * b) * self.spacing * self.spacing;
                (-d2 / (2.0 * width * width)).exp()
            })
            .collect();
        OutputDistribution::from_weights(w)
    }

    fn axioms(&self, y: &[f64; 2]) -> Vec<String> {
        let [a1, a2] = *y;
        let mut out = Vec::new();
        if a2.abs() >= 1.0 {
            out.push("|a2| < 1".to_string());
        }
        if a1 + a2 >= 1.0 {
            out.push("a1 + a2 < 1".to_string());
        }
        if a2 - a1 >= 1.0 {
            out.push("a2 - a1 < 1".to_string());
        }
        if self.residual(*y) > 1e-6 * self.normal.bb.max(1e-12) {
            out.push("trajectory fit".to_string());
        }
        out
    }

    fn axiom_count(&self) -> usize {
        4
    }

    fn is_correct(&self, y: &[f64; 2]) -> bool {
        let e = [y[0] - self.truth[0], y[1] - self.truth[1]];
        (e[0] * e[0] + e[1] * e[1]).sqrt() <= TOLERANCE
    }

    fn canonical_encoding(&self, y: &[f64; 2]) -> Vec<f64> {
        y.iter().map(|v| (v / QUANTUM).round()).collect()
    }

    fn hypothesis_feasible(&self, s: &CognitiveState, idx: usize) -> bool {
        let th = Self::theta_of(s);
        let (a, b) = Self::grid_offset(idx);
        is_stable([th[0] + a * self.spacing, th[1] + b * self.spacing])
    }
}
