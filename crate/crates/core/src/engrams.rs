//! Persistent memory of completed reasoning episodes.
//!
//! Engrams are retrieved by a weighted cosine over the hormonal context at
//! episode start plus a prior favouring fast-converging episodes. The store is
//! capacity-bounded with LRU eviction, where the slowest engram among the
//! least recently used tenth goes first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentId;
use crate::hormones::HormoneVector;
use crate::observe::CognitiveState;
use crate::rrc::{EpisodeTrace, StopReason};

/// States × steps above which stored trajectories keep every second state.
pub const DOWNSAMPLE_ABOVE: usize = 10_000;

#[derive(Debug, Error)]
pub enum EngramError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid engram: {0}")]
    Invalid(String),
    #[error("warm start needs at least one engram")]
    NothingRetrieved,
    #[error("engram state dimensions disagree ({0} vs {1})")]
    Dimension(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub alpha: f64,
    pub k_ret: usize,
    pub theta_ret: f64,
    pub m_max: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            alpha: 0.70,
            k_ret: 3,
            theta_ret: 0.3,
            m_max: 1000,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), EngramError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EngramError::Invalid(format!(
                "alpha {} outside (0,1)",
                self.alpha
            )));
        }
        if self.k_ret < 1 || self.m_max < self.k_ret {
            return Err(EngramError::Invalid("need 1 <= k_ret <= m_max".into()));
        }
        if !self.theta_ret.is_finite() {
            return Err(EngramError::Invalid("theta_ret must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Engram {
    pub hormonal_context: [f64; 7],
    pub activation_profile: [bool; 12],
    pub s0: Vec<f64>,
    /// States for cycles `1..=t_star`, every `stride`-th one with the terminal state always kept.
    pub trajectory: Vec<Vec<f64>>,
    pub stride: usize,
    pub y_final: Vec<f64>,
    pub t_star: usize,
    pub beta: f64,
    pub last_access: u64,
    pub seq: u64,
}

fn kept_len(t_star: usize, stride: usize) -> usize {
    (0..t_star)
        .filter(|i| i % stride == 0 || *i + 1 == t_star)
        .count()
}

fn in_unit(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x))
}

impl Engram {
    /// Builds an engram from a full trajectory, downsampling long ones.
    pub fn new(
        hormonal_context: [f64; 7],
        activation_profile: [bool; 12],
        s0: Vec<f64>,
        trajectory: Vec<Vec<f64>>,
        y_final: Vec<f64>,
        beta: f64,
    ) -> Result<Self, EngramError> {
        let t_star = trajectory.len();
        let stride = if s0.len() * t_star > DOWNSAMPLE_ABOVE {
            2
        } else {
            1
        };
        let trajectory = trajectory
            .into_iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i + 1 == t_star)
            .map(|(_, s)| s)
            .collect();
        let e = Engram {
            hormonal_context,
            activation_profile,
            s0,
            trajectory,
            stride,
            y_final,
            t_star,
            beta,
            last_access: 0,
            seq: 0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), EngramError> {
        let bad = |m: &str| Err(EngramError::Invalid(m.to_string()));
        if self.t_star < 1 {
            return bad("t_star must be >= 1");
        }
        if !(self.stride == 1 || self.stride == 2) {
            return bad("stride must be 1 or 2");
        }
        if self.trajectory.len() != kept_len(self.t_star, self.stride) {
            return bad("trajectory length does not match t_star");
        }
        if !in_unit(&self.hormonal_context) {
            return bad("hormonal context outside [0,1]");
        }
        if !(self.beta.is_finite() && (0.0..=1.0).contains(&self.beta)) {
            return bad("beta outside [0,1]");
        }
        if self.s0.is_empty() || !in_unit(&self.s0) {
            return bad("s0 empty or outside [0,1]");
        }
        for s in &self.trajectory {
            if s.len() != self.s0.len() || !in_unit(s) {
                return bad("trajectory state has wrong dimension or leaves [0,1]");
            }
        }
        if self.y_final.iter().any(|v| !v.is_finite()) {
            return bad("y_final has non-finite entries");
        }
        Ok(())
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.trajectory.last().map_or(&self.s0, |s| s)
    }
}

/// Write criterion: the output moved by at least 1 in L1 from the previous
/// episode's output and is itself non-negligible.
pub fn should_write(y_curr: &[f64], y_prev: Option<&[f64]>, eps_sig: f64) -> bool {
    let norm = y_curr.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < eps_sig {
        return false;
    }
    match y_prev {
        None => true,
        Some(prev) if prev.len() != y_curr.len() => true,
        Some(prev) => {
            y_curr
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                >= 1.0
        }
    }
}

/// Weighted cosine (weights `1 + h_query`) blended with a `1/t*` speed prior.
pub fn similarity(h_query: &[f64; 7], engram: &Engram, alpha: f64) -> f64 {
    let ctx = &engram.hormonal_context;
    let (mut dot, mut nq, mut ne) = (0.0, 0.0, 0.0);
    for k in 0..7 {
        let w = 1.0 + h_query[k];
        dot += w * h_query[k] * ctx[k];
        nq += w * h_query[k] * h_query[k];
        ne += w * ctx[k] * ctx[k];
    }
    let den = nq.sqrt() * ne.sqrt();
    let cos = if den < 1e-12 {
        0.0
    } else {
        (dot / den).clamp(-1.0, 1.0)
    };
    alpha * cos + (1.0 - alpha) / engram.t_star.max(1) as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EngramStore {
    engrams: Vec<Engram>,
    clock: u64,
    next_seq: u64,
    /// Canonical output of the most recent episode, for the write criterion.
    #[serde(default)]
    previous_output: Option<Vec<f64>>,
}

impl EngramStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.engrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.engrams.is_empty()
    }

    pub fn engrams(&self) -> &[Engram] {
        &self.engrams
    }

    pub fn previous_output(&self) -> Option<&[f64]> {
        self.previous_output.as_deref()
    }

    pub fn set_previous_output(&mut self, y: Vec<f64>) {
        self.previous_output = Some(y);
    }

    /// Top engrams at or above the retrieval floor, best first. Ties go to the
    /// smaller `t_star`, then to the earlier insertion. Marks returned engrams
    /// as accessed.
    pub fn retrieve(&mut self, h_query: &[f64; 7], params: &RetrievalParams) -> Vec<Engram> {
        let mut scored: Vec<(usize, f64)> = self
            .engrams
            .iter()
            .enumerate()
            .map(|(i, e)| (i, similarity(h_query, e, params.alpha)))
            .filter(|(_, s)| *s >= params.theta_ret)
            .collect();
        scored.sort_by(|a, b| {
            let (ea, eb) = (&self.engrams[a.0], &self.engrams[b.0]);
            if (a.1 - b.1).abs() > 1e-12 {
                b.1.total_cmp(&a.1)
            } else {
                ea.t_star.cmp(&eb.t_star).then(ea.seq.cmp(&eb.seq))
            }
        });
        scored.truncate(params.k_ret);
        if scored.is_empty() {
            return Vec::new();
        }
        self.clock += 1;
        scored
            .into_iter()
            .map(|(i, _)| {
                self.engrams[i].last_access = self.clock;
                self.engrams[i].clone()
            })
            .collect()
    }

    /// Inserts an engram, evicting first when the store is full.
    pub fn insert(&mut self, mut engram: Engram, m_max: usize) {
        while !self.engrams.is_empty() && self.engrams.len() >= m_max.max(1) {
            let victim = self.eviction_victim();
            self.engrams.remove(victim);
        }
        engram.seq = self.next_seq;
        engram.last_access = 0;
        self.next_seq += 1;
        self.engrams.push(engram);
    }

    /// Largest `t_star` among the least recently accessed tenth (ties on the
    /// access stamp are all included); older access, then older insertion, breaks ties.
    fn eviction_victim(&self) -> usize {
        let mut stamps: Vec<u64> = self.engrams.iter().map(|e| e.last_access).collect();
        stamps.sort_unstable();
        let decile = self.engrams.len().div_ceil(10).max(1);
        let cutoff = stamps[decile - 1];
        self.engrams
            .iter()
            .enumerate()
            .filter(|(_, e)| e.last_access <= cutoff)
            .max_by(|(_, a), (_, b)| {
                a.t_star
                    .cmp(&b.t_star)
                    .then(b.last_access.cmp(&a.last_access))
                    .then(b.seq.cmp(&a.seq))
            })
            .map(|(i, _)| i)
            .expect("store is non-empty")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.engrams {
            out.push_str(&serde_json::to_string(e).expect("engram serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses one engram per line. Blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, EngramError> {
        let mut store = EngramStore::new();
        for (i, line) in text.lines().enumerate() {
            store.push_line(line, i + 1)?;
        }
        Ok(store)
    }

    fn push_line(&mut self, line: &str, lineno: usize) -> Result<(), EngramError> {
        if line.trim().is_empty() {
            return Ok(());
        }
        let e: Engram = serde_json::from_str(line).map_err(|err| EngramError::Line {
            line: lineno,
            message: err.to_string(),
        })?;
        e.validate().map_err(|err| EngramError::Line {
            line: lineno,
            message: err.to_string(),
        })?;
        if let Some(first) = self.engrams.first() {
            if first.s0.len() != e.s0.len() {
                return Err(EngramError::Line {
                    line: lineno,
                    message: format!(
                        "state dimension {} differs from earlier records ({})",
                        e.s0.len(),
                        first.s0.len()
                    ),
                });
            }
        }
        self.clock = self.clock.max(e.last_access);
        self.next_seq = self.next_seq.max(e.seq + 1);
        self.engrams.push(e);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EngramError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EngramError> {
        let mut store = EngramStore::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            store.push_line(&line?, i + 1)?;
        }
        Ok(store)
    }
}

/// Componentwise mean of the retrieved terminal states, clipped to `[0,1]`.
pub fn warm_start(retrieved: &[Engram]) -> Result<CognitiveState, EngramError> {
    let first = retrieved.first().ok_or(EngramError::NothingRetrieved)?;
    let d = first.terminal_state().len();
    let mut acc = vec![0.0; d];
    for e in retrieved {
        let s = e.terminal_state();
        if s.len() != d {
            return Err(EngramError::Dimension(d, s.len()));
        }
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let k = retrieved.len() as f64;
    Ok(CognitiveState::clipped(
        acc.into_iter().map(|a| a / k).collect(),
    ))
}

/// Iterations saved by starting at error `eps_warm` instead of `eps_cold`
/// under contraction rate `rho`.
pub fn predicted_saving(eps_cold: f64, eps_warm: f64, rho: f64) -> u64 {
    if !(eps_cold > 0.0 && eps_warm > 0.0 && rho > 0.0 && rho < 1.0) || eps_warm >= eps_cold {
        return 0;
    }
    let steps = (eps_cold / eps_warm).ln() / (1.0 / rho).ln();
    (steps - 1e-9).ceil().max(0.0) as u64
}

/// Explainability record copied verbatim from a completed trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub hormonal_trajectory: Vec<HormoneVector>,
    pub agent_sequence: Vec<Vec<AgentId>>,
    pub state_trajectory: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub convergence_profile: Vec<f64>,
    pub entropy_profile: Vec<f64>,
    pub lyapunov_profile: Vec<f64>,
    pub energy: Vec<f64>,
    pub t_star: usize,
    pub stop_reason: StopReason,
}

pub fn decision_record(trace: &EpisodeTrace) -> DecisionRecord {
    let r = &trace.records;
    DecisionRecord {
        hormonal_trajectory: r.iter().map(|c| c.h).collect(),
        agent_sequence: r.iter().map(|c| c.active.clone()).collect(),
        state_trajectory: r.iter().map(|c| c.state.clone()).collect(),
        outputs: r.iter().map(|c| c.output.clone()).collect(),
        convergence_profile: r.iter().map(|c| c.residual).collect(),
        entropy_profile: r.iter().map(|c| c.entropy).collect(),
        lyapunov_profile: r.iter().map(|c| c.lyapunov).collect(),
        energy: r.iter().map(|c| c.energy).collect(),
        t_star: trace.summary.t_star,
        stop_reason: trace.summary.stop_reason,
    }
}
