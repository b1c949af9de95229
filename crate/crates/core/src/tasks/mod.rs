//! Benchmark task adapters.
//!
//! Each adapter owns one instance and supplies the state encoding, per-agent
//! refinement deltas, the output distribution, an axiom base and an
//! independent correctness oracle.

pub mod dde;
pub mod maze;
pub mod sudoku;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentId;
use crate::observe::{CognitiveState, OutputDistribution};

pub use dde::{DdeAdapter, DdeInstance};
pub use maze::{MazeAdapter, MazeInstance};
pub use sudoku::{SudokuAdapter, SudokuInstance};

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("malformed instance: {0}")]
    Parse(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("delta has dimension {got}, state has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("adapter failure: {0}")]
    Adapter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Sudoku,
    Maze,
    Dde,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Sudoku, TaskKind::Maze, TaskKind::Dde];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Sudoku => "sudoku",
            TaskKind::Maze => "maze",
            TaskKind::Dde => "dde",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sudoku" => Ok(TaskKind::Sudoku),
            "maze" => Ok(TaskKind::Maze),
            "dde" => Ok(TaskKind::Dde),
            other => Err(TaskError::Parse(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    #[default]
    Default,
    Extreme,
}

/// One agent's proposal for the current cycle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Proposal {
    /// `None` when the agent has nothing to contribute to the state this cycle.
    pub delta: Option<Vec<f64>>,
    pub violations: Vec<String>,
}

impl Proposal {
    pub fn none() -> Self {
        Proposal::default()
    }

    pub fn delta(delta: Vec<f64>) -> Self {
        Proposal {
            delta: Some(delta),
            violations: Vec::new(),
        }
    }
}

pub trait TaskAdapter: Send + Sync {
    type Output: Clone + fmt::Debug + Send + Sync;

    fn kind(&self) -> TaskKind;

    /// State dimension.
    fn dim(&self) -> usize;

    /// Cold-start state for the instance.
    fn encode(&self) -> CognitiveState;

    fn decode(&self, s: &CognitiveState) -> Self::Output;

    /// Re-imposes the instance's fixed components on a state recalled from
    /// other episodes.
    fn reconcile(&self, s: CognitiveState) -> CognitiveState {
        s
    }

    /// Delta proposed by an emission agent. Entries are bounded by 1 in magnitude.
    fn delta(
        &self,
        s: &CognitiveState,
        y: &Self::Output,
        agent: AgentId,
    ) -> Result<Proposal, TaskError>;

    fn distribution(&self, s: &CognitiveState) -> OutputDistribution;

    /// Names of violated axioms.
    fn axioms(&self, y: &Self::Output) -> Vec<String>;

    fn axiom_count(&self) -> usize;

    /// Ground truth judged by the adapter's independent oracle.
    fn is_correct(&self, y: &Self::Output) -> bool;

    /// Discrete numeric encoding used for Hamming distance and engram writes.
    fn canonical_encoding(&self, y: &Self::Output) -> Vec<f64>;

    /// Whether a candidate output index of the current distribution survives
    /// constraint pruning.
    fn hypothesis_feasible(&self, _s: &CognitiveState, _idx: usize) -> bool {
        true
    }
}

/// Clamps every component of a delta into `[-1, 1]`.
pub(crate) fn bounded(mut d: Vec<f64>) -> Vec<f64> {
    for v in &mut d {
        *v = v.clamp(-1.0, 1.0);
    }
    d
}
