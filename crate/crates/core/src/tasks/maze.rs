//! Grid maze shortest path.
//!
//! The state has two blocks over the grid cells: a potential block (a soft
//! distance-to-goal estimate, 0 at the goal) and a path-membership block.
//! Decoding walks from the start by strict descent on the potential.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bounded, Difficulty, Proposal, TaskAdapter, TaskError, TaskKind};
use crate::agents::AgentId;
use crate::observe::{CognitiveState, OutputDistribution};

pub type Cell = (usize, usize);

/// Neighbour order used everywhere: up, right, down, left.
const DIRS: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MazeInstance {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
    start: Cell,
    goal: Cell,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MazeFile {
    /// One string per row: `#` for an obstacle, `.` for a free cell.
    grid: Vec<String>,
    start: [usize; 2],
    goal: [usize; 2],
}

impl MazeInstance {
    pub fn new(
        rows: usize,
        cols: usize,
        blocked: Vec<bool>,
        start: Cell,
        goal: Cell,
    ) -> Result<Self, TaskError> {
        if rows == 0 || cols == 0 || blocked.len() != rows * cols {
            return Err(TaskError::Invalid("grid dimensions do not match".into()));
        }
        for (name, c) in [("start", start), ("goal", goal)] {
            if c.0 >= rows || c.1 >= cols {
                return Err(TaskError::Invalid(format!("{name} {c:?} outside the grid")));
            }
            if blocked[c.0 * cols + c.1] {
                return Err(TaskError::Invalid(format!("{name} {c:?} is an obstacle")));
            }
        }
        if start == goal {
            return Err(TaskError::Invalid("start equals goal".into()));
        }
        let inst = MazeInstance {
            rows,
            cols,
            blocked,
            start,
            goal,
        };
        if inst.bfs(start)[inst.idx(goal)].is_none() {
            return Err(TaskError::Invalid("goal unreachable from start".into()));
        }
        Ok(inst)
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let f: MazeFile =
            serde_json::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
        let rows = f.grid.len();
        let cols = f.grid.first().map_or(0, |r| r.chars().count());
        let mut blocked = Vec::with_capacity(rows * cols);
        for (r, line) in f.grid.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(TaskError::Parse(format!(
                    "row {} has a different width",
                    r + 1
                )));
            }
            for ch in line.chars() {
                blocked.push(match ch {
                    '#' => true,
                    '.' => false,
                    other => {
                        return Err(TaskError::Parse(format!(
                            "invalid character {other:?} in row {}",
                            r + 1
                        )))
                    }
                });
            }
        }
        Self::new(
            rows,
            cols,
            blocked,
            (f.start[0], f.start[1]),
            (f.goal[0], f.goal[1]),
        )
    }

    pub fn to_json(&self) -> String {
        let grid = (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|c| {
                        if self.blocked[r * self.cols + c] {
                            '#'
                        } else {
                            '.'
                        }
                    })
                    .collect()
            })
            .collect();
        serde_json::to_string(&MazeFile {
            grid,
            start: [self.start.0, self.start.1],
            goal: [self.goal.0, self.goal.1],
        })
        .expect("maze serializes")
    }

    /// Deterministic 25×25 maze. Obstacles are drawn independently at the
    /// target density (0.40, or 0.45 for the extreme tier) and the draw is
    /// repeated until the start reaches the goal.
    pub fn generate(seed: u64, difficulty: Difficulty) -> Self {
        let density = match difficulty {
            Difficulty::Default => 0.40,
            Difficulty::Extreme => 0.45,
        };
        Self::generate_sized(25, 25, density, seed)
    }

    pub fn generate_sized(rows: usize, cols: usize, density: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let min_sep = (rows + cols) / 2;
        loop {
            let blocked: Vec<bool> = (0..rows * cols)
                .map(|_| rng.random::<f64>() < density)
                .collect();
            let free: Vec<usize> = (0..rows * cols).filter(|&i| !blocked[i]).collect();
            if free.len() < 2 {
                continue;
            }
            let s = free[rng.random_range(0..free.len())];
            let g = free[rng.random_range(0..free.len())];
            let (start, goal) = ((s / cols, s % cols), (g / cols, g % cols));
            if start.0.abs_diff(goal.0) + start.1.abs_diff(goal.1) < min_sep {
                continue;
            }
            if let Ok(m) = Self::new(rows, cols, blocked, start, goal) {
                return m;
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[self.idx(c)]
    }

    fn idx(&self, c: Cell) -> usize {
        c.0 * self.cols + c.1
    }

    fn neighbor(&self, c: Cell, dir: usize) -> Option<Cell> {
        let (dr, dc) = DIRS[dir];
        let r = c.0.checked_add_signed(dr)?;
        let col = c.1.checked_add_signed(dc)?;
        (r < self.rows && col < self.cols).then_some((r, col))
    }

    fn open_neighbors(&self, c: Cell) -> impl Iterator<Item = (usize, Cell)> + '_ {
        (0..4).filter_map(move |d| {
            self.neighbor(c, d)
                .filter(|&n| !self.is_blocked(n))
                .map(|n| (d, n))
        })
    }

    /// Breadth-first distances from `from` over free cells.
    pub fn bfs(&self, from: Cell) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.rows * self.cols];
        let mut q = VecDeque::new();
        dist[self.idx(from)] = Some(0);
        q.push_back(from);
        while let Some(c) = q.pop_front() {
            let d = dist[self.idx(c)].expect("queued cells are reached");
            for (_, n) in self.open_neighbors(c) {
                let i = self.idx(n);
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    q.push_back(n);
                }
            }
        }
        dist
    }

    /// Shortest start-to-goal path length in moves.
    pub fn shortest_length(&self) -> u32 {
        self.bfs(self.start)[self.idx(self.goal)].expect("instances are solvable")
    }
}

pub struct MazeAdapter {
    inst: MazeInstance,
    target: Vec<f64>,
    on_shortest: Vec<bool>,
    scale: f64,
    temperature: f64,
    shortest: u32,
}

impl MazeAdapter {
    pub fn new(inst: MazeInstance) -> Self {
        let from_goal = inst.bfs(inst.goal);
        let from_start = inst.bfs(inst.start);
        let shortest = from_start[inst.idx(inst.goal)].expect("instances are solvable");
        let max_d = from_goal.iter().flatten().copied().max().unwrap_or(0) as f64;
        let scale = max_d + 1.0;
        let target = from_goal
            .iter()
            .map(|d| d.map_or(1.0, |d| d as f64 / scale))
            .collect();
        let on_shortest = from_goal
            .iter()
            .zip(&from_start)
            .map(|(g, s)| matches!((g, s), (Some(g), Some(s)) if g + s == shortest))
            .collect();
        MazeAdapter {
            inst,
            target,
            on_shortest,
            scale,
            temperature: 0.5,
            shortest,
        }
    }

    pub fn instance(&self) -> &MazeInstance {
        &self.inst
    }

    fn cells(&self) -> usize {
        self.inst.rows * self.inst.cols
    }

    fn potential<'a>(&self, s: &'a [f64]) -> &'a [f64] {
        &s[..self.cells()]
    }

    fn membership<'a>(&self, s: &'a [f64]) -> &'a [f64] {
        &s[self.cells()..]
    }

    /// Last cell of the committed prefix of the decoded path.
    fn frontier(&self, s: &[f64], path: &[Cell]) -> (Cell, bool) {
        let m = self.membership(s);
        let mut f = path[0];
        for &c in path {
            if m[self.inst.idx(c)] < 0.5 {
                return (f, false);
            }
            f = c;
        }
        (f, f == self.inst.goal)
    }
}

impl TaskAdapter for MazeAdapter {
    type Output = Vec<Cell>;

    fn kind(&self) -> TaskKind {
        TaskKind::Maze
    }

    fn dim(&self) -> usize {
        2 * self.cells()
    }

    fn encode(&self) -> CognitiveState {
        let n = self.cells();
        let mut s = vec![1.0; n];
        s[self.inst.idx(self.inst.goal)] = 0.0;
        s.extend(std::iter::repeat_n(0.0, n));
        s[n + self.inst.idx(self.inst.start)] = 1.0;
        s[n + self.inst.idx(self.inst.goal)] = 1.0;
        CognitiveState::clipped(s)
    }

    /// Greedy strict descent on the potential from the start. Stops at the
    /// goal or where no unvisited free neighbour is lower.
    fn decode(&self, s: &CognitiveState) -> Vec<Cell> {
        let v = self.potential(s.values());
        let mut visited = vec![false; self.cells()];
        let mut cur = self.inst.start;
        visited[self.inst.idx(cur)] = true;
        let mut path = vec![cur];
        while cur != self.inst.goal {
            let mut best: Option<(Cell, f64)> = None;
            for (_, n) in self.inst.open_neighbors(cur) {
                let i = self.inst.idx(n);
                if !visited[i] && best.is_none_or(|(_, bv)| v[i] < bv) {
                    best = Some((n, v[i]));
                }
            }
            match best {
                Some((n, nv)) if nv < v[self.inst.idx(cur)] - 1e-12 => {
                    visited[self.inst.idx(n)] = true;
                    path.push(n);
                    cur = n;
                }
                _ => break,
            }
        }
        path
    }

    fn delta(
        &self,
        s: &CognitiveState,
        y: &Vec<Cell>,
        agent: AgentId,
    ) -> Result<Proposal, TaskError> {
        let n = self.cells();
        let vals = s.values();
        let m = self.membership(vals);
        Ok(match agent {
            AgentId::R1A => {
                let mut delta: Vec<f64> = self
                    .target
                    .iter()
                    .zip(self.potential(vals))
                    .map(|(t, v)| t - v)
                    .collect();
                let mut on_path = vec![0.0; n];
                for &c in y {
                    on_path[self.inst.idx(c)] = 1.0;
                }
                delta.extend(on_path.iter().zip(m).map(|(t, x)| t - x));
                Proposal::delta(bounded(delta))
            }
            AgentId::R1C => {
                let next = y.iter().find(|&&c| m[self.inst.idx(c)] < 0.5);
                Proposal {
                    delta: next.map(|&c| {
                        let mut d = vec![0.0; 2 * n];
                        let i = self.inst.idx(c);
                        d[n + i] = 1.0 - m[i];
                        d
                    }),
                    violations: Vec::new(),
                }
            }
            AgentId::R1D => {
                let mut d = vec![0.0; 2 * n];
                let mut any = false;
                for i in 0..n {
                    if !self.on_shortest[i] && m[i] > 0.0 {
                        d[n + i] = -m[i];
                        any = true;
                    }
                }
                Proposal {
                    delta: any.then_some(d),
                    violations: Vec::new(),
                }
            }
            _ => Proposal::none(),
        })
    }

    /// Softmax over the next-step candidates at the path frontier, or a point
    /// mass once the committed path reaches the goal.
    fn distribution(&self, s: &CognitiveState) -> OutputDistribution {
        let path = self.decode(s);
        let (f, done) = self.frontier(s.values(), &path);
        if done {
            return OutputDistribution::point_mass(4, 0);
        }
        let v = self.potential(s.values());
        let here = v[self.inst.idx(f)];
        let mut w = [0.0; 4];
        for (d, n) in self.inst.open_neighbors(f) {
            let drop = (v[self.inst.idx(n)] - here) * self.scale;
            w[d] = (-drop / self.temperature).exp();
        }
        OutputDistribution::from_weights(w.to_vec())
    }

    fn axioms(&self, y: &Vec<Cell>) -> Vec<String> {
        let mut out = Vec::new();
        if y.first() != Some(&self.inst.start) {
            out.push("path starts at start".to_string());
        }
        if y.last() != Some(&self.inst.goal) {
            out.push("path ends at goal".to_string());
        }
        if y.windows(2)
            .any(|w| w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1) != 1)
        {
            out.push("consecutive cells adjacent".to_string());
        }
        if y.iter()
            .any(|&c| c.0 >= self.inst.rows || c.1 >= self.inst.cols || self.inst.is_blocked(c))
        {
            out.push("path avoids obstacles".to_string());
        }
        let mut seen = std::collections::HashSet::new();
        if !y.iter().all(|c| seen.insert(*c)) {
            out.push("no cell revisited".to_string());
        }
        out
    }

    fn axiom_count(&self) -> usize {
        5
    }

    fn is_correct(&self, y: &Vec<Cell>) -> bool {
        self.axioms(y).is_empty() && y.len() as u32 - 1 == self.shortest
    }

    fn canonical_encoding(&self, y: &Vec<Cell>) -> Vec<f64> {
        let mut e = vec![0.0; self.cells()];
        for &c in y {
            if c.0 < self.inst.rows && c.1 < self.inst.cols {
                e[self.inst.idx(c)] = 1.0;
            }
        }
        e
    }

    fn hypothesis_feasible(&self, s: &CognitiveState, idx: usize) -> bool {
        let path = self.decode(s);
        let (f, done) = self.frontier(s.values(), &path);
        done || (idx < 4
            && self
                .inst
                .neighbor(f, idx)
                .is_some_and(|n| !self.inst.is_blocked(n)))
    }
}
