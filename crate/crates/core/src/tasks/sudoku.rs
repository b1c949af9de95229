//! Sudoku as a soft candidate-probability tensor.
//!
//! The state holds one probability per (cell, digit) pair. Givens are one-hot
//! and never move. Box sizes 2 (4×4 grids) and 3 (9×9 grids) are supported.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bounded, Difficulty, Proposal, TaskAdapter, TaskError, TaskKind};
use crate::agents::AgentId;
use crate::observe::{CognitiveState, OutputDistribution};

/// Committed cells are those whose leading candidate carries at least this mass.
const COMMITTED: f64 = 0.999;

const MINIMAL_GRIDS: &str = include_str!("../../data/sudoku_17_clue.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SudokuInstance {
    box_size: usize,
    cells: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GridRepr {
    Text(String),
    Cells(Vec<u8>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(default = "default_box")]
    box_size: usize,
    grid: GridRepr,
}

fn default_box() -> usize {
    3
}

impl SudokuInstance {
    pub fn new(box_size: usize, cells: Vec<u8>) -> Result<Self, TaskError> {
        if !(2..=3).contains(&box_size) {
            return Err(TaskError::Invalid(format!(
                "box size {box_size} unsupported (expected 2 or 3)"
            )));
        }
        let n = box_size * box_size;
        if cells.len() != n * n {
            return Err(TaskError::Invalid(format!(
                "expected {} cells, got {}",
                n * n,
                cells.len()
            )));
        }
        if let Some(&d) = cells.iter().find(|&&d| d as usize > n) {
            return Err(TaskError::Invalid(format!("digit {d} exceeds {n}")));
        }
        let inst = SudokuInstance { box_size, cells };
        let geom = Geometry::new(box_size);
        if let Some(unit) = geom.violated_units(&inst.cells).into_iter().next() {
            return Err(TaskError::Invalid(format!("givens conflict in {unit}")));
        }
        Ok(inst)
    }

    /// Parses the common one-line format: digits with `0` or `.` for blanks.
    /// 81 characters give a 9×9 grid, 16 a 4×4 grid.
    pub fn from_digit_string(s: &str) -> Result<Self, TaskError> {
        let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        let box_size = match chars.len() {
            81 => 3,
            16 => 2,
            len => {
                return Err(TaskError::Parse(format!(
                    "expected 81 (or 16) grid characters, got {len}"
                )))
            }
        };
        let cells = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| match c {
                '.' => Ok(0),
                '0'..='9' => Ok(c as u8 - b'0'),
                other => Err(TaskError::Parse(format!(
                    "invalid character {other:?} at position {}",
                    i + 1
                ))),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        Self::new(box_size, cells)
    }

    pub fn to_digit_string(&self) -> String {
        self.cells.iter().map(|d| char::from(b'0' + d)).collect()
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let f: InstanceFile =
            serde_json::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
        match f.grid {
            GridRepr::Text(s) => {
                let inst = Self::from_digit_string(&s)?;
                if inst.box_size != f.box_size {
                    return Err(TaskError::Invalid(
                        "box_size does not match grid length".into(),
                    ));
                }
                Ok(inst)
            }
            GridRepr::Cells(c) => Self::new(f.box_size, c),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceFile {
            box_size: self.box_size,
            grid: GridRepr::Text(self.to_digit_string()),
        })
        .expect("instance serializes")
    }

    pub fn box_size(&self) -> usize {
        self.box_size
    }

    pub fn size(&self) -> usize {
        self.box_size * self.box_size
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn clue_count(&self) -> usize {
        self.cells.iter().filter(|&&d| d != 0).count()
    }

    /// Deterministic 9×9 puzzle with a unique solution.
    ///
    /// The default tier removes givens down to a random target in 28–36. The
    /// extreme tier draws from the bundled minimal (17-clue) grids.
    pub fn generate(seed: u64, difficulty: Difficulty) -> Self {
        match difficulty {
            Difficulty::Default => Self::generate_sized(3, seed, (28, 36)),
            Difficulty::Extreme => {
                let grids = Self::minimal_grids();
                grids[(seed % grids.len() as u64) as usize].clone()
            }
        }
    }

    /// Bundled 17-clue grids, each with a unique solution.
    pub fn minimal_grids() -> Vec<Self> {
        MINIMAL_GRIDS
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Self::from_digit_string(l.trim()).expect("bundled grid parses"))
            .collect()
    }

    pub fn generate_sized(box_size: usize, seed: u64, clue_range: (usize, usize)) -> Self {
        let geom = Geometry::new(box_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = vec![0u8; geom.cells()];
        let filled = fill_random(&geom, &mut cells, 0, &mut rng);
        debug_assert!(filled);
        let target = rng.random_range(clue_range.0..=clue_range.1);
        let mut order: Vec<usize> = (0..geom.cells()).collect();
        order.shuffle(&mut rng);
        let mut clues = geom.cells();
        for c in order {
            if clues <= target {
                break;
            }
            let keep = cells[c];
            cells[c] = 0;
            if count_solutions(&geom, &cells, 2).0 == 1 {
                clues -= 1;
            } else {
                cells[c] = keep;
            }
        }
        SudokuInstance { box_size, cells }
    }
}

/// Static grid structure: units (rows, columns, boxes) and peers.
#[derive(Clone, Debug)]
pub struct Geometry {
    n: usize,
    units: Vec<Vec<usize>>,
    cell_units: Vec<[usize; 3]>,
    peers: Vec<Vec<usize>>,
}

impl Geometry {
    pub fn new(b: usize) -> Self {
        let n = b * b;
        let mut units = Vec::with_capacity(3 * n);
        for r in 0..n {
            units.push((0..n).map(|c| r * n + c).collect());
        }
        for c in 0..n {
            units.push((0..n).map(|r| r * n + c).collect());
        }
        for br in 0..b {
            for bc in 0..b {
                let mut u = Vec::with_capacity(n);
                for r in 0..b {
                    for c in 0..b {
                        u.push((br * b + r) * n + bc * b + c);
                    }
                }
                units.push(u);
            }
        }
        let mut cell_units = vec![[0usize; 3]; n * n];
        for (cell, cu) in cell_units.iter_mut().enumerate() {
            let (r, c) = (cell / n, cell % n);
            *cu = [r, n + c, 2 * n + (r / b) * b + c / b];
        }
        let peers = (0..n * n)
            .map(|cell| {
                let mut p: Vec<usize> = cell_units[cell]
                    .iter()
                    .flat_map(|&u| units[u].iter().copied())
                    .filter(|&q| q != cell)
                    .collect();
                p.sort_unstable();
                p.dedup();
                p
            })
            .collect();
        Geometry {
            n,
            units,
            cell_units,
            peers,
        }
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    fn unit_name(&self, u: usize) -> String {
        let n = self.n;
        match u / n {
            0 => format!("row {}", u + 1),
            1 => format!("column {}", u - n + 1),
            _ => format!("box {}", u - 2 * n + 1),
        }
    }

    /// Units containing a repeated non-zero digit.
    pub fn violated_units(&self, grid: &[u8]) -> Vec<String> {
        let mut out = Vec::new();
        for (ui, unit) in self.units.iter().enumerate() {
            let mut seen = 0u32;
            let mut dup = false;
            for &c in unit {
                let d = grid[c];
                if d == 0 {
                    continue;
                }
                let bit = 1u32 << d;
                dup |= seen & bit != 0;
                seen |= bit;
            }
            if dup {
                out.push(self.unit_name(ui));
            }
        }
        out
    }
}

fn candidates_mask(geom: &Geometry, grid: &[u8], cell: usize) -> u32 {
    let full = ((1u32 << geom.n) - 1) << 1;
    let mut used = 0u32;
    for &p in &geom.peers[cell] {
        used |= 1u32 << grid[p];
    }
    full & !used
}

fn fill_random<R: Rng>(geom: &Geometry, cells: &mut [u8], pos: usize, rng: &mut R) -> bool {
    if pos == cells.len() {
        return true;
    }
    let mask = candidates_mask(geom, cells, pos);
    let mut digits: Vec<u8> = (1..=geom.n as u8).filter(|d| mask >> d & 1 == 1).collect();
    digits.shuffle(rng);
    for d in digits {
        cells[pos] = d;
        if fill_random(geom, cells, pos + 1, rng) {
            return true;
        }
    }
    cells[pos] = 0;
    false
}

/// Counts solutions up to `limit` by backtracking on the most constrained
/// blank cell, returning the first solution found.
pub fn count_solutions(geom: &Geometry, grid: &[u8], limit: usize) -> (usize, Option<Vec<u8>>) {
    let mut work = grid.to_vec();
    if !geom.violated_units(&work).is_empty() {
        return (0, None);
    }
    let mut first = None;
    let mut count = 0;
    search(geom, &mut work, limit, &mut count, &mut first);
    (count, first)
}

fn search(
    geom: &Geometry,
    grid: &mut [u8],
    limit: usize,
    count: &mut usize,
    first: &mut Option<Vec<u8>>,
) {
    let mut best: Option<(usize, u32)> = None;
    for cell in 0..grid.len() {
        if grid[cell] != 0 {
            continue;
        }
        let m = candidates_mask(geom, grid, cell);
        if m == 0 {
            return;
        }
        if best.is_none_or(|(_, bm)| m.count_ones() < bm.count_ones()) {
            best = Some((cell, m));
        }
    }
    let Some((cell, mask)) = best else {
        *count += 1;
        if first.is_none() {
            *first = Some(grid.to_vec());
        }
        return;
    };
    for d in 1..=geom.n as u8 {
        if mask >> d & 1 == 0 {
            continue;
        }
        grid[cell] = d;
        search(geom, grid, limit, count, first);
        if *count >= limit {
            grid[cell] = 0;
            return;
        }
    }
    grid[cell] = 0;
}

/// Candidate domains after propagating naked and hidden singles from the
/// givens to a fixpoint. Every solution of the puzzle stays inside these
/// domains. Bit `d` set means digit `d` is possible. An empty domain marks a
/// contradiction.
pub fn logical_domains(geom: &Geometry, grid: &[u8]) -> Vec<u32> {
    let n = geom.n;
    let full = ((1u32 << n) - 1) << 1;
    let mut dom: Vec<u32> = grid
        .iter()
        .map(|&d| if d == 0 { full } else { 1u32 << d })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for cell in 0..dom.len() {
            if dom[cell].count_ones() != 1 {
                continue;
            }
            let bit = dom[cell];
            for &p in &geom.peers[cell] {
                if dom[p] & bit != 0 && dom[p] != bit {
                    dom[p] &= !bit;
                    changed = true;
                }
            }
        }
        for unit in &geom.units {
            for d in 1..=n {
                let bit = 1u32 << d;
                let mut holder = None;
                let mut count = 0;
                for &c in unit {
                    if dom[c] & bit != 0 {
                        count += 1;
                        holder = Some(c);
                    }
                }
                if count == 1 {
                    let c = holder.expect("counted");
                    if dom[c] != bit {
                        dom[c] = bit;
                        changed = true;
                    }
                }
            }
        }
        if dom.contains(&0) {
            break;
        }
    }
    dom
}

/// Whether `grid` is a complete valid solution that keeps every given.
pub fn is_valid_solution(inst: &SudokuInstance, grid: &[u8]) -> bool {
    let geom = Geometry::new(inst.box_size);
    grid.len() == inst.cells.len()
        && grid.iter().all(|&d| d >= 1 && d as usize <= inst.size())
        && inst.cells.iter().zip(grid).all(|(&g, &d)| g == 0 || g == d)
        && geom.violated_units(grid).is_empty()
}

pub struct SudokuAdapter {
    inst: SudokuInstance,
    geom: Geometry,
    domains: Vec<u32>,
    solution: Option<Vec<u8>>,
    temperature: f64,
}

impl SudokuAdapter {
    pub fn new(inst: SudokuInstance) -> Self {
        let geom = Geometry::new(inst.box_size);
        let domains = logical_domains(&geom, &inst.cells);
        let solution = count_solutions(&geom, &inst.cells, 1).1;
        SudokuAdapter {
            inst,
            geom,
            domains,
            solution,
            temperature: 0.1,
        }
    }

    pub fn instance(&self) -> &SudokuInstance {
        &self.inst
    }

    pub fn solution(&self) -> Option<&[u8]> {
        self.solution.as_deref()
    }

    pub fn domains(&self) -> &[u32] {
        &self.domains
    }

    fn n(&self) -> usize {
        self.geom.n
    }

    fn cell_probs<'a>(&self, s: &'a [f64], cell: usize) -> &'a [f64] {
        let n = self.n();
        &s[cell * n..(cell + 1) * n]
    }

    fn blanks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.inst.cells.len()).filter(|&c| self.inst.cells[c] == 0)
    }

    fn soft_propagation(&self, s: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut delta = vec![0.0; s.len()];
        for cell in self.blanks() {
            let base = self.cell_probs(s, cell);
            let mut w = vec![0.0; n];
            for (d, wd) in w.iter_mut().enumerate() {
                let mut support = 1.0;
                let mut hidden: f64 = 0.0;
                for &u in &self.geom.cell_units[cell] {
                    let mut peak: f64 = 0.0;
                    let mut alone = 1.0;
                    for &p in &self.geom.units[u] {
                        if p == cell {
                            continue;
                        }
                        let q = s[p * n + d];
                        peak = peak.max(q);
                        alone *= 1.0 - q;
                    }
                    support *= 1.0 - peak;
                    hidden = hidden.max(alone);
                }
                *wd = base[d] * support * (1.0 + 4.0 * hidden);
            }
            let sum: f64 = w.iter().sum();
            if sum > 1e-12 {
                for d in 0..n {
                    delta[cell * n + d] = w[d] / sum - base[d];
                }
            }
        }
        delta
    }

    fn domain_pruning(&self, s: &[f64]) -> Proposal {
        let n = self.n();
        let mut delta = vec![0.0; s.len()];
        let mut violations = Vec::new();
        for cell in self.blanks() {
            let dom = self.domains[cell];
            let base = self.cell_probs(s, cell);
            if dom == 0 {
                violations.push(format!(
                    "contradiction at cell ({}, {})",
                    cell / n + 1,
                    cell % n + 1
                ));
                continue;
            }
            let peak = (0..n)
                .filter(|d| dom >> (d + 1) & 1 == 1)
                .map(|d| base[d])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut target = vec![0.0; n];
            let mut z = 0.0;
            for d in 0..n {
                if dom >> (d + 1) & 1 == 1 {
                    target[d] = ((base[d] - peak) / self.temperature).exp();
                    z += target[d];
                }
            }
            for d in 0..n {
                delta[cell * n + d] = target[d] / z - base[d];
            }
        }
        Proposal {
            delta: Some(delta),
            violations,
        }
    }

    fn commitment(&self, s: &[f64]) -> Option<Vec<f64>> {
        let n = self.n();
        let mut best: Option<(usize, usize, f64)> = None;
        for cell in self.blanks() {
            let base = self.cell_probs(s, cell);
            if base.iter().copied().fold(0.0, f64::max) >= COMMITTED {
                continue;
            }
            let dom = self.domains[cell];
            let (mut top, mut second, mut arg) = (f64::NEG_INFINITY, 0.0_f64, None);
            for (d, &q) in base.iter().enumerate() {
                if dom >> (d + 1) & 1 == 0 {
                    continue;
                }
                if q > top {
                    second = top.max(0.0);
                    top = q;
                    arg = Some(d);
                } else {
                    second = second.max(q);
                }
            }
            let Some(d) = arg else { continue };
            let margin = top - second;
            if best.is_none_or(|(_, _, m)| margin > m) {
                best = Some((cell, d, margin));
            }
        }
        let (cell, digit, _) = best?;
        let mut delta = vec![0.0; s.len()];
        let base = self.cell_probs(s, cell);
        for d in 0..n {
            let target = if d == digit { 1.0 } else { 0.0 };
            delta[cell * n + d] = target - base[d];
        }
        Some(delta)
    }

    fn focus_cell(&self, s: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for cell in self.blanks() {
            let p = OutputDistribution::from_weights(self.cell_probs(s, cell).to_vec());
            let h = crate::observe::shannon_entropy(&p).0;
            if best.is_none_or(|(_, bh)| h > bh) {
                best = Some((cell, h));
            }
        }
        best.map(|b| b.0)
    }
}

impl TaskAdapter for SudokuAdapter {
    type Output = Vec<u8>;

    fn kind(&self) -> TaskKind {
        TaskKind::Sudoku
    }

    fn dim(&self) -> usize {
        self.inst.cells.len() * self.n()
    }

    fn encode(&self) -> CognitiveState {
        let n = self.n();
        let mut s = vec![1.0 / n as f64; self.dim()];
        for (cell, &g) in self.inst.cells.iter().enumerate() {
            if g != 0 {
                for d in 0..n {
                    s[cell * n + d] = if d + 1 == g as usize { 1.0 } else { 0.0 };
                }
            }
        }
        CognitiveState::clipped(s)
    }

    /// Givens override whatever the recalled state held for their cells.
    fn reconcile(&self, s: CognitiveState) -> CognitiveState {
        let n = self.n();
        let mut v = s.values().to_vec();
        for (cell, &g) in self.inst.cells.iter().enumerate() {
            if g != 0 {
                for (d, p) in v[cell * n..(cell + 1) * n].iter_mut().enumerate() {
                    *p = if d + 1 == g as usize { 1.0 } else { 0.0 };
                }
            }
        }
        CognitiveState::clipped(v)
    }

    /// Most probable digit per cell, lowest digit on ties.
    fn decode(&self, s: &CognitiveState) -> Vec<u8> {
        let n = self.n();
        (0..self.inst.cells.len())
            .map(|cell| {
                let probs = self.cell_probs(s.values(), cell);
                let mut arg = 0;
                for d in 1..n {
                    if probs[d] > probs[arg] {
                        arg = d;
                    }
                }
                arg as u8 + 1
            })
            .collect()
    }

    fn delta(
        &self,
        s: &CognitiveState,
        _y: &Vec<u8>,
        agent: AgentId,
    ) -> Result<Proposal, TaskError> {
        let v = s.values();
        Ok(match agent {
            AgentId::R1A => Proposal::delta(bounded(self.soft_propagation(v))),
            AgentId::R1C => Proposal {
                delta: self.commitment(v).map(bounded),
                violations: Vec::new(),
            },
            AgentId::R1D => {
                let mut p = self.domain_pruning(v);
                p.delta = p.delta.map(bounded);
                p
            }
            _ => Proposal::none(),
        })
    }

    fn distribution(&self, s: &CognitiveState) -> OutputDistribution {
        match self.focus_cell(s.values()) {
            Some(cell) => {
                OutputDistribution::from_weights(self.cell_probs(s.values(), cell).to_vec())
            }
            None => {
                let first = self.inst.cells.first().copied().unwrap_or(1).max(1);
                OutputDistribution::point_mass(self.n(), first as usize - 1)
            }
        }
    }

    fn axioms(&self, y: &Vec<u8>) -> Vec<String> {
        self.geom.violated_units(y)
    }

    fn axiom_count(&self) -> usize {
        self.geom.units.len()
    }

    fn is_correct(&self, y: &Vec<u8>) -> bool {
        match &self.solution {
            Some(sol) => sol == y,
            None => false,
        }
    }

    fn canonical_encoding(&self, y: &Vec<u8>) -> Vec<f64> {
        y.iter().map(|&d| d as f64).collect()
    }

    fn hypothesis_feasible(&self, s: &CognitiveState, idx: usize) -> bool {
        match self.focus_cell(s.values()) {
            Some(cell) => self.domains[cell] >> (idx + 1) & 1 == 1,
            None => true,
        }
    }
}
