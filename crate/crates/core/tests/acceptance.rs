//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use rrc_core::engrams::{
    predicted_saving, similarity, warm_start, Engram, EngramStore, RetrievalParams,
};
use rrc_core::harness::{self, instance_seed, noise_seed, RunConfig, SweepRow};
use rrc_core::hormones::{
    dt_bound, estimate_equilibrium, lyapunov, step_dynamics, Drive, HormoneParams, HormoneVector,
    InheritedLevels,
};
use rrc_core::observe::CognitiveState;
use rrc_core::rrc::{run_episode, EngineConfig, EpisodeOptions, EpisodeTrace, StopReason};
use rrc_core::select::{
    solve_exact, solve_primal_dual, Candidate, PrimalDualParams, SelectionProblem,
};
use rrc_core::tasks::{
    DdeAdapter, DdeInstance, Difficulty, MazeAdapter, MazeInstance, SudokuAdapter, SudokuInstance,
    TaskAdapter, TaskKind,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rrc"))
        .args(args)
        .output()
        .expect("rrc binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).expect("config written");
    p.to_string_lossy().into_owned()
}

fn stability_gate() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let (code, text) = cli(&["check"]);
    let c_line = text
        .lines()
        .find(|l| l.contains("h_c"))
        .unwrap_or_default()
        .to_string();
    let u_line = text
        .lines()
        .find(|l| l.contains("h_u"))
        .unwrap_or_default()
        .to_string();
    let defaults_ok = code == 0
        && c_line.contains("0.7500 > 0.7000")
        && c_line.ends_with("pass")
        && u_line.contains("0.7000 > 0.6500")
        && u_line.ends_with("pass");
    let bad = write_config(dir.path(), "lc.json", r#"{"lambda_c": 0.65}"#);
    let (bad_code, bad_text) = cli(&["check", "--config", &bad]);
    let refused = bad_code == 2 && bad_text.contains("FAIL");
    outcome(
        defaults_ok && refused,
        format!("defaults exit {code} [{c_line}] [{u_line}]; lambda_c=0.65 exit {bad_code}"),
    )
}

fn dt_arithmetic() -> Outcome {
    let p = HormoneParams::default();
    let b = dt_bound(&p, 1.0);
    let values_ok = (b.bound_c - 2.0690).abs() <= 1e-3 && (b.overall - 1.4815).abs() <= 1e-3;
    let dir = tempfile::tempdir().expect("tempdir");
    let one = write_config(dir.path(), "dt1.json", r#"{"dt": 1.0}"#);
    let big = write_config(dir.path(), "dt15.json", r#"{"dt": 1.5}"#);
    let (c1, _) = cli(&["check", "--config", &one]);
    let (c15, _) = cli(&["check", "--config", &big]);
    let h = HormoneVector::with_inherited(&InheritedLevels::default());
    let step_ok = step_dynamics(&h, (0.5, 0.5), 0.5, &p, (0.0, 0.0)).is_ok();
    let step_refused = step_dynamics(
        &h,
        (0.5, 0.5),
        0.5,
        &HormoneParams { dt: 1.5, ..p },
        (0.0, 0.0),
    )
    .is_err();
    outcome(
        values_ok && c1 == 0 && c15 == 2 && step_ok && step_refused,
        format!(
            "bound_c {:.4}, overall {:.4}; check dt=1 exit {c1}, dt=1.5 exit {c15}",
            b.bound_c, b.overall
        ),
    )
}

fn lyapunov_descent() -> Outcome {
    let p = HormoneParams {
        sigma_eta_c: 0.0,
        sigma_eta_u: 0.0,
        ..HormoneParams::default()
    };
    let inherited = InheritedLevels::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4C59);
    let (mut rises, mut unsettled, mut worst_rise) = (0, 0, 0.0f64);
    for _ in 0..100 {
        let e = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let chi = rng.random_range(0.0..1.0);
        let drive = Drive::Constant { e_c: e.0, e_u: e.1 };
        let star = estimate_equilibrium(&p, drive, chi, &inherited).expect("equilibrium exists");
        let mut h = HormoneVector::with_inherited(&inherited);
        h.h_c = rng.random_range(0.0..=1.0);
        h.h_u = rng.random_range(0.0..=1.0);
        let mut v = lyapunov(&h, star, &p);
        let mut settled = false;
        for _ in 0..200 {
            let next = step_dynamics(&h, e, chi, &p, (0.0, 0.0)).expect("dt admissible");
            let v_next = lyapunov(&next, star, &p);
            if v_next > v + 1e-9 {
                rises += 1;
                worst_rise = worst_rise.max(v_next - v);
            }
            let dh = ((next.h_c - h.h_c).powi(2) + (next.h_u - h.h_u).powi(2)).sqrt();
            h = next;
            v = v_next;
            if dh < 1e-6 {
                settled = true;
                break;
            }
        }
        if !settled {
            unsettled += 1;
        }
    }
    outcome(
        rises == 0 && unsettled == 0,
        format!("100 starts: {rises} rises (worst {worst_rise:.2e}), {unsettled} not settled in 200 steps"),
    )
}

fn dde_config(episodes: usize, warmup: usize, seeds: usize, warm: bool) -> RunConfig {
    RunConfig {
        task: TaskKind::Dde,
        n_episodes: episodes,
        warmup_episodes: Some(warmup),
        n_seeds: seeds,
        warm_start: warm,
        ..RunConfig::default()
    }
}

fn entropic_coupling() -> Outcome {
    let cfg = dde_config(300, 100, 1, true);
    let results = harness::run_experiment(&cfg, None).expect("dde run");
    let report = harness::summarize(TaskKind::Dde, &results);
    let v: Vec<f64> = report.series_v.iter().map(|p| p.0).collect();
    let h: Vec<f64> = report.series_h.iter().map(|p| p.0).collect();
    let eval = report.rows[0].episodes;
    match pearson(&v, &h) {
        Some(r) => outcome(
            eval == 200 && r >= 0.80,
            format!("{eval} evaluation episodes, r = {r:.4} (floor 0.80)"),
        ),
        None => outcome(false, "correlation undefined".into()),
    }
}

struct TerminationTally {
    episodes: usize,
    errors: usize,
    bound_breaches: usize,
    t_star: Vec<f64>,
    criterion: usize,
}

fn termination_run<T: TaskAdapter>(
    make: impl Fn(u64) -> T,
    seeds: u64,
    per_seed: usize,
) -> TerminationTally {
    let cfg = EngineConfig::default();
    let warmup = per_seed / 5;
    let mut tally = TerminationTally {
        episodes: 0,
        errors: 0,
        bound_breaches: 0,
        t_star: Vec::new(),
        criterion: 0,
    };
    for seed in 0..seeds {
        let mut store = EngramStore::new();
        for ep in 0..per_seed {
            let task = make(instance_seed(seed, ep));
            let opts = EpisodeOptions {
                warm_start: ep >= warmup,
                baseline: false,
            };
            tally.episodes += 1;
            let trace = match run_episode(&task, &cfg, &mut store, noise_seed(seed, ep), opts) {
                Ok(t) => t,
                Err(_) => {
                    tally.errors += 1;
                    continue;
                }
            };
            let t_star = trace.summary.t_star;
            let final_eff = trace.records.last().map_or(0, |r| r.t_eff);
            if t_star > final_eff || trace.records.iter().any(|r| r.t_eff > 20) {
                tally.bound_breaches += 1;
            }
            tally.t_star.push(t_star as f64);
            if trace.summary.stop_reason == StopReason::Criterion {
                tally.criterion += 1;
            }
        }
    }
    tally
}

fn finite_termination() -> Outcome {
    let d = Difficulty::Default;
    let (sudoku, maze, dde) = std::thread::scope(|s| {
        let a = s.spawn(|| {
            termination_run(
                |x| SudokuAdapter::new(SudokuInstance::generate(x, d)),
                5,
                667,
            )
        });
        let b =
            s.spawn(|| termination_run(|x| MazeAdapter::new(MazeInstance::generate(x, d)), 5, 667));
        let c =
            s.spawn(|| termination_run(|x| DdeAdapter::new(DdeInstance::generate(x, d)), 5, 667));
        (a.join().unwrap(), b.join().unwrap(), c.join().unwrap())
    });
    let all = [&sudoku, &maze, &dde];
    let episodes: usize = all.iter().map(|t| t.episodes).sum();
    let errors: usize = all.iter().map(|t| t.errors).sum();
    let breaches: usize = all.iter().map(|t| t.bound_breaches).sum();
    let dde_mean = mean(&dde.t_star);
    let dde_rate = dde.criterion as f64 / dde.t_star.len() as f64;
    outcome(
        episodes >= 10_000 && errors == 0 && breaches == 0 && dde_mean < 20.0 && dde_rate >= 0.80,
        format!(
            "{episodes} episodes, {errors} errors, {breaches} budget breaches; DDE mean t* {dde_mean:.3} (< 20), criterion stops {:.1}% (>= 80%)",
            100.0 * dde_rate
        ),
    )
}

fn eval_t_star(cfg: &RunConfig) -> f64 {
    let results = harness::run_experiment(cfg, None).expect("dde run");
    let t: Vec<f64> = results
        .iter()
        .flat_map(|r| {
            r.episodes
                .iter()
                .filter(|e| !e.warmup)
                .map(|e| e.t_star as f64)
        })
        .collect();
    mean(&t)
}

fn warm_start_acceleration() -> Outcome {
    let warm = eval_t_star(&dde_config(300, 100, 5, true));
    let cold = eval_t_star(&dde_config(300, 100, 5, false));
    let saving = cold - warm;
    let units = predicted_saving(2.0, 1.0, 0.5) == 1 && predicted_saving(4.0, 1.0, 0.5) == 2;
    outcome(
        saving >= 1.0 && units,
        format!("episodes 101-300 x 5 seeds: cold t* {cold:.3}, warm t* {warm:.3}, saving {saving:.3} (>= 1.0); predicted_saving cases {}", if units { "hold" } else { "wrong" }),
    )
}

/// 0/1 knapsack by dynamic programming over half-unit costs.
fn knapsack_dp(items: &[(f64, u32)], capacity: u32) -> f64 {
    let mut best = vec![0.0f64; capacity as usize + 1];
    for &(u, w) in items {
        for c in (w as usize..=capacity as usize).rev() {
            best[c] = best[c].max(best[c - w as usize] + u);
        }
    }
    best[capacity as usize]
}

fn selection_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E1);
    let params = PrimalDualParams::default();
    let (mut mismatches, mut infeasible, mut weak) = (0, 0, 0);
    let mut worst_ratio = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let items: Vec<(f64, u32)> = (0..n)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(1..=6u32)))
            .collect();
        let capacity = rng.random_range(0..=24u32);
        let problem = SelectionProblem {
            candidates: items
                .iter()
                .enumerate()
                .map(|(i, &(u, w))| Candidate {
                    label: i as u32,
                    utility: u,
                    cost: 0.5 * w as f64,
                })
                .collect(),
            budget: 0.5 * capacity as f64,
        };
        let optimum = knapsack_dp(&items, capacity);
        let exact = solve_exact(&problem).expect("exact solve");
        if (exact.total_utility - optimum).abs() > 1e-12 {
            mismatches += 1;
        }
        let pd = solve_primal_dual(&problem, &params).expect("primal-dual solve");
        let cost: f64 = pd
            .chosen
            .iter()
            .map(|&l| problem.candidates[l as usize].cost)
            .sum();
        if cost > problem.budget + 1e-12 {
            infeasible += 1;
        }
        if optimum > 0.0 {
            let ratio = pd.total_utility / optimum;
            worst_ratio = worst_ratio.min(ratio);
            if ratio < 0.9 {
                weak += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && infeasible == 0 && weak == 0,
        format!("1000 instances: exact mismatches {mismatches}; primal-dual infeasible {infeasible}, below 0.9x {weak}, worst ratio {worst_ratio:.4}"),
    )
}

fn engram(ctx: [f64; 7], terminal: Vec<f64>, t_star: usize) -> Engram {
    let traj = vec![terminal.clone(); t_star];
    let y = terminal.clone();
    Engram::new(ctx, [false; 12], terminal, traj, y, 0.5).expect("valid engram")
}

fn engram_math() -> Outcome {
    let ctx = [0.5, 0.2, 0.5, 0.5, 0.3, 0.1, 0.3];
    let s1 = similarity(&ctx, &engram(ctx, vec![0.5], 1), 0.7);
    let s10 = similarity(&ctx, &engram(ctx, vec![0.5], 10), 0.7);
    let sims_ok = (s1 - 1.0).abs() <= 1e-9 && (s10 - 0.73).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(0xE6);
    let params = RetrievalParams::default();
    let mut store = EngramStore::new();
    let mut max_len = 0;
    for _ in 0..10_000 {
        let h: [f64; 7] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
        if rng.random_bool(0.7) {
            let t = rng.random_range(1..=20);
            store.insert(
                engram(h, vec![rng.random_range(0.0..=1.0)], t),
                params.m_max,
            );
        } else {
            store.retrieve(&h, &params);
        }
        max_len = max_len.max(store.len());
    }
    let capacity_ok = max_len <= 1000 && store.len() == 1000;

    let c = |states: &[f64]| -> f64 {
        let es: Vec<Engram> = states.iter().map(|&s| engram(ctx, vec![s], 3)).collect();
        warm_start(&es).expect("centroid").values()[0]
    };
    let centroid_ok = (c(&[0.2, 0.4, 0.6]) - 0.4).abs() <= 1e-12
        && c(&[0.123456789]) == 0.123456789
        && (c(&[0.9, 1.0, 1.0]) - 2.9 / 3.0).abs() <= 1e-12;
    outcome(
        sims_ok && capacity_ok && centroid_ok,
        format!("sim(t*=1) {s1:.12}, sim(t*=10) {s10:.12}; peak store size {max_len}/1000; centroids {}", if centroid_ok { "exact" } else { "off" }),
    )
}

/// Plain backtracking solver for 9x9 grids; returns the number of solutions
/// found up to `limit` and the first one.
fn backtrack(grid: &mut [u8; 81], limit: usize, found: &mut Vec<[u8; 81]>) {
    if found.len() >= limit {
        return;
    }
    let Some(cell) = grid.iter().position(|&d| d == 0) else {
        found.push(*grid);
        return;
    };
    let (r, c) = (cell / 9, cell % 9);
    for d in 1..=9u8 {
        let clash = (0..9).any(|k| {
            grid[r * 9 + k] == d
                || grid[k * 9 + c] == d
                || grid[(r / 3 * 3 + k / 3) * 9 + c / 3 * 3 + k % 3] == d
        });
        if !clash {
            grid[cell] = d;
            backtrack(grid, limit, found);
            grid[cell] = 0;
        }
    }
}

fn valid_complete(grid: &[u8]) -> bool {
    let units = (0..9).flat_map(|i| {
        [
            (0..9).map(|k| i * 9 + k).collect::<Vec<_>>(),
            (0..9).map(|k| k * 9 + i).collect(),
            (0..9)
                .map(|k| (i / 3 * 3 + k / 3) * 9 + i % 3 * 3 + k % 3)
                .collect(),
        ]
    });
    grid.len() == 81
        && units.into_iter().all(|u| {
            let mut seen = [false; 10];
            u.iter().all(|&i| {
                let d = grid[i] as usize;
                (1..=9).contains(&d) && !std::mem::replace(&mut seen[d], true)
            })
        })
}

fn bfs_length(inst: &MazeInstance) -> Option<usize> {
    let (rows, cols) = (inst.rows(), inst.cols());
    let mut dist = vec![usize::MAX; rows * cols];
    let start = inst.start();
    dist[start.0 * cols + start.1] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * cols + c];
        let next = [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ];
        for (nr, nc) in next {
            if nr < rows
                && nc < cols
                && !inst.is_blocked((nr, nc))
                && dist[nr * cols + nc] == usize::MAX
            {
                dist[nr * cols + nc] = d + 1;
                queue.push_back((nr, nc));
            }
        }
    }
    let goal = inst.goal();
    let d = dist[goal.0 * cols + goal.1];
    (d != usize::MAX).then_some(d)
}

fn valid_path(inst: &MazeInstance, path: &[(usize, usize)]) -> bool {
    path.first() == Some(&inst.start())
        && path.last() == Some(&inst.goal())
        && path
            .iter()
            .all(|&c| c.0 < inst.rows() && c.1 < inst.cols() && !inst.is_blocked(c))
        && path
            .windows(2)
            .all(|w| w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1) == 1)
}

fn final_output<T: TaskAdapter>(task: &T, trace: &EpisodeTrace) -> T::Output {
    let last = trace.records.last().expect("non-empty trace");
    task.decode(&CognitiveState::clipped(last.state.clone()))
}

fn task_oracles() -> Outcome {
    let cfg = EngineConfig::default();
    let d = Difficulty::Default;
    let opts = EpisodeOptions::default();

    let (mut sudoku_claimed, mut sudoku_bad) = (0, 0);
    let mut store = EngramStore::new();
    for ep in 0..200 {
        let inst = SudokuInstance::generate(instance_seed(0, ep), d);
        let task = SudokuAdapter::new(inst.clone());
        let trace =
            run_episode(&task, &cfg, &mut store, noise_seed(0, ep), opts).expect("sudoku episode");
        if !trace.summary.correct {
            continue;
        }
        sudoku_claimed += 1;
        let y = final_output(&task, &trace);
        let givens_kept = inst.cells().iter().zip(&y).all(|(&g, &v)| g == 0 || g == v);
        let mut grid = [0u8; 81];
        grid.copy_from_slice(inst.cells());
        let mut found = Vec::new();
        backtrack(&mut grid, 2, &mut found);
        if !(givens_kept && valid_complete(&y) && found.first().is_some_and(|s| s[..] == y[..])) {
            sudoku_bad += 1;
        }
    }

    let (mut maze_claimed, mut maze_bad) = (0, 0);
    let mut store = EngramStore::new();
    for ep in 0..200 {
        let inst = MazeInstance::generate(instance_seed(1, ep), d);
        let task = MazeAdapter::new(inst.clone());
        let trace =
            run_episode(&task, &cfg, &mut store, noise_seed(1, ep), opts).expect("maze episode");
        if !trace.summary.correct {
            continue;
        }
        maze_claimed += 1;
        let path = final_output(&task, &trace);
        if !(valid_path(&inst, &path) && bfs_length(&inst) == Some(path.len() - 1)) {
            maze_bad += 1;
        }
    }

    let mut dde_hits = 0;
    let mut store = EngramStore::new();
    for ep in 0..200 {
        let inst = DdeInstance::generate(instance_seed(2, ep), d);
        let task = DdeAdapter::new(inst.clone());
        let trace =
            run_episode(&task, &cfg, &mut store, noise_seed(2, ep), opts).expect("dde episode");
        let y = final_output(&task, &trace);
        let err = ((y[0] - inst.theta[0]).powi(2) + (y[1] - inst.theta[1]).powi(2)).sqrt();
        if err <= 1e-2 {
            dde_hits += 1;
        }
    }
    let dde_rsr = dde_hits as f64 / 200.0;
    outcome(
        sudoku_bad == 0 && maze_bad == 0 && dde_rsr >= 0.70,
        format!("sudoku {sudoku_bad}/{sudoku_claimed} claimed-correct rejected; maze {maze_bad}/{maze_claimed} rejected; DDE RSR {dde_rsr:.3} (>= 0.70)"),
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn per_step_mean(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            mean(
                &series
                    .iter()
                    .filter_map(|s| s.get(t).copied())
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}

fn rho_hat(residuals: &[Vec<f64>]) -> f64 {
    let per: Vec<f64> = residuals
        .iter()
        .filter(|r| r.len() >= 4)
        .filter_map(|r| {
            let logs: Vec<f64> = r[2..r.len() - 1]
                .windows(2)
                .filter(|w| w[0] > 0.0 && w[1] > 0.0)
                .map(|w| (w[1] / w[0]).ln())
                .collect();
            (!logs.is_empty()).then(|| mean(&logs).exp())
        })
        .collect();
    if per.is_empty() {
        1.0 - 1e-6
    } else {
        mean(&per).clamp(1e-6, 1.0 - 1e-6)
    }
}

fn mu_hat(vs: &[Vec<f64>]) -> f64 {
    let logs: Vec<f64> = vs
        .iter()
        .flat_map(|v| v.windows(2))
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| -(w[1] / w[0]).ln())
        .collect();
    mean(&logs)
}

/// Per-episode fields read straight from a trace file.
struct RawEpisode {
    t_star: f64,
    criterion: bool,
    correct: bool,
    warm: bool,
    total_energy: f64,
    cycle_energy_sum: f64,
    v: Vec<f64>,
    h: Vec<f64>,
    residual: Vec<f64>,
}

fn read_raw(path: &Path) -> RawEpisode {
    let text = std::fs::read_to_string(path).expect("trace readable");
    let mut ep = RawEpisode {
        t_star: f64::NAN,
        criterion: false,
        correct: false,
        warm: false,
        total_energy: f64::NAN,
        cycle_energy_sum: 0.0,
        v: Vec::new(),
        h: Vec::new(),
        residual: Vec::new(),
    };
    for line in text.lines() {
        let j: Value = serde_json::from_str(line).expect("json line");
        match j["kind"].as_str() {
            Some("cycle") => {
                ep.cycle_energy_sum += j["energy"].as_f64().unwrap();
                ep.v.push(j["lyapunov"].as_f64().unwrap());
                ep.h.push(j["entropy"].as_f64().unwrap());
                ep.residual.push(j["residual"].as_f64().unwrap());
            }
            Some("summary") => {
                ep.t_star = j["t_star"].as_f64().unwrap();
                ep.criterion = j["stop_reason"] == "criterion";
                ep.correct = j["correct"].as_bool().unwrap();
                ep.warm = j["warm_flag"].as_bool().unwrap();
                ep.total_energy = j["total_energy"].as_f64().unwrap();
            }
            _ => panic!("unexpected line kind"),
        }
    }
    ep
}

fn recompute_row(
    dir: &Path,
    seed: u64,
    episodes: usize,
    warmup: usize,
    ledger_breaks: &mut usize,
) -> Vec<f64> {
    let traces = dir.join("traces").join(format!("seed{seed}"));
    let mut eval = Vec::new();
    let mut base = Vec::new();
    for ep in 0..episodes {
        let raw = read_raw(&traces.join(format!("ep{ep:04}.jsonl")));
        if raw.cycle_energy_sum != raw.total_energy {
            *ledger_breaks += 1;
        }
        if ep >= warmup {
            let b = read_raw(&traces.join(format!("baseline{ep:04}.jsonl")));
            if b.cycle_energy_sum != b.total_energy {
                *ledger_breaks += 1;
            }
            base.push(b.total_energy);
            eval.push(raw);
        }
    }
    let frac = |f: fn(&RawEpisode) -> bool| {
        eval.iter().filter(|e| f(e)).count() as f64 / eval.len() as f64
    };
    let t: Vec<f64> = eval.iter().map(|e| e.t_star).collect();
    let energy: Vec<f64> = eval.iter().map(|e| e.total_energy).collect();
    let v: Vec<Vec<f64>> = eval.iter().map(|e| e.v.clone()).collect();
    let h: Vec<Vec<f64>> = eval.iter().map(|e| e.h.clone()).collect();
    let res: Vec<Vec<f64>> = eval.iter().map(|e| e.residual.clone()).collect();
    let (e_mean, e_base) = (mean(&energy), mean(&base));
    vec![
        eval.len() as f64,
        frac(|e| e.correct),
        mean(&t),
        sample_std(&t),
        frac(|e| e.criterion),
        frac(|e| e.warm),
        e_mean,
        e_base,
        1.0 - e_mean / e_base,
        pearson(&per_step_mean(&v), &per_step_mean(&h)).unwrap_or(f64::NAN),
        rho_hat(&res),
        mu_hat(&v),
    ]
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12
}

fn determinism_and_ledger() -> Outcome {
    let cfg = RunConfig {
        task: TaskKind::Maze,
        n_episodes: 30,
        warmup_episodes: Some(10),
        n_seeds: 2,
        seed: 11,
        ..RunConfig::default()
    };
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    harness::run_to_dir(&cfg, a.path()).expect("first run");
    harness::run_to_dir(&cfg, b.path()).expect("second run");
    let csv_a = std::fs::read(a.path().join("summary.csv")).expect("summary");
    let csv_b = std::fs::read(b.path().join("summary.csv")).expect("summary");
    let identical = csv_a == csv_b;

    let text = String::from_utf8(csv_a).expect("utf8");
    let emitted: BTreeMap<String, Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[1].to_string(),
                f[2..]
                    .iter()
                    .map(|x| x.parse::<f64>().expect("number"))
                    .collect(),
            )
        })
        .collect();
    let mut ledger_breaks = 0;
    let mut mismatches = 0;
    let mut rows = Vec::new();
    for seed in cfg.seeds() {
        let row = recompute_row(a.path(), seed, cfg.n_episodes, 10, &mut ledger_breaks);
        let got = &emitted[&seed.to_string()];
        mismatches += row
            .iter()
            .zip(got)
            .filter(|(x, y)| !close(**x, **y))
            .count();
        rows.push(row);
    }
    let got_mean = &emitted["mean"];
    for k in 1..rows[0].len() {
        let col: Vec<f64> = rows.iter().map(|r| r[k]).filter(|x| !x.is_nan()).collect();
        if !close(mean(&col), got_mean[k]) {
            mismatches += 1;
        }
    }
    outcome(
        identical && ledger_breaks == 0 && mismatches == 0,
        format!("summary.csv identical: {identical}; energy ledger breaks {ledger_breaks}; recomputed fields off by > 1e-12: {mismatches}"),
    )
}

fn sweep_directions() -> Outcome {
    let base = RunConfig::default();
    let rows = harness::sweep(&base, "theta_c", harness::SWEEP_EPISODES).expect("theta_c sweep");
    let mut monotone = true;
    let mut detail = Vec::new();
    for task in ["sudoku", "maze", "dde"] {
        let mut pts: Vec<&SweepRow> = rows.iter().filter(|r| r.task == task).collect();
        pts.sort_by(|x, y| x.offset.total_cmp(&y.offset));
        let t: Vec<f64> = pts.iter().map(|r| r.t_star_mean).collect();
        monotone &= t.len() == 3 && t.windows(2).all(|w| w[0] <= w[1]);
        detail.push(format!("{task} {t:.2?}"));
    }
    let rows = harness::sweep(&base, "lambda_c", harness::SWEEP_EPISODES).expect("lambda_c sweep");
    let flagged = |off: f64| rows.iter().any(|r| r.offset == off && r.flagged.is_some());
    let flag_ok = flagged(-0.30) && !flagged(0.0) && !flagged(0.30);
    outcome(
        monotone && flag_ok,
        format!(
            "theta_c t*: {}; lambda_c -30% flagged: {}",
            detail.join(", "),
            flagged(-0.30)
        ),
    )
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "stability gate",
            limit: Duration::from_secs(1),
            run: stability_gate,
        },
        Criterion {
            id: 2,
            name: "dt bound",
            limit: Duration::from_secs(1),
            run: dt_arithmetic,
        },
        Criterion {
            id: 3,
            name: "Lyapunov descent",
            limit: Duration::from_secs(10),
            run: lyapunov_descent,
        },
        Criterion {
            id: 4,
            name: "entropic coupling",
            limit: Duration::from_secs(300),
            run: entropic_coupling,
        },
        Criterion {
            id: 5,
            name: "finite termination",
            limit: Duration::from_secs(900),
            run: finite_termination,
        },
        Criterion {
            id: 6,
            name: "warm-start acceleration",
            limit: Duration::from_secs(600),
            run: warm_start_acceleration,
        },
        Criterion {
            id: 7,
            name: "selection optimality",
            limit: Duration::from_secs(30),
            run: selection_optimality,
        },
        Criterion {
            id: 8,
            name: "engram math",
            limit: Duration::from_secs(10),
            run: engram_math,
        },
        Criterion {
            id: 9,
            name: "task oracles",
            limit: Duration::from_secs(600),
            run: task_oracles,
        },
        Criterion {
            id: 10,
            name: "determinism and ledger",
            limit: Duration::from_secs(120),
            run: determinism_and_ledger,
        },
        Criterion {
            id: 11,
            name: "sensitivity directions",
            limit: Duration::from_secs(1200),
            run: sweep_directions,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let o = (c.run)();
        let took = start.elapsed();
        let pass = o.pass && took <= c.limit;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {}: {} [{:.2} s, limit {} s]",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            o.detail,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
