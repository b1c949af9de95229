//! Multi-episode experiments, reports and one-at-a-time sweeps.

pub mod config;
pub mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engrams::EngramStore;
use crate::rrc::{
    gate_report, run_episode, ConfigError, EpisodeError, EpisodeOptions, EpisodeTrace, TraceError,
};
use crate::tasks::{
    DdeAdapter, DdeInstance, MazeAdapter, MazeInstance, SudokuAdapter, SudokuInstance, TaskAdapter,
    TaskKind,
};

pub use config::{RunConfig, SWEEPABLE};
pub use metrics::EpisodeDigest;
use metrics::{estimate_mu, estimate_rho, frugality, mean, pearson, ragged_mean, rsr, std_dev};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("deployability gate failed:\n{0}")]
    Gate(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("seed {seed}, episode {episode}: {source}")]
    Episode {
        seed: u64,
        episode: usize,
        source: EpisodeError,
    },
    #[error("`{0}` is not a sweepable parameter (expected one of {SWEEPABLE:?})")]
    UnknownParam(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the instance generated for `(run seed, episode)`; identical across
/// warm and cold runs so their episodes are matched.
pub fn instance_seed(seed: u64, episode: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ episode as u64)
}

/// Seed of the engine's noise stream for `(run seed, episode)`.
pub fn noise_seed(seed: u64, episode: usize) -> u64 {
    splitmix64(instance_seed(seed, episode) ^ 0xD1B5_4A32_D192_ED03)
}

/// Checks domains and the deployability gates before any episode runs.
pub fn preflight(cfg: &RunConfig) -> Result<(), HarnessError> {
    cfg.validate()?;
    let (ok, text) = gate_report(&cfg.engine.hormones);
    if !ok {
        return Err(HarnessError::Gate(text));
    }
    Ok(())
}

/// Everything one seed's worker produced.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub episodes: Vec<EpisodeDigest>,
    /// Single-pass baseline energy for each evaluation episode.
    pub baseline_energy: Vec<f64>,
}

fn trace_path(dir: &Path, seed: u64, episode: usize, baseline: bool) -> PathBuf {
    let name = if baseline { "baseline" } else { "ep" };
    dir.join("traces")
        .join(format!("seed{seed}"))
        .join(format!("{name}{episode:04}.jsonl"))
}

fn save_trace(path: &Path, trace: &EpisodeTrace) -> Result<(), HarnessError> {
    fs::write(path, trace.to_jsonl()).map_err(io_err(path))
}

fn run_seed_with<T: TaskAdapter>(
    cfg: &RunConfig,
    seed: u64,
    out: Option<&Path>,
    make: impl Fn(u64) -> T,
) -> Result<SeedResult, HarnessError> {
    if let Some(dir) = out {
        let d = dir.join("traces").join(format!("seed{seed}"));
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let warmup = cfg.warmup();
    let mut store = EngramStore::new();
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    let mut baseline_energy = Vec::new();
    for ep in 0..cfg.n_episodes {
        let task = make(instance_seed(seed, ep));
        let in_warmup = ep < warmup;
        let opts = EpisodeOptions {
            warm_start: cfg.warm_start && !in_warmup,
            baseline: false,
        };
        let noise = noise_seed(seed, ep);
        let wrap = |source| HarnessError::Episode {
            seed,
            episode: ep,
            source,
        };
        let trace = run_episode(&task, &cfg.engine, &mut store, noise, opts).map_err(wrap)?;
        if let Some(dir) = out {
            save_trace(&trace_path(dir, seed, ep, false), &trace)?;
        }
        episodes.push(EpisodeDigest::from_trace(&trace, ep, in_warmup));
        if !in_warmup {
            let mut scratch = EngramStore::new();
            let base_opts = EpisodeOptions {
                warm_start: false,
                baseline: true,
            };
            let base =
                run_episode(&task, &cfg.engine, &mut scratch, noise, base_opts).map_err(wrap)?;
            if let Some(dir) = out {
                save_trace(&trace_path(dir, seed, ep, true), &base)?;
            }
            baseline_energy.push(base.summary.total_energy);
        }
    }
    Ok(SeedResult {
        seed,
        episodes,
        baseline_energy,
    })
}

fn run_seed(cfg: &RunConfig, seed: u64, out: Option<&Path>) -> Result<SeedResult, HarnessError> {
    let d = cfg.difficulty;
    match cfg.task {
        TaskKind::Sudoku => run_seed_with(cfg, seed, out, |s| {
            SudokuAdapter::new(SudokuInstance::generate(s, d))
        }),
        TaskKind::Maze => run_seed_with(cfg, seed, out, |s| {
            MazeAdapter::new(MazeInstance::generate(s, d))
        }),
        TaskKind::Dde => run_seed_with(cfg, seed, out, |s| {
            DdeAdapter::new(DdeInstance::generate(s, d))
        }),
    }
}

/// Runs every seed concurrently, each with its own engram store. Traces are
/// written under `out` when given.
pub fn run_experiment(
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<Vec<SeedResult>, HarnessError> {
    preflight(cfg)?;
    let seeds = cfg.seeds();
    let results: Vec<Result<SeedResult, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(cfg, seed, out)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub task: TaskKind,
    /// Seed number, or `mean` / `std` for the across-seed aggregates.
    pub seed: String,
    pub episodes: usize,
    pub rsr: f64,
    pub t_star_mean: f64,
    pub t_star_std: f64,
    pub criterion_rate: f64,
    pub warm_rate: f64,
    pub e_cog_mean: f64,
    pub e_baseline: f64,
    pub frugality_fp: f64,
    pub pearson_r: f64,
    pub rho_hat: f64,
    pub mu_hat: f64,
}

impl SummaryRow {
    pub const HEADER: &'static str = "task,seed,episodes,rsr,t_star_mean,t_star_std,criterion_rate,warm_rate,e_cog_mean,e_baseline,frugality_fp,pearson_r,rho_hat,mu_hat";

    fn metrics(&self) -> [f64; 11] {
        [
            self.rsr,
            self.t_star_mean,
            self.t_star_std,
            self.criterion_rate,
            self.warm_rate,
            self.e_cog_mean,
            self.e_baseline,
            self.frugality_fp,
            self.pearson_r,
            self.rho_hat,
            self.mu_hat,
        ]
    }

    fn from_metrics(task: TaskKind, seed: &str, episodes: usize, m: [f64; 11]) -> Self {
        SummaryRow {
            task,
            seed: seed.to_string(),
            episodes,
            rsr: m[0],
            t_star_mean: m[1],
            t_star_std: m[2],
            criterion_rate: m[3],
            warm_rate: m[4],
            e_cog_mean: m[5],
            e_baseline: m[6],
            frugality_fp: m[7],
            pearson_r: m[8],
            rho_hat: m[9],
            mu_hat: m[10],
        }
    }

    pub fn csv_line(&self) -> String {
        let mut line = format!("{},{},{}", self.task, self.seed, self.episodes);
        for v in self.metrics() {
            write!(line, ",{v}").expect("string write");
        }
        line
    }
}

/// Summary rows plus averaged per-iteration series over evaluation episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    pub series_v: Vec<(f64, usize)>,
    pub series_h: Vec<(f64, usize)>,
}

fn seed_row(task: TaskKind, r: &SeedResult) -> SummaryRow {
    let eval: Vec<&EpisodeDigest> = r.episodes.iter().filter(|e| !e.warmup).collect();
    let t: Vec<f64> = eval.iter().map(|e| e.t_star as f64).collect();
    let energy: Vec<f64> = eval.iter().map(|e| e.total_energy).collect();
    let frac =
        |f: &dyn Fn(&EpisodeDigest) -> bool| rsr(&eval.iter().map(|e| f(e)).collect::<Vec<_>>());
    let v: Vec<&[f64]> = eval.iter().map(|e| e.v.as_slice()).collect();
    let h: Vec<&[f64]> = eval.iter().map(|e| e.h.as_slice()).collect();
    let res: Vec<&[f64]> = eval.iter().map(|e| e.residual.as_slice()).collect();
    let vbar: Vec<f64> = ragged_mean(&v).into_iter().map(|p| p.0).collect();
    let hbar: Vec<f64> = ragged_mean(&h).into_iter().map(|p| p.0).collect();
    let e_mean = mean(&energy);
    let e_base = mean(&r.baseline_energy);
    SummaryRow::from_metrics(
        task,
        &r.seed.to_string(),
        eval.len(),
        [
            frac(&|e| e.correct),
            mean(&t),
            std_dev(&t),
            frac(&|e| e.criterion),
            frac(&|e| e.warm_flag),
            e_mean,
            e_base,
            frugality(e_mean, e_base),
            pearson(&vbar, &hbar).unwrap_or(f64::NAN),
            estimate_rho(&res).rho,
            estimate_mu(&v),
        ],
    )
}

/// Aggregates per-seed results into summary rows (one per seed, then the
/// across-seed mean and sample standard deviation) and averaged series.
pub fn summarize(task: TaskKind, results: &[SeedResult]) -> Report {
    let mut rows: Vec<SummaryRow> = results.iter().map(|r| seed_row(task, r)).collect();
    let total: usize = rows.iter().map(|r| r.episodes).sum();
    let mut means = [0.0; 11];
    let mut stds = [0.0; 11];
    for k in 0..11 {
        let col: Vec<f64> = rows
            .iter()
            .map(|r| r.metrics()[k])
            .filter(|v| !v.is_nan())
            .collect();
        means[k] = mean(&col);
        stds[k] = if col.is_empty() {
            f64::NAN
        } else {
            std_dev(&col)
        };
    }
    rows.push(SummaryRow::from_metrics(task, "mean", total, means));
    rows.push(SummaryRow::from_metrics(task, "std", total, stds));
    let eval = || {
        results
            .iter()
            .flat_map(|r| r.episodes.iter().filter(|e| !e.warmup))
    };
    let v: Vec<&[f64]> = eval().map(|e| e.v.as_slice()).collect();
    let h: Vec<&[f64]> = eval().map(|e| e.h.as_slice()).collect();
    Report {
        rows,
        series_v: ragged_mean(&v),
        series_h: ragged_mean(&h),
    }
}

impl Report {
    pub fn aggregate(&self) -> &SummaryRow {
        self.rows
            .iter()
            .find(|r| r.seed == "mean")
            .expect("summaries carry a mean row")
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", SummaryRow::HEADER);
        for r in &self.rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    fn series_csv(series: &[(f64, usize)]) -> String {
        let mut out = String::from("t,mean,count\n");
        for (t, (m, n)) in series.iter().enumerate() {
            writeln!(out, "{t},{m},{n}").expect("string write");
        }
        out
    }

    pub fn series_v_csv(&self) -> String {
        Self::series_csv(&self.series_v)
    }

    pub fn series_h_csv(&self) -> String {
        Self::series_csv(&self.series_h)
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        for (name, body) in [
            ("summary.csv", self.summary_csv()),
            ("series_v.csv", self.series_v_csv()),
            ("series_h.csv", self.series_h_csv()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

pub const MANIFEST: &str = "run.json";

/// Full `run`: gates, traces, manifest and reports under `dir`.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<Report, HarnessError> {
    preflight(cfg)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = cfg.clone();
    manifest.warmup_episodes = Some(cfg.warmup());
    let mp = dir.join(MANIFEST);
    fs::write(&mp, manifest.to_json()).map_err(io_err(&mp))?;
    let results = run_experiment(cfg, Some(dir))?;
    let report = summarize(cfg.task, &results);
    report.write(dir)?;
    Ok(report)
}

fn read_trace(path: &Path) -> Result<EpisodeTrace, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    EpisodeTrace::from_jsonl(&text).map_err(|source| HarnessError::Trace {
        path: path.to_path_buf(),
        source,
    })
}

/// Rebuilds the reports of a finished run from its manifest and trace files.
pub fn report_from_dir(dir: &Path) -> Result<Report, HarnessError> {
    let mp = dir.join(MANIFEST);
    let cfg = RunConfig::from_json(&fs::read_to_string(&mp).map_err(io_err(&mp))?)?;
    let warmup = cfg.warmup();
    let mut results = Vec::new();
    for seed in cfg.seeds() {
        let mut episodes = Vec::new();
        let mut baseline_energy = Vec::new();
        for ep in 0..cfg.n_episodes {
            let tr = read_trace(&trace_path(dir, seed, ep, false))?;
            episodes.push(EpisodeDigest::from_trace(&tr, ep, ep < warmup));
            if ep >= warmup {
                baseline_energy.push(
                    read_trace(&trace_path(dir, seed, ep, true))?
                        .summary
                        .total_energy,
                );
            }
        }
        results.push(SeedResult {
            seed,
            episodes,
            baseline_energy,
        });
    }
    let report = summarize(cfg.task, &results);
    report.write(dir)?;
    Ok(report)
}

pub const SWEEP_OFFSETS: [f64; 3] = [-0.30, 0.0, 0.30];
pub const SWEEP_EPISODES: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: String,
    pub offset: f64,
    pub value: f64,
    /// Task name, or `all` for the average over tasks.
    pub task: String,
    /// Why the offset was not run, if it was refused.
    pub flagged: Option<String>,
    pub rsr: f64,
    pub t_star_mean: f64,
}

impl SweepRow {
    pub const HEADER: &'static str = "param,offset,value,task,flagged,rsr,t_star_mean";

    pub fn csv_line(&self) -> String {
        let flag = self
            .flagged
            .as_deref()
            .map_or(String::new(), |f| format!("\"{}\"", f.replace('"', "'")));
        format!(
            "{},{},{},{},{},{},{}",
            self.param, self.offset, self.value, self.task, flag, self.rsr, self.t_star_mean
        )
    }
}

/// One-at-a-time sensitivity sweep over the three tasks. Offsets whose
/// parameters fail a gate are reported as flagged rows and not run.
pub fn sweep(
    base: &RunConfig,
    param: &str,
    episodes: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    let v0 = base
        .param(param)
        .ok_or_else(|| HarnessError::UnknownParam(param.into()))?;
    let mut rows = Vec::new();
    for off in SWEEP_OFFSETS {
        let value = v0 * (1.0 + off);
        let cfg = base.with_param(param, value).expect("name checked above");
        let row = |task: String, flagged: Option<String>, rsr: f64, t: f64| SweepRow {
            param: param.to_string(),
            offset: off,
            value,
            task,
            flagged,
            rsr,
            t_star_mean: t,
        };
        let refused = match preflight(&cfg) {
            Err(HarnessError::Gate(text)) => Some(
                text.lines()
                    .filter(|l| l.ends_with("FAIL"))
                    .collect::<Vec<_>>()
                    .join("; "),
            ),
            Err(HarnessError::Config(e)) => Some(e.to_string()),
            Err(e) => return Err(e),
            Ok(()) => None,
        };
        if let Some(reason) = refused {
            rows.push(row("all".into(), Some(reason), f64::NAN, f64::NAN));
            continue;
        }
        let (mut rs, mut ts) = (Vec::new(), Vec::new());
        for task in TaskKind::ALL {
            let run = RunConfig {
                task,
                n_episodes: episodes,
                warmup_episodes: None,
                ..cfg.clone()
            };
            let report = summarize(task, &run_experiment(&run, None)?);
            let agg = report.aggregate();
            rs.push(agg.rsr);
            ts.push(agg.t_star_mean);
            rows.push(row(task.to_string(), None, agg.rsr, agg.t_star_mean));
        }
        rows.push(row("all".into(), None, mean(&rs), mean(&ts)));
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{}\n", SweepRow::HEADER);
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn sweep_to_dir(
    base: &RunConfig,
    param: &str,
    episodes: usize,
    dir: &Path,
) -> Result<Vec<SweepRow>, HarnessError> {
    base.validate()?;
    let rows = sweep(base, param, episodes)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("sweep.csv");
    fs::write(&p, sweep_csv(&rows)).map_err(io_err(&p))?;
    Ok(rows)
}
