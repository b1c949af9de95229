//! Experiment metrics over completed episodes.

use serde::{Deserialize, Serialize};

use crate::rrc::{EpisodeTrace, StopReason};

/// What the metrics need from one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDigest {
    pub episode: usize,
    pub warmup: bool,
    pub t_star: usize,
    pub criterion: bool,
    pub total_energy: f64,
    pub correct: bool,
    pub warm_flag: bool,
    pub v: Vec<f64>,
    pub h: Vec<f64>,
    pub residual: Vec<f64>,
}

impl EpisodeDigest {
    pub fn from_trace(trace: &EpisodeTrace, episode: usize, warmup: bool) -> Self {
        EpisodeDigest {
            episode,
            warmup,
            t_star: trace.summary.t_star,
            criterion: trace.summary.stop_reason == StopReason::Criterion,
            total_energy: trace.summary.total_energy,
            correct: trace.summary.correct,
            warm_flag: trace.summary.warm_flag,
            v: trace.records.iter().map(|r| r.lyapunov).collect(),
            h: trace.records.iter().map(|r| r.entropy).collect(),
            residual: trace.records.iter().map(|r| r.residual).collect(),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Fraction of correct outcomes.
pub fn rsr(correct: &[bool]) -> f64 {
    if correct.is_empty() {
        return f64::NAN;
    }
    correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64
}

pub fn frugality(e_mean: f64, e_baseline: f64) -> f64 {
    1.0 - e_mean / e_baseline
}

/// Sample Pearson coefficient. `None` for unequal or short inputs and for
/// constant series.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-iteration average over episodes; episodes shorter than `t` do not
/// contribute at `t`. Returns `(mean, count)` per iteration.
pub fn ragged_mean(series: &[&[f64]]) -> Vec<(f64, usize)> {
    let len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = series.iter().filter_map(|s| s.get(t).copied()).collect();
            (mean(&vals), vals.len())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub rho: f64,
    /// False when the raw estimate showed no contraction (ratio ≥ 1) or no
    /// usable cycles existed.
    pub contracting: bool,
}

const RHO_CLIP: f64 = 1e-6;

/// Geometric-mean ratio of successive residuals over cycles `2..=t*−1` of
/// each episode, averaged across episodes and clipped into (0,1).
pub fn estimate_rho(residuals: &[&[f64]]) -> RhoEstimate {
    let mut per_episode = Vec::new();
    for r in residuals {
        if r.len() < 4 {
            continue;
        }
        let mid = &r[2..r.len() - 1];
        let logs: Vec<f64> = mid
            .windows(2)
            .filter(|w| w[0] > 0.0 && w[1] > 0.0)
            .map(|w| (w[1] / w[0]).ln())
            .collect();
        if !logs.is_empty() {
            per_episode.push(mean(&logs).exp());
        }
    }
    if per_episode.is_empty() {
        return RhoEstimate {
            rho: 1.0 - RHO_CLIP,
            contracting: false,
        };
    }
    let raw = mean(&per_episode);
    RhoEstimate {
        rho: raw.clamp(RHO_CLIP, 1.0 - RHO_CLIP),
        contracting: raw < 1.0,
    }
}

/// Mean per-cycle exponential decay rate of the Lyapunov value:
/// `−mean ln(V(t+1)/V(t))` over positive consecutive pairs.
pub fn estimate_mu(vs: &[&[f64]]) -> f64 {
    let logs: Vec<f64> = vs
        .iter()
        .flat_map(|v| v.windows(2))
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| -(w[1] / w[0]).ln())
        .collect();
    mean(&logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rsr_examples() {
        assert_eq!(rsr(&[true; 4]), 1.0);
        assert_eq!(rsr(&[false; 4]), 0.0);
        assert_eq!(rsr(&[true, true, false, true]), 0.75);
    }

    #[test]
    fn frugality_examples() {
        assert_eq!(frugality(3.0, 3.0), 0.0);
        assert_eq!(frugality(1.5, 3.0), 0.5);
        assert!((frugality(0.22, 1.0) - 0.78).abs() < 1e-12);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        // sxy = 3, sxx = 2, syy = 14/3
        let want = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        let got = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.98198).abs() < 1e-5);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn rho_examples() {
        let halving: Vec<f64> = (0..10).map(|t| 0.5f64.powi(t)).collect();
        let e = estimate_rho(&[&halving]);
        assert!((e.rho - 0.5).abs() < 1e-12 && e.contracting);

        let flat = vec![0.3; 8];
        let e = estimate_rho(&[&flat]);
        assert!(e.rho > 0.99 && e.rho < 1.0 && !e.contracting);

        // cycles 2, 3, 4 carry the ratios 0.8 and 0.9; cycle 5 is the final one
        let synth = [9.0, 9.0, 1.0, 0.8, 0.72, 5.0];
        let e = estimate_rho(&[&synth]);
        assert!((e.rho - 0.72f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ragged_tail_excludes_short_episodes() {
        let a = [1.0, 2.0, 3.0];
        let b = [3.0];
        let m = ragged_mean(&[&a, &b]);
        assert_eq!(m, vec![(2.0, 2), (2.0, 1), (3.0, 1)]);
    }

    #[test]
    fn std_examples() {
        assert_eq!(std_dev(&[5.0]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 2.0f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pearson_bounded(xs in prop::collection::vec(-10.0..10.0f64, 3..30), seed in 0u64..1000) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * ((i as u64 + seed) % 7) as f64 - i as f64).collect();
            if let Some(r) = pearson(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
