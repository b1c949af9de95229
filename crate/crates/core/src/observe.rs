//! Observation vector built from consecutive cognitive states.
//!
//! Four blocks feed the emission functions: residual error, output entropy,
//! update geometry and provisional-output quality.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ObserveError {
    #[error("state component {index} = {value} outside [0,1]")]
    StateOutOfRange { index: usize, value: f64 },
    #[error("distribution is invalid: {0}")]
    BadDistribution(String),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

/// Point in the cognitive state space `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CognitiveState(Vec<f64>);

impl CognitiveState {
    pub fn new(values: Vec<f64>) -> Result<Self, ObserveError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ObserveError::StateOutOfRange { index, value });
        }
        Ok(CognitiveState(values))
    }

    /// Builds a state by clipping every component into `[0,1]`.
    /// Non-finite components become 0.
    pub fn clipped(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            *v = if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        CognitiveState(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Probability vector over a task's candidate outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutputDistribution(Vec<f64>);

impl OutputDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ObserveError> {
        if probs.is_empty() {
            return Err(ObserveError::BadDistribution("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ObserveError::BadDistribution(
                "negative or non-finite mass".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ObserveError::BadDistribution(format!("sums to {sum}")));
        }
        Ok(OutputDistribution(probs))
    }

    /// Normalizes non-negative weights. All-zero weights give the uniform distribution.
    pub fn from_weights(mut w: Vec<f64>) -> Self {
        assert!(!w.is_empty(), "distribution needs at least one outcome");
        for v in &mut w {
            if !v.is_finite() || *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            let n = w.len() as f64;
            w.iter_mut().for_each(|v| *v = 1.0 / n);
        } else {
            w.iter_mut().for_each(|v| *v /= sum);
        }
        OutputDistribution(w)
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut p = vec![0.0; n];
        p[at] = 1.0;
        OutputDistribution(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// Variance of the candidate probabilities.
    pub fn variance(&self) -> f64 {
        let n = self.0.len() as f64;
        let mean = 1.0 / n;
        self.0.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationParams {
    pub window: usize,
    pub ema_decay: f64,
}

impl Default for ObservationParams {
    fn default() -> Self {
        ObservationParams {
            window: 5,
            ema_decay: 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBlock {
    /// Raw update magnitude.
    pub err_abs: f64,
    /// Update magnitude over the episode's running maximum.
    pub err_norm: f64,
    pub err_rel: f64,
    /// Window mean of the normalized error.
    pub err_ma: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyBlock {
    pub entropy: f64,
    pub entropy_norm: f64,
    pub entropy_rate: f64,
    pub conf_variance: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateBlock {
    pub update_norm: f64,
    pub cos_align: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputBlock {
    pub conf_max: f64,
    pub consistency: f64,
    pub output_hamming: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub error: ErrorBlock,
    pub entropy: EntropyBlock,
    pub update: UpdateBlock,
    pub output: OutputBlock,
}

/// Euclidean distance between two states.
pub fn residual_error(s_t: &CognitiveState, s_prev: &CognitiveState) -> Result<f64, ObserveError> {
    if s_t.dim() != s_prev.dim() {
        return Err(ObserveError::Dimension(s_t.dim(), s_prev.dim()));
    }
    Ok(l2_diff(s_t.values(), s_prev.values()))
}

pub(crate) fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Shannon entropy in nats and its normalization by `ln |Y|`.
/// A single-outcome alphabet has normalized entropy 0.
pub fn shannon_entropy(p: &OutputDistribution) -> (f64, f64) {
    let h: f64 = p
        .probs()
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum::<f64>()
        .max(0.0);
    let n = p.probs().len();
    if n <= 1 {
        return (0.0, 0.0);
    }
    let hmax = (n as f64).ln();
    let h = h.min(hmax);
    (h, (h / hmax).clamp(0.0, 1.0))
}

/// Cosine between the update and the running convergence direction, plus the
/// updated direction.
///
/// A vanishing update leaves the direction unchanged. An unset (zero) running
/// direction yields cosine 0 and is seeded with the update direction.
pub fn update_direction(delta_s: &[f64], d_conv_prev: &[f64], ema_decay: f64) -> (f64, Vec<f64>) {
    const EPS: f64 = 1e-12;
    let nd = l2_norm(delta_s);
    let np = l2_norm(d_conv_prev);
    if nd < EPS {
        return (0.0, d_conv_prev.to_vec());
    }
    let unit: Vec<f64> = delta_s.iter().map(|x| x / nd).collect();
    if np < EPS {
        return (0.0, unit);
    }
    let dot: f64 = delta_s.iter().zip(d_conv_prev).map(|(a, b)| a * b).sum();
    let cos = (dot / (nd * np)).clamp(-1.0, 1.0);
    let mixed: Vec<f64> = d_conv_prev
        .iter()
        .zip(&unit)
        .map(|(d, u)| ema_decay * d / np + (1.0 - ema_decay) * u)
        .collect();
    let nm = l2_norm(&mixed);
    let next = if nm < EPS {
        d_conv_prev.to_vec()
    } else {
        mixed.iter().map(|x| x / nm).collect()
    };
    (cos, next)
}

/// Fraction of positions whose encoded values differ.
pub fn normalized_hamming(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    if n == 0 {
        return 0.0;
    }
    let common = a.len().min(b.len());
    let diff = a
        .iter()
        .zip(b)
        .filter(|(x, y)| (*x - *y).abs() > 1e-12)
        .count()
        + (n - common);
    diff as f64 / n as f64
}

/// Per-episode memory the observation builder carries between cycles.
#[derive(Clone, Debug, Default)]
pub struct ObservationHistory {
    window: VecDeque<f64>,
    err_max: f64,
    prev_err: Option<f64>,
    prev_entropy: Option<f64>,
    d_conv: Vec<f64>,
}

impl ObservationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn direction(&self) -> &[f64] {
        &self.d_conv
    }
}

/// Builds the observation for the latest state.
///
/// `s_prev = None` marks the first cycle of an episode, which produces the
/// neutral error block (normalized error 1, relative error 1), zero entropy
/// rate and zero alignment.
#[allow(clippy::too_many_arguments)]
pub fn build_observation(
    s_t: &CognitiveState,
    s_prev: Option<&CognitiveState>,
    p: &OutputDistribution,
    y_t: &[f64],
    y_prev: Option<&[f64]>,
    consistency: f64,
    history: &mut ObservationHistory,
    params: &ObservationParams,
) -> Result<Observation, ObserveError> {
    let (entropy, entropy_norm) = shannon_entropy(p);
    let entropy_block = |rate| EntropyBlock {
        entropy,
        entropy_norm,
        entropy_rate: rate,
        conf_variance: p.variance(),
    };
    let output = OutputBlock {
        conf_max: p.max_prob(),
        consistency: consistency.clamp(0.0, 1.0),
        output_hamming: y_prev.map_or(0.0, |yp| normalized_hamming(y_t, yp)),
    };

    let Some(s_prev) = s_prev else {
        history.prev_entropy = Some(entropy);
        push_window(history, 1.0, params.window);
        return Ok(Observation {
            error: ErrorBlock {
                err_abs: 0.0,
                err_norm: 1.0,
                err_rel: 1.0,
                err_ma: 1.0,
            },
            entropy: entropy_block(0.0),
            update: UpdateBlock::default(),
            output,
        });
    };

    let err = residual_error(s_t, s_prev)?;
    history.err_max = history.err_max.max(err).max(1e-9);
    let err_norm = (err / history.err_max).clamp(0.0, 1.0);
    let err_rel = match history.prev_err {
        Some(prev) if prev > 1e-12 => err / prev,
        Some(_) if err <= 1e-12 => 1.0,
        Some(_) => 1e6,
        None => 1.0,
    }
    .min(1e6);
    history.prev_err = Some(err);
    push_window(history, err_norm, params.window);
    let err_ma = history.window.iter().sum::<f64>() / history.window.len() as f64;

    let rate = history.prev_entropy.map_or(0.0, |h| entropy - h);
    history.prev_entropy = Some(entropy);

    if history.d_conv.len() != s_t.dim() {
        history.d_conv = vec![0.0; s_t.dim()];
    }
    let delta: Vec<f64> = s_t
        .values()
        .iter()
        .zip(s_prev.values())
        .map(|(a, b)| a - b)
        .collect();
    let (cos_align, d_next) = update_direction(&delta, &history.d_conv, params.ema_decay);
    history.d_conv = d_next;

    Ok(Observation {
        error: ErrorBlock {
            err_abs: err,
            err_norm,
            err_rel,
            err_ma,
        },
        entropy: entropy_block(rate),
        update: UpdateBlock {
            update_norm: err,
            cos_align,
        },
        output,
    })
}

fn push_window(history: &mut ObservationHistory, v: f64, w: usize) {
    history.window.push_back(v);
    while history.window.len() > w.max(1) {
        history.window.pop_front();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(v: &[f64]) -> CognitiveState {
        CognitiveState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn residual_examples() {
        assert_eq!(
            residual_error(&st(&[0.2, 0.3]), &st(&[0.2, 0.3])).unwrap(),
            0.0
        );
        assert_eq!(
            residual_error(&st(&[1.0, 0.0]), &st(&[0.0, 0.0])).unwrap(),
            1.0
        );
        assert!((residual_error(&st(&[0.3, 0.4]), &st(&[0.0, 0.0])).unwrap() - 0.5).abs() < 1e-15);
        assert!(residual_error(&st(&[0.3]), &st(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn state_rejects_out_of_range() {
        assert!(CognitiveState::new(vec![0.5, 1.2]).is_err());
        assert_eq!(
            CognitiveState::clipped(vec![-0.5, 1.2, f64::NAN]).values(),
            &[0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn entropy_examples() {
        let (h, n) = shannon_entropy(&OutputDistribution::new(vec![0.25; 4]).unwrap());
        assert!((h - 4f64.ln()).abs() < 1e-12 && (n - 1.0).abs() < 1e-12);
        let (h, n) = shannon_entropy(&OutputDistribution::point_mass(4, 2));
        assert_eq!((h, n), (0.0, 0.0));
        let (h, n) = shannon_entropy(&OutputDistribution::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap());
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((n - 0.5).abs() < 1e-12);
    }

    #[test]
    fn entropy_maximized_by_uniform_on_grid() {
        let hmax = shannon_entropy(&OutputDistribution::new(vec![1.0 / 3.0; 3]).unwrap()).0;
        for i in 0..=100 {
            for j in 0..=(100 - i) {
                let k = 100 - i - j;
                let p = OutputDistribution::from_weights(vec![i as f64, j as f64, k as f64]);
                let h = shannon_entropy(&p).0;
                assert!(h <= hmax + 1e-12);
                let q = OutputDistribution::from_weights(vec![k as f64, i as f64, j as f64]);
                assert!((shannon_entropy(&q).0 - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direction_examples() {
        let s = 2f64.sqrt();
        assert!((update_direction(&[0.3, 0.3], &[1.0 / s, 1.0 / s], 0.8).0 - 1.0).abs() < 1e-12);
        assert!(
            update_direction(&[1.0, -1.0], &[1.0 / s, 1.0 / s], 0.8)
                .0
                .abs()
                < 1e-12
        );
        let (c, _) = update_direction(&[1.0, 0.0], &[1.0 / s, 1.0 / s], 0.8);
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let (c, d) = update_direction(&[0.0, 0.0], &[1.0, 0.0], 0.8);
        assert_eq!((c, d), (0.0, vec![1.0, 0.0]));
        let (c, d) = update_direction(&[0.0, 2.0], &[0.0, 0.0], 0.8);
        assert_eq!((c, d), (0.0, vec![0.0, 1.0]));
    }

    #[test]
    fn converged_tail_signature() {
        let mut hist = ObservationHistory::new();
        let params = ObservationParams::default();
        let s = st(&[0.4, 0.6]);
        let p = OutputDistribution::point_mass(4, 1);
        let y = [1.0, 2.0];
        build_observation(&s, None, &p, &y, None, 1.0, &mut hist, &params).unwrap();
        let o = build_observation(&s, Some(&s), &p, &y, Some(&y), 1.0, &mut hist, &params).unwrap();
        assert_eq!(o.error.err_abs, 0.0);
        assert_eq!(o.entropy.entropy, 0.0);
        assert_eq!(o.output.conf_max, 1.0);
        assert_eq!(o.output.output_hamming, 0.0);
        assert_eq!(o.output.consistency, 1.0);
    }

    #[test]
    fn first_cycle_is_neutral() {
        let mut hist = ObservationHistory::new();
        let p = OutputDistribution::new(vec![0.25; 4]).unwrap();
        let o = build_observation(
            &st(&[0.5, 0.5]),
            None,
            &p,
            &[0.0],
            None,
            0.5,
            &mut hist,
            &ObservationParams::default(),
        )
        .unwrap();
        assert_eq!(o.error.err_rel, 1.0);
        assert_eq!(o.error.err_norm, 1.0);
        assert_eq!(o.entropy.entropy_rate, 0.0);
        assert_eq!(o.update.cos_align, 0.0);
    }

    #[test]
    fn two_cycle_hand_trace() {
        // d = 2, |Y| = 4. Each field recomputed independently below.
        let params = ObservationParams {
            window: 5,
            ema_decay: 0.8,
        };
        let mut hist = ObservationHistory::new();
        let s0 = st(&[0.5, 0.5]);
        let s1 = st(&[0.8, 0.9]);
        let s2 = st(&[0.9, 1.0]);
        let p0 = OutputDistribution::new(vec![0.25; 4]).unwrap();
        let p1 = OutputDistribution::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let p2 = OutputDistribution::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let y0 = [0.0, 0.0, 0.0];
        let y1 = [1.0, 0.0, 0.0];
        let y2 = [1.0, 1.0, 1.0];
        build_observation(&s0, None, &p0, &y0, None, 0.5, &mut hist, &params).unwrap();
        let o1 = build_observation(
            &s1,
            Some(&s0),
            &p1,
            &y1,
            Some(&y0),
            0.75,
            &mut hist,
            &params,
        )
        .unwrap();
        let o2 = build_observation(&s2, Some(&s1), &p2, &y2, Some(&y1), 1.0, &mut hist, &params)
            .unwrap();

        // cycle 1: step (0.3, 0.4) has norm 0.5, which becomes the running max
        assert!((o1.error.err_abs - 0.5).abs() < 1e-12);
        assert!((o1.error.err_norm - 1.0).abs() < 1e-12);
        assert_eq!(o1.error.err_rel, 1.0);
        assert!((o1.error.err_ma - 1.0).abs() < 1e-12);
        let h1 =
            -(0.4f64 * 0.4f64.ln() + 0.3 * 0.3f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        assert!((o1.entropy.entropy - h1).abs() < 1e-12);
        assert!((o1.entropy.entropy_rate - (h1 - 4f64.ln())).abs() < 1e-12);
        assert_eq!(o1.update.cos_align, 0.0);
        assert!((o1.output.output_hamming - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(o1.output.conf_max, 0.4);

        // cycle 2: step (0.1, 0.1), norm sqrt(0.02), direction vs (0.6, 0.8)
        let e2 = 0.02f64.sqrt();
        assert!((o2.error.err_abs - e2).abs() < 1e-12);
        assert!((o2.error.err_norm - e2 / 0.5).abs() < 1e-12);
        assert!((o2.error.err_rel - e2 / 0.5).abs() < 1e-12);
        assert!((o2.error.err_ma - (1.0 + 1.0 + e2 / 0.5) / 3.0).abs() < 1e-12);
        let cos = (0.1 * 0.6 + 0.1 * 0.8) / (e2 * 1.0);
        assert!((o2.update.cos_align - cos).abs() < 1e-12);
        let h2 = -(0.7f64 * 0.7f64.ln() + 3.0 * 0.1 * 0.1f64.ln());
        assert!((o2.entropy.entropy_rate - (h2 - h1)).abs() < 1e-12);
        assert!((o2.output.output_hamming - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(o2.output.consistency, 1.0);
    }

    fn arb_dist() -> impl Strategy<Value = OutputDistribution> {
        prop::collection::vec(0.0..1.0f64, 1..20).prop_map(|mut w| {
            w[0] += 1e-6;
            OutputDistribution::from_weights(w)
        })
    }

    proptest! {
        #[test]
        fn entropy_in_bounds(p in arb_dist()) {
            let (h, n) = shannon_entropy(&p);
            prop_assert!(h >= 0.0 && h <= (p.probs().len() as f64).ln() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&n));
        }

        #[test]
        fn entropy_permutation_invariant(p in arb_dist(), rot in 0usize..20) {
            let mut q = p.probs().to_vec();
            let k = rot % q.len();
            q.rotate_left(k);
            let q = OutputDistribution::from_weights(q);
            prop_assert!((shannon_entropy(&p).0 - shannon_entropy(&q).0).abs() < 1e-12);
        }

        #[test]
        fn residual_triangle(
            a in prop::collection::vec(0.0..=1.0f64, 5),
            b in prop::collection::vec(0.0..=1.0f64, 5),
            c in prop::collection::vec(0.0..=1.0f64, 5),
        ) {
            let (a, b, c) = (st(&a), st(&b), st(&c));
            let ab = residual_error(&a, &b).unwrap();
            let bc = residual_error(&b, &c).unwrap();
            let ac = residual_error(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(
            a in prop::collection::vec(-1.0..1.0f64, 4),
            b in prop::collection::vec(-1.0..1.0f64, 4),
            k in 0.01..100.0f64,
        ) {
            prop_assume!(l2_norm(&a) > 1e-3 && l2_norm(&b) > 1e-3);
            let c1 = update_direction(&a, &b, 0.8).0;
            let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
            let kb: Vec<f64> = b.iter().map(|x| x * k).collect();
            prop_assert!((c1 - update_direction(&ka, &b, 0.8).0).abs() < 1e-9);
            prop_assert!((c1 - update_direction(&a, &kb, 0.8).0).abs() < 1e-9);
        }

        #[test]
        fn normalized_fields_in_unit_interval(
            s0 in prop::collection::vec(0.0..=1.0f64, 3),
            s1 in prop::collection::vec(0.0..=1.0f64, 3),
            s2 in prop::collection::vec(0.0..=1.0f64, 3),
            p in arb_dist(),
            cons in 0.0..=1.0f64,
        ) {
            let mut hist = ObservationHistory::new();
            let params = ObservationParams::default();
            let (s0, s1, s2) = (st(&s0), st(&s1), st(&s2));
            let y = [0.0, 1.0];
            let mut obs = vec![build_observation(&s0, None, &p, &y, None, cons, &mut hist, &params).unwrap()];
            obs.push(build_observation(&s1, Some(&s0), &p, &y, Some(&y), cons, &mut hist, &params).unwrap());
            obs.push(build_observation(&s2, Some(&s1), &p, &y, Some(&y), cons, &mut hist, &params).unwrap());
            for o in obs {
                for v in [o.error.err_norm, o.error.err_ma, o.entropy.entropy_norm,
                          o.output.conf_max, o.output.consistency, o.output.output_hamming] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!((-1.0..=1.0).contains(&o.update.cos_align));
                prop_assert!(o.error.err_abs >= 0.0);
            }
        }
    }
}
