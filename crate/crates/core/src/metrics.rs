//! Score arithmetic: return normalization, the top-k checkpoint protocol and
//! bootstrap confidence intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::rng::RngPolicy;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
const BOOTSTRAP_STREAM: &str = "metrics/bootstrap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    SuccessRate,
    RawReturn,
    NormalizedReturn,
}

impl MetricKind {
    pub fn is_unit_interval(self) -> bool {
        matches!(self, MetricKind::SuccessRate | MetricKind::NormalizedReturn)
    }
}

/// Scores recorded at evaluation checkpoints, keyed by epoch or environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric_kind: MetricKind,
    pub checkpoint_scores: Vec<(u64, f64)>,
}

impl MetricSeries {
    pub fn new(metric_kind: MetricKind) -> Self {
        Self { metric_kind, checkpoint_scores: Vec::new() }
    }

    pub fn push(&mut self, at: u64, score: f64) -> Result<(), CoreError> {
        if self.metric_kind.is_unit_interval() && !(0.0..=1.0).contains(&score) {
            return Err(CoreError::InvalidArgument(format!(
                "score {score} outside [0, 1] for {:?}",
                self.metric_kind
            )));
        }
        if let Some(&(last, _)) = self.checkpoint_scores.last() {
            if at <= last {
                return Err(CoreError::InvalidArgument(format!("checkpoint {at} not after {last}")));
            }
        }
        self.checkpoint_scores.push((at, score));
        Ok(())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.checkpoint_scores.iter().map(|&(_, s)| s).collect()
    }

    pub fn len(&self) -> usize {
        self.checkpoint_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoint_scores.is_empty()
    }

    pub fn last_score(&self) -> Option<f64> {
        self.checkpoint_scores.last().map(|&(_, s)| s)
    }
}

/// Affine map of `raw` from `[lo, hi]` onto `[0, 1]`, clamped at both ends.
pub fn normalize_return(raw: f64, lo: f64, hi: f64) -> Result<f64, CoreError> {
    if !(hi > lo) {
        return Err(CoreError::InvalidRange { lo, hi });
    }
    Ok(((raw - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Mean of the `k` largest scores.
pub fn top_k_mean(scores: &[f64], k: usize) -> Result<f64, CoreError> {
    if k == 0 {
        return Err(CoreError::InvalidArgument("k must be at least 1".into()));
    }
    if scores.len() < k {
        return Err(CoreError::InsufficientData { needed: k, got: scores.len() });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Mean with a percentile-bootstrap interval at `level`.
///
/// The resampling stream is addressed through `rng`, so the interval is a pure
/// function of `(values, level, rng)`.
pub fn aggregate_ci(values: &[f64], level: f64, rng: &RngPolicy) -> Result<Aggregate, CoreError> {
    aggregate_ci_with(values, level, rng, BOOTSTRAP_RESAMPLES)
}

pub fn aggregate_ci_with(
    values: &[f64],
    level: f64,
    rng: &RngPolicy,
    resamples: usize,
) -> Result<Aggregate, CoreError> {
    if values.len() < 2 {
        return Err(CoreError::InsufficientData { needed: 2, got: values.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CoreError::InvalidArgument(format!("confidence level {level} not in (0, 1)")));
    }
    if resamples == 0 {
        return Err(CoreError::InvalidArgument("resamples must be positive".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut r = rng.rng(BOOTSTRAP_STREAM, 0);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[r.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let lo = quantile_sorted(&means, alpha / 2.0).min(mean);
    let hi = quantile_sorted(&means, 1.0 - alpha / 2.0).max(mean);
    Ok(Aggregate { mean, lo, hi })
}
