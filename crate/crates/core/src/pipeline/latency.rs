use serde::{Deserialize, Serialize};

use super::FrameResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl Distribution {
    /// Exact order statistics; `p95` is nearest-rank. `None` for empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        let rank = (0.95 * n as f64).ceil() as usize;
        Some(Self {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            p95: v[rank.clamp(1, n) - 1],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorAgeStats {
    pub mean: f64,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub frames: usize,
    /// Propagation-worker time per frame, milliseconds.
    pub step_ms: Distribution,
    pub prior_age: PriorAgeStats,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("cannot summarise an empty result sequence")]
pub struct EmptyResults;

pub fn measure_latency(results: &[FrameResult]) -> Result<LatencySummary, EmptyResults> {
    let ms: Vec<f64> = results.iter().map(|r| r.step_latency.as_secs_f64() * 1e3).collect();
    let step_ms = Distribution::of(&ms).ok_or(EmptyResults)?;
    let ages = results.iter().map(|r| r.prior_age);
    Ok(LatencySummary {
        frames: results.len(),
        step_ms,
        prior_age: PriorAgeStats {
            mean: ages.clone().sum::<usize>() as f64 / results.len() as f64,
            max: ages.max().unwrap_or(0),
        },
    })
}
