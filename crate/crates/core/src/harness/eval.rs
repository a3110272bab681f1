use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::seeds::{derive_seed, EVAL_STREAM};
use crate::episode::{sample_episode, Dataset, Episode, EpisodeSpec, Split};
use crate::error::Result;
use crate::model::{forward_episode, ModelParams};

/// Accuracy summary over a batch of evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub mean_accuracy: f64,
    /// Half-width of the normal-approximation 95% interval, `1.96 sd / sqrt(n)`.
    pub ci95: f64,
    pub accuracies: Vec<f64>,
    pub wall_time: Duration,
}

impl EvalReport {
    pub fn from_accuracies(split: Split, accuracies: Vec<f64>, wall_time: Duration) -> Self {
        let (mean_accuracy, ci95) = mean_ci95(&accuracies);
        Self {
            split,
            mean_accuracy,
            ci95,
            accuracies,
            wall_time,
        }
    }

    pub fn episodes(&self) -> usize {
        self.accuracies.len()
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.mean_accuracy - self.ci95, self.mean_accuracy + self.ci95)
    }
}

/// Mean and 95% half-width using the sample standard deviation.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Fraction of queries whose predicted label matches.
pub fn episode_accuracy(params: &ModelParams, episode: &Episode) -> Result<f64> {
    let out = forward_episode(params, episode, None)?;
    Ok(query_accuracy(&out.predictions(), episode))
}

pub(crate) fn query_accuracy(predictions: &[usize], episode: &Episode) -> f64 {
    let queries = episode.query_indices();
    if queries.is_empty() {
        return 0.0;
    }
    let hits = queries
        .iter()
        .zip(predictions)
        .filter(|(&q, &p)| episode.labels[q] == p)
        .count();
    hits as f64 / queries.len() as f64
}

/// Deterministic evaluation episodes: episode `i` depends only on `seed`
/// and `i`.
pub fn eval_episodes(dataset: &Dataset, split: Split, spec: &EpisodeSpec, count: usize, seed: u64) -> Result<Vec<Episode>> {
    (0..count)
        .map(|i| sample_episode(dataset, split, spec, derive_seed(seed, EVAL_STREAM, i as u64)))
        .collect()
}

pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    split: Split,
    spec: &EpisodeSpec,
    count: usize,
    seed: u64,
) -> Result<EvalReport> {
    let start = Instant::now();
    let episodes = eval_episodes(dataset, split, spec, count, seed)?;
    let accuracies = episodes
        .iter()
        .map(|e| episode_accuracy(params, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_accuracies(split, accuracies, start.elapsed()))
}

/// Same episodes and result as [`evaluate`], spread over the rayon pool.
pub fn evaluate_parallel(
    params: &ModelParams,
    dataset: &Dataset,
    split: Split,
    spec: &EpisodeSpec,
    count: usize,
    seed: u64,
) -> Result<EvalReport> {
    let start = Instant::now();
    let accuracies = (0..count)
        .into_par_iter()
        .map(|i| {
            let e = sample_episode(dataset, split, spec, derive_seed(seed, EVAL_STREAM, i as u64))?;
            episode_accuracy(params, &e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_accuracies(split, accuracies, start.elapsed()))
}
