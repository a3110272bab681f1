use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::adam::{AdamConfig, AdamState};
use super::config::TrainConfig;
use super::eval::{episode_accuracy, query_accuracy};
use super::seeds::{derive_seed, TRAIN_STREAM, VAL_STREAM};
use crate::episode::{sample_episode, Dataset, Episode, Split};
use crate::error::{Error, Result};
use crate::inference::{LossBreakdown, LossWeights};
use crate::model::{forward_episode, ModelParams};
use crate::tensor::GradMap;

pub const METRICS_HEADER: &str = "iteration,loss_total,loss_adj,loss_assign,loss_cls,train_acc,val_acc,lr";

/// A run fails when more than this fraction of iterations were skipped.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

/// One line of the metrics log. Losses are averaged over the iteration's
/// episodes; they are NaN for skipped iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss_total: f64,
    pub loss_adj: f64,
    pub loss_assign: f64,
    pub loss_cls: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub lr: f64,
    pub skipped: bool,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let val = self.val_acc.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration, self.loss_total, self.loss_adj, self.loss_assign, self.loss_cls, self.train_acc, val, self.lr
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{}", r.csv_line()).unwrap();
    }
    out
}

pub fn write_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: ModelParams,
    /// Parameters at the best validation accuracy; earliest wins ties.
    pub best_params: ModelParams,
    pub best_iteration: usize,
    pub best_val_acc: f64,
    pub metrics: Vec<MetricsRow>,
    pub skipped: usize,
    pub failed: bool,
}

struct EpisodeResult {
    grads: GradMap,
    losses: LossBreakdown,
    accuracy: f64,
}

fn episode_gradients(params: &ModelParams, episode: &Episode, weights: LossWeights) -> Result<EpisodeResult> {
    let out = forward_episode(params, episode, Some(weights))?;
    let losses = out.loss_breakdown(weights).expect("losses requested");
    if !losses.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", losses.total)));
    }
    let root = out.losses.expect("losses requested").total;
    let grads = out.graph.backward(root)?.for_params(&out.graph, &params.store);
    Ok(EpisodeResult {
        grads,
        losses,
        accuracy: query_accuracy(&out.predictions(), episode),
    })
}

/// Seed of training episode `j` in 0-based iteration `it`.
pub fn train_episode_seed(cfg: &TrainConfig, it: usize, j: usize) -> u64 {
    derive_seed(cfg.seed, TRAIN_STREAM, (it * cfg.episodes_per_iteration + j) as u64)
}

/// Meta-trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with_observer(cfg, dataset, |_| {})
}

/// As [`train`], calling `observe` after every iteration.
pub fn train_with_observer(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut observe: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_dataset(dataset)?;
    let model_cfg = cfg.model_config(dataset.raw_dim);
    let mut params = ModelParams::init(&model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(
        &params.store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let spec = cfg.episode_spec();
    let weights = cfg.loss_weights();
    let val_set = (0..cfg.val_episodes)
        .map(|i| sample_episode(dataset, Split::Val, &spec, derive_seed(cfg.seed, VAL_STREAM, i as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut skipped = 0;
    for it in 0..cfg.iterations {
        let lr = cfg.lr_at(it);
        let results: Vec<Result<EpisodeResult>> = (0..cfg.episodes_per_iteration)
            .into_par_iter()
            .map(|j| {
                let ep = sample_episode(dataset, Split::Train, &spec, train_episode_seed(cfg, it, j))?;
                episode_gradients(&params, &ep, weights)
            })
            .collect();

        let mut row = MetricsRow {
            iteration: it + 1,
            loss_total: f64::NAN,
            loss_adj: f64::NAN,
            loss_assign: f64::NAN,
            loss_cls: f64::NAN,
            train_acc: f64::NAN,
            val_acc: None,
            lr,
            skipped: true,
        };
        let mut sum = GradMap::zeros_like(&params.store);
        let mut ok = true;
        let (mut tot, mut adj, mut asg, mut cls, mut acc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for r in results {
            match r {
                Ok(r) => {
                    sum.add_assign(&r.grads);
                    tot += r.losses.total;
                    adj += r.losses.adjacency;
                    asg += r.losses.assignment;
                    cls += r.losses.classification;
                    acc += r.accuracy;
                }
                Err(Error::NonFinite(_)) => ok = false,
                Err(e) => return Err(e),
            }
        }
        if ok && adam.step(&mut params.store, &sum, lr) {
            let n = cfg.episodes_per_iteration as f64;
            row.loss_total = tot / n;
            row.loss_adj = adj / n;
            row.loss_assign = asg / n;
            row.loss_cls = cls / n;
            row.train_acc = acc / n;
            row.skipped = false;
        } else {
            skipped += 1;
        }

        if (it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations {
            let accs = val_set
                .iter()
                .map(|e| episode_accuracy(&params, e))
                .collect::<Result<Vec<_>>>()?;
            let val = accs.iter().sum::<f64>() / accs.len() as f64;
            row.val_acc = Some(val);
            if best.as_ref().is_none_or(|(_, b, _)| val > *b) {
                best = Some((it + 1, val, params.clone()));
            }
        }
        observe(&row);
        metrics.push(row);
    }

    let (best_iteration, best_val_acc, best_params) = best.unwrap_or_else(|| (0, f64::NAN, params.clone()));
    let failed = cfg.iterations > 0 && skipped as f64 > MAX_SKIP_FRACTION * cfg.iterations as f64;
    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_iteration,
        best_val_acc,
        metrics,
        skipped,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skipped_rows_serialize_with_empty_validation() {
        let row = MetricsRow {
            iteration: 3,
            loss_total: f64::NAN,
            loss_adj: f64::NAN,
            loss_assign: f64::NAN,
            loss_cls: f64::NAN,
            train_acc: f64::NAN,
            val_acc: None,
            lr: 0.001,
            skipped: true,
        };
        assert_eq!(row.csv_line(), "3,NaN,NaN,NaN,NaN,NaN,,0.001");
        assert!(metrics_csv(&[row]).starts_with(METRICS_HEADER));
    }
}
