use std::fmt::Write as _;
use std::path::Path;

use super::config::TrainConfig;
use super::eval::{evaluate, mean_ci95};
use super::train::train;
use crate::episode::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::Ablation;

/// Cartesian grid of variants, head counts, depths and seeds around a base
/// configuration.
#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub base: TrainConfig,
    pub variants: Vec<Ablation>,
    pub heads: Vec<usize>,
    pub layers: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    /// Variant sweep at the base depth and head count.
    pub fn variants(base: TrainConfig, seeds: Vec<u64>) -> Self {
        Self {
            heads: vec![base.heads],
            layers: vec![base.layers],
            base,
            variants: Ablation::ALL.to_vec(),
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.heads.is_empty() || self.layers.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation grid has an empty axis".into()));
        }
        if let Some(h) = self.heads.iter().find(|&&h| h == 0 || h > 16) {
            return Err(Error::Config(format!("heads {h} outside 1..=16")));
        }
        if let Some(l) = self.layers.iter().find(|&&l| l == 0 || l > 8) {
            return Err(Error::Config(format!("layers {l} outside 1..=8")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub variant: Ablation,
    pub heads: usize,
    pub layers: usize,
    pub seed: u64,
    /// Test accuracy and its episode-level 95% half-width, or the reason
    /// the run failed.
    pub result: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub variant: Ablation,
    pub heads: usize,
    pub layers: usize,
    pub mean: f64,
    /// Half-width over per-seed accuracies.
    pub ci95: f64,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

pub const ABLATION_HEADER: &str = "variant,heads,layers,seed,accuracy,ci95,status";

impl AblationTable {
    pub fn summaries(&self) -> Vec<AblationSummary> {
        let mut keys: Vec<(Ablation, usize, usize)> = Vec::new();
        for c in &self.cells {
            let k = (c.variant, c.heads, c.layers);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(variant, heads, layers)| {
                let group: Vec<&AblationCell> = self
                    .cells
                    .iter()
                    .filter(|c| (c.variant, c.heads, c.layers) == (variant, heads, layers))
                    .collect();
                let accs: Vec<f64> = group.iter().filter_map(|c| c.result.as_ref().ok().map(|r| r.0)).collect();
                let (mean, ci95) = mean_ci95(&accs);
                AblationSummary {
                    variant,
                    heads,
                    layers,
                    mean,
                    ci95,
                    completed: accs.len(),
                    failed: group.len() - accs.len(),
                }
            })
            .collect()
    }

    pub fn summary(&self, variant: Ablation) -> Option<AblationSummary> {
        self.summaries().into_iter().find(|s| s.variant == variant)
    }

    /// One row per run, then one `mean` row per (variant, heads, layers).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{ABLATION_HEADER}").unwrap();
        for c in &self.cells {
            match &c.result {
                Ok((acc, ci)) => writeln!(out, "{},{},{},{},{acc},{ci},ok", c.variant, c.heads, c.layers, c.seed),
                Err(reason) => writeln!(
                    out,
                    "{},{},{},{},,,failed: {}",
                    c.variant,
                    c.heads,
                    c.layers,
                    c.seed,
                    reason.replace([',', '\n'], ";")
                ),
            }
            .unwrap();
        }
        for s in self.summaries() {
            let status = if s.failed == 0 {
                "ok".to_string()
            } else {
                format!("{} of {} failed", s.failed, s.failed + s.completed)
            };
            writeln!(out, "{},{},{},mean,{},{},{status}", s.variant, s.heads, s.layers, s.mean, s.ci95).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains and tests one configuration; the best validation checkpoint is
/// scored on `cfg.eval_episodes` test episodes.
pub fn train_and_test(cfg: &TrainConfig, dataset: &Dataset) -> Result<(f64, f64)> {
    let outcome = train(cfg, dataset)?;
    if outcome.failed {
        return Err(Error::NonFinite(format!(
            "{} of {} iterations skipped",
            outcome.skipped, cfg.iterations
        )));
    }
    let report = evaluate(
        &outcome.best_params,
        dataset,
        Split::Test,
        &cfg.episode_spec(),
        cfg.eval_episodes,
        cfg.seed,
    )?;
    Ok((report.mean_accuracy, report.ci95))
}

/// Runs every grid cell in a fixed order. A failing run is recorded and
/// the sweep continues; invalid grids are rejected up front.
pub fn run_ablation(grid: &AblationGrid, dataset: &Dataset) -> Result<AblationTable> {
    run_ablation_with_observer(grid, dataset, |_| {})
}

pub fn run_ablation_with_observer(
    grid: &AblationGrid,
    dataset: &Dataset,
    mut observe: impl FnMut(&AblationCell),
) -> Result<AblationTable> {
    grid.validate()?;
    let mut table = AblationTable::default();
    for &variant in &grid.variants {
        for &heads in &grid.heads {
            for &layers in &grid.layers {
                for &seed in &grid.seeds {
                    let cfg = TrainConfig {
                        ablation: variant,
                        heads,
                        layers,
                        seed,
                        ..grid.base.clone()
                    };
                    let result = train_and_test(&cfg, dataset).map_err(|e| e.to_string());
                    let cell = AblationCell {
                        variant,
                        heads,
                        layers,
                        seed,
                        result,
                    };
                    observe(&cell);
                    table.cells.push(cell);
                }
            }
        }
    }
    Ok(table)
}
