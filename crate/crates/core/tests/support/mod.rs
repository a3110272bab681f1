#![allow(dead_code)]

pub mod fd;
pub mod invariants;
pub mod oracle;

use eckpn::episode::{gen_synthetic_dataset, sample_episode, DataConfig, Dataset, Episode, EpisodeSpec, Split};
use eckpn::{Ablation, ModelConfig, ModelParams};

pub fn tiny_dataset(raw_dim: usize, semantic_dim: usize, seed: u64) -> Dataset {
    gen_synthetic_dataset(&DataConfig {
        class_count: 30,
        raw_dim,
        semantic_dim,
        seed,
        ..DataConfig::default()
    })
    .unwrap()
}

pub fn tiny_config(ways: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig {
        ways,
        raw_dim: 5,
        enc_dim: 4,
        dim: 8,
        heads: 2,
        layers: 2,
        semantic_dim: 3,
        leaky_slope: 0.2,
        ablation,
    }
}

pub fn episode(ds: &Dataset, ways: usize, shots: usize, queries: usize, label_ratio: f64, seed: u64) -> Episode {
    let spec = EpisodeSpec {
        ways,
        shots,
        queries,
        label_ratio,
    };
    sample_episode(ds, Split::Train, &spec, seed).unwrap()
}

/// A model, dataset and episode sized for exhaustive checks.
pub fn tiny_case(ablation: Ablation, ways: usize, shots: usize, queries: usize, seed: u64) -> (ModelParams, Episode) {
    let cfg = tiny_config(ways, ablation);
    let ds = tiny_dataset(cfg.raw_dim, cfg.semantic_dim, seed);
    let ep = episode(&ds, ways, shots, queries, 1.0, seed);
    (ModelParams::init(&cfg, seed).unwrap(), ep)
}
