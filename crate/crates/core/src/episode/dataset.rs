use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Parameters of the synthetic class-structured generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub class_count: usize,
    pub raw_dim: usize,
    pub semantic_dim: usize,
    /// Standard deviation of per-sample noise around the class prototype.
    pub within_class_stddev: f64,
    pub prototype_scale: f64,
    /// Fraction of each semantic embedding explained by the class prototype.
    pub semantic_coupling: f64,
    pub seed: u64,
    /// Train / val / test class fractions.
    pub split_fractions: [f64; 3],
    /// Materialized samples per class; 0 draws fresh samples on demand.
    pub samples_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            class_count: 100,
            raw_dim: 32,
            semantic_dim: 16,
            within_class_stddev: 0.5,
            prototype_scale: 1.0,
            semantic_coupling: 1.0,
            seed: 0,
            split_fractions: [0.64, 0.16, 0.20],
            samples_per_class: 0,
        }
    }
}

/// Explicit per-sample features, as loaded from a data file.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    by_class: Vec<Vec<usize>>,
}

impl SamplePool {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Config(format!(
                "sample pool has {} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &l) in labels.iter().enumerate() {
            let slot = by_class
                .get_mut(l)
                .ok_or_else(|| Error::Config(format!("sample {i} has label {l} >= {class_count}")))?;
            slot.push(i);
        }
        Ok(Self {
            features,
            labels,
            by_class,
        })
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }
}

/// Class prototypes, semantic embeddings and a disjoint class split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_count: usize,
    pub raw_dim: usize,
    pub semantic_dim: usize,
    pub within_class_stddev: f64,
    pub prototypes: Array2<f64>,
    pub semantic: Array2<f64>,
    pub splits: [Vec<usize>; 3],
    pub seed: u64,
    pub pool: Option<SamplePool>,
}

impl Dataset {
    pub fn classes(&self, split: Split) -> &[usize] {
        &self.splits[split.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.raw_dim == 0 || self.semantic_dim == 0 {
            return Err(Error::Config("dataset has a zero class count or dimension".into()));
        }
        if self.prototypes.dim() != (self.class_count, self.raw_dim) {
            return Err(Error::Config(format!(
                "prototypes are {:?}, expected ({}, {})",
                self.prototypes.dim(),
                self.class_count,
                self.raw_dim
            )));
        }
        if self.semantic.dim() != (self.class_count, self.semantic_dim) {
            return Err(Error::Config(format!(
                "semantic embeddings are {:?}, expected ({}, {})",
                self.semantic.dim(),
                self.class_count,
                self.semantic_dim
            )));
        }
        let mut seen = vec![false; self.class_count];
        for split in &self.splits {
            for &c in split {
                if c >= self.class_count || seen[c] {
                    return Err(Error::Config(format!(
                        "class {c} is out of range or appears in more than one split"
                    )));
                }
                seen[c] = true;
            }
        }
        if let Some(pool) = &self.pool {
            if pool.features.ncols() != self.raw_dim {
                return Err(Error::Config(format!(
                    "sample features have {} columns, expected {}",
                    pool.features.ncols(),
                    self.raw_dim
                )));
            }
        }
        Ok(())
    }

    /// Fresh sample of `class`: prototype plus isotropic Gaussian noise.
    pub(crate) fn draw(&self, class: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let proto = self.prototypes.row(class);
        if self.within_class_stddev == 0.0 {
            return proto.to_owned();
        }
        proto.mapv(|p| {
            let z: f64 = StandardNormal.sample(rng);
            p + self.within_class_stddev * z
        })
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Builds a synthetic dataset; identical configs give identical datasets.
pub fn gen_synthetic_dataset(cfg: &DataConfig) -> Result<Dataset> {
    if cfg.class_count == 0 || cfg.raw_dim == 0 || cfg.semantic_dim == 0 {
        return Err(Error::Config("class_count, raw_dim and semantic_dim must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.semantic_coupling) {
        return Err(Error::Config(format!(
            "semantic_coupling must lie in [0, 1], got {}",
            cfg.semantic_coupling
        )));
    }
    if !(cfg.within_class_stddev >= 0.0) || !(cfg.prototype_scale > 0.0) {
        return Err(Error::Config("stddev must be >= 0 and prototype_scale > 0".into()));
    }
    let fr = cfg.split_fractions;
    if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fr:?} must be >= 0 and sum to 1")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = gaussian_matrix(cfg.class_count, cfg.raw_dim, cfg.prototype_scale, &mut rng);
    // Fixed random map from feature space to semantic space, variance-preserving.
    let map = gaussian_matrix(cfg.raw_dim, cfg.semantic_dim, 1.0 / (cfg.raw_dim as f64).sqrt(), &mut rng);
    let noise = gaussian_matrix(cfg.class_count, cfg.semantic_dim, cfg.prototype_scale, &mut rng);
    let alpha = cfg.semantic_coupling;
    let semantic = prototypes.dot(&map) * alpha + noise * (1.0 - alpha);

    let mut order: Vec<usize> = (0..cfg.class_count).collect();
    order.shuffle(&mut rng);
    let n_train = ((fr[0] * cfg.class_count as f64).round() as usize).min(cfg.class_count);
    let n_val = ((fr[1] * cfg.class_count as f64).round() as usize).min(cfg.class_count - n_train);
    let splits = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];

    let mut ds = Dataset {
        class_count: cfg.class_count,
        raw_dim: cfg.raw_dim,
        semantic_dim: cfg.semantic_dim,
        within_class_stddev: cfg.within_class_stddev,
        prototypes,
        semantic,
        splits,
        seed: cfg.seed,
        pool: None,
    };
    if cfg.samples_per_class > 0 {
        let n = cfg.class_count * cfg.samples_per_class;
        let mut features = Array2::zeros((n, cfg.raw_dim));
        let mut labels = Vec::with_capacity(n);
        for c in 0..cfg.class_count {
            for _ in 0..cfg.samples_per_class {
                features.row_mut(labels.len()).assign(&ds.draw(c, &mut rng));
                labels.push(c);
            }
        }
        ds.pool = Some(SamplePool::new(features, labels, cfg.class_count)?);
    }
    Ok(ds)
}

/// Fraction of test queries a nearest-prototype-mean classifier gets right
/// when it sees only the support samples. Used to calibrate task difficulty.
pub fn nearest_centroid_accuracy(episodes: &[super::Episode]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ep in episodes {
        let d = ep.features.ncols();
        let mut centroids = Array2::<f64>::zeros((ep.ways, d));
        let mut counts = vec![0usize; ep.ways];
        for i in 0..ep.rows() {
            if ep.is_labeled[i] {
                let mut row = centroids.row_mut(ep.labels[i]);
                row += &ep.features.row(i);
                counts[ep.labels[i]] += 1;
            }
        }
        for (mut row, &n) in centroids.axis_iter_mut(Axis(0)).zip(&counts) {
            row /= n.max(1) as f64;
        }
        for q in ep.query_indices() {
            let x = ep.features.row(q);
            let best = (0..ep.ways)
                .map(|c| {
                    let dist: f64 = (&centroids.row(c) - &x).mapv(|v| v * v).sum();
                    (c, dist)
                })
                .fold((0, f64::INFINITY), |acc, (c, dist)| if dist < acc.1 { (c, dist) } else { acc });
            correct += usize::from(best.0 == ep.labels[q]);
            total += 1;
        }
    }
    correct as f64 / total.max(1) as f64
}
