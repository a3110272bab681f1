//! Synthetic datasets, N-way K-shot episode sampling and initial node features.

mod dataset;
pub mod io;
mod node_init;

pub use dataset::{gen_synthetic_dataset, nearest_centroid_accuracy, DataConfig, Dataset, SamplePool, Split};
pub use node_init::{init_node_features, label_block};

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shape of one episode request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub label_ratio: f64,
}

/// One transductive N-way K-shot task.
///
/// Rows may appear in any order; `is_support` and `is_labeled` say which
/// rows are supports and which support labels are visible to the model.
/// `labels` holds episode-local class indices for every row (queries
/// included) and is only read by the losses and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub is_support: Vec<bool>,
    pub is_labeled: Vec<bool>,
    /// Semantic embedding per episode-local class, in label order.
    pub class_semantics: Array2<f64>,
    /// Dataset class id per episode-local label.
    pub class_ids: Vec<usize>,
}

impl Episode {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn support_indices(&self) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.is_support[i]).collect()
    }

    pub fn query_indices(&self) -> Vec<usize> {
        (0..self.rows()).filter(|&i| !self.is_support[i]).collect()
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Episode {
        assert_eq!(perm.len(), self.rows(), "permutation length");
        let mut features = Array2::zeros(self.features.dim());
        for (i, &p) in perm.iter().enumerate() {
            features.row_mut(i).assign(&self.features.row(p));
        }
        Episode {
            features,
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            is_support: perm.iter().map(|&p| self.is_support[p]).collect(),
            is_labeled: perm.iter().map(|&p| self.is_labeled[p]).collect(),
            ..self.clone()
        }
    }

    /// Episode-local classes that have no visible support label.
    pub fn unlabeled_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.ways];
        for i in 0..self.rows() {
            if self.is_labeled[i] {
                seen[self.labels[i]] = true;
            }
        }
        (0..self.ways).filter(|&c| !seen[c]).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let r = self.rows();
        if self.features.nrows() != r || self.is_support.len() != r || self.is_labeled.len() != r {
            return Err(Error::Episode("row counts of features, labels and masks differ".into()));
        }
        let mut per_class = vec![0usize; self.ways];
        for i in 0..r {
            if self.labels[i] >= self.ways {
                return Err(Error::Episode(format!("label {} >= ways {}", self.labels[i], self.ways)));
            }
            if self.is_labeled[i] && !self.is_support[i] {
                return Err(Error::Episode(format!("row {i} is labeled but not a support")));
            }
            if self.is_support[i] {
                per_class[self.labels[i]] += 1;
            }
        }
        if per_class.iter().any(|&n| n != self.shots) {
            return Err(Error::Episode(format!(
                "support counts {per_class:?} differ from shots {}",
                self.shots
            )));
        }
        if r != self.ways * self.shots + self.queries {
            return Err(Error::Episode("row count differs from ways * shots + queries".into()));
        }
        Ok(())
    }
}

/// Number of visible support labels for a request.
pub fn labeled_count(spec: &EpisodeSpec) -> usize {
    let exact = spec.label_ratio * (spec.ways * spec.shots) as f64;
    // Guard against representation error, e.g. 0.2 * 25 = 5.000000000000001.
    (exact - 1e-9).ceil().max(0.0) as usize
}

/// Samples one episode. Identical arguments give identical episodes.
pub fn sample_episode(dataset: &Dataset, split: Split, spec: &EpisodeSpec, seed: u64) -> Result<Episode> {
    let EpisodeSpec {
        ways,
        shots,
        queries,
        label_ratio,
    } = *spec;
    let classes = dataset.classes(split);
    if ways == 0 || shots == 0 {
        return Err(Error::Episode("ways and shots must be positive".into()));
    }
    if queries == 0 {
        return Err(Error::Episode("at least one query is required".into()));
    }
    if classes.len() < ways {
        return Err(Error::Episode(format!(
            "{split} split has {} classes, {ways}-way episodes need at least {ways}",
            classes.len()
        )));
    }
    if !(label_ratio > 0.0 && label_ratio <= 1.0) {
        return Err(Error::Episode(format!("label_ratio {label_ratio} outside (0, 1]")));
    }
    let n_labeled = labeled_count(spec);
    if n_labeled < ways {
        return Err(Error::Episode(format!(
            "label_ratio {label_ratio} labels only {n_labeled} of {} supports, \
             fewer than one per class for {ways} classes",
            ways * shots
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_ids: Vec<usize> = sample(&mut rng, classes.len(), ways)
        .into_iter()
        .map(|i| classes[i])
        .collect();
    let query_counts: Vec<usize> = (0..ways)
        .map(|c| queries / ways + usize::from(c < queries % ways))
        .collect();

    let rows = ways * shots + queries;
    let mut features = Array2::zeros((rows, dataset.raw_dim));
    let mut labels = vec![0; rows];
    let mut is_support = vec![false; rows];
    let mut query_row = ways * shots;
    for (local, &class) in class_ids.iter().enumerate() {
        let need = shots + query_counts[local];
        let drawn: Vec<ndarray::Array1<f64>> = match &dataset.pool {
            Some(pool) => {
                let members = pool.members(class);
                if members.len() < need {
                    return Err(Error::Episode(format!(
                        "class {class} has {} samples, episode needs {need}",
                        members.len()
                    )));
                }
                sample(&mut rng, members.len(), need)
                    .into_iter()
                    .map(|i| pool.features.row(members[i]).to_owned())
                    .collect()
            }
            None => (0..need).map(|_| dataset.draw(class, &mut rng)).collect(),
        };
        for (k, x) in drawn.into_iter().enumerate() {
            let row = if k < shots {
                is_support[local * shots + k] = true;
                local * shots + k
            } else {
                query_row += 1;
                query_row - 1
            };
            features.row_mut(row).assign(&x);
            labels[row] = local;
        }
    }

    // One visible label per class first, then the rest uniformly.
    let mut is_labeled = vec![false; rows];
    let mut rest = Vec::with_capacity(ways * shots);
    for local in 0..ways {
        let pick = sample(&mut rng, shots, 1).index(0);
        is_labeled[local * shots + pick] = true;
        rest.extend((0..shots).filter(|&k| k != pick).map(|k| local * shots + k));
    }
    for i in sample(&mut rng, rest.len(), n_labeled - ways) {
        is_labeled[rest[i]] = true;
    }

    let mut class_semantics = Array2::zeros((ways, dataset.semantic_dim));
    for (local, &class) in class_ids.iter().enumerate() {
        class_semantics.row_mut(local).assign(&dataset.semantic.row(class));
    }

    Ok(Episode {
        ways,
        shots,
        queries,
        features,
        labels,
        is_support,
        is_labeled,
        class_semantics,
        class_ids,
    })
}
