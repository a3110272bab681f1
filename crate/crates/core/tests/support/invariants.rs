//! Structural checks shared by the integration tests and the acceptance run.
//! Each returns a description of the first violation.

#![allow(dead_code)]

use eckpn::comparison::build_pair_mask;
use eckpn::episode::Episode;
use eckpn::inference::build_loss_masks;
use eckpn::{forward_episode, ModelParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

/// Every adjacency (L * (heads + 1) + 1 of them) is symmetric and inside (0, 1).
pub fn adjacencies_symmetric_in_range(params: &ModelParams, ep: &Episode) -> Check {
    let out = forward_episode(params, ep, None).map_err(|e| e.to_string())?;
    let set = out.adjacency_set();
    let cfg = &params.config;
    let expected = cfg.layers * (cfg.heads + 1) + 1;
    if set.len() != expected {
        return Err(format!("{} adjacencies, expected {expected}", set.len()));
    }
    for (name, v) in set {
        let a = out.graph.value(v);
        for ((i, j), &x) in a.indexed_iter() {
            if !(x > 0.0 && x < 1.0) {
                return Err(format!("{name}[{i},{j}] = {x} outside (0, 1)"));
            }
            if (x - a[[j, i]]).abs() > 1e-12 {
                return Err(format!("{name} asymmetric at ({i},{j})"));
            }
        }
    }
    Ok(())
}

pub fn assignment_row_stochastic(params: &ModelParams, ep: &Episode) -> Check {
    let out = forward_episode(params, ep, None).map_err(|e| e.to_string())?;
    let Some(p) = out.assignment else {
        return Ok(());
    };
    for (i, row) in out.graph.value(p).rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-9 || row.iter().any(|&x| x < 0.0) {
            return Err(format!("P row {i} = {row}"));
        }
    }
    Ok(())
}

/// A random episode with arbitrary labels, support flags and label visibility.
pub fn random_episode(rng: &mut ChaCha8Rng) -> Episode {
    let ways = rng.random_range(1..6);
    let r = rng.random_range(1..12);
    let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..ways)).collect();
    let is_support: Vec<bool> = (0..r).map(|_| rng.random_bool(0.6)).collect();
    let is_labeled: Vec<bool> = is_support.iter().map(|&s| s && rng.random_bool(0.7)).collect();
    Episode {
        ways,
        shots: 0,
        queries: is_support.iter().filter(|s| !**s).count(),
        features: ndarray::Array2::zeros((r, 1)),
        labels,
        is_support,
        is_labeled,
        class_semantics: ndarray::Array2::zeros((ways, 1)),
        class_ids: (0..ways).collect(),
    }
}

/// Pair mask against a direct reading of its definition: `-1` exactly when
/// both rows are labeled supports of different classes.
pub fn mask_matches_definition(episodes: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in 0..episodes {
        let ep = random_episode(&mut rng);
        let m = build_pair_mask(&ep).0;
        for a in 0..ep.labels.len() {
            for b in 0..ep.labels.len() {
                let both = ep.is_support[a] && ep.is_support[b] && ep.is_labeled[a] && ep.is_labeled[b];
                let expect = if both && ep.labels[a] != ep.labels[b] { -1.0 } else { 1.0 };
                if m[[a, b]] != expect {
                    return Err(format!("episode {e}: M[{a},{b}] = {}, expected {expect}", m[[a, b]]));
                }
            }
        }
    }
    Ok(())
}

/// `H` selects query rows and `G_t` marks same-label pairs.
pub fn loss_masks_match_definition(episodes: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in 0..episodes {
        let ep = random_episode(&mut rng);
        let masks = build_loss_masks(&ep);
        for a in 0..ep.labels.len() {
            for b in 0..ep.labels.len() {
                let h = if ep.is_support[a] { 0.0 } else { 1.0 };
                let gt = if ep.labels[a] == ep.labels[b] { 1.0 } else { 0.0 };
                if masks.query_rows[[a, b]] != h || masks.same_label[[a, b]] != gt {
                    return Err(format!("episode {e}: masks wrong at ({a},{b})"));
                }
            }
        }
    }
    Ok(())
}

/// Reordering the rows of an episode reorders every output the same way.
/// Returns the largest deviation seen.
pub fn permutation_equivariance(params: &ModelParams, ep: &Episode, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = ep.labels.len();
    let mut perm: Vec<usize> = (0..r).collect();
    perm.shuffle(&mut rng);
    let moved = ep.permuted(&perm);
    let a = forward_episode(params, ep, None).map_err(|e| e.to_string())?;
    let b = forward_episode(params, &moved, None).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;

    let rows = |x: &ndarray::Array2<f64>, y: &ndarray::Array2<f64>, worst: &mut f64| {
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..x.ncols() {
                *worst = worst.max((y[[i, c]] - x[[p, c]]).abs());
            }
        }
    };
    rows(a.graph.value(a.v_final), b.graph.value(b.v_final), &mut worst);
    rows(a.graph.value(a.v_f), b.graph.value(b.v_f), &mut worst);
    if let (Some(pa), Some(pb)) = (a.assignment, b.assignment) {
        rows(a.graph.value(pa), b.graph.value(pb), &mut worst);
    }
    let (fa, fb) = (a.graph.value(a.a_f), b.graph.value(b.a_f));
    for i in 0..r {
        for j in 0..r {
            worst = worst.max((fb[[i, j]] - fa[[perm[i], perm[j]]]).abs());
        }
    }
    // Query probabilities are listed in row order in each episode.
    let qa = ep.query_indices();
    let qb = moved.query_indices();
    let (pa, pb) = (a.graph.value(a.probs), b.graph.value(b.probs));
    for (tb, &row_b) in qb.iter().enumerate() {
        let ta = qa.iter().position(|&q| q == perm[row_b]).expect("query maps to query");
        for c in 0..pa.ncols() {
            worst = worst.max((pb[[tb, c]] - pa[[ta, c]]).abs());
        }
    }
    Ok(worst)
}
