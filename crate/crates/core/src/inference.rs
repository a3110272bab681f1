//! Final relation, transductive query prediction and the training losses.

use ndarray::Array2;

use crate::comparison::edge_map;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Graph, ParamStore, Var};
use crate::CLAMP_EPS;

/// Weights of the adjacency, assignment and classification losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub adjacency: f64,
    pub assignment: f64,
    pub classification: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adjacency: 1.0,
            assignment: 0.5,
            classification: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub adjacency: f64,
    pub assignment: f64,
    pub classification: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Query-row mask `H` and same-label indicator `G_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMasks {
    pub query_rows: Array2<f64>,
    pub same_label: Array2<f64>,
}

/// `A_f` over the final sample representations.
pub fn final_adjacency(g: &mut Graph, store: &ParamStore, v_f: Var, cfg: &ModelConfig) -> Result<Var> {
    let rows = g.shape(v_f).0;
    let diff = g.pair_diff(v_f);
    let sq = g.square(diff);
    edge_map(g, store, "final", sq, rows, cfg.leaky_slope)
}

/// One-hot rows for labeled supports, zero rows elsewhere (`r x N`).
fn labeled_one_hot(episode: &Episode) -> Array2<f64> {
    let mut y = Array2::zeros((episode.rows(), episode.ways));
    for i in 0..episode.rows() {
        if episode.is_labeled[i] {
            y[[i, episode.labels[i]]] = 1.0;
        }
    }
    y
}

/// `T x r` selector of query rows, in row order.
fn query_selector(episode: &Episode) -> Array2<f64> {
    let queries = episode.query_indices();
    let mut s = Array2::zeros((queries.len(), episode.rows()));
    for (t, &q) in queries.iter().enumerate() {
        s[[t, q]] = 1.0;
    }
    s
}

/// Query class probabilities (`T x N`, queries in row order): a softmax over
/// the summed final relations to each class's labeled supports.
pub fn predict(g: &mut Graph, a_f: Var, episode: &Episode) -> Result<Var> {
    let missing = episode.unlabeled_classes();
    if !missing.is_empty() {
        return Err(Error::Episode(format!(
            "classes {missing:?} have no labeled support to predict from"
        )));
    }
    let sel = g.constant(query_selector(episode));
    let y = g.constant(labeled_one_hot(episode));
    let at = g.transpose(a_f);
    let per_query = g.matmul(sel, at)?;
    let logits = g.matmul(per_query, y)?;
    Ok(g.row_softmax(logits))
}

/// Argmax per row, lowest index on ties.
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect()
}

pub fn build_loss_masks(episode: &Episode) -> LossMasks {
    let r = episode.rows();
    LossMasks {
        query_rows: Array2::from_shape_fn((r, r), |(m, _)| if episode.is_support[m] { 0.0 } else { 1.0 }),
        same_label: Array2::from_shape_fn((r, r), |(m, n)| {
            if episode.labels[m] == episode.labels[n] {
                1.0
            } else {
                0.0
            }
        }),
    }
}

/// Binary cross-entropy of every adjacency against `G_t`, restricted to
/// query rows and balanced between positive and negative pairs. A term
/// whose mask is empty is skipped.
pub fn adjacency_loss(g: &mut Graph, adjacencies: &[(String, Var)], masks: &LossMasks) -> Result<Var> {
    let pos = &masks.query_rows * &masks.same_label;
    let neg = &masks.query_rows * &masks.same_label.mapv(|x| 1.0 - x);
    let (pos_n, neg_n) = (pos.sum(), neg.sum());
    let mut terms = Vec::new();
    for (name, a) in adjacencies {
        if pos_n > 0.0 {
            let la = g.ln(*a)?;
            let masked = g.mask(la, &pos)?;
            let s = g.sum(masked);
            terms.push((name, g.scale(s, 1.0 / pos_n)));
        }
        if neg_n > 0.0 {
            let comp = g.one_minus(*a);
            let lc = g.ln(comp)?;
            let masked = g.mask(lc, &neg)?;
            let s = g.sum(masked);
            terms.push((name, g.scale(s, 1.0 / neg_n)));
        }
    }
    let mut acc = g.scalar(0.0);
    for (name, t) in terms {
        if !g.item(t).is_finite() {
            return Err(Error::NonFinite(format!("adjacency loss term for {name}")));
        }
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, -1.0))
}

/// Mean over rows of the cross-entropy between `P` and the one-hot labels.
pub fn assignment_loss(g: &mut Graph, p: Var, episode: &Episode) -> Result<Var> {
    let r = episode.rows();
    let target = Array2::from_shape_fn((r, episode.ways), |(i, c)| f64::from(u8::from(episode.labels[i] == c)));
    let clamped = g.clamp(p, CLAMP_EPS, 1.0);
    let lp = g.ln(clamped)?;
    let picked = g.mask(lp, &target)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / r as f64))
}

/// Summed cross-entropy of the query predictions.
pub fn classification_loss(g: &mut Graph, probs: Var, episode: &Episode) -> Result<Var> {
    let queries = episode.query_indices();
    let target = Array2::from_shape_fn((queries.len(), episode.ways), |(t, c)| {
        f64::from(u8::from(episode.labels[queries[t]] == c))
    });
    let clamped = g.clamp(probs, CLAMP_EPS, 1.0);
    let lp = g.ln(clamped)?;
    let picked = g.mask(lp, &target)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0))
}

pub fn total_loss(g: &mut Graph, adjacency: Var, assignment: Var, classification: Var, w: LossWeights) -> Var {
    let a = g.scale(adjacency, w.adjacency);
    let b = g.scale(assignment, w.assignment);
    let c = g.scale(classification, w.classification);
    let ab = g.add(a, b).expect("scalars");
    g.add(ab, c).expect("scalars")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn episode(labels: Vec<usize>, is_support: Vec<bool>, ways: usize) -> Episode {
        let r = labels.len();
        Episode {
            ways,
            shots: 1,
            queries: is_support.iter().filter(|s| !**s).count(),
            features: Array2::zeros((r, 1)),
            is_labeled: is_support.clone(),
            labels,
            is_support,
            class_semantics: Array2::zeros((ways, 1)),
            class_ids: (0..ways).collect(),
        }
    }

    #[test]
    fn masks_for_three_nodes() {
        let m = build_loss_masks(&episode(vec![0, 1, 0], vec![true, true, false], 2));
        assert_eq!(m.query_rows, array![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert_eq!(m.same_label, array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]);
        let same = build_loss_masks(&episode(vec![0, 0, 0], vec![true, false, false], 1));
        assert!(same.same_label.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn no_queries_skips_every_term() {
        let ep = episode(vec![0, 1], vec![true, true], 2);
        let masks = build_loss_masks(&ep);
        assert!(masks.query_rows.iter().all(|&x| x == 0.0));
        let mut g = Graph::new();
        let a = g.variable(Array2::from_elem((2, 2), 0.5));
        let l = adjacency_loss(&mut g, &[("a".into(), a)], &masks).unwrap();
        assert_eq!(g.item(l), 0.0);
    }

    #[test]
    fn half_adjacency_costs_two_log_two() {
        let ep = episode(vec![0, 1, 0, 1], vec![true, true, false, false], 2);
        let masks = build_loss_masks(&ep);
        let mut g = Graph::new();
        let a = g.constant(Array2::from_elem((4, 4), 0.5));
        let b = g.constant(Array2::from_elem((4, 4), 0.5));
        let one = adjacency_loss(&mut g, &[("a".into(), a)], &masks).unwrap();
        assert!((g.item(one) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let two = adjacency_loss(&mut g, &[("a".into(), a), ("b".into(), b)], &masks).unwrap();
        assert!((g.item(two) - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_adjacency_is_near_zero() {
        let ep = episode(vec![0, 1, 0, 1], vec![true, true, false, false], 2);
        let masks = build_loss_masks(&ep);
        let mut g = Graph::new();
        let a = g.constant(masks.same_label.mapv(|x| x.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)));
        let l = adjacency_loss(&mut g, &[("a".into(), a)], &masks).unwrap();
        assert!((g.item(l) - (-2.0 * (1.0 - CLAMP_EPS).ln())).abs() < 1e-12);
    }

    #[test]
    fn support_rows_are_ignored() {
        let ep = episode(vec![0, 1, 0, 1], vec![true, true, false, false], 2);
        let masks = build_loss_masks(&ep);
        let base = array![
            [0.3, 0.6, 0.2, 0.9],
            [0.6, 0.4, 0.7, 0.1],
            [0.2, 0.7, 0.5, 0.3],
            [0.9, 0.1, 0.3, 0.8]
        ];
        let mut zeroed = base.clone();
        zeroed.row_mut(0).fill(CLAMP_EPS);
        zeroed.row_mut(1).fill(CLAMP_EPS);
        let mut g = Graph::new();
        let a = g.constant(base);
        let b = g.constant(zeroed);
        let la = adjacency_loss(&mut g, &[("a".into(), a)], &masks).unwrap();
        let lb = adjacency_loss(&mut g, &[("b".into(), b)], &masks).unwrap();
        assert_eq!(g.item(la), g.item(lb));
    }

    #[test]
    fn uniform_assignment_costs_log_n() {
        let ep = episode(vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4], (0..10).map(|i| i < 5).collect(), 5);
        let mut g = Graph::new();
        let p = g.constant(Array2::from_elem((10, 5), 0.2));
        let l = assignment_loss(&mut g, p, &ep).unwrap();
        assert!((g.item(l) - 5f64.ln()).abs() < 1e-12);
        assert!((g.item(l) - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn perfect_assignment_near_zero() {
        let ep = episode(vec![0, 1, 1], vec![true, true, false], 2);
        let mut g = Graph::new();
        let p = g.constant(array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let l = assignment_loss(&mut g, p, &ep).unwrap();
        assert!(g.item(l).abs() < 1e-12);
    }

    #[test]
    fn uniform_predictions_cost_t_log_n() {
        let ep = episode(vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4], (0..10).map(|i| i < 5).collect(), 5);
        let mut g = Graph::new();
        let probs = g.constant(Array2::from_elem((5, 5), 0.2));
        let l = classification_loss(&mut g, probs, &ep).unwrap();
        assert!((g.item(l) - 5.0 * 5f64.ln()).abs() < 1e-12);
        assert!((g.item(l) - 8.0472).abs() < 1e-3);
        let exact = g.constant(Array2::from_shape_fn((5, 5), |(i, j)| f64::from(u8::from(i == j))));
        let l = classification_loss(&mut g, exact, &ep).unwrap();
        assert_eq!(g.item(l), 0.0);
    }

    #[test]
    fn two_way_prediction_matches_logistic() {
        let ep = episode(vec![0, 1, 0], vec![true, true, false], 2);
        let mut g = Graph::new();
        let a = g.constant(array![[0.5, 0.5, 0.9], [0.5, 0.5, 0.1], [0.9, 0.1, 0.5]]);
        let p = predict(&mut g, a, &ep).unwrap();
        let expect = 1.0 / (1.0 + (-0.8f64).exp());
        assert!((g.value(p)[[0, 0]] - expect).abs() < 1e-12);
        assert!((g.value(p)[[0, 0]] - 0.6900).abs() < 1e-4);
        assert!((g.value(p)[[0, 1]] - 0.3100).abs() < 1e-4);
    }

    #[test]
    fn equal_relations_predict_uniform() {
        let ep = episode(vec![0, 1, 2, 0], vec![true, true, true, false], 3);
        let mut g = Graph::new();
        let a = g.constant(Array2::from_elem((4, 4), 0.37));
        let p = predict(&mut g, a, &ep).unwrap();
        for &x in g.value(p) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(argmax_rows(g.value(p)), vec![0]);
    }

    #[test]
    fn indicator_relations_pick_true_class() {
        let labels = vec![0, 1, 2, 3, 4, 3, 0, 4, 1, 2];
        let ep = episode(labels.clone(), (0..10).map(|i| i < 5).collect(), 5);
        let mut g = Graph::new();
        let a = g.constant(Array2::from_shape_fn((10, 10), |(m, n)| f64::from(u8::from(labels[m] == labels[n]))));
        let p = predict(&mut g, a, &ep).unwrap();
        assert_eq!(argmax_rows(g.value(p)), vec![3, 0, 4, 1, 2]);
    }

    #[test]
    fn missing_labeled_class_rejected() {
        let mut ep = episode(vec![0, 1, 0], vec![true, true, false], 2);
        ep.is_labeled[1] = false;
        let mut g = Graph::new();
        let a = g.constant(Array2::from_elem((3, 3), 0.5));
        assert!(matches!(predict(&mut g, a, &ep), Err(Error::Episode(_))));
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut g = Graph::new();
        let (a, b, c) = (g.scalar(2.0), g.scalar(4.0), g.scalar(1.0));
        let t = total_loss(&mut g, a, b, c, LossWeights::default());
        assert_eq!(g.item(t), 5.0);
        let z = g.scalar(0.0);
        let t = total_loss(&mut g, z, z, z, LossWeights::default());
        assert_eq!(g.item(t), 0.0);
    }
}
