//! Instance-level message passing with one global and several chunked
//! relation heads per layer.

use ndarray::Array2;

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Graph, ParamStore, Var};
use crate::CLAMP_EPS;

/// `+1/-1` matrix that flips the sign of relations between labeled
/// supports of different classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMask(pub Array2<f64>);

/// Adjacencies produced by one comparison layer.
#[derive(Debug, Clone)]
pub struct RelationSet {
    /// 1-based layer index.
    pub layer: usize,
    pub global: Var,
    pub heads: Vec<Var>,
}

pub fn build_pair_mask(episode: &Episode) -> PairMask {
    let r = episode.rows();
    PairMask(Array2::from_shape_fn((r, r), |(m, n)| {
        let both_labeled = episode.is_labeled[m] && episode.is_labeled[n];
        if both_labeled && episode.labels[m] != episode.labels[n] {
            -1.0
        } else {
            1.0
        }
    }))
}

/// Maps squared pair differences (`r^2 x width`) to an `r x r` adjacency:
/// linear map to one channel, per-episode normalization, LeakyReLU, sigmoid,
/// then clamped into `[eps, 1 - eps]`.
pub(crate) fn edge_map(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    sq_pairs: Var,
    rows: usize,
    slope: f64,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    let h = g.matmul(sq_pairs, w)?;
    let h = g.col_normalize(h, gamma, beta)?;
    let h = g.leaky_relu(h, slope);
    let h = g.sigmoid(h);
    let a = g.reshape(h, rows, rows)?;
    Ok(g.clamp(a, CLAMP_EPS, 1.0 - CLAMP_EPS))
}

/// Relations of layer `layer` computed from that layer's input features.
pub fn compute_relations(
    g: &mut Graph,
    store: &ParamStore,
    v: Var,
    layer: usize,
    cfg: &ModelConfig,
) -> Result<RelationSet> {
    let (rows, d) = g.shape(v);
    if d != cfg.dim || d % cfg.heads != 0 {
        return Err(Error::Config(format!(
            "features are {d} wide, expected {} divisible by {} heads",
            cfg.dim, cfg.heads
        )));
    }
    let diff = g.pair_diff(v);
    let sq = g.square(diff);
    let global = edge_map(g, store, &format!("comparison.layer{layer}.global"), sq, rows, cfg.leaky_slope)?;
    let c = cfg.chunk();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let chunk = g.slice_cols(sq, h * c, (h + 1) * c)?;
        let prefix = format!("comparison.layer{layer}.head{}", h + 1);
        heads.push(edge_map(g, store, &prefix, chunk, rows, cfg.leaky_slope)?);
    }
    Ok(RelationSet { layer, global, heads })
}

/// One propagation step: each masked head adjacency mixes its own feature
/// chunk, the masked global adjacency mixes all features, and the `2d`-wide
/// concatenation is transformed back to `d` columns.
pub fn message_pass_layer(
    g: &mut Graph,
    store: &ParamStore,
    v: Var,
    relations: &RelationSet,
    mask: &PairMask,
    cfg: &ModelConfig,
) -> Result<Var> {
    let c = cfg.chunk();
    let mut parts = Vec::with_capacity(cfg.heads + 1);
    for (h, &a) in relations.heads.iter().enumerate() {
        let masked = g.mask(a, &mask.0)?;
        let chunk = g.slice_cols(v, h * c, (h + 1) * c)?;
        parts.push(g.matmul(masked, chunk)?);
    }
    let masked = g.mask(relations.global, &mask.0)?;
    parts.push(g.matmul(masked, v)?);
    let joined = g.concat_cols(&parts)?;

    let prefix = format!("comparison.layer{}.tr", relations.layer);
    let w = g.param(store, &format!("{prefix}.w"))?;
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    let h = g.matmul(joined, w)?;
    let h = g.col_normalize(h, gamma, beta)?;
    Ok(g.leaky_relu(h, cfg.leaky_slope))
}

#[derive(Debug)]
pub struct ComparisonOutput {
    pub features: Var,
    pub trace: Vec<RelationSet>,
}

/// Alternates relation computation and propagation `cfg.layers` times.
pub fn run_comparison(
    g: &mut Graph,
    store: &ParamStore,
    v0: Var,
    mask: &PairMask,
    cfg: &ModelConfig,
) -> Result<ComparisonOutput> {
    if cfg.layers == 0 {
        return Err(Error::Config("layers must be at least 1".into()));
    }
    let mut v = v0;
    let mut trace = Vec::with_capacity(cfg.layers);
    for layer in 1..=cfg.layers {
        let rel = compute_relations(g, store, v, layer, cfg)?;
        v = message_pass_layer(g, store, v, &rel, mask, cfg)?;
        if !g.value(v).iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("comparison layer {layer}")));
        }
        trace.push(rel);
    }
    Ok(ComparisonOutput { features: v, trace })
}
