use ndarray::Array2;

use super::Episode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Graph, ParamStore, Var};

/// Per-row label channels: one-hot for labeled supports, `1/N` everywhere else.
pub fn label_block(episode: &Episode) -> Array2<f64> {
    let n = episode.ways;
    let mut block = Array2::from_elem((episode.rows(), n), 1.0 / n as f64);
    for i in 0..episode.rows() {
        if episode.is_labeled[i] {
            let mut row = block.row_mut(i);
            row.fill(0.0);
            row[episode.labels[i]] = 1.0;
        }
    }
    block
}

/// Initial node features `V0` (`r x dim`): encoded raw features joined
/// with the label channels, then projected to the node width.
pub fn init_node_features(g: &mut Graph, store: &ParamStore, episode: &Episode, cfg: &ModelConfig) -> Result<Var> {
    if episode.features.ncols() != cfg.raw_dim {
        return Err(Error::Config(format!(
            "episode features have {} columns, encoder expects {}",
            episode.features.ncols(),
            cfg.raw_dim
        )));
    }
    let x = g.constant(episode.features.clone());
    let w = g.param(store, "encoder.w")?;
    let b = g.param(store, "encoder.b")?;
    let h = g.affine(x, w, b)?;
    let h = g.leaky_relu(h, cfg.leaky_slope);
    let labels = g.constant(label_block(episode));
    let joined = g.concat_cols(&[h, labels])?;
    let w = g.param(store, "input.w")?;
    let b = g.param(store, "input.b")?;
    Ok(g.affine(joined, w, b)?)
}
