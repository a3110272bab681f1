//! Class-level message passing over visual plus semantic class knowledge,
//! and the broadcast of calibrated knowledge back to every sample.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Graph, ParamStore, Var};

/// `Z = LeakyReLU(E W_g + b_g)`, one row per episode class.
pub fn map_semantics(g: &mut Graph, store: &ParamStore, embeddings: &Array2<f64>, cfg: &ModelConfig) -> Result<Var> {
    if embeddings.ncols() != cfg.semantic_dim {
        return Err(Error::Config(format!(
            "semantic embeddings have {} columns, mapping expects {}",
            embeddings.ncols(),
            cfg.semantic_dim
        )));
    }
    let e = g.constant(embeddings.clone());
    let w = g.param(store, "calibration.g.w")?;
    let b = g.param(store, "calibration.g.b")?;
    let h = g.affine(e, w, b)?;
    Ok(g.leaky_relu(h, cfg.leaky_slope))
}

#[derive(Debug, Clone, Copy)]
pub struct Calibrated {
    /// `Pᵀ (A ⊙ M) P`.
    pub class_adjacency: Var,
    /// `A_c [V_c, Z] W'`.
    pub calibrated: Var,
}

/// One class-level propagation step over the multi-modal class matrix
/// `v_c_mm = [V_c, Z]`.
pub fn calibrate_classes(
    g: &mut Graph,
    store: &ParamStore,
    p: Var,
    masked_global: Var,
    v_c_mm: Var,
) -> Result<Calibrated> {
    let pt = g.transpose(p);
    let left = g.matmul(pt, masked_global)?;
    let class_adjacency = g.matmul(left, p)?;
    let w = g.param(store, "calibration.w_prime")?;
    let mixed = g.matmul(class_adjacency, v_c_mm)?;
    let calibrated = g.matmul(mixed, w)?;
    Ok(Calibrated {
        class_adjacency,
        calibrated,
    })
}

/// `V_f = [V_L, P · knowledge]`.
pub fn broadcast_class_knowledge(g: &mut Graph, p: Var, knowledge: Var, v_l: Var) -> Result<Var> {
    let refined = g.matmul(p, knowledge)?;
    Ok(g.concat_cols(&[v_l, refined])?)
}
