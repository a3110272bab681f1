//! Soft pooling of the instance graph into one node per episode class.

use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Var};

/// Row-stochastic assignment `P = softmax_rows((A ⊙ M) V W)`, where
/// `masked_global` is the final comparison layer's masked global adjacency.
pub fn compute_assignment(g: &mut Graph, store: &ParamStore, v: Var, masked_global: Var) -> Result<Var> {
    let w = g.param(store, "squeeze.w")?;
    let mixed = g.matmul(masked_global, v)?;
    let logits = g.matmul(mixed, w)?;
    Ok(g.row_softmax(logits))
}

/// Class-level visual knowledge `Pᵀ V`.
pub fn squeeze_classes(g: &mut Graph, p: Var, v: Var) -> Result<Var> {
    let pt = g.transpose(p);
    Ok(g.matmul(pt, v)?)
}
