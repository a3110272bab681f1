//! Entry-wise central differences of the total loss, independent of the
//! library's own checker.

use eckpn::episode::Episode;
use eckpn::inference::LossWeights;
use eckpn::{forward_episode, ModelParams};

/// Resolution of a central difference at step `1e-5` on a loss near 10:
/// one ulp of the loss divided by `2 * step` is about `1e-10`.
pub const FD_RESOLUTION: f64 = 1e-9;

pub struct Entry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Entry {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + self.numeric.abs()).max(1e-8)
    }

    /// Agrees in relative terms, or the gradient is below what the
    /// difference quotient can resolve and agrees in absolute terms.
    pub fn agrees(&self, tol: f64) -> bool {
        self.rel_error() <= tol || (self.analytic - self.numeric).abs() <= FD_RESOLUTION
    }
}

pub fn total_loss(params: &ModelParams, ep: &Episode) -> f64 {
    let out = forward_episode(params, ep, Some(LossWeights::default())).unwrap();
    out.graph.item(out.losses.unwrap().total)
}

pub fn entries(params: &ModelParams, ep: &Episode, step: f64) -> Vec<Entry> {
    let out = forward_episode(params, ep, Some(LossWeights::default())).unwrap();
    let grads = out
        .graph
        .backward(out.losses.unwrap().total)
        .unwrap()
        .for_params(&out.graph, &params.store);
    let mut work = params.clone();
    let mut all = Vec::new();
    for (pi, t) in params.store.tensors().iter().enumerate() {
        let g = &grads.as_slice()[pi];
        for (index, (&orig, &analytic)) in t.value.iter().zip(g.iter()).enumerate() {
            let set = |w: &mut ModelParams, x: f64| w.store.tensors_mut()[pi].value.as_slice_mut().unwrap()[index] = x;
            set(&mut work, orig + step);
            let plus = total_loss(&work, ep);
            set(&mut work, orig - step);
            let minus = total_loss(&work, ep);
            set(&mut work, orig);
            all.push(Entry {
                param: t.name.clone(),
                index,
                analytic,
                numeric: (plus - minus) / (2.0 * step),
            });
        }
    }
    all
}
