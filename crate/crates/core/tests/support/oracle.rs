//! Straight-line recomputation of one episode's forward pass with plain
//! nested vectors and loops. Shares nothing with the library beyond reading
//! parameter values and episode fields.

#![allow(dead_code)]

use eckpn::episode::Episode;
use eckpn::{Ablation, ModelParams};

pub type M = Vec<Vec<f64>>;

pub struct Flat {
    pub v0: M,
    /// Per layer: global adjacency, then head adjacencies.
    pub relations: Vec<(M, Vec<M>)>,
    pub v_l: M,
    pub p: Option<M>,
    pub v_c: Option<M>,
    pub a_c: Option<M>,
    pub v_f: M,
    pub a_f: M,
    pub probs: M,
    pub predictions: Vec<usize>,
    pub loss_adj: f64,
    pub loss_assign: f64,
    pub loss_cls: f64,
}

pub fn forward(params: &ModelParams, ep: &Episode) -> Flat {
    let cfg = &params.config;
    let slope = cfg.leaky_slope;
    let eps = 1e-7;
    let r = ep.labels.len();
    let n_way = ep.ways;
    let d = cfg.dim;

    let get = |name: &str| -> M {
        let t = &params.store.get(name).unwrap_or_else(|| panic!("missing {name}")).value;
        (0..t.nrows()).map(|i| (0..t.ncols()).map(|j| t[[i, j]]).collect()).collect()
    };
    let mm = |a: &M, b: &M| -> M {
        let (n, k, m) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                let mut s = 0.0;
                for t in 0..k {
                    s += a[i][t] * b[t][j];
                }
                out[i][j] = s;
            }
        }
        out
    };
    let tr = |a: &M| -> M { (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect() };
    let lrelu = |x: f64| if x >= 0.0 { x } else { slope * x };
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let lin = |x: &M, prefix: &str| -> M {
        let w = get(&format!("{prefix}.w"));
        let b = get(&format!("{prefix}.b"));
        let mut h = mm(x, &w);
        for row in h.iter_mut() {
            for (v, bb) in row.iter_mut().zip(&b[0]) {
                *v += bb;
            }
        }
        h
    };
    // Normalized maps have no bias.
    let norm = |x: &M, prefix: &str| -> M {
        let mut h = mm(x, &get(&format!("{prefix}.w")));
        let g = get(&format!("{prefix}.gamma"));
        let be = get(&format!("{prefix}.beta"));
        let rows = h.len() as f64;
        for j in 0..h[0].len() {
            let mean = h.iter().map(|row| row[j]).sum::<f64>() / rows;
            let var = h.iter().map(|row| (row[j] - mean).powi(2)).sum::<f64>() / rows;
            let sd = (var + 1e-5).sqrt();
            for row in h.iter_mut() {
                row[j] = (row[j] - mean) / sd * g[0][j] + be[0][j];
            }
        }
        h
    };
    // Relation over columns [lo, hi) of x, through the stack under `prefix`.
    let relation = |x: &M, lo: usize, hi: usize, prefix: &str| -> M {
        let n = x.len();
        let mut sq = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                sq.push((lo..hi).map(|c| (x[a][c] - x[b][c]).powi(2)).collect::<Vec<_>>());
            }
        }
        let h = norm(&sq, prefix);
        let mut out = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                out[a][b] = sig(lrelu(h[a * n + b][0])).clamp(eps, 1.0 - eps);
            }
        }
        out
    };

    // Node features.
    let x: M = (0..r).map(|i| ep.features.row(i).to_vec()).collect();
    let mut enc = lin(&x, "encoder");
    for row in enc.iter_mut() {
        for v in row.iter_mut() {
            *v = lrelu(*v);
        }
    }
    for (i, row) in enc.iter_mut().enumerate() {
        for c in 0..n_way {
            row.push(if ep.is_labeled[i] {
                if ep.labels[i] == c {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 / n_way as f64
            });
        }
    }
    let v0 = lin(&enc, "input");

    // Mask.
    let mask: M = (0..r)
        .map(|a| {
            (0..r)
                .map(|b| {
                    if ep.is_labeled[a] && ep.is_labeled[b] && ep.labels[a] != ep.labels[b] {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    let apply_mask = |a: &M| -> M {
        a.iter()
            .zip(&mask)
            .map(|(ra, rm)| ra.iter().zip(rm).map(|(x, m)| x * m).collect())
            .collect()
    };

    // Comparison layers.
    let c = d / cfg.heads;
    let mut v = v0.clone();
    let mut relations = Vec::new();
    for l in 1..=cfg.layers {
        let ag = relation(&v, 0, d, &format!("comparison.layer{l}.global"));
        let heads: Vec<M> = (0..cfg.heads)
            .map(|h| relation(&v, h * c, (h + 1) * c, &format!("comparison.layer{l}.head{}", h + 1)))
            .collect();
        let mut joined = vec![Vec::with_capacity(2 * d); r];
        for (h, ah) in heads.iter().enumerate() {
            let chunk: M = v.iter().map(|row| row[h * c..(h + 1) * c].to_vec()).collect();
            let part = mm(&apply_mask(ah), &chunk);
            for (j, row) in joined.iter_mut().enumerate() {
                row.extend_from_slice(&part[j]);
            }
        }
        let part = mm(&apply_mask(&ag), &v);
        for (j, row) in joined.iter_mut().enumerate() {
            row.extend_from_slice(&part[j]);
        }
        let prefix = format!("comparison.layer{l}.tr");
        let mut h = norm(&joined, &prefix);
        for row in h.iter_mut() {
            for x in row.iter_mut() {
                *x = lrelu(*x);
            }
        }
        v = h;
        relations.push((ag, heads));
    }
    let v_l = v;

    // Class level.
    let (mut p_out, mut vc_out, mut ac_out) = (None, None, None);
    let v_f: M = if cfg.ablation.has_class_level() {
        let ag_masked = apply_mask(&relations.last().unwrap().0);
        let logits = mm(&mm(&ag_masked, &v_l), &get("squeeze.w"));
        let p: M = logits
            .iter()
            .map(|row| {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|x| x / s).collect()
            })
            .collect();
        let v_c = mm(&tr(&p), &v_l);
        let z: M = if matches!(cfg.ablation, Ablation::NoneZ) {
            vec![vec![0.0; d]; n_way]
        } else {
            let e: M = (0..n_way).map(|i| ep.class_semantics.row(i).to_vec()).collect();
            let mut z = lin(&e, "calibration.g");
            for row in z.iter_mut() {
                for x in row.iter_mut() {
                    *x = lrelu(*x);
                }
            }
            z
        };
        let visual = if matches!(cfg.ablation, Ablation::NoneV) {
            vec![vec![0.0; d]; n_way]
        } else {
            v_c.clone()
        };
        let v_c_mm: M = visual.iter().zip(&z).map(|(a, b)| [a.clone(), b.clone()].concat()).collect();
        let knowledge = if matches!(cfg.ablation, Ablation::NoneCalibrate) {
            v_c_mm
        } else {
            let a_c = mm(&mm(&tr(&p), &ag_masked), &p);
            let k = mm(&mm(&a_c, &v_c_mm), &get("calibration.w_prime"));
            ac_out = Some(a_c);
            k
        };
        let back = mm(&p, &knowledge);
        let vf = v_l.iter().zip(&back).map(|(a, b)| [a.clone(), b.clone()].concat()).collect();
        p_out = Some(p);
        vc_out = Some(v_c);
        vf
    } else {
        v_l.clone()
    };
    let width = v_f[0].len();
    let a_f = relation(&v_f, 0, width, "final");

    // Prediction over queries in row order.
    let queries: Vec<usize> = (0..r).filter(|&i| !ep.is_support[i]).collect();
    let mut probs = Vec::new();
    for &q in &queries {
        let mut logit = vec![0.0; n_way];
        for s in 0..r {
            if ep.is_labeled[s] {
                logit[ep.labels[s]] += a_f[s][q];
            }
        }
        let mx = logit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logit.iter().map(|x| (x - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        probs.push(e.iter().map(|x| x / s).collect::<Vec<f64>>());
    }
    let predictions = probs
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();

    // Losses.
    let mut all: Vec<&M> = Vec::new();
    for (g, hs) in &relations {
        all.push(g);
        all.extend(hs.iter());
    }
    all.push(&a_f);
    let (mut pos_n, mut neg_n) = (0.0, 0.0);
    for &q in &queries {
        for n in 0..r {
            if ep.labels[q] == ep.labels[n] {
                pos_n += 1.0;
            } else {
                neg_n += 1.0;
            }
        }
    }
    let mut loss_adj = 0.0;
    for a in all {
        let (mut lp, mut ln) = (0.0, 0.0);
        for &q in &queries {
            for n in 0..r {
                if ep.labels[q] == ep.labels[n] {
                    lp += a[q][n].ln();
                } else {
                    ln += (1.0 - a[q][n]).ln();
                }
            }
        }
        if pos_n > 0.0 {
            loss_adj -= lp / pos_n;
        }
        if neg_n > 0.0 {
            loss_adj -= ln / neg_n;
        }
    }
    let loss_assign = match &p_out {
        Some(p) => -(0..r).map(|i| p[i][ep.labels[i]].max(eps).ln()).sum::<f64>() / r as f64,
        None => 0.0,
    };
    let loss_cls = -queries
        .iter()
        .zip(&probs)
        .map(|(&q, row)| row[ep.labels[q]].max(eps).ln())
        .sum::<f64>();

    Flat {
        v0,
        relations,
        v_l,
        p: p_out,
        v_c: vc_out,
        a_c: ac_out,
        v_f,
        a_f,
        probs,
        predictions,
        loss_adj,
        loss_assign,
        loss_cls,
    }
}

/// Largest absolute entry difference; panics on shape mismatch.
pub fn max_abs_diff(a: &M, b: &ndarray::Array2<f64>) -> f64 {
    assert_eq!((a.len(), a[0].len()), b.dim(), "shape mismatch");
    let mut worst = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            worst = worst.max((x - b[[i, j]]).abs());
        }
    }
    worst
}
