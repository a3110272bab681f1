//! Support-by-query slices of relation matrices as CSV and plain PGM.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::model::{forward_episode, ModelParams};

/// Rows are supports, columns queries, both in episode row order.
pub fn support_query_block(a: &Array2<f64>, episode: &Episode) -> Array2<f64> {
    let s = episode.support_indices();
    let q = episode.query_indices();
    Array2::from_shape_fn((s.len(), q.len()), |(i, j)| a[[s[i], q[j]]])
}

pub fn ground_truth(episode: &Episode) -> Array2<f64> {
    let r = episode.rows();
    Array2::from_shape_fn((r, r), |(i, j)| f64::from(u8::from(episode.labels[i] == episode.labels[j])))
}

pub fn to_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

/// Plain (P2) greymap, values in `[0, 1]` mapped to `round(255 a)`.
pub fn to_pgm(m: &Array2<f64>) -> String {
    let (h, w) = m.dim();
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in m.rows() {
        let px: Vec<String> = row
            .iter()
            .map(|&v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        writeln!(out, "{}", px.join(" ")).unwrap();
    }
    out
}

/// Layer numbers to export: `first`, `3` and `last` collapse to `{1, 3, L}`
/// restricted to the model depth.
pub fn default_layers(depth: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [1, 3, depth].into_iter().filter(|&l| l >= 1 && l <= depth).collect();
    v.dedup();
    v.sort_unstable();
    v.dedup();
    v
}

fn write_pair(dir: &Path, stem: &str, block: &Array2<f64>, written: &mut Vec<PathBuf>) -> Result<()> {
    for (ext, body) in [("csv", to_csv(block)), ("pgm", to_pgm(block))] {
        let path = dir.join(format!("{stem}.{ext}"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(())
}

/// Writes `layer{l}.{csv,pgm}` for each requested layer's global relation,
/// `final.*` for the inference relation and `ground_truth.*`.
pub fn export_heatmap(
    params: &ModelParams,
    episode: &Episode,
    layers: &[usize],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let depth = params.config.layers;
    if let Some(bad) = layers.iter().find(|&&l| l == 0 || l > depth) {
        return Err(Error::Config(format!("layer {bad} outside 1..={depth}")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = forward_episode(params, episode, None)?;
    let mut written = Vec::new();
    for &l in layers {
        let a = out.graph.value(out.trace[l - 1].global);
        write_pair(dir, &format!("layer{l}"), &support_query_block(a, episode), &mut written)?;
    }
    let af = out.graph.value(out.a_f);
    write_pair(dir, "final", &support_query_block(af, episode), &mut written)?;
    write_pair(dir, "ground_truth", &support_query_block(&ground_truth(episode), episode), &mut written)?;
    Ok(written)
}
