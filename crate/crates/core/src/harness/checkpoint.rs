//! `ECKPN-CKPT v1` parameter files.
//!
//! ```text
//! ECKPN-CKPT v1
//! format eckpn-params/1
//! config ways=5 raw_dim=32 enc_dim=32 dim=64 heads=8 layers=3 semantic_dim=16 leaky_slope=0.2 ablation=full
//! init_seed 0
//! params <count>
//! param <name> <rows> <cols>
//! <rows*cols IEEE-754 bit patterns as 16-digit hex, space separated>
//! ...
//! end
//! ```
//!
//! Values are stored as raw bits, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig, ModelParams};
use crate::tensor::ParamStore;

pub const CKPT_MAGIC: &str = "ECKPN-CKPT v1";

fn config_line(c: &ModelConfig) -> String {
    format!(
        "ways={} raw_dim={} enc_dim={} dim={} heads={} layers={} semantic_dim={} leaky_slope={} ablation={}",
        c.ways, c.raw_dim, c.enc_dim, c.dim, c.heads, c.layers, c.semantic_dim, c.leaky_slope, c.ablation
    )
}

fn parse_config_line(fields: &[&str]) -> std::result::Result<ModelConfig, String> {
    let mut c = ModelConfig::default();
    let mut seen = 0;
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| format!("bad config field `{f}`"))?;
        let bad = |e: &dyn std::fmt::Display| format!("config {k}: {e}");
        match k {
            "ways" => c.ways = v.parse().map_err(|e| bad(&e))?,
            "raw_dim" => c.raw_dim = v.parse().map_err(|e| bad(&e))?,
            "enc_dim" => c.enc_dim = v.parse().map_err(|e| bad(&e))?,
            "dim" => c.dim = v.parse().map_err(|e| bad(&e))?,
            "heads" => c.heads = v.parse().map_err(|e| bad(&e))?,
            "layers" => c.layers = v.parse().map_err(|e| bad(&e))?,
            "semantic_dim" => c.semantic_dim = v.parse().map_err(|e| bad(&e))?,
            "leaky_slope" => c.leaky_slope = v.parse().map_err(|e| bad(&e))?,
            "ablation" => c.ablation = v.parse::<Ablation>().map_err(|e| bad(&e))?,
            other => return Err(format!("unknown config field `{other}`")),
        }
        seen += 1;
    }
    if seen != 9 {
        return Err(format!("config has {seen} fields, expected 9"));
    }
    Ok(c)
}

pub fn checkpoint_to_string(params: &ModelParams) -> String {
    let mut out = String::new();
    writeln!(out, "{CKPT_MAGIC}").unwrap();
    writeln!(out, "format {}", ModelParams::VERSION).unwrap();
    writeln!(out, "config {}", config_line(&params.config)).unwrap();
    writeln!(out, "init_seed {}", params.init_seed).unwrap();
    writeln!(out, "params {}", params.store.len()).unwrap();
    for t in params.store.tensors() {
        let (r, c) = t.shape();
        writeln!(out, "param {} {r} {c}", t.name).unwrap();
        let mut first = true;
        for v in t.value.iter() {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{:016x}", v.to_bits()).unwrap();
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, checkpoint_to_string(params)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn keyed<'a>(line: Option<(usize, &'a str)>, key: &str) -> std::result::Result<(usize, Vec<&'a str>), String> {
    let (n, line) = line.ok_or_else(|| format!("truncated: expected `{key}`"))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(format!("line {n}: expected `{key}`, found `{line}`"));
    }
    Ok((n, parts.collect()))
}

pub fn parse_checkpoint(text: &str) -> std::result::Result<ModelParams, String> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    match lines.next() {
        Some((_, CKPT_MAGIC)) => {}
        Some((_, other)) => return Err(format!("unsupported header `{other}`")),
        None => return Err("empty file".into()),
    }
    let (n, fmt) = keyed(lines.next(), "format")?;
    if fmt != [ModelParams::VERSION] {
        return Err(format!("line {n}: unsupported parameter format {fmt:?}"));
    }
    let (_, fields) = keyed(lines.next(), "config")?;
    let config = parse_config_line(&fields)?;
    let (n, seed) = keyed(lines.next(), "init_seed")?;
    let init_seed = seed
        .first()
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| format!("line {n}: bad init_seed"))?;
    let (n, count) = keyed(lines.next(), "params")?;
    let count: usize = count
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("line {n}: bad parameter count"))?;

    let mut store = ParamStore::new();
    for _ in 0..count {
        let (n, head) = keyed(lines.next(), "param")?;
        let [name, rows, cols] = head[..] else {
            return Err(format!("line {n}: expected `param <name> <rows> <cols>`"));
        };
        let dims = (rows.parse::<usize>(), cols.parse::<usize>());
        let (Ok(rows), Ok(cols)) = dims else {
            return Err(format!("line {n}: bad shape for `{name}`"));
        };
        let (n, body) = lines.next().ok_or_else(|| format!("truncated: missing values for `{name}`"))?;
        let values = body
            .split_whitespace()
            .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("line {n}: bad value in `{name}`: {e}"))?;
        if values.len() != rows * cols {
            return Err(format!(
                "line {n}: `{name}` has {} values, shape {rows}x{cols} needs {}",
                values.len(),
                rows * cols
            ));
        }
        let value = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        store.insert(name, value).map_err(|e| e.to_string())?;
    }
    match lines.next() {
        Some((_, "end")) => {}
        _ => return Err("truncated: missing `end`".into()),
    }
    ModelParams::from_store(config, store, init_seed).map_err(|e| e.to_string())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text).map_err(|reason| Error::format(path, reason))
}

/// Loads a checkpoint into a run configured as `expected`, rejecting any
/// parameter whose stored shape differs from what `expected` needs.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelParams> {
    let path = path.as_ref();
    let loaded = load_checkpoint(path)?;
    let seed = loaded.init_seed;
    let params = ModelParams::from_store(expected.clone(), loaded.store, seed)
        .map_err(|e| Error::format(path, format!("incompatible with the requested model: {e}")))?;
    if loaded.config != *expected {
        return Err(Error::format(
            path,
            format!(
                "checkpoint config `{}` differs from requested `{}`",
                config_line(&loaded.config),
                config_line(expected)
            ),
        ));
    }
    Ok(params)
}
