//! `ECKPN-DATA v1` dataset files.
//!
//! ```text
//! ECKPN-DATA v1
//! dims <classes> <raw_dim> <semantic_dim> <samples>
//! stddev <within-class stddev>
//! seed <seed>
//! [prototypes]        one CSV row per class
//! [semantic]          one CSV row per class
//! [samples]           one CSV row per sample: label,features...
//! [split]             train,<ids> / val,<ids> / test,<ids>
//! ```
//!
//! Numbers use the shortest round-trip decimal form, so a write/read cycle
//! is bit-exact. Externally extracted features can be supplied by writing
//! the same layout; prototypes are then only used by the synthetic sampler
//! when `samples` is 0.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, SamplePool};
use crate::error::{Error, Result};

pub const DATA_MAGIC: &str = "ECKPN-DATA v1";

fn csv_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v}").expect("write to string");
    }
    out.push('\n');
}

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    let samples = ds.pool.as_ref().map_or(0, |p| p.labels.len());
    writeln!(out, "{DATA_MAGIC}").unwrap();
    writeln!(out, "dims {} {} {} {samples}", ds.class_count, ds.raw_dim, ds.semantic_dim).unwrap();
    writeln!(out, "stddev {}", ds.within_class_stddev).unwrap();
    writeln!(out, "seed {}", ds.seed).unwrap();
    out.push_str("[prototypes]\n");
    for row in ds.prototypes.rows() {
        csv_row(&mut out, row.iter().copied());
    }
    out.push_str("[semantic]\n");
    for row in ds.semantic.rows() {
        csv_row(&mut out, row.iter().copied());
    }
    out.push_str("[samples]\n");
    if let Some(pool) = &ds.pool {
        for (row, &label) in pool.features.rows().into_iter().zip(&pool.labels) {
            write!(out, "{label},").unwrap();
            csv_row(&mut out, row.iter().copied());
        }
    }
    out.push_str("[split]\n");
    for (name, ids) in ["train", "val", "test"].iter().zip(&ds.splits) {
        out.push_str(name);
        for id in ids {
            write!(out, ",{id}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text).map_err(|reason| Error::format(path, reason))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> std::result::Result<(usize, &'a str), String> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .ok_or_else(|| format!("unexpected end of file, expected {what}"))
    }

    fn expect(&mut self, exact: &str) -> std::result::Result<(), String> {
        let (n, line) = self.next(exact)?;
        if line != exact {
            return Err(format!("line {n}: expected `{exact}`, found `{line}`"));
        }
        Ok(())
    }

    fn keyed(&mut self, key: &str) -> std::result::Result<(usize, Vec<&'a str>), String> {
        let (n, line) = self.next(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(format!("line {n}: expected `{key} ...`, found `{line}`"));
        }
        Ok((n, parts.collect()))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> std::result::Result<Array2<f64>, String> {
        let mut m = Array2::zeros((rows, cols));
        for r in 0..rows {
            let (n, line) = self.next(what)?;
            let values = parse_floats(line).map_err(|e| format!("line {n}: {e}"))?;
            if values.len() != cols {
                return Err(format!("line {n}: {what} row has {} values, expected {cols}", values.len()));
            }
            m.row_mut(r).assign(&ndarray::Array1::from(values));
        }
        Ok(m)
    }
}

fn parse_floats(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number `{t}`: {e}")))
        .collect()
}

fn parse_usize(n: usize, t: &str) -> std::result::Result<usize, String> {
    t.trim().parse().map_err(|e| format!("line {n}: bad integer `{t}`: {e}"))
}

pub fn parse_dataset(text: &str) -> std::result::Result<Dataset, String> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    lines.expect(DATA_MAGIC).map_err(|e| format!("missing or unsupported header: {e}"))?;
    let (n, dims) = lines.keyed("dims")?;
    if dims.len() != 4 {
        return Err(format!("line {n}: dims needs 4 values"));
    }
    let dims: Vec<usize> = dims.iter().map(|t| parse_usize(n, t)).collect::<std::result::Result<_, _>>()?;
    let (classes, raw_dim, semantic_dim, samples) = (dims[0], dims[1], dims[2], dims[3]);
    let (n, stddev) = lines.keyed("stddev")?;
    let within_class_stddev = stddev
        .first()
        .and_then(|t| t.parse::<f64>().ok())
        .ok_or_else(|| format!("line {n}: bad stddev"))?;
    let (n, seed) = lines.keyed("seed")?;
    let seed = seed
        .first()
        .and_then(|t| t.parse::<u64>().ok())
        .ok_or_else(|| format!("line {n}: bad seed"))?;

    lines.expect("[prototypes]")?;
    let prototypes = lines.matrix(classes, raw_dim, "prototype")?;
    lines.expect("[semantic]")?;
    let semantic = lines.matrix(classes, semantic_dim, "semantic")?;
    lines.expect("[samples]")?;
    let mut features = Array2::zeros((samples, raw_dim));
    let mut labels = Vec::with_capacity(samples);
    for s in 0..samples {
        let (n, line) = lines.next("sample row")?;
        let (label, rest) = line.split_once(',').ok_or_else(|| format!("line {n}: missing label"))?;
        labels.push(parse_usize(n, label)?);
        let values = parse_floats(rest).map_err(|e| format!("line {n}: {e}"))?;
        if values.len() != raw_dim {
            return Err(format!("line {n}: sample has {} features, expected {raw_dim}", values.len()));
        }
        features.row_mut(s).assign(&ndarray::Array1::from(values));
    }
    lines.expect("[split]")?;
    let mut splits: [Vec<usize>; 3] = Default::default();
    for (slot, name) in splits.iter_mut().zip(["train", "val", "test"]) {
        let (n, line) = lines.next(name)?;
        let mut parts = line.split(',');
        if parts.next() != Some(name) {
            return Err(format!("line {n}: expected `{name},...`"));
        }
        *slot = parts
            .filter(|t| !t.is_empty())
            .map(|t| parse_usize(n, t))
            .collect::<std::result::Result<_, _>>()?;
    }

    let pool = if samples > 0 {
        Some(SamplePool::new(features, labels, classes).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let ds = Dataset {
        class_count: classes,
        raw_dim,
        semantic_dim,
        within_class_stddev,
        prototypes,
        semantic,
        splits,
        seed,
        pool,
    };
    ds.validate().map_err(|e| e.to_string())?;
    Ok(ds)
}
