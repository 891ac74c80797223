//! Output and input file formats: delimiter-separated tables with
//! documented header rows, plus flat JSON records for fits and run
//! manifests. Floats are written with the shortest round-trip
//! formatting, so identical data produces byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::json;

use crate::config::RunConfig;
use crate::dhd::{BatchMeta, Compensation, PhasePoints, SampleBatch};
use crate::error::{Error, Result};
use crate::gaussian::StateKind;
use crate::pulses::{TraceMeta, TraceSet};
use crate::recon::{Histogram2D, QFit};

pub const SAMPLES_HEADER: &str = "q1,p2,x,y";
pub const SWEEP_HEADER: &str =
    "R,fit_sq_db,fit_asq_db,pred_exact_sq_db,pred_exact_asq_db,pred_paper_sq_db,pred_paper_asq_db";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => v.to_string(),
        None => "none".to_string(),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parse a `# key=value key=value ...` metadata comment line.
fn parse_meta_line<'a>(path: &Path, line: &'a str) -> Result<Vec<(&'a str, &'a str)>> {
    let Some(rest) = line.strip_prefix('#') else {
        return Err(format_err(path, "missing `#` metadata line"));
    };
    let mut pairs = Vec::new();
    for token in rest.split_whitespace() {
        let Some((k, v)) = token.split_once('=') else {
            return Err(format_err(path, format!("bad metadata token {token:?}")));
        };
        pairs.push((k, v));
    }
    Ok(pairs)
}

fn meta_value<'a>(path: &Path, pairs: &[(&str, &'a str)], key: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| format_err(path, format!("metadata line lacks {key}")))
}

fn meta_f64(path: &Path, pairs: &[(&str, &str)], key: &str) -> Result<f64> {
    let raw = meta_value(path, pairs, key)?;
    raw.parse()
        .map_err(|_| format_err(path, format!("metadata {key}={raw:?} is not a number")))
}

fn meta_opt_f64(path: &Path, pairs: &[(&str, &str)], key: &str) -> Result<Option<f64>> {
    let raw = meta_value(path, pairs, key)?;
    if raw == "none" {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| format_err(path, format!("metadata {key}={raw:?} is not a number")))
}

pub fn samples_file_name(reflectivity: f64, seed: u64) -> String {
    format!("samples_R{reflectivity:.2}_seed{seed}.csv")
}

/// Write one acquisition as a CSV file: a `#` metadata line with the
/// full batch provenance, the `q1,p2,x,y` header, then one row per
/// sample holding the raw pair and its compensated point.
pub fn write_samples(dir: &Path, batch: &SampleBatch, points: &PhasePoints) -> Result<PathBuf> {
    if batch.pairs.len() != points.points.len() {
        return Err(Error::ShapeMismatch {
            expected: batch.pairs.len(),
            got: points.points.len(),
        });
    }
    ensure_dir(dir)?;
    let meta = &batch.meta;
    let path = dir.join(samples_file_name(meta.reflectivity, meta.seed));
    let mut text = format!(
        "# R={} theta={} eta={} clearance_db={} seed={} n={} compensation={}\n{SAMPLES_HEADER}\n",
        meta.reflectivity,
        meta.theta,
        meta.eta,
        fmt_opt(meta.clearance_db),
        meta.seed,
        meta.n,
        points.compensation,
    );
    for ((q1, p2), (x, y)) in batch.pairs.iter().zip(&points.points) {
        text.push_str(&format!("{q1},{p2},{x},{y}\n"));
    }
    write_text(&path, &text)?;
    Ok(path)
}

/// Read a samples file back into the batch and its compensated points.
pub fn read_samples(path: &Path) -> Result<(SampleBatch, PhasePoints)> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| format_err(path, "empty file"))?;
    let pairs_kv = parse_meta_line(path, meta_line)?;
    let meta = BatchMeta {
        reflectivity: meta_f64(path, &pairs_kv, "R")?,
        theta: meta_f64(path, &pairs_kv, "theta")?,
        eta: meta_f64(path, &pairs_kv, "eta")?,
        clearance_db: meta_opt_f64(path, &pairs_kv, "clearance_db")?,
        seed: meta_value(path, &pairs_kv, "seed")?
            .parse()
            .map_err(|_| format_err(path, "metadata seed is not an integer"))?,
        n: meta_value(path, &pairs_kv, "n")?
            .parse()
            .map_err(|_| format_err(path, "metadata n is not an integer"))?,
    };
    let compensation: Compensation = meta_value(path, &pairs_kv, "compensation")?
        .parse()
        .map_err(|e: Error| format_err(path, e.to_string()))?;
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "missing header row"))?;
    if header != SAMPLES_HEADER {
        return Err(format_err(
            path,
            format!("header {header:?} is not {SAMPLES_HEADER:?}"),
        ));
    }
    let mut pairs = Vec::new();
    let mut points = Vec::new();
    for (idx, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(format_err(
                path,
                format!("row {} has {} columns, expected 4", idx + 1, cols.len()),
            ));
        }
        let mut v = [0.0f64; 4];
        for (slot, raw) in v.iter_mut().zip(&cols) {
            *slot = raw.parse().map_err(|_| {
                format_err(path, format!("row {}: {raw:?} is not a number", idx + 1))
            })?;
        }
        pairs.push((v[0], v[1]));
        points.push((v[2], v[3]));
    }
    if pairs.len() != meta.n {
        return Err(format_err(
            path,
            format!("metadata says n={}, file has {} rows", meta.n, pairs.len()),
        ));
    }
    Ok((
        SampleBatch { meta, pairs },
        PhasePoints {
            points,
            compensation,
        },
    ))
}

pub fn histogram_file_name(reflectivity: f64, seed: u64) -> String {
    format!("histogram_R{reflectivity:.2}_seed{seed}.csv")
}

/// Write a histogram as a density grid: a `#` metadata line, an axis
/// header row of y bin centers, then one row per x bin starting with
/// its center coordinate.
pub fn write_histogram(dir: &Path, name: &str, hist: &Histogram2D) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let mut text = format!(
        "# bins_x={} bins_y={} range={} n_total={} n_in_range={}\n",
        hist.bins_x, hist.bins_y, hist.range, hist.n_total, hist.n_in_range
    );
    text.push_str("x\\y");
    for j in 0..hist.bins_y {
        text.push_str(&format!(",{}", hist.center(j)));
    }
    text.push('\n');
    for i in 0..hist.bins_x {
        text.push_str(&hist.center(i).to_string());
        for j in 0..hist.bins_y {
            text.push_str(&format!(",{}", hist.density[(i, j)]));
        }
        text.push('\n');
    }
    write_text(&path, &text)?;
    Ok(path)
}

/// Write a theory Q surface with the same axis-header grid layout as
/// a histogram file.
pub fn write_grid(dir: &Path, name: &str, grid: &DMatrix<f64>, range: f64) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let (bins_x, bins_y) = (grid.nrows(), grid.ncols());
    let center = |bins: usize, i: usize| -range + (i as f64 + 0.5) * (2.0 * range / bins as f64);
    let mut text = format!("# bins_x={bins_x} bins_y={bins_y} range={range}\n");
    text.push_str("x\\y");
    for j in 0..bins_y {
        text.push_str(&format!(",{}", center(bins_y, j)));
    }
    text.push('\n');
    for i in 0..bins_x {
        text.push_str(&center(bins_x, i).to_string());
        for j in 0..bins_y {
            text.push_str(&format!(",{}", grid[(i, j)]));
        }
        text.push('\n');
    }
    write_text(&path, &text)?;
    Ok(path)
}

pub fn fit_file_name(reflectivity: f64, seed: u64) -> String {
    format!("fit_R{reflectivity:.2}_seed{seed}.json")
}

fn json_opt(v: Option<f64>) -> serde_json::Value {
    match v {
        Some(v) => json!(v),
        None => serde_json::Value::Null,
    }
}

/// Write a fitted Q-function record as a flat JSON object.
pub fn write_fit(dir: &Path, name: &str, fit: &QFit) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let record = json!({
        "center_x": fit.center.0,
        "center_y": fit.center.1,
        "cov_xx": fit.cov[(0, 0)],
        "cov_xy": fit.cov[(0, 1)],
        "cov_yy": fit.cov[(1, 1)],
        "lambda_min": fit.lambda_min,
        "lambda_max": fit.lambda_max,
        "angle_rad": fit.angle,
        "sq_db": json_opt(fit.sq_db),
        "asq_db": json_opt(fit.asq_db),
        "n_used": fit.n_used,
    });
    write_text(&path, &format!("{:#}\n", record))?;
    Ok(path)
}

/// One row of the reflectivity sweep table. The sq slot tracks the
/// input's squeezed axis (x) and the asq slot its antisqueezed axis
/// (y); the two curves cross at the unsqueezing reflectivity rather
/// than swapping columns. Slots are NaN when the fitted variance sits
/// below the vacuum unit or the closed-form expression has no value
/// at that R (written as literal NaN, never a clamped number).
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub reflectivity: f64,
    pub fit_sq_db: f64,
    pub fit_asq_db: f64,
    pub pred_exact_sq_db: f64,
    pub pred_exact_asq_db: f64,
    pub pred_paper_sq_db: f64,
    pub pred_paper_asq_db: f64,
}

pub fn sweep_file_name(seed: u64) -> String {
    format!("sweep_seed{seed}.csv")
}

pub fn write_sweep(dir: &Path, name: &str, rows: &[SweepRow]) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let mut text = format!("{SWEEP_HEADER}\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.reflectivity,
            row.fit_sq_db,
            row.fit_asq_db,
            row.pred_exact_sq_db,
            row.pred_exact_asq_db,
            row.pred_paper_sq_db,
            row.pred_paper_asq_db,
        ));
    }
    write_text(&path, &text)?;
    Ok(path)
}

pub fn traces_file_name(seed: u64) -> String {
    format!("traces_seed{seed}.csv")
}

/// Write a trace set: a `#` header carrying dt_ns, n, clearance_db and
/// seed, then one segment per row.
pub fn write_traces(dir: &Path, name: &str, traces: &TraceSet) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let mut text = format!(
        "# dt_ns={} n={} clearance_db={} seed={}",
        traces.dt_ns,
        traces.segments.ncols(),
        fmt_opt(traces.meta.clearance_db),
        traces.meta.seed,
    );
    if let Some(duty) = traces.meta.duty_cycle {
        text.push_str(&format!(" duty_cycle={duty}"));
    }
    text.push('\n');
    for i in 0..traces.segments.nrows() {
        let row: Vec<String> = (0..traces.segments.ncols())
            .map(|j| traces.segments[(i, j)].to_string())
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(&path, &text)?;
    Ok(path)
}

/// Read a trace set file written by [`write_traces`].
pub fn read_traces(path: &Path) -> Result<TraceSet> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| format_err(path, "empty file"))?;
    let pairs = parse_meta_line(path, meta_line)?;
    let dt_ns = meta_f64(path, &pairs, "dt_ns")?;
    let n: usize = meta_value(path, &pairs, "n")?
        .parse()
        .map_err(|_| format_err(path, "metadata n is not an integer"))?;
    let meta = TraceMeta {
        clearance_db: meta_opt_f64(path, &pairs, "clearance_db")?,
        seed: meta_value(path, &pairs, "seed")?
            .parse()
            .map_err(|_| format_err(path, "metadata seed is not an integer"))?,
        duty_cycle: pairs
            .iter()
            .find(|(k, _)| *k == "duty_cycle")
            .map(|(_, v)| {
                v.parse()
                    .map_err(|_| format_err(path, "metadata duty_cycle is not a number"))
            })
            .transpose()?,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let mut row = Vec::with_capacity(n);
        for raw in line.split(',') {
            row.push(raw.parse().map_err(|_| {
                format_err(path, format!("row {}: {raw:?} is not a number", idx + 1))
            })?);
        }
        if row.len() != n {
            return Err(format_err(
                path,
                format!("row {} has {} samples, expected {n}", idx + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format_err(path, "file holds no segments"));
    }
    let segments = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    Ok(TraceSet {
        segments,
        dt_ns,
        meta,
    })
}

fn state_json(state: &StateKind) -> serde_json::Value {
    match state {
        StateKind::Vacuum => json!({ "kind": "vacuum" }),
        StateKind::Coherent { alpha } => json!({
            "kind": "coherent",
            "alpha_re": alpha.re,
            "alpha_im": alpha.im,
        }),
        StateKind::SqueezedVacuum { s_db } => json!({
            "kind": "squeezed_vacuum",
            "squeeze_db": s_db,
        }),
        StateKind::ThermalSqueezed(spec) => json!({
            "kind": "thermal_squeezed",
            "s_s": spec.s_s,
            "s_as": spec.s_as,
            "angle": spec.angle,
        }),
    }
}

pub fn manifest_file_name(subcommand: &str, reflectivity: f64, seed: u64) -> String {
    format!("manifest_{subcommand}_R{reflectivity:.2}_seed{seed}.json")
}

/// Write the run manifest: subcommand, crate version, the fully
/// resolved configuration, and the seed actually used (recorded even
/// when it was drawn automatically).
pub fn write_manifest(
    dir: &Path,
    subcommand: &str,
    config: &RunConfig,
    seed: u64,
    extras: &[(&str, serde_json::Value)],
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(manifest_file_name(subcommand, config.reflectivity, seed));
    let mut record = json!({
        "subcommand": subcommand,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "state": state_json(&config.state),
        "R": config.reflectivity,
        "theta": config.theta,
        "eta": config.eta,
        "clearance_db": json_opt(config.clearance_db),
        "n_samples": config.n_samples,
        "compensation": config.compensation.name(),
        "bins": config.bins,
        "range": config.range,
        "output_dir": config.output_dir.display().to_string(),
    });
    let map = record.as_object_mut().expect("manifest is an object");
    for (key, value) in extras {
        map.insert((*key).to_string(), value.clone());
    }
    write_text(&path, &format!("{:#}\n", record))?;
    Ok(path)
}
