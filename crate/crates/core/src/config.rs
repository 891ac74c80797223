//! Flat `key = value` run configuration with strict parsing: unknown
//! keys, duplicates, and out-of-domain values are line-numbered
//! errors, never silently ignored.

use std::collections::HashMap;
use std::path::PathBuf;

use num_complex::Complex64;

use crate::dhd::Compensation;
use crate::error::{Error, Result};
use crate::gaussian::{SqueezedThermalSpec, StateKind};

/// Fully resolved parameters of one simulated acquisition run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub state: StateKind,
    /// Input beamsplitter power reflectivity R.
    pub reflectivity: f64,
    /// Signal-LO relative phase, radians.
    pub theta: f64,
    /// Total detection efficiency.
    pub eta: f64,
    /// Electronic noise clearance in dB; absent disables the noise floor.
    pub clearance_db: Option<f64>,
    pub n_samples: usize,
    /// Absent means: draw a fresh seed and record it in the manifest.
    pub seed: Option<u64>,
    pub compensation: Compensation,
    pub bins: usize,
    pub range: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            state: StateKind::ThermalSqueezed(
                SqueezedThermalSpec::new(0.750, 1.820, 0.0).expect("physical defaults"),
            ),
            reflectivity: 0.5,
            theta: 0.0,
            eta: 0.80,
            clearance_db: None,
            n_samples: 50_000,
            seed: None,
            compensation: Compensation::Unbiased,
            bins: 100,
            range: 3.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "state",
    "s_s",
    "s_as",
    "angle",
    "alpha_re",
    "alpha_im",
    "squeeze_db",
    "R",
    "theta",
    "eta",
    "clearance_db",
    "n_samples",
    "seed",
    "compensation",
    "bins",
    "range",
    "output_dir",
];

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_finite(raw: &str, key: &str, line: usize) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| err(line, format!("{key} expects a number, got {raw:?}")))?;
    if !v.is_finite() {
        return Err(err(line, format!("{key} must be finite, got {raw}")));
    }
    Ok(v)
}

/// Parse a configuration document into a RunConfig, starting from the
/// documented defaults. Accepts `#` comments (full-line or trailing)
/// and blank lines; keys are case-sensitive.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut seen: HashMap<&str, (String, usize)> = HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let Some((key, value)) = stripped.split_once('=') else {
            return Err(err(line_no, format!("expected `key = value`, got {stripped:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KNOWN_KEYS.iter().find(|&&k| k == key) else {
            return Err(err(line_no, format!("unknown key {key:?}")));
        };
        if value.is_empty() {
            return Err(err(line_no, format!("{key} has no value")));
        }
        if let Some((_, first)) = seen.get(known) {
            return Err(err(
                line_no,
                format!("{key} already set on line {first}"),
            ));
        }
        seen.insert(known, (value.to_string(), line_no));
    }

    let mut config = RunConfig::default();
    let take = |seen: &mut HashMap<&str, (String, usize)>, key: &str| seen.remove(key);

    if let Some((v, line)) = take(&mut seen, "R") {
        let r = parse_finite(&v, "R", line)?;
        if !(r > 0.0 && r < 1.0) {
            return Err(err(line, format!("R must be inside (0, 1), got {r}")));
        }
        config.reflectivity = r;
    }
    if let Some((v, line)) = take(&mut seen, "theta") {
        config.theta = parse_finite(&v, "theta", line)?;
    }
    if let Some((v, line)) = take(&mut seen, "eta") {
        let eta = parse_finite(&v, "eta", line)?;
        if !(0.0..=1.0).contains(&eta) {
            return Err(err(line, format!("eta must be in [0, 1], got {eta}")));
        }
        config.eta = eta;
    }
    if let Some((v, line)) = take(&mut seen, "clearance_db") {
        config.clearance_db = if v == "none" {
            None
        } else {
            let c = parse_finite(&v, "clearance_db", line)?;
            if c < 0.0 {
                return Err(err(line, format!("clearance_db must be >= 0, got {c}")));
            }
            Some(c)
        };
    }
    if let Some((v, line)) = take(&mut seen, "n_samples") {
        let n: usize = v
            .parse()
            .map_err(|_| err(line, format!("n_samples expects a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(err(line, "n_samples must be at least 1"));
        }
        config.n_samples = n;
    }
    if let Some((v, line)) = take(&mut seen, "seed") {
        config.seed = Some(
            v.parse::<u64>()
                .map_err(|_| err(line, format!("seed expects an unsigned integer, got {v:?}")))?,
        );
    }
    if let Some((v, line)) = take(&mut seen, "compensation") {
        config.compensation = v
            .parse()
            .map_err(|e: Error| err(line, e.to_string()))?;
    }
    if let Some((v, line)) = take(&mut seen, "bins") {
        let bins: usize = v
            .parse()
            .map_err(|_| err(line, format!("bins expects an integer, got {v:?}")))?;
        if bins < 2 {
            return Err(err(line, format!("bins must be at least 2, got {bins}")));
        }
        config.bins = bins;
    }
    if let Some((v, line)) = take(&mut seen, "range") {
        let range = parse_finite(&v, "range", line)?;
        if !(range > 0.0) {
            return Err(err(line, format!("range must be positive, got {range}")));
        }
        config.range = range;
    }
    if let Some((v, _)) = take(&mut seen, "output_dir") {
        config.output_dir = PathBuf::from(v);
    }

    let kind_entry = take(&mut seen, "state");
    let kind_line = kind_entry.as_ref().map(|(_, l)| *l).unwrap_or(0);
    let kind_name = kind_entry
        .map(|(v, _)| v)
        .unwrap_or_else(|| "thermal_squeezed".to_string());

    let reject_leftover = |seen: &HashMap<&str, (String, usize)>, keys: &[&str], kind: &str| {
        for &k in keys {
            if let Some((_, line)) = seen.get(k) {
                return Err(err(*line, format!("{k} does not apply to state = {kind}")));
            }
        }
        Ok(())
    };

    config.state = match kind_name.as_str() {
        "vacuum" => {
            reject_leftover(
                &seen,
                &["s_s", "s_as", "angle", "alpha_re", "alpha_im", "squeeze_db"],
                "vacuum",
            )?;
            StateKind::Vacuum
        }
        "coherent" => {
            reject_leftover(&seen, &["s_s", "s_as", "angle", "squeeze_db"], "coherent")?;
            let re = match take(&mut seen, "alpha_re") {
                Some((v, line)) => parse_finite(&v, "alpha_re", line)?,
                None => 0.0,
            };
            let im = match take(&mut seen, "alpha_im") {
                Some((v, line)) => parse_finite(&v, "alpha_im", line)?,
                None => 0.0,
            };
            StateKind::Coherent {
                alpha: Complex64::new(re, im),
            }
        }
        "squeezed_vacuum" => {
            reject_leftover(
                &seen,
                &["s_s", "s_as", "angle", "alpha_re", "alpha_im"],
                "squeezed_vacuum",
            )?;
            let s_db = match take(&mut seen, "squeeze_db") {
                Some((v, line)) => parse_finite(&v, "squeeze_db", line)?,
                None => -1.25,
            };
            StateKind::SqueezedVacuum { s_db }
        }
        "thermal_squeezed" => {
            reject_leftover(&seen, &["alpha_re", "alpha_im", "squeeze_db"], "thermal_squeezed")?;
            let defaults = SqueezedThermalSpec::new(0.750, 1.820, 0.0).expect("physical defaults");
            let mut spec_line = kind_line;
            let s_s = match take(&mut seen, "s_s") {
                Some((v, line)) => {
                    spec_line = line;
                    parse_finite(&v, "s_s", line)?
                }
                None => defaults.s_s,
            };
            let s_as = match take(&mut seen, "s_as") {
                Some((v, line)) => {
                    spec_line = spec_line.max(line);
                    parse_finite(&v, "s_as", line)?
                }
                None => defaults.s_as,
            };
            let angle = match take(&mut seen, "angle") {
                Some((v, line)) => parse_finite(&v, "angle", line)?,
                None => defaults.angle,
            };
            let spec = SqueezedThermalSpec::new(s_s, s_as, angle)
                .map_err(|e| err(spec_line, e.to_string()))?;
            StateKind::ThermalSqueezed(spec)
        }
        other => {
            return Err(err(
                kind_line,
                format!(
                    "unknown state {other:?} (expected vacuum, coherent, squeezed_vacuum or thermal_squeezed)"
                ),
            ))
        }
    };

    Ok(config)
}
