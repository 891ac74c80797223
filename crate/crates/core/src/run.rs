//! Command-line front end: argument parsing, configuration
//! resolution, deterministic run orchestration, and manifest emission.
//!
//! Every run writes a manifest with the fully resolved configuration,
//! the crate version, and the seed actually used; rerunning with an
//! identical manifest reproduces sample files byte for byte.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use crate::config::{parse_config, RunConfig};
use crate::dhd::{
    compensate, dhd_joint, povm_equivalent_state, predict_fit_params, sample_dhd,
    unbalance_settings, unsqueezing_reflectivity, Compensation, BatchMeta, GridSpec,
    PredictionMethod,
};
use crate::error::{Error, Result};
use crate::gaussian::{make_state, random_single_mode, GaussianState, StateKind};
use crate::io;
use crate::pulses::{
    extract_mode_pca, make_temporal_mode, mode_overlap, project_traces, synthesize_traces,
};
use crate::recon::{
    fit_gaussian_moments, histogram2d, loss_corrected_variances, refine_fit_histogram, QFit,
};

/// Simulator and reconstruction toolkit for unbalanced double
/// homodyne detection of Gaussian states.
#[derive(Parser, Debug)]
#[command(name = "dhd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand; flags override the
/// configuration file key of the same name.
#[derive(Args, Debug, Default)]
struct CommonOpts {
    /// Configuration file (flat `key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed; drawn automatically (and recorded) when absent.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Input beamsplitter power reflectivity, in (0, 1).
    #[arg(long = "r", value_name = "REAL")]
    r: Option<f64>,
    /// Signal-LO relative phase, radians.
    #[arg(long, value_name = "RAD")]
    theta: Option<f64>,
    /// Total detection efficiency, in [0, 1].
    #[arg(long, value_name = "REAL")]
    eta: Option<f64>,
    /// Electronic noise clearance in dB; "none" disables the floor.
    #[arg(long, value_name = "DB")]
    clearance_db: Option<String>,
    /// Samples per acquisition.
    #[arg(long, value_name = "COUNT")]
    n_samples: Option<usize>,
    /// Point compensation: unbiased or povm.
    #[arg(long, value_name = "MODE")]
    compensation: Option<String>,
    /// Histogram/grid bins per axis.
    #[arg(long, value_name = "COUNT")]
    bins: Option<usize>,
    /// Histogram/grid half-range per axis, √SNU.
    #[arg(long, value_name = "REAL")]
    range: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form tables: unbalance settings, fitted-parameter
    /// predictions by both methods, unsqueezing reflectivities, and a
    /// normalized theory Q surface.
    Theory {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Draw detector outcome pairs for one acquisition and write them
    /// together with their compensated phase-space points.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Histogram a samples file and fit a 2D Gaussian to the cloud.
    Reconstruct {
        /// Samples file written by `simulate`.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Histogram bins per axis.
        #[arg(long, value_name = "COUNT")]
        bins: Option<usize>,
        /// Histogram half-range per axis, √SNU.
        #[arg(long, value_name = "REAL")]
        range: Option<f64>,
        /// Also run the damped least-squares surface refinement.
        #[arg(long)]
        refine: bool,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Sweep the reflectivity: one acquisition and fit per R, with
    /// predicted curves from both transform methods.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated reflectivities.
        #[arg(long, value_name = "LIST", default_value = "0.3,0.39,0.46,0.5,0.55,0.6")]
        r_list: String,
    },
    /// Synthesize pulsed homodyne traces, recover the temporal mode by
    /// PCA, and report the overlap with the true mode.
    Pulses {
        #[command(flatten)]
        common: CommonOpts,
        /// Temporal mode FWHM, ns.
        #[arg(long, value_name = "NS", default_value_t = 80.0)]
        fwhm_ns: f64,
        /// Sampling interval, ns.
        #[arg(long, value_name = "NS", default_value_t = 10.0)]
        dt_ns: f64,
        /// Samples per trace segment.
        #[arg(long, value_name = "COUNT", default_value_t = 200)]
        segment_len: usize,
        /// Number of trace segments (pulses).
        #[arg(long, value_name = "COUNT", default_value_t = 10_000)]
        segments: usize,
    },
    /// Self-test: povm-compensated clouds must reproduce the Husimi
    /// moments of the squeeze-equivalent state for random states and
    /// reflectivities. Fails loudly when the equivalence breaks.
    Verify {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of random single-mode input states.
        #[arg(long, value_name = "COUNT", default_value_t = 20)]
        states: usize,
        /// Comma-separated reflectivities to test.
        #[arg(long, value_name = "LIST", default_value = "0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
        r_list: String,
        /// Moment tolerance in standard errors.
        #[arg(long, value_name = "SE", default_value_t = 4.0)]
        max_se: f64,
    },
}

/// Print to stdout, ignoring a closed pipe (e.g. `dhd ... | head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Parse arguments and dispatch. Returns the process exit code:
/// 0 success, 1 runtime error, 2 usage error.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Theory { common } => resolve(&common).and_then(|(c, s)| run_theory(&c, s)),
        Command::Simulate { common } => resolve(&common).and_then(|(c, s)| run_simulate(&c, s)),
        Command::Reconstruct {
            input,
            bins,
            range,
            refine,
            out,
        } => run_reconstruct(&input, bins, range, refine, out),
        Command::Sweep { common, r_list } => {
            resolve(&common).and_then(|(c, s)| run_sweep(&c, s, &r_list))
        }
        Command::Pulses {
            common,
            fwhm_ns,
            dt_ns,
            segment_len,
            segments,
        } => resolve(&common)
            .and_then(|(c, s)| run_pulses(&c, s, fwhm_ns, dt_ns, segment_len, segments)),
        Command::Verify {
            common,
            states,
            r_list,
            max_se,
        } => resolve(&common).and_then(|(c, s)| run_verify(&c, s, states, &r_list, max_se)),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

/// Load the configuration file (if any), apply command-line
/// overrides, and resolve the seed. The returned seed is always
/// concrete and is recorded in the manifest.
fn resolve(common: &CommonOpts) -> Result<(RunConfig, u64)> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(r) = common.r {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Usage(format!("--r must be inside (0, 1), got {r}")));
        }
        config.reflectivity = r;
    }
    if let Some(theta) = common.theta {
        if !theta.is_finite() {
            return Err(Error::Usage(format!("--theta must be finite, got {theta}")));
        }
        config.theta = theta;
    }
    if let Some(eta) = common.eta {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Usage(format!("--eta must be in [0, 1], got {eta}")));
        }
        config.eta = eta;
    }
    if let Some(raw) = &common.clearance_db {
        config.clearance_db = if raw == "none" {
            None
        } else {
            let c: f64 = raw
                .parse()
                .map_err(|_| Error::Usage(format!("--clearance-db expects a number or none, got {raw:?}")))?;
            if c < 0.0 {
                return Err(Error::Usage(format!("--clearance-db must be >= 0, got {c}")));
            }
            Some(c)
        };
    }
    if let Some(n) = common.n_samples {
        if n == 0 {
            return Err(Error::Usage("--n-samples must be at least 1".into()));
        }
        config.n_samples = n;
    }
    if let Some(raw) = &common.compensation {
        config.compensation = raw.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
    }
    if let Some(bins) = common.bins {
        if bins < 2 {
            return Err(Error::Usage(format!("--bins must be at least 2, got {bins}")));
        }
        config.bins = bins;
    }
    if let Some(range) = common.range {
        if !(range > 0.0) {
            return Err(Error::Usage(format!("--range must be positive, got {range}")));
        }
        config.range = range;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    let seed = config.seed.unwrap_or_else(rand::random);
    config.seed = Some(seed);
    Ok((config, seed))
}

fn db10(value: f64) -> f64 {
    10.0 * value.log10()
}

/// Quadrature variances implied by a zero-mean, axis-aligned state
/// recipe, as required by the closed-form tables.
fn axis_variances(state: &StateKind) -> Result<(f64, f64)> {
    match state {
        StateKind::Vacuum => Ok((1.0, 1.0)),
        StateKind::SqueezedVacuum { s_db } => {
            let s = 10f64.powf(s_db / 10.0);
            Ok((s, 1.0 / s))
        }
        StateKind::ThermalSqueezed(spec) if spec.angle == 0.0 => Ok((spec.s_s, spec.s_as)),
        StateKind::ThermalSqueezed(spec) => Err(Error::OutOfModel(format!(
            "closed-form tables assume an axis-aligned state, got angle {}",
            spec.angle
        ))),
        StateKind::Coherent { .. } => Err(Error::OutOfModel(
            "closed-form tables assume a zero-mean state".into(),
        )),
    }
}

fn run_theory(config: &RunConfig, seed: u64) -> Result<()> {
    let (s_s, s_as) = axis_variances(&config.state)?;
    let settings = unbalance_settings(config.reflectivity)?;
    let exact = predict_fit_params(s_s, s_as, config.reflectivity, PredictionMethod::Exact)?;
    let paper = predict_fit_params(s_s, s_as, config.reflectivity, PredictionMethod::Paper);
    let unsq_exact = unsqueezing_reflectivity(s_s, s_as, PredictionMethod::Exact);
    let unsq_paper = unsqueezing_reflectivity(s_s, s_as, PredictionMethod::Paper);

    let (paper_vals, paper_error) = match paper {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (unsq_exact, unsq_exact_error) = match unsq_exact {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let unsq_paper = unsq_paper.ok();
    let record = json!({
        "R": settings.reflectivity,
        "r_amp": settings.r,
        "t_amp": settings.t,
        "xi": settings.xi,
        "unbalance_db": settings.s_db,
        "s_s": s_s,
        "s_as": s_as,
        "pred_exact_s_sq": exact.0,
        "pred_exact_s_asq": exact.1,
        "pred_exact_sq_db": db10(exact.0),
        "pred_exact_asq_db": db10(exact.1),
        "pred_paper_s_sq": paper_vals.map(|p| p.0),
        "pred_paper_s_asq": paper_vals.map(|p| p.1),
        "pred_paper_sq_db": paper_vals.map(|p| db10(p.0)),
        "pred_paper_asq_db": paper_vals.map(|p| db10(p.1)),
        "pred_paper_error": paper_error,
        "unsqueezing_R_exact": unsq_exact,
        "unsqueezing_R_paper": unsq_paper,
        "unsqueezing_error": unsq_exact_error,
    });
    let dir = &config.output_dir;
    io::ensure_dir(dir)?;
    let table_path = dir.join(format!("theory_R{:.2}.json", config.reflectivity));
    fs::write(&table_path, format!("{record:#}\n")).map_err(|e| Error::io(&table_path, e))?;

    let grid = crate::dhd::theory_q_grid(
        s_s,
        s_as,
        config.reflectivity,
        &GridSpec::new(config.bins, config.range)?,
    )?;
    let grid_path = io::write_grid(
        dir,
        &format!("theory_qgrid_R{:.2}.csv", config.reflectivity),
        &grid,
        config.range,
    )?;
    io::write_manifest(dir, "theory", config, seed, &[])?;
    say!(
        "theory: R={} xi={:.6} unbalance_db={:.4}",
        settings.reflectivity, settings.xi, settings.s_db
    );
    say!("wrote {}", table_path.display());
    say!("wrote {}", grid_path.display());
    Ok(())
}

fn run_simulate(config: &RunConfig, seed: u64) -> Result<()> {
    let state = make_state(config.state, 1)?;
    let joint = dhd_joint(
        &state,
        config.reflectivity,
        config.theta,
        config.eta,
        config.clearance_db,
    )?;
    let meta = BatchMeta {
        reflectivity: config.reflectivity,
        theta: config.theta,
        eta: config.eta,
        clearance_db: config.clearance_db,
        seed,
        n: config.n_samples,
    };
    let batch = sample_dhd(&joint, &meta)?;
    let points = compensate(&batch, config.compensation)?;
    let dir = &config.output_dir;
    let samples_path = io::write_samples(dir, &batch, &points)?;
    let manifest_path = io::write_manifest(dir, "simulate", config, seed, &[])?;
    say!("simulate: n={} seed={}", config.n_samples, seed);
    say!("wrote {}", samples_path.display());
    say!("wrote {}", manifest_path.display());
    Ok(())
}

fn run_reconstruct(
    input: &PathBuf,
    bins: Option<usize>,
    range: Option<f64>,
    refine: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let defaults = RunConfig::default();
    let bins = bins.unwrap_or(defaults.bins);
    let range = range.unwrap_or(defaults.range);
    if bins < 2 {
        return Err(Error::Usage(format!("--bins must be at least 2, got {bins}")));
    }
    if !(range > 0.0) {
        return Err(Error::Usage(format!("--range must be positive, got {range}")));
    }
    let (batch, points) = io::read_samples(input)?;
    let meta = batch.meta;
    let hist = histogram2d(&points, bins, range)?;
    let moment_fit = fit_gaussian_moments(&points)?;
    let fit = if refine {
        refine_fit_histogram(&hist, &moment_fit)?
    } else {
        moment_fit
    };
    // separate labeled view; the raw fit fields are never rewritten.
    // Only offered for balanced runs, where the inversion is exact.
    let loss_corrected = if meta.eta < 1.0 && (meta.reflectivity - 0.5).abs() < 1e-12 {
        loss_corrected_variances(&fit, meta.eta).ok()
    } else {
        None
    };
    let dir = out.unwrap_or_else(|| {
        input
            .parent()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let hist_path = io::write_histogram(
        &dir,
        &io::histogram_file_name(meta.reflectivity, meta.seed),
        &hist,
    )?;
    let fit_path = io::write_fit(
        &dir,
        &io::fit_file_name(meta.reflectivity, meta.seed),
        &fit,
    )?;
    let record = json!({
        "subcommand": "reconstruct",
        "version": env!("CARGO_PKG_VERSION"),
        "input": input.display().to_string(),
        "R": meta.reflectivity,
        "theta": meta.theta,
        "eta": meta.eta,
        "clearance_db": meta.clearance_db.map_or(serde_json::Value::Null, |c| json!(c)),
        "seed": meta.seed,
        "n": meta.n,
        "compensation": points.compensation.name(),
        "bins": bins,
        "range": range,
        "refine": refine,
        "loss_corrected": match loss_corrected {
            Some((v_min, v_max)) => json!({
                "eta": meta.eta,
                "sq_db": db10(v_min),
                "asq_db": db10(v_max),
            }),
            None => serde_json::Value::Null,
        },
        "output_dir": dir.display().to_string(),
    });
    let manifest_path = dir.join(io::manifest_file_name(
        "reconstruct",
        meta.reflectivity,
        meta.seed,
    ));
    io::ensure_dir(&dir)?;
    fs::write(&manifest_path, format!("{record:#}\n"))
        .map_err(|e| Error::io(&manifest_path, e))?;
    print_fit("reconstruct", &fit);
    if let Some((v_min, v_max)) = loss_corrected {
        say!(
            "loss-corrected (eta={:.2}): sq_db={:.3} asq_db={:.3}",
            meta.eta,
            db10(v_min),
            db10(v_max)
        );
    }
    say!("wrote {}", hist_path.display());
    say!("wrote {}", fit_path.display());
    say!("wrote {}", manifest_path.display());
    Ok(())
}

fn print_fit(label: &str, fit: &QFit) {
    let fmt_db = |v: Option<f64>| match v {
        Some(v) => format!("{v:.3}"),
        None => "below-vacuum".to_string(),
    };
    say!(
        "{label}: center=({:.4}, {:.4}) lambda=({:.4}, {:.4}) angle={:.4} sq_db={} asq_db={} n={}",
        fit.center.0,
        fit.center.1,
        fit.lambda_min,
        fit.lambda_max,
        fit.angle,
        fmt_db(fit.sq_db),
        fmt_db(fit.asq_db),
        fit.n_used
    );
}

fn parse_r_list(raw: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for token in raw.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let r: f64 = token
            .parse()
            .map_err(|_| Error::Usage(format!("--r-list entry {token:?} is not a number")))?;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Usage(format!(
                "--r-list entries must be inside (0, 1), got {r}"
            )));
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(Error::Usage("--r-list holds no reflectivities".into()));
    }
    Ok(out)
}

/// Effective axis-aligned quadrature variances of the prepared state
/// (after phase rotation and loss), required by the sweep predictions.
fn effective_variances(config: &RunConfig) -> Result<(f64, f64)> {
    let prepared = make_state(config.state, 1)?
        .apply_rotation(config.theta, 0)?
        .apply_loss(config.eta, 0)?;
    let cov = prepared.cov();
    if cov[(0, 1)].abs() > 1e-9 {
        return Err(Error::OutOfModel(format!(
            "sweep predictions assume an axis-aligned prepared state, got cross covariance {:.3e}",
            cov[(0, 1)]
        )));
    }
    Ok((cov[(0, 0)], cov[(1, 1)]))
}

/// Run one acquisition and fit per reflectivity and pair each fit
/// with both closed-form predictions. Row k samples with seed
/// `seed + k`, so rows are independent and the whole table is
/// reproducible from the base seed.
pub fn sweep_rows(config: &RunConfig, seed: u64, rs: &[f64]) -> Result<Vec<io::SweepRow>> {
    if config.compensation != Compensation::Unbiased {
        return Err(Error::Unsupported(
            "sweep predictions are defined for unbiased compensation".into(),
        ));
    }
    let (eff_s, eff_as) = effective_variances(config)?;
    let noise = config
        .clearance_db
        .map_or(0.0, |c| 10f64.powf(-c / 10.0));
    let state = make_state(config.state, 1)?;
    let mut rows = Vec::with_capacity(rs.len());
    for (k, &r) in rs.iter().enumerate() {
        let joint = dhd_joint(&state, r, config.theta, config.eta, config.clearance_db)?;
        let meta = BatchMeta {
            reflectivity: r,
            theta: config.theta,
            eta: config.eta,
            clearance_db: config.clearance_db,
            seed: seed.wrapping_add(k as u64),
            n: config.n_samples,
        };
        let batch = sample_dhd(&joint, &meta)?;
        let points = compensate(&batch, Compensation::Unbiased)?;
        let fit = fit_gaussian_moments(&points)?;
        // The fitted curves are paired by input axis, not by size: the
        // x slot tracks the input's squeezed quadrature and the y slot
        // its antisqueezed one, so the two curves cross at the
        // unsqueezing reflectivity instead of swapping columns.
        let (lam_x, lam_y) = (fit.cov[(0, 0)], fit.cov[(1, 1)]);
        if lam_x <= 1.0 || lam_y <= 1.0 {
            eprintln!(
                "warning: R={r}: fitted variance at or below the vacuum unit, writing NaN"
            );
        }
        let (mut ex_s, mut ex_as) =
            predict_fit_params(eff_s, eff_as, r, PredictionMethod::Exact)?;
        ex_s += noise / r;
        ex_as += noise / (1.0 - r);
        let paper = predict_fit_params(eff_s, eff_as, r, PredictionMethod::Paper);
        let (pap_s, pap_as) = match paper {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: R={r}: {e}; writing NaN");
                (f64::NAN, f64::NAN)
            }
        };
        rows.push(io::SweepRow {
            reflectivity: r,
            fit_sq_db: db10(lam_x - 1.0),
            fit_asq_db: db10(lam_y - 1.0),
            pred_exact_sq_db: db10(ex_s),
            pred_exact_asq_db: db10(ex_as),
            pred_paper_sq_db: db10(pap_s),
            pred_paper_asq_db: db10(pap_as),
        });
    }
    Ok(rows)
}

fn run_sweep(config: &RunConfig, seed: u64, r_list: &str) -> Result<()> {
    let rs = parse_r_list(r_list)?;
    let rows = sweep_rows(config, seed, &rs)?;
    let dir = &config.output_dir;
    let sweep_path = io::write_sweep(dir, &io::sweep_file_name(seed), &rows)?;
    let manifest_path = io::write_manifest(
        dir,
        "sweep",
        config,
        seed,
        &[("r_list", json!(rs))],
    )?;
    say!("sweep: {} reflectivities, n={} each", rs.len(), config.n_samples);
    say!("wrote {}", sweep_path.display());
    say!("wrote {}", manifest_path.display());
    Ok(())
}

fn run_pulses(
    config: &RunConfig,
    seed: u64,
    fwhm_ns: f64,
    dt_ns: f64,
    segment_len: usize,
    segments: usize,
) -> Result<()> {
    if segments == 0 {
        return Err(Error::Usage("--segments must be at least 1".into()));
    }
    let mode = make_temporal_mode(fwhm_ns, dt_ns, segment_len)?;
    let prepared = make_state(config.state, 1)?
        .apply_rotation(config.theta, 0)?
        .apply_loss(config.eta, 0)?;
    let (value_mean, value_var) = (prepared.mean()[0], prepared.cov()[(0, 0)]);
    let sd = value_var.sqrt();
    // Pulse values come from the top stream of the run seed; trace
    // noise uses the per-segment substreams 0..M of the same seed, so
    // one recorded seed reproduces the whole file.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let values: Vec<f64> = (0..segments)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            value_mean + sd * z
        })
        .collect();
    let traces = synthesize_traces(&values, &mode, config.clearance_db, seed)?;
    let recovered = extract_mode_pca(&traces)?;
    let overlap = mode_overlap(&mode, &recovered)?;
    let projected = project_traces(&traces, &mode)?;
    let m = projected.len() as f64;
    let proj_mean = projected.iter().sum::<f64>() / m;
    let proj_var = projected
        .iter()
        .map(|v| (v - proj_mean) * (v - proj_mean))
        .sum::<f64>()
        / (m - 1.0);
    // White noise of variance 10^(−c/10)/dt per sample projects onto
    // the unit-norm mode with variance 10^(−c/10).
    let noise_var = config.clearance_db.map_or(0.0, |c| 10f64.powf(-c / 10.0));

    let dir = &config.output_dir;
    let traces_path = io::write_traces(dir, &io::traces_file_name(seed), &traces)?;
    let report = json!({
        "overlap": overlap,
        "segments": segments,
        "segment_len": segment_len,
        "fwhm_ns": fwhm_ns,
        "dt_ns": dt_ns,
        "clearance_db": config.clearance_db.map_or(serde_json::Value::Null, |c| json!(c)),
        "value_variance_model": value_var,
        "projected_variance_model": value_var + noise_var,
        "projected_mean": proj_mean,
        "projected_variance": proj_var,
    });
    let report_path = dir.join(format!("pulses_report_seed{seed}.json"));
    fs::write(&report_path, format!("{report:#}\n")).map_err(|e| Error::io(&report_path, e))?;
    let manifest_path = io::write_manifest(
        dir,
        "pulses",
        config,
        seed,
        &[
            ("fwhm_ns", json!(fwhm_ns)),
            ("dt_ns", json!(dt_ns)),
            ("segment_len", json!(segment_len)),
            ("segments", json!(segments)),
        ],
    )?;
    say!(
        "pulses: overlap={overlap:.6} projected_var={proj_var:.4} (model {:.4})",
        value_var + noise_var
    );
    say!("wrote {}", traces_path.display());
    say!("wrote {}", report_path.display());
    say!("wrote {}", manifest_path.display());
    Ok(())
}

/// Sample mean and unbiased covariance of a point cloud.
fn cloud_moments(points: &[(f64, f64)]) -> (Vector2<f64>, Matrix2<f64>) {
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold(Vector2::zeros(), |acc, &(x, y)| acc + Vector2::new(x, y))
        / n;
    let mut cov = Matrix2::zeros();
    for &(x, y) in points {
        let d = Vector2::new(x - mean[0], y - mean[1]);
        cov += d * d.transpose();
    }
    (mean, cov / (n - 1.0))
}

/// Result of the povm-equivalence self-test.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmSelfTest {
    /// Number of (state, reflectivity) cases checked (5 moments each).
    pub cases: usize,
    /// Largest moment deviation in standard errors.
    pub max_abs_z: f64,
    /// Which case and moment produced it.
    pub worst_case: String,
}

/// Check that povm-compensated sample clouds reproduce the Husimi
/// moments of the squeeze-equivalent state: `states` random
/// single-mode inputs, each measured at every reflectivity in `rs`
/// with `n` samples, all five first/second moments expressed in
/// standard errors.
pub fn povm_self_test(seed: u64, states: usize, rs: &[f64], n: usize) -> Result<PovmSelfTest> {
    if states == 0 || rs.is_empty() || n < 2 {
        return Err(Error::Domain(
            "self-test needs at least one state, one reflectivity and two samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs_z: f64 = 0.0;
    let mut worst_case = String::new();
    let mut cases = 0usize;
    for state_idx in 0..states {
        let state: GaussianState = random_single_mode(&mut rng);
        for (r_idx, &r) in rs.iter().enumerate() {
            let joint = dhd_joint(&state, r, 0.0, 1.0, None)?;
            let meta = BatchMeta {
                reflectivity: r,
                theta: 0.0,
                eta: 1.0,
                clearance_db: None,
                seed: seed
                    .wrapping_add(1 + (state_idx * rs.len() + r_idx) as u64),
                n,
            };
            let batch = sample_dhd(&joint, &meta)?;
            let points = compensate(&batch, Compensation::Povm)?;
            let (mean_hat, cov_hat) = cloud_moments(&points.points);
            let equivalent = povm_equivalent_state(&state, r)?;
            let (mean_exp, cov_exp) = equivalent.husimi_moments()?;
            let nf = n as f64;
            let zs = [
                (mean_hat[0] - mean_exp[0]) / (cov_exp[(0, 0)] / nf).sqrt(),
                (mean_hat[1] - mean_exp[1]) / (cov_exp[(1, 1)] / nf).sqrt(),
                (cov_hat[(0, 0)] - cov_exp[(0, 0)])
                    / (cov_exp[(0, 0)] * (2.0 / (nf - 1.0)).sqrt()),
                (cov_hat[(1, 1)] - cov_exp[(1, 1)])
                    / (cov_exp[(1, 1)] * (2.0 / (nf - 1.0)).sqrt()),
                (cov_hat[(0, 1)] - cov_exp[(0, 1)])
                    / ((cov_exp[(0, 0)] * cov_exp[(1, 1)] + cov_exp[(0, 1)].powi(2))
                        / (nf - 1.0))
                        .sqrt(),
            ];
            for (m_idx, z) in zs.iter().enumerate() {
                if z.abs() > max_abs_z {
                    max_abs_z = z.abs();
                    worst_case = format!("state {state_idx}, R={r}, moment {m_idx}");
                }
            }
            cases += 1;
        }
    }
    Ok(PovmSelfTest {
        cases,
        max_abs_z,
        worst_case,
    })
}

fn run_verify(
    config: &RunConfig,
    seed: u64,
    states: usize,
    r_list: &str,
    max_se: f64,
) -> Result<()> {
    if states == 0 {
        return Err(Error::Usage("--states must be at least 1".into()));
    }
    if !(max_se > 0.0) {
        return Err(Error::Usage(format!("--max-se must be positive, got {max_se}")));
    }
    let rs = parse_r_list(r_list)?;
    let report = povm_self_test(seed, states, &rs, config.n_samples)?;
    let PovmSelfTest {
        cases,
        max_abs_z,
        worst_case: worst,
    } = report;
    let n = config.n_samples;
    let pass = max_abs_z <= max_se;
    let dir = &config.output_dir;
    io::ensure_dir(dir)?;
    let report = json!({
        "states": states,
        "r_list": rs,
        "n_samples": n,
        "cases": cases,
        "max_se": max_se,
        "max_abs_z": max_abs_z,
        "worst_case": worst,
        "pass": pass,
    });
    let report_path = dir.join(format!("verify_report_seed{seed}.json"));
    fs::write(&report_path, format!("{report:#}\n")).map_err(|e| Error::io(&report_path, e))?;
    io::write_manifest(
        dir,
        "verify",
        config,
        seed,
        &[("states", json!(states)), ("r_list", json!(rs)), ("max_se", json!(max_se))],
    )?;
    say!(
        "verify: {cases} cases x 5 moments, max |z| = {max_abs_z:.3} (limit {max_se}) -> {}",
        if pass { "pass" } else { "FAIL" }
    );
    say!("wrote {}", report_path.display());
    if !pass {
        return Err(Error::VerifyFailed(format!(
            "povm moment equivalence broken: max |z| = {max_abs_z:.3} > {max_se} at {worst}"
        )));
    }
    Ok(())
}
