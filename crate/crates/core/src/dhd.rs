//! Unbalanced double homodyne measurement model: exact joint outcome
//! statistics, deterministic sampling, compensation into phase-space
//! points, and the effective-squeezing predictions.
//!
//! Geometry: the signal enters vertically polarized, the horizontal
//! port carries vacuum, and the input beamsplitter has power
//! reflectivity R (amplitude r = √R for the signal). Detector 1
//! measures q of one output arm, detector 2 measures p of the other:
//!   q₁ = t·q_H + r·q_V,   p₂ = r·p_H − t·p_V.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, SqueezedThermalSpec};

/// Beamsplitter unbalance parameters derived from the power
/// reflectivity R: amplitude coefficients, the effective squeezing
/// parameter ξ = ln(r/t), and the same factor in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnbalanceSettings {
    /// Power reflectivity R ∈ (0, 1).
    pub reflectivity: f64,
    /// Amplitude reflection r = √R.
    pub r: f64,
    /// Amplitude transmission t = √(1−R).
    pub t: f64,
    /// Effective squeezing parameter ξ = ln(r/t).
    pub xi: f64,
    /// Unbalance factor 10·log₁₀(t²/r²) = −(20/ln10)·ξ.
    pub s_db: f64,
}

/// Compute the unbalance parameters for power reflectivity R.
pub fn unbalance_settings(reflectivity: f64) -> Result<UnbalanceSettings> {
    if !(0.0..=1.0).contains(&reflectivity) {
        return Err(Error::Domain(format!(
            "reflectivity must be in [0, 1], got {reflectivity}"
        )));
    }
    if reflectivity == 0.0 || reflectivity == 1.0 {
        return Err(Error::DegenerateUnbalance { reflectivity });
    }
    let r = reflectivity.sqrt();
    let t = (1.0 - reflectivity).sqrt();
    Ok(UnbalanceSettings {
        reflectivity,
        r,
        t,
        xi: (r / t).ln(),
        s_db: 10.0 * ((1.0 - reflectivity) / reflectivity).log10(),
    })
}

/// Exact joint Gaussian distribution of the pair (q₁, p₂) read out by
/// the two detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhdJoint {
    pub mean_q1: f64,
    pub mean_p2: f64,
    pub var_q1: f64,
    pub var_p2: f64,
    pub cov_q1p2: f64,
}

/// Propagate a single-mode signal through the measurement chain:
/// phase rotation θ, detection loss η, mixing with vacuum on the
/// input beamsplitter, then read q on arm 1 and p on arm 2. An
/// optional electronic noise floor of 10^(−clearance/10) SNU is added
/// to both outcome variances.
pub fn dhd_joint(
    signal: &GaussianState,
    reflectivity: f64,
    theta: f64,
    eta: f64,
    clearance_db: Option<f64>,
) -> Result<DhdJoint> {
    if signal.n_modes() != 1 {
        return Err(Error::Unsupported(format!(
            "measurement model takes a single-mode signal, got {} modes",
            signal.n_modes()
        )));
    }
    let settings = unbalance_settings(reflectivity)?;
    let noise = match clearance_db {
        Some(c) if c < 0.0 => {
            return Err(Error::Domain(format!(
                "clearance must be nonnegative dB, got {c}"
            )))
        }
        Some(c) => 10f64.powf(-c / 10.0),
        None => 0.0,
    };
    let prepared = signal.apply_rotation(theta, 0)?.apply_loss(eta, 0)?;
    let two_arm = GaussianState::vacuum(1)
        .tensor(&prepared)
        .apply_beamsplitter(0, 1, settings.r)?;
    let (mean, cov) = (two_arm.mean(), two_arm.cov());
    let joint = DhdJoint {
        mean_q1: mean[0],
        mean_p2: mean[3],
        var_q1: cov[(0, 0)] + noise,
        var_p2: cov[(3, 3)] + noise,
        cov_q1p2: cov[(0, 3)],
    };
    debug_assert!(joint.cov_q1p2.abs() <= (joint.var_q1 * joint.var_p2).sqrt() + 1e-12);
    Ok(joint)
}

/// Rescaling convention turning raw (q₁, p₂) pairs into phase-space
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compensation {
    /// (x, y) = (q₁/r, −p₂/t): unbiased estimate of the signal's own
    /// mean quadratures.
    Unbiased,
    /// (x, y) = (q₁/t, −p₂/r): the cloud then samples exactly the
    /// Husimi function of [`povm_equivalent_state`].
    Povm,
}

impl Compensation {
    pub fn name(self) -> &'static str {
        match self {
            Compensation::Unbiased => "unbiased",
            Compensation::Povm => "povm",
        }
    }
}

impl std::str::FromStr for Compensation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbiased" => Ok(Compensation::Unbiased),
            "povm" => Ok(Compensation::Povm),
            other => Err(Error::Domain(format!(
                "unknown compensation mode {other:?} (expected unbiased or povm)"
            ))),
        }
    }
}

impl std::fmt::Display for Compensation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Acquisition metadata carried with every sample batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMeta {
    pub reflectivity: f64,
    pub theta: f64,
    pub eta: f64,
    pub clearance_db: Option<f64>,
    pub seed: u64,
    pub n: usize,
}

/// Raw detector outcome pairs plus the metadata needed to compensate
/// and reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub meta: BatchMeta,
    pub pairs: Vec<(f64, f64)>,
}

/// Compensated phase-space points.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoints {
    pub points: Vec<(f64, f64)>,
    pub compensation: Compensation,
}

/// Draw the index range [start, end) of a batch of `meta.n` samples.
///
/// Sample i is produced from its own counter-indexed substream of the
/// seeded generator, so any partition of [0, n) into ranges yields
/// exactly the same values as one sequential pass.
pub fn sample_dhd_range(
    joint: &DhdJoint,
    meta: &BatchMeta,
    start: usize,
    end: usize,
) -> Result<Vec<(f64, f64)>> {
    if start > end || end > meta.n {
        return Err(Error::Domain(format!(
            "sample range {start}..{end} does not fit in a batch of {}",
            meta.n
        )));
    }
    let a = joint.var_q1.sqrt();
    let b = joint.cov_q1p2 / a;
    let c = (joint.var_p2 - b * b).max(0.0).sqrt();
    let base = ChaCha8Rng::seed_from_u64(meta.seed);
    let mut pairs = Vec::with_capacity(end - start);
    for i in start..end {
        let mut rng = base.clone();
        rng.set_stream(i as u64);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        pairs.push((
            joint.mean_q1 + a * z1,
            joint.mean_p2 + b * z1 + c * z2,
        ));
    }
    Ok(pairs)
}

/// Draw a full batch of `meta.n` outcome pairs from the joint
/// distribution, deterministically in `meta.seed`.
pub fn sample_dhd(joint: &DhdJoint, meta: &BatchMeta) -> Result<SampleBatch> {
    if meta.n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    if !(meta.reflectivity > 0.0 && meta.reflectivity < 1.0) {
        return Err(Error::DegenerateUnbalance {
            reflectivity: meta.reflectivity,
        });
    }
    let pairs = sample_dhd_range(joint, meta, 0, meta.n)?;
    Ok(SampleBatch { meta: *meta, pairs })
}

/// Rescale one raw outcome pair into a phase-space point.
pub fn compensate_pair(
    q1: f64,
    p2: f64,
    settings: &UnbalanceSettings,
    mode: Compensation,
) -> (f64, f64) {
    match mode {
        Compensation::Unbiased => (q1 / settings.r, -p2 / settings.t),
        Compensation::Povm => (q1 / settings.t, -p2 / settings.r),
    }
}

/// Rescale a whole batch into phase-space points. The p-axis sign flip
/// undoes the −t·p_V readout convention so the plotted distribution
/// sits in the signal's own orientation.
pub fn compensate(batch: &SampleBatch, mode: Compensation) -> Result<PhasePoints> {
    let settings = unbalance_settings(batch.meta.reflectivity)?;
    Ok(PhasePoints {
        points: batch
            .pairs
            .iter()
            .map(|&(q1, p2)| compensate_pair(q1, p2, &settings, mode))
            .collect(),
        compensation: mode,
    })
}

/// Mean and covariance of the compensated point cloud, computed
/// exactly from the joint distribution (no sampling).
pub fn compensated_moments(
    joint: &DhdJoint,
    settings: &UnbalanceSettings,
    mode: Compensation,
) -> (Vector2<f64>, Matrix2<f64>) {
    let (sx, sy) = match mode {
        Compensation::Unbiased => (settings.r, settings.t),
        Compensation::Povm => (settings.t, settings.r),
    };
    let mean = Vector2::new(joint.mean_q1 / sx, -joint.mean_p2 / sy);
    let cov = Matrix2::new(
        joint.var_q1 / (sx * sx),
        -joint.cov_q1p2 / (sx * sy),
        -joint.cov_q1p2 / (sx * sy),
        joint.var_p2 / (sy * sy),
    );
    (mean, cov)
}

/// The state whose Husimi function the povm-compensated cloud samples:
/// the signal anti-squeezed by the unbalance parameter ξ.
pub fn povm_equivalent_state(signal: &GaussianState, reflectivity: f64) -> Result<GaussianState> {
    if signal.n_modes() != 1 {
        return Err(Error::Unsupported(format!(
            "equivalent-state construction takes a single-mode signal, got {} modes",
            signal.n_modes()
        )));
    }
    let settings = unbalance_settings(reflectivity)?;
    signal.apply_squeeze(-settings.xi, 0, 0.0)
}

/// The two closed-form transforms from input state parameters to
/// fitted Q-function parameters under unbalancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMethod {
    /// Simplified forms s'_s = 2r²(1+s_s)−1, s'_as = (2t²(1+1/s_as)−1)⁻¹;
    /// they match `Exact` only at balance.
    Paper,
    /// s'_s = s_s + t²/r² − 1, s'_as = s_as + r²/t² − 1, derived from
    /// the exact outcome variances under unbiased compensation.
    Exact,
}

impl PredictionMethod {
    pub fn name(self) -> &'static str {
        match self {
            PredictionMethod::Paper => "paper",
            PredictionMethod::Exact => "exact",
        }
    }
}

impl std::str::FromStr for PredictionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(PredictionMethod::Paper),
            "exact" => Ok(PredictionMethod::Exact),
            other => Err(Error::Domain(format!(
                "unknown prediction method {other:?} (expected paper or exact)"
            ))),
        }
    }
}

impl std::fmt::Display for PredictionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Predict the fitted squeezing/antisqueezing parameters (Wigner-
/// equivalent variances, fitted Q-variance minus one) of the
/// reconstructed Q function at reflectivity R, for an input with
/// squeezed/antisqueezed variances (s_s, s_as).
///
/// Power coefficients are taken as r² = R and t² = 1−R directly so
/// both methods reduce to the identity at R = 0.5 to rounding.
pub fn predict_fit_params(
    s_s: f64,
    s_as: f64,
    reflectivity: f64,
    method: PredictionMethod,
) -> Result<(f64, f64)> {
    SqueezedThermalSpec::new(s_s, s_as, 0.0)?;
    unbalance_settings(reflectivity)?;
    let r2 = reflectivity;
    let t2 = 1.0 - reflectivity;
    match method {
        PredictionMethod::Paper => {
            let s_sq = 2.0 * r2 * (1.0 + s_s) - 1.0;
            let denom = 2.0 * t2 * (1.0 + 1.0 / s_as) - 1.0;
            if denom <= 0.0 {
                return Err(Error::OutOfModel(format!(
                    "antisqueezing transform denominator {denom:.6} is not positive at R={reflectivity}"
                )));
            }
            Ok((s_sq, 1.0 / denom))
        }
        PredictionMethod::Exact => Ok((s_s + t2 / r2 - 1.0, s_as + r2 / t2 - 1.0)),
    }
}

/// Reflectivity at which the reconstructed Q function of a squeezed
/// input becomes rotationally symmetric.
///
/// The paper method equates the unbalance factor in dB with the
/// semidifference of the input squeezing/antisqueezing dB levels; the
/// exact method bisects predict_fit_params(exact) for s'_s = s'_as to
/// 1e-6 in R.
pub fn unsqueezing_reflectivity(s_s: f64, s_as: f64, method: PredictionMethod) -> Result<f64> {
    SqueezedThermalSpec::new(s_s, s_as, 0.0)?;
    if !(s_s < 1.0 && s_as > 1.0) {
        return Err(Error::NoSolution(format!(
            "state with variances ({s_s}, {s_as}) is not squeezed, nothing to unsqueeze"
        )));
    }
    match method {
        PredictionMethod::Paper => {
            let semidiff_db = (10.0 * s_as.log10() - 10.0 * s_s.log10()) / 2.0;
            // |s_db| = semidiff with r² < t²: r²/t² = 10^(−semidiff/10)
            let u = 10f64.powf(-semidiff_db / 10.0);
            Ok(u / (1.0 + u))
        }
        PredictionMethod::Exact => {
            let gap = |r: f64| {
                let (a, b) = predict_fit_params(s_s, s_as, r, PredictionMethod::Exact)
                    .expect("interior reflectivity");
                a - b
            };
            let (mut lo, mut hi) = (1e-9, 0.5);
            if gap(lo) <= 0.0 || gap(hi) >= 0.0 {
                return Err(Error::NoSolution(
                    "no sign change in the squeeze gap on (0, 0.5)".into(),
                ));
            }
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if gap(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// Square evaluation grid: `bins` cells per axis spanning [−range, +range].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub bins: usize,
    pub range: f64,
}

impl GridSpec {
    pub fn new(bins: usize, range: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 bins, got {bins}")));
        }
        if !(range > 0.0) {
            return Err(Error::Domain(format!("grid range must be positive, got {range}")));
        }
        Ok(Self { bins, range })
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.range / self.bins as f64
    }

    /// Center coordinate of cell `i` along one axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.range + (i as f64 + 0.5) * self.cell_width()
    }
}

/// Theoretical Q surface of an axis-aligned squeezed thermal input
/// measured at reflectivity R, over plotted (unbiased-compensated)
/// coordinates: a centered Gaussian with variances
/// (s_s + t²/r², s_as + r²/t²), evaluated at cell centers and
/// renormalized to unit integral on the grid.
///
/// Entry (i, j) is the density at (x = center(i), y = center(j)).
pub fn theory_q_grid(
    s_s: f64,
    s_as: f64,
    reflectivity: f64,
    grid: &GridSpec,
) -> Result<DMatrix<f64>> {
    let (sq, asq) = predict_fit_params(s_s, s_as, reflectivity, PredictionMethod::Exact)?;
    let (var_x, var_y) = (sq + 1.0, asq + 1.0);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * (var_x * var_y).sqrt());
    let mut density = DMatrix::zeros(grid.bins, grid.bins);
    for i in 0..grid.bins {
        let x = grid.center(i);
        for j in 0..grid.bins {
            let y = grid.center(j);
            density[(i, j)] = norm * (-0.5 * (x * x / var_x + y * y / var_y)).exp();
        }
    }
    let cell = grid.cell_width() * grid.cell_width();
    let total = density.sum() * cell;
    density /= total;
    Ok(density)
}
