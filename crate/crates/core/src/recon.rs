//! Q-function reconstruction: bin compensated phase-space points into
//! a normalized 2D histogram, fit a 2D Gaussian, and report
//! squeezing/antisqueezing of the fitted surface in dB.

use nalgebra::{DMatrix, Matrix2, Matrix6, Vector2, Vector6};

use crate::dhd::PhasePoints;
use crate::error::{Error, Result};

/// Normalized 2D histogram of phase-space points on a square grid.
///
/// `density[(ix, iy)]` covers the cell at bin `ix` along x and `iy`
/// along y; bins are left-closed right-open except the last, which is
/// right-closed. Out-of-range points stay in `n_total` so the density
/// integrates to `n_in_range / n_total`, never silently to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub bins_x: usize,
    pub bins_y: usize,
    /// Half-width: each axis spans [−range, +range] in √SNU.
    pub range: f64,
    pub density: DMatrix<f64>,
    pub n_total: usize,
    pub n_in_range: usize,
}

impl Histogram2D {
    pub fn cell_width(&self) -> f64 {
        2.0 * self.range / self.bins_x as f64
    }

    /// Center coordinate of bin `i` along either axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.range + (i as f64 + 0.5) * self.cell_width()
    }
}

/// Bin points into a density histogram; counts divided by
/// n_total · cell_area.
pub fn histogram2d(points: &PhasePoints, bins: usize, range: f64) -> Result<Histogram2D> {
    if points.points.is_empty() {
        return Err(Error::EmptyInput("no points to histogram".into()));
    }
    if bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {bins}")));
    }
    if !(range > 0.0) {
        return Err(Error::Domain(format!("range must be positive, got {range}")));
    }
    let w = 2.0 * range / bins as f64;
    let index = |v: f64| -> Option<usize> {
        if v >= -range && v <= range {
            Some((((v + range) / w) as usize).min(bins - 1))
        } else {
            None
        }
    };
    let mut counts = DMatrix::zeros(bins, bins);
    let mut n_in_range = 0;
    for &(x, y) in &points.points {
        if let (Some(ix), Some(iy)) = (index(x), index(y)) {
            counts[(ix, iy)] += 1.0;
            n_in_range += 1;
        }
    }
    let n_total = points.points.len();
    let density = counts / (n_total as f64 * w * w);
    Ok(Histogram2D {
        bins_x: bins,
        bins_y: bins,
        range,
        density,
        n_total,
        n_in_range,
    })
}

/// Fitted 2D Gaussian of a reconstructed Q function.
#[derive(Debug, Clone, PartialEq)]
pub struct QFit {
    pub center: (f64, f64),
    /// Fitted Q-covariance over the plotted axes, SNU.
    pub cov: Matrix2<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Orientation of the λ_max principal axis, in (−π/2, π/2].
    pub angle: f64,
    /// 10·log₁₀(λ_min − 1); absent when the fitted variance does not
    /// clear the one-SNU Husimi vacuum unit.
    pub sq_db: Option<f64>,
    /// 10·log₁₀(λ_max − 1), same caveat.
    pub asq_db: Option<f64>,
    pub n_used: usize,
}

/// Wigner-equivalent dB level of a fitted Q-variance: strips the one
/// SNU of vacuum added by the measurement, then converts to dB.
pub fn fit_to_db(lambda: f64) -> Result<f64> {
    if lambda <= 1.0 + 1e-9 {
        return Err(Error::BelowVacuum { lambda });
    }
    Ok(10.0 * (lambda - 1.0).log10())
}

/// Invert the detection-loss channel on fitted principal variances.
///
/// Treats λ − 1 as a Wigner-equivalent state variance measured through
/// a loss channel of efficiency η and returns the pre-loss
/// (variance at λ_min, variance at λ_max) pair in SNU. The raw fit is
/// never rewritten; this is a separate, labeled view. The inversion is
/// exact for balanced acquisitions, where compensation adds exactly
/// one vacuum unit per axis on top of the detected state.
pub fn loss_corrected_variances(fit: &QFit, eta: f64) -> Result<(f64, f64)> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!(
            "loss correction needs eta in (0, 1], got {eta}"
        )));
    }
    let invert = |lambda: f64| -> Result<f64> {
        let v = (lambda - 1.0 - (1.0 - eta)) / eta;
        if v <= 0.0 {
            return Err(Error::BelowVacuum { lambda });
        }
        Ok(v)
    };
    Ok((invert(fit.lambda_min)?, invert(fit.lambda_max)?))
}

/// Assemble a QFit from first/second moments: eigendecompose the 2×2
/// covariance, orient the major axis, convert principal variances to
/// dB where defined.
fn qfit_from_moments(center: (f64, f64), cov: Matrix2<f64>, n_used: usize) -> Result<QFit> {
    let (a, b, c) = (cov[(0, 0)], cov[(1, 1)], cov[(0, 1)]);
    let mid = 0.5 * (a + b);
    let d = (0.25 * (a - b) * (a - b) + c * c).sqrt();
    let (lambda_min, lambda_max) = (mid - d, mid + d);
    if !(lambda_min > 1e-12 * lambda_max.max(1e-300)) {
        return Err(Error::DegenerateCloud(format!(
            "point cloud covariance is rank deficient (principal variances {lambda_min:.3e}, {lambda_max:.3e})"
        )));
    }
    let angle = if lambda_max - lambda_min < 1e-9 {
        0.0
    } else {
        0.5 * (2.0 * c).atan2(a - b)
    };
    Ok(QFit {
        center,
        cov,
        lambda_min,
        lambda_max,
        angle,
        sq_db: fit_to_db(lambda_min).ok(),
        asq_db: fit_to_db(lambda_max).ok(),
        n_used,
    })
}

/// Fit a 2D Gaussian by sample moments: center = mean, covariance =
/// unbiased sample covariance, principal axes by eigendecomposition.
pub fn fit_gaussian_moments(points: &PhasePoints) -> Result<QFit> {
    let n = points.points.len();
    if n == 0 {
        return Err(Error::EmptyInput("no points to fit".into()));
    }
    if n < 100 {
        return Err(Error::Domain(format!(
            "moment fit needs at least 100 points, got {n}"
        )));
    }
    let nf = n as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for &(x, y) in &points.points {
        mx += x;
        my += y;
    }
    mx /= nf;
    my /= nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &points.points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let cov = Matrix2::new(sxx, sxy, sxy, syy) / (nf - 1.0);
    qfit_from_moments((mx, my), cov, n)
}

/// Side-by-side comparison of a fit against predicted squeezing and
/// antisqueezing parameters (Wigner-equivalent variances).
#[derive(Debug, Clone, PartialEq)]
pub struct FitComparison {
    pub fit_sq_db: f64,
    pub fit_asq_db: f64,
    pub pred_sq_db: f64,
    pub pred_asq_db: f64,
    /// Absolute deviations |fit − predicted| in dB.
    pub dev_sq_db: f64,
    pub dev_asq_db: f64,
    /// 1σ statistical error bars on the fitted dB values from the
    /// √(2/n) relative spread of a Gaussian variance estimate.
    pub err_sq_db: f64,
    pub err_asq_db: f64,
    pub tol_db: f64,
    pub pass: bool,
}

/// Error bar in dB on 10·log₁₀(λ−1) for a sample variance λ of n points.
fn db_error_bar(lambda: f64, n: usize) -> f64 {
    let sigma = lambda * (2.0 / n as f64).sqrt();
    10.0 / 10f64.ln() * sigma / (lambda - 1.0)
}

/// Compare fitted dB levels against a predicted (s'_s, s'_as) pair at
/// a caller-supplied dB tolerance.
pub fn compare_fit(fit: &QFit, predicted: (f64, f64), tol_db: f64) -> Result<FitComparison> {
    let fit_sq_db = fit.sq_db.ok_or(Error::BelowVacuum {
        lambda: fit.lambda_min,
    })?;
    let fit_asq_db = fit.asq_db.ok_or(Error::BelowVacuum {
        lambda: fit.lambda_max,
    })?;
    let (ps, pas) = predicted;
    if ps <= 0.0 || pas <= 0.0 {
        return Err(Error::Domain(format!(
            "predicted parameters must be positive, got ({ps}, {pas})"
        )));
    }
    let pred_sq_db = 10.0 * ps.log10();
    let pred_asq_db = 10.0 * pas.log10();
    let dev_sq_db = (fit_sq_db - pred_sq_db).abs();
    let dev_asq_db = (fit_asq_db - pred_asq_db).abs();
    Ok(FitComparison {
        fit_sq_db,
        fit_asq_db,
        pred_sq_db,
        pred_asq_db,
        dev_sq_db,
        dev_asq_db,
        err_sq_db: db_error_bar(fit.lambda_min, fit.n_used),
        err_asq_db: db_error_bar(fit.lambda_max, fit.n_used),
        tol_db,
        pass: dev_sq_db <= tol_db && dev_asq_db <= tol_db,
    })
}

/// Refine a moment fit against the histogram itself with a damped
/// (Levenberg) least-squares pass over all cells.
///
/// The model is A·exp(−½ (v−μ)ᵀ M (v−μ)) with M = LLᵀ parameterized
/// by the lower-triangular L, so the fitted covariance M⁻¹ stays
/// positive definite. Stops at relative step < 1e-8 or 200 iterations.
pub fn refine_fit_histogram(hist: &Histogram2D, init: &QFit) -> Result<QFit> {
    let det = init.cov[(0, 0)] * init.cov[(1, 1)] - init.cov[(0, 1)] * init.cov[(1, 0)];
    if det <= 0.0 {
        return Err(Error::DegenerateCloud(
            "starting covariance is not positive definite".into(),
        ));
    }
    let m = Matrix2::new(
        init.cov[(1, 1)],
        -init.cov[(0, 1)],
        -init.cov[(1, 0)],
        init.cov[(0, 0)],
    ) / det;
    let l11 = m[(0, 0)].sqrt();
    let l21 = m[(0, 1)] / l11;
    let l22sq = m[(1, 1)] - l21 * l21;
    if l22sq <= 0.0 {
        return Err(Error::DegenerateCloud(
            "starting covariance is not positive definite".into(),
        ));
    }
    let frac = hist.n_in_range as f64 / hist.n_total as f64;
    let amp0 = frac / (2.0 * std::f64::consts::PI * det.sqrt());
    let mut p = Vector6::new(
        init.center.0,
        init.center.1,
        l11,
        l21,
        l22sq.sqrt(),
        amp0.ln(),
    );

    let cells: Vec<(f64, f64, f64)> = (0..hist.bins_x)
        .flat_map(|i| {
            (0..hist.bins_y).map(move |j| (hist.center(i), hist.center(j), hist.density[(i, j)]))
        })
        .collect();
    let sse = |p: &Vector6<f64>| -> f64 {
        cells
            .iter()
            .map(|&(x, y, d)| {
                let (u1, u2) = (p[2] * (x - p[0]) + p[3] * (y - p[1]), p[4] * (y - p[1]));
                (p[5].exp() * (-0.5 * (u1 * u1 + u2 * u2)).exp() - d).powi(2)
            })
            .sum()
    };

    let mut damping = 1e-3;
    let mut best = sse(&p);
    for _ in 0..200 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for &(x, y, d) in &cells {
            let (dx, dy) = (x - p[0], y - p[1]);
            let (u1, u2) = (p[2] * dx + p[3] * dy, p[4] * dy);
            let f = p[5].exp() * (-0.5 * (u1 * u1 + u2 * u2)).exp();
            let grad = Vector6::new(
                f * u1 * p[2],
                f * (u1 * p[3] + u2 * p[4]),
                -f * u1 * dx,
                -f * u1 * dy,
                -f * u2 * dy,
                f,
            );
            jtj += grad * grad.transpose();
            jtr += grad * (f - d);
        }
        let mut damped = jtj;
        for k in 0..6 {
            damped[(k, k)] += damping * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            damping *= 3.0;
            continue;
        };
        let candidate = p + step;
        let candidate_sse = sse(&candidate);
        if candidate_sse < best {
            let rel_step = step.norm() / p.norm().max(1e-12);
            p = candidate;
            best = candidate_sse;
            damping = (damping / 3.0).max(1e-12);
            if rel_step < 1e-8 {
                break;
            }
        } else {
            damping *= 3.0;
            if damping > 1e12 {
                break;
            }
        }
    }

    let m_fit = {
        let l = Matrix2::new(p[2], 0.0, p[3], p[4]);
        l * l.transpose()
    };
    let det_m = m_fit[(0, 0)] * m_fit[(1, 1)] - m_fit[(0, 1)] * m_fit[(1, 0)];
    if det_m <= 0.0 {
        return Err(Error::DegenerateCloud(
            "refined covariance collapsed".into(),
        ));
    }
    let cov = Matrix2::new(
        m_fit[(1, 1)],
        -m_fit[(0, 1)],
        -m_fit[(1, 0)],
        m_fit[(0, 0)],
    ) / det_m;
    qfit_from_moments((p[0], p[1]), cov, init.n_used)
}

/// First and second moments of the histogram density by midpoint rule,
/// over in-range mass only.
pub fn histogram_moments(hist: &Histogram2D) -> (Vector2<f64>, Matrix2<f64>) {
    let cell = hist.cell_width() * hist.cell_width();
    let mass: f64 = hist.density.sum() * cell;
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..hist.bins_x {
        for j in 0..hist.bins_y {
            let w = hist.density[(i, j)] * cell / mass;
            mx += hist.center(i) * w;
            my += hist.center(j) * w;
        }
    }
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..hist.bins_x {
        for j in 0..hist.bins_y {
            let w = hist.density[(i, j)] * cell / mass;
            let (dx, dy) = (hist.center(i) - mx, hist.center(j) - my);
            sxx += dx * dx * w;
            syy += dy * dy * w;
            sxy += dx * dy * w;
        }
    }
    (Vector2::new(mx, my), Matrix2::new(sxx, sxy, sxy, syy))
}
