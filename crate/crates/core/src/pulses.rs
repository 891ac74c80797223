//! Pulsed acquisition chain: synthesize homodyne time traces carrying
//! one quadrature value per segment in a fixed temporal mode, project
//! traces back onto a mode, and recover the mode blindly by PCA of the
//! trace covariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Discretized temporal mode ψ(t_j) with Σ ψ_j² Δt = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMode {
    pub dt_ns: f64,
    /// Mode samples, units ns^(−1/2); the peak sample is positive.
    pub psi: DVector<f64>,
}

impl TemporalMode {
    pub fn n(&self) -> usize {
        self.psi.len()
    }
}

/// Trace acquisition metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMeta {
    /// Electronic noise clearance in dB; absent means noiseless.
    pub clearance_db: Option<f64>,
    pub seed: u64,
    /// Fraction of wall time spent measuring, bookkeeping only.
    pub duty_cycle: Option<f64>,
}

/// A stack of homodyne trace segments, one per row, in √SNU.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub segments: DMatrix<f64>,
    pub dt_ns: f64,
    pub meta: TraceMeta,
}

/// Build a double-decaying-exponential mode: ψ_j ∝ e^(−|t_j − t_c|/τ)
/// with τ = fwhm/(2 ln 2), peaked at the segment midpoint, normalized
/// to Σ ψ² Δt = 1.
pub fn make_temporal_mode(fwhm_ns: f64, dt_ns: f64, n: usize) -> Result<TemporalMode> {
    if !(fwhm_ns > 0.0) || !(dt_ns > 0.0) {
        return Err(Error::Domain(format!(
            "mode width and sampling interval must be positive, got fwhm={fwhm_ns}, dt={dt_ns}"
        )));
    }
    if n as f64 * dt_ns <= 4.0 * fwhm_ns {
        return Err(Error::Truncation(format!(
            "segment of {n} x {dt_ns} ns cannot support a mode of fwhm {fwhm_ns} ns (needs > {} ns)",
            4.0 * fwhm_ns
        )));
    }
    let tau = fwhm_ns / (2.0 * 2f64.ln());
    let t_c = (n as f64 - 1.0) / 2.0 * dt_ns;
    let mut psi = DVector::from_fn(n, |j, _| (-(j as f64 * dt_ns - t_c).abs() / tau).exp());
    let norm = (psi.iter().map(|v| v * v).sum::<f64>() * dt_ns).sqrt();
    psi /= norm;
    Ok(TemporalMode { dt_ns, psi })
}

/// Synthesize one trace segment per input value: values_i · ψ + white
/// noise whose projected contribution has variance 10^(−clearance/10)
/// SNU. Deterministic in the seed; segment i uses substream i.
pub fn synthesize_traces(
    values: &[f64],
    mode: &TemporalMode,
    clearance_db: Option<f64>,
    seed: u64,
) -> Result<TraceSet> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no quadrature values to embed".into()));
    }
    let sigma = match clearance_db {
        Some(c) if c < 0.0 => {
            return Err(Error::Domain(format!(
                "clearance must be nonnegative dB, got {c}"
            )))
        }
        // projecting white noise of variance σ² gives σ²·dt, so the
        // per-sample variance is the target floor divided by dt
        Some(c) => (10f64.powf(-c / 10.0) / mode.dt_ns).sqrt(),
        None => 0.0,
    };
    let n = mode.n();
    let base = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = DMatrix::zeros(values.len(), n);
    for (i, &v) in values.iter().enumerate() {
        let mut rng = base.clone();
        rng.set_stream(i as u64);
        for j in 0..n {
            let noise: f64 = if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            segments[(i, j)] = v * mode.psi[j] + noise;
        }
    }
    Ok(TraceSet {
        segments,
        dt_ns: mode.dt_ns,
        meta: TraceMeta {
            clearance_db,
            seed,
            duty_cycle: None,
        },
    })
}

fn check_compatible(dt_a: f64, n_a: usize, dt_b: f64, n_b: usize) -> Result<()> {
    if n_a != n_b {
        return Err(Error::ShapeMismatch {
            expected: n_a,
            got: n_b,
        });
    }
    if (dt_a - dt_b).abs() > 1e-12 * dt_a.max(dt_b) {
        return Err(Error::Domain(format!(
            "sampling intervals differ: {dt_a} ns vs {dt_b} ns"
        )));
    }
    Ok(())
}

/// Project every segment onto the mode: Σ_j ψ_j · segment(t_j) · Δt.
pub fn project_traces(traces: &TraceSet, mode: &TemporalMode) -> Result<Vec<f64>> {
    check_compatible(mode.dt_ns, mode.n(), traces.dt_ns, traces.segments.ncols())?;
    Ok((0..traces.segments.nrows())
        .map(|i| {
            traces
                .segments
                .row(i)
                .iter()
                .zip(mode.psi.iter())
                .map(|(s, p)| s * p)
                .sum::<f64>()
                * traces.dt_ns
        })
        .collect())
}

/// Recover the dominant temporal mode blindly: leading eigenvector of
/// the mean-removed sample covariance across time samples, scaled to
/// the mode normalization, sign fixed to a positive peak.
///
/// Intended for M ≥ n segments; fewer rows leave the covariance rank
/// deficient and the estimate noisy.
pub fn extract_mode_pca(traces: &TraceSet) -> Result<TemporalMode> {
    let (m, n) = (traces.segments.nrows(), traces.segments.ncols());
    if m < 2 {
        return Err(Error::EmptyInput(format!(
            "PCA needs at least 2 segments, got {m}"
        )));
    }
    let mut centered = traces.segments.clone();
    for j in 0..n {
        let mean = centered.column(j).sum() / m as f64;
        for i in 0..m {
            centered[(i, j)] -= mean;
        }
    }
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let gap = eig.eigenvalues[order[0]] - eig.eigenvalues[order[1]];
    if gap < 1e-9 {
        return Err(Error::AmbiguousMode { gap });
    }
    let mut psi = eig.eigenvectors.column(order[0]) / traces.dt_ns.sqrt();
    let peak = psi.iter().enumerate().max_by(|a, b| {
        a.1.abs().partial_cmp(&b.1.abs()).unwrap()
    });
    if let Some((_, &v)) = peak {
        if v < 0.0 {
            psi = -psi;
        }
    }
    Ok(TemporalMode {
        dt_ns: traces.dt_ns,
        psi: psi.into_owned(),
    })
}

/// Absolute normalized overlap |Σ a_j b_j Δt| of two modes; 1 means
/// identical up to sign.
pub fn mode_overlap(a: &TemporalMode, b: &TemporalMode) -> Result<f64> {
    check_compatible(a.dt_ns, a.n(), b.dt_ns, b.n())?;
    Ok((a.psi.dot(&b.psi) * a.dt_ns).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_mode() -> TemporalMode {
        make_temporal_mode(80.0, 10.0, 200).unwrap()
    }

    fn normal_values(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn mode_is_normalized_and_symmetric() {
        let mode = standard_mode();
        let total: f64 = mode.psi.iter().map(|v| v * v).sum::<f64>() * mode.dt_ns;
        assert!((total - 1.0).abs() < 1e-12);
        for j in 0..mode.n() {
            assert!((mode.psi[j] - mode.psi[mode.n() - 1 - j]).abs() < 1e-12);
        }
        assert!(mode.psi.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn mode_half_maximum_sits_at_half_width() {
        // odd length puts the peak on a sample; fwhm/2 = 4 samples
        let mode = make_temporal_mode(80.0, 10.0, 201).unwrap();
        let peak = mode.psi[100];
        assert!((mode.psi[104] / peak - 0.5).abs() < 1e-12);
        assert!((mode.psi[96] / peak - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mode_rejects_bad_parameters() {
        assert_eq!(
            make_temporal_mode(80.0, 10.0, 30).unwrap_err().class(),
            "truncation"
        );
        assert_eq!(
            make_temporal_mode(-1.0, 10.0, 200).unwrap_err().class(),
            "domain"
        );
        assert_eq!(
            make_temporal_mode(80.0, 0.0, 200).unwrap_err().class(),
            "domain"
        );
    }

    #[test]
    fn noiseless_round_trip_is_exact() {
        let mode = standard_mode();
        let values = vec![0.7, -1.3, 0.0, 2.5, -0.01];
        let traces = synthesize_traces(&values, &mode, None, 1).unwrap();
        let back = project_traces(&traces, &mode).unwrap();
        for (v, b) in values.iter().zip(&back) {
            assert!((v - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_linear() {
        let mode = standard_mode();
        let a = synthesize_traces(&normal_values(50, 1.0, 2), &mode, Some(16.0), 3).unwrap();
        let b = synthesize_traces(&normal_values(50, 0.5, 4), &mode, Some(10.0), 5).unwrap();
        let combined = TraceSet {
            segments: 2.0 * &a.segments + 0.5 * &b.segments,
            dt_ns: mode.dt_ns,
            meta: a.meta,
        };
        let (pa, pb) = (
            project_traces(&a, &mode).unwrap(),
            project_traces(&b, &mode).unwrap(),
        );
        let pc = project_traces(&combined, &mode).unwrap();
        for i in 0..pc.len() {
            assert!((pc[i] - (2.0 * pa[i] + 0.5 * pb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_annihilates_odd_segments() {
        let mode = standard_mode();
        let c = (mode.n() as f64 - 1.0) / 2.0;
        let odd = DMatrix::from_fn(1, mode.n(), |_, j| (j as f64 - c) / c);
        let traces = TraceSet {
            segments: odd,
            dt_ns: mode.dt_ns,
            meta: TraceMeta {
                clearance_db: None,
                seed: 0,
                duty_cycle: None,
            },
        };
        assert!(project_traces(&traces, &mode).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_mismatched_modes() {
        let mode = standard_mode();
        let other = make_temporal_mode(80.0, 10.0, 150).unwrap();
        let traces = synthesize_traces(&[1.0], &mode, None, 1).unwrap();
        assert_eq!(
            project_traces(&traces, &other).unwrap_err().class(),
            "shape"
        );
        let wrong_dt = TemporalMode {
            dt_ns: 5.0,
            psi: mode.psi.clone(),
        };
        assert_eq!(
            project_traces(&traces, &wrong_dt).unwrap_err().class(),
            "domain"
        );
    }

    #[test]
    fn projected_noise_floor_matches_clearance() {
        let mode = standard_mode();
        let m = 10_000;
        let traces = synthesize_traces(&vec![0.0; m], &mode, Some(16.0), 8).unwrap();
        let proj = project_traces(&traces, &mode).unwrap();
        let mean: f64 = proj.iter().sum::<f64>() / m as f64;
        let var: f64 = proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        let floor = 10f64.powf(-1.6);
        assert!(
            (var - floor).abs() < 4.0 * floor * (2.0 / m as f64).sqrt(),
            "projected noise variance {var} vs floor {floor}"
        );
    }

    #[test]
    fn projected_variance_adds_signal_and_noise() {
        let mode = standard_mode();
        let m = 10_000;
        let values = normal_values(m, 0.75f64.sqrt(), 21);
        let traces = synthesize_traces(&values, &mode, Some(16.0), 22).unwrap();
        let proj = project_traces(&traces, &mode).unwrap();
        let mean: f64 = proj.iter().sum::<f64>() / m as f64;
        let var: f64 = proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        let expect = 0.75 + 10f64.powf(-1.6);
        assert!((var - expect).abs() < 4.0 * expect * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn pca_recovers_mode_exactly_without_noise() {
        let mode = standard_mode();
        let traces = synthesize_traces(&normal_values(500, 1.0, 31), &mode, None, 32).unwrap();
        let recovered = extract_mode_pca(&traces).unwrap();
        assert!(mode_overlap(&recovered, &mode).unwrap() > 1.0 - 1e-9);
        let norm: f64 = recovered.psi.iter().map(|v| v * v).sum::<f64>() * recovered.dt_ns;
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(recovered.psi[recovered.n() / 2] > 0.0);
    }

    #[test]
    fn pca_tolerates_a_16db_noise_floor() {
        let mode = standard_mode();
        let values = normal_values(3_000, 0.75f64.sqrt(), 41);
        let traces = synthesize_traces(&values, &mode, Some(16.0), 42).unwrap();
        let recovered = extract_mode_pca(&traces).unwrap();
        assert!(mode_overlap(&recovered, &mode).unwrap() >= 0.99);
    }

    #[test]
    fn pca_overlap_improves_with_clearance() {
        let mode = standard_mode();
        let values = normal_values(2_000, 0.75f64.sqrt(), 51);
        let mut last = 0.0;
        for clearance in [Some(10.0), Some(16.0), Some(30.0), None] {
            let traces = synthesize_traces(&values, &mode, clearance, 52).unwrap();
            let overlap = mode_overlap(&extract_mode_pca(&traces).unwrap(), &mode).unwrap();
            assert!(
                overlap > last,
                "overlap {overlap} did not improve on {last} at {clearance:?}"
            );
            last = overlap;
        }
    }

    #[test]
    fn pca_rejects_featureless_traces() {
        let traces = TraceSet {
            segments: DMatrix::zeros(50, 20),
            dt_ns: 10.0,
            meta: TraceMeta {
                clearance_db: None,
                seed: 0,
                duty_cycle: None,
            },
        };
        assert_eq!(extract_mode_pca(&traces).unwrap_err().class(), "ambiguous-mode");
    }

    #[test]
    fn overlap_normalization_and_sign() {
        let mode = standard_mode();
        assert!((mode_overlap(&mode, &mode).unwrap() - 1.0).abs() < 1e-12);
        let flipped = TemporalMode {
            dt_ns: mode.dt_ns,
            psi: -mode.psi.clone(),
        };
        assert!((mode_overlap(&mode, &flipped).unwrap() - 1.0).abs() < 1e-12);
        let short = make_temporal_mode(80.0, 10.0, 150).unwrap();
        assert_eq!(mode_overlap(&mode, &short).unwrap_err().class(), "shape");
    }
}
