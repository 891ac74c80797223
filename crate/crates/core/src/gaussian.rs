//! Gaussian states as first and second quadrature moments, plus the
//! symplectic transformations the measurement model composes.
//!
//! Conventions, pinned once and used everywhere:
//! * quadrature ordering is interleaved (q₁, p₁, q₂, p₂, …);
//! * covariances are in shot noise units, vacuum variance ≡ 1;
//! * a coherent amplitude α displaces the mean to (√2 Re α, √2 Im α);
//! * positive squeezing parameter squeezes q.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Relative tolerance for covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Tolerance on symplectic eigenvalues for the uncertainty bound,
/// absorbing float error accumulated over composed transforms.
pub const PHYSICALITY_TOL: f64 = 1e-9;

/// Squeezed/antisqueezed quadrature variances of a (possibly impure)
/// squeezed thermal state, with the orientation of the squeezed axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezedThermalSpec {
    /// Squeezed quadrature variance in SNU (< 1 means squeezed).
    pub s_s: f64,
    /// Antisqueezed quadrature variance in SNU.
    pub s_as: f64,
    /// Orientation of the squeezed axis, radians.
    pub angle: f64,
}

impl SqueezedThermalSpec {
    pub fn new(s_s: f64, s_as: f64, angle: f64) -> Result<Self> {
        if !(s_s > 0.0) || !(s_as > 0.0) {
            return Err(Error::Domain(format!(
                "quadrature variances must be positive, got s_s={s_s}, s_as={s_as}"
            )));
        }
        if s_s * s_as < 1.0 - PHYSICALITY_TOL {
            return Err(Error::NonPhysical(format!(
                "s_s*s_as = {} violates the uncertainty bound s_s*s_as >= 1",
                s_s * s_as
            )));
        }
        Ok(Self { s_s, s_as, angle })
    }
}

/// State preparation recipes accepted by [`make_state`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateKind {
    Vacuum,
    Coherent { alpha: Complex64 },
    SqueezedVacuum { s_db: f64 },
    ThermalSqueezed(SqueezedThermalSpec),
}

/// An n-mode Gaussian state: mean vector (√SNU) and covariance matrix
/// (SNU), quadratures interleaved per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    n_modes: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// 2x2 quadrature rotation: q ↦ q cosθ + p sinθ, p ↦ −q sinθ + p cosθ.
fn rotation2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// 2x2 squeeze along the axis rotated by `angle`; `xi > 0` shrinks it.
fn squeeze2(xi: f64, angle: f64) -> Matrix2<f64> {
    let d = Matrix2::new((-xi).exp(), 0.0, 0.0, xi.exp());
    let r = rotation2(angle);
    r.transpose() * d * r
}

/// Standard symplectic form in the interleaved ordering.
fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for m in 0..n_modes {
        omega[(2 * m, 2 * m + 1)] = 1.0;
        omega[(2 * m + 1, 2 * m)] = -1.0;
    }
    omega
}

impl GaussianState {
    /// Build a state from explicit moments, enforcing symmetry,
    /// positive definiteness and the uncertainty bound.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Domain(format!(
                "mean length must be a positive even number, got {dim}"
            )));
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: cov.nrows(),
            });
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Domain(format!(
                "covariance is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let state = Self {
            n_modes: dim / 2,
            mean,
            cov,
        };
        state.check_physical()?;
        Ok(state)
    }

    /// Used by the transform ops, whose outputs are symmetric and
    /// physical up to rounding; symmetrizes and re-checks.
    fn from_transformed(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let sym = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, sym)
    }

    pub fn vacuum(n_modes: usize) -> Self {
        assert!(n_modes > 0, "state must have at least one mode");
        Self {
            n_modes,
            mean: DVector::zeros(2 * n_modes),
            cov: DMatrix::identity(2 * n_modes, 2 * n_modes),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes {
            Err(Error::Domain(format!(
                "mode index {mode} out of range for {} mode(s)",
                self.n_modes
            )))
        } else {
            Ok(())
        }
    }

    fn check_single_mode(&self, what: &str) -> Result<()> {
        if self.n_modes != 1 {
            Err(Error::Unsupported(format!(
                "{what} requires a single-mode state, got {} modes",
                self.n_modes
            )))
        } else {
            Ok(())
        }
    }

    /// Symplectic spectrum of the covariance matrix; every value is
    /// ≥ 1 for a physical state in SNU.
    pub fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        let eig = self.cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::NonPhysical(format!(
                "covariance is not positive definite (min eigenvalue {:.3e})",
                eig.eigenvalues.min()
            )));
        }
        let sqrt_vals = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|l| l.sqrt()),
        );
        let sqrt_cov =
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        // sqrt(V)·Ω·sqrt(V) is antisymmetric; its singular values are the
        // symplectic eigenvalues, each doubled.
        let a = &sqrt_cov * symplectic_form(self.n_modes) * &sqrt_cov;
        let mut sv: Vec<f64> = a.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        Ok(sv.into_iter().step_by(2).take(self.n_modes).collect())
    }

    fn check_physical(&self) -> Result<()> {
        let nu = self.symplectic_eigenvalues()?;
        for v in &nu {
            if *v < 1.0 - PHYSICALITY_TOL {
                return Err(Error::NonPhysical(format!(
                    "symplectic eigenvalue {v} below the vacuum floor"
                )));
            }
        }
        Ok(())
    }

    /// Apply a 2x2 symplectic block to one mode: mean → M·mean,
    /// cov → M·cov·Mᵀ on that block (cross blocks transform once).
    fn apply_mode_block(&self, mode: usize, m2: &Matrix2<f64>) -> Result<Self> {
        let mut full = DMatrix::identity(2 * self.n_modes, 2 * self.n_modes);
        let i = 2 * mode;
        full[(i, i)] = m2[(0, 0)];
        full[(i, i + 1)] = m2[(0, 1)];
        full[(i + 1, i)] = m2[(1, 0)];
        full[(i + 1, i + 1)] = m2[(1, 1)];
        let mean = &full * &self.mean;
        let cov = &full * &self.cov * full.transpose();
        Self::from_transformed(mean, cov)
    }

    /// Squeeze one mode; `xi > 0` shrinks the quadrature at `angle`
    /// (the q axis for angle 0) by e^(−2ξ) in variance.
    pub fn apply_squeeze(&self, xi: f64, mode: usize, angle: f64) -> Result<Self> {
        self.check_mode(mode)?;
        self.apply_mode_block(mode, &squeeze2(xi, angle))
    }

    /// Phase-space rotation of one mode by `theta`.
    pub fn apply_rotation(&self, theta: f64, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        self.apply_mode_block(mode, &rotation2(theta))
    }

    /// Mix two modes on a beamsplitter with amplitude reflection `r`
    /// (t = √(1−r²)): out_a = t·a + r·b, out_b = r·a − t·b.
    pub fn apply_beamsplitter(&self, mode_a: usize, mode_b: usize, r: f64) -> Result<Self> {
        self.check_mode(mode_a)?;
        self.check_mode(mode_b)?;
        if mode_a == mode_b {
            return Err(Error::Domain(format!(
                "beamsplitter needs two distinct modes, got {mode_a} twice"
            )));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!(
                "amplitude reflection must be in [0, 1], got {r}"
            )));
        }
        let t = (1.0 - r * r).sqrt();
        let mut full = DMatrix::identity(2 * self.n_modes, 2 * self.n_modes);
        for off in 0..2 {
            let ia = 2 * mode_a + off;
            let ib = 2 * mode_b + off;
            full[(ia, ia)] = t;
            full[(ia, ib)] = r;
            full[(ib, ia)] = r;
            full[(ib, ib)] = -t;
        }
        let mean = &full * &self.mean;
        let cov = &full * &self.cov * full.transpose();
        Self::from_transformed(mean, cov)
    }

    /// Pure-loss channel of transmission `eta` on one mode:
    /// V → ηV + (1−η)·I on the block, mean → √η·mean.
    pub fn apply_loss(&self, eta: f64, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Domain(format!(
                "transmission must be in [0, 1], got {eta}"
            )));
        }
        let root = eta.sqrt();
        let mut scale = DMatrix::identity(2 * self.n_modes, 2 * self.n_modes);
        let i = 2 * mode;
        scale[(i, i)] = root;
        scale[(i + 1, i + 1)] = root;
        let mean = &scale * &self.mean;
        let mut cov = &scale * &self.cov * scale.transpose();
        cov[(i, i)] += 1.0 - eta;
        cov[(i + 1, i + 1)] += 1.0 - eta;
        Self::from_transformed(mean, cov)
    }

    /// Product state: concatenated means, block-diagonal covariance.
    pub fn tensor(&self, other: &Self) -> Self {
        let n = self.n_modes + other.n_modes;
        let mut mean = DVector::zeros(2 * n);
        mean.rows_mut(0, 2 * self.n_modes).copy_from(&self.mean);
        mean.rows_mut(2 * self.n_modes, 2 * other.n_modes)
            .copy_from(&other.mean);
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        cov.view_mut((0, 0), (2 * self.n_modes, 2 * self.n_modes))
            .copy_from(&self.cov);
        cov.view_mut(
            (2 * self.n_modes, 2 * self.n_modes),
            (2 * other.n_modes, 2 * other.n_modes),
        )
        .copy_from(&other.cov);
        Self {
            n_modes: n,
            mean,
            cov,
        }
    }

    /// Husimi Q value at a coherent-plane point, normalized so that
    /// ∫ Q d²α = 1; bounded by 1/π. Single-mode states only.
    ///
    /// In the pinned units the coherent plane relates to the quadrature
    /// plane by α = (q + ip)/2, so the Q surface is a Gaussian with
    /// covariance (V + I)/4 and center mean/2.
    pub fn husimi(&self, alpha: Complex64) -> Result<f64> {
        self.check_single_mode("husimi evaluation")?;
        let sigma = (Matrix2::new(
            self.cov[(0, 0)],
            self.cov[(0, 1)],
            self.cov[(1, 0)],
            self.cov[(1, 1)],
        ) + Matrix2::identity())
            / 4.0;
        let det = sigma[(0, 0)] * sigma[(1, 1)] - sigma[(0, 1)] * sigma[(1, 0)];
        let d = Vector2::new(
            alpha.re - self.mean[0] / 2.0,
            alpha.im - self.mean[1] / 2.0,
        );
        let inv = Matrix2::new(sigma[(1, 1)], -sigma[(0, 1)], -sigma[(1, 0)], sigma[(0, 0)]) / det;
        let quad = (d.transpose() * inv * d)[(0, 0)];
        Ok((-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
    }

    /// First and second moments of the Husimi distribution over the
    /// plotted √SNU phase-space axes: mean unchanged, covariance V + I.
    pub fn husimi_moments(&self) -> Result<(Vector2<f64>, Matrix2<f64>)> {
        self.check_single_mode("husimi moments")?;
        let mean = Vector2::new(self.mean[0], self.mean[1]);
        let cov = Matrix2::new(
            self.cov[(0, 0)] + 1.0,
            self.cov[(0, 1)],
            self.cov[(1, 0)],
            self.cov[(1, 1)] + 1.0,
        );
        Ok((mean, cov))
    }
}

/// Prepare a state of `n_modes` modes with `kind` loaded into mode 0
/// and vacuum elsewhere.
pub fn make_state(kind: StateKind, n_modes: usize) -> Result<GaussianState> {
    if n_modes == 0 {
        return Err(Error::Domain("state must have at least one mode".into()));
    }
    let first = match kind {
        StateKind::Vacuum => GaussianState::vacuum(1),
        StateKind::Coherent { alpha } => {
            let mean = DVector::from_vec(vec![
                std::f64::consts::SQRT_2 * alpha.re,
                std::f64::consts::SQRT_2 * alpha.im,
            ]);
            GaussianState::new(mean, DMatrix::identity(2, 2))?
        }
        StateKind::SqueezedVacuum { s_db } => {
            let vq = 10f64.powf(s_db / 10.0);
            GaussianState::new(
                DVector::zeros(2),
                DMatrix::from_diagonal(&DVector::from_vec(vec![vq, 1.0 / vq])),
            )?
        }
        StateKind::ThermalSqueezed(spec) => {
            let spec = SqueezedThermalSpec::new(spec.s_s, spec.s_as, spec.angle)?;
            let d = Matrix2::new(spec.s_s, 0.0, 0.0, spec.s_as);
            let rot = rotation2(spec.angle);
            let v = rot.transpose() * d * rot;
            GaussianState::new(
                DVector::zeros(2),
                DMatrix::from_fn(2, 2, |i, j| v[(i, j)]),
            )?
        }
    };
    if n_modes == 1 {
        Ok(first)
    } else {
        Ok(first.tensor(&GaussianState::vacuum(n_modes - 1)))
    }
}

/// Random physical single-mode state: rotated squeezed thermal with a
/// bounded displacement. Used by the povm self-test and property tests.
pub fn random_single_mode<R: Rng + ?Sized>(rng: &mut R) -> GaussianState {
    let nu: f64 = rng.gen_range(1.0..2.5);
    let xi: f64 = rng.gen_range(-0.6..0.6);
    let angle: f64 = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
    let m = squeeze2(xi, angle);
    let v = m * Matrix2::identity() * nu * m.transpose();
    let mean = DVector::from_vec(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
    GaussianState::new(mean, DMatrix::from_fn(2, 2, |i, j| v[(i, j)]))
        .expect("construction is physical for nu >= 1")
}
