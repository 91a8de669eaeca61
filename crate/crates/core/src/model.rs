//! Shared domain types: design specifications, datasets, sufficient
//! statistics, hyperparameters and fit results.
//!
//! Dimension convention: the design matrix is `d x n` with one covariate per
//! column, so `Z = X Y / n` and `Sigma_hat = X X^T / n` are both indexed by
//! the ambient dimension `d`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{EioError, Result};
use crate::linalg::symmetrize;

/// Maximum entrywise deviation of `V^T V` from the identity for eigenvectors.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignKind {
    /// `X_k = k^{-1/8} sin(pi k xi_k)` with `xi_k ~ Uniform[-1, 1]`.
    SineFeature,
    /// Gaussian covariates with covariance `V diag(spectrum) V^T`.
    GaussianSpectrum,
    /// Gaussian covariates with a user-supplied covariance matrix.
    ExplicitCovariance,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::SineFeature => "sine",
            DesignKind::GaussianSpectrum => "gaussian",
            DesignKind::ExplicitCovariance => "explicit",
        }
    }
}

/// Eigenvalue of the sine-feature covariance at 1-based index `k`.
pub fn sine_eigenvalue(k: usize) -> f64 {
    (k as f64).powf(-0.25) / 2.0
}

/// `theta_k = k^{-power}` for `k = 1..=dim`.
pub fn power_decay_theta(dim: usize, power: f64) -> DVector<f64> {
    DVector::from_iterator(dim, (1..=dim).map(|k| (k as f64).powf(-power)))
}

/// Unvalidated description of a covariate law and regression truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub dim: usize,
    /// Eigenvalues of `Sigma`; ignored (recomputed) for the sine design.
    pub spectrum: Vec<f64>,
    pub eigvecs: Option<DMatrix<f64>>,
    pub theta_circ: DVector<f64>,
    pub noise_std: f64,
}

impl DesignSpec {
    pub fn sine(dim: usize, theta_circ: DVector<f64>, noise_std: f64) -> Self {
        DesignSpec {
            kind: DesignKind::SineFeature,
            dim,
            spectrum: Vec::new(),
            eigvecs: None,
            theta_circ,
            noise_std,
        }
    }

    /// The synthetic setup with `theta_k = k^{-3}` and noise level 0.09.
    pub fn sine_default(dim: usize) -> Self {
        Self::sine(dim, power_decay_theta(dim, 3.0), 0.09)
    }

    pub fn gaussian(
        spectrum: Vec<f64>,
        eigvecs: Option<DMatrix<f64>>,
        theta_circ: DVector<f64>,
        noise_std: f64,
    ) -> Self {
        DesignSpec {
            kind: DesignKind::GaussianSpectrum,
            dim: spectrum.len(),
            spectrum,
            eigvecs,
            theta_circ,
            noise_std,
        }
    }

    /// Gaussian design from an explicit covariance; the matrix is
    /// eigen-decomposed into spectrum and eigenvectors.
    pub fn explicit(covariance: &DMatrix<f64>, theta_circ: DVector<f64>, noise_std: f64) -> Self {
        let (values, vectors) = crate::linalg::sym_eigen_sorted(covariance);
        DesignSpec {
            kind: DesignKind::ExplicitCovariance,
            dim: covariance.nrows(),
            spectrum: values.iter().copied().collect(),
            eigvecs: Some(vectors),
            theta_circ,
            noise_std,
        }
    }
}

/// A design specification that passed [`validate_spec`], with derived
/// quantities filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec {
    spec: DesignSpec,
    sigma: DMatrix<f64>,
}

impl ValidatedSpec {
    pub fn kind(&self) -> DesignKind {
        self.spec.kind
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spec.spectrum
    }

    pub fn eigvecs(&self) -> Option<&DMatrix<f64>> {
        self.spec.eigvecs.as_ref()
    }

    pub fn theta_circ(&self) -> &DVector<f64> {
        &self.spec.theta_circ
    }

    pub fn noise_std(&self) -> f64 {
        self.spec.noise_std
    }

    /// Exact population covariance.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Coordinates of `theta_circ` in the eigenbasis of `Sigma`.
    pub fn theta_eigen_coords(&self) -> DVector<f64> {
        match &self.spec.eigvecs {
            Some(v) => v.transpose() * &self.spec.theta_circ,
            None => self.spec.theta_circ.clone(),
        }
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    /// Same design with a different noise level.
    pub fn with_noise_std(&self, noise_std: f64) -> Result<ValidatedSpec> {
        let mut spec = self.spec.clone();
        spec.noise_std = noise_std;
        validate_spec(spec)
    }
}

pub fn validate_spec(mut spec: DesignSpec) -> Result<ValidatedSpec> {
    let d = spec.dim;
    if d == 0 {
        return Err(EioError::invalid("dim", "dim must be >= 1"));
    }
    if spec.theta_circ.len() != d {
        return Err(EioError::DimensionMismatch {
            what: "theta_circ",
            expected: d,
            got: spec.theta_circ.len(),
        });
    }
    if spec.theta_circ.iter().any(|v| !v.is_finite()) {
        return Err(EioError::invalid("theta_circ", "entries must be finite"));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(EioError::invalid("noise_std", "must be finite and >= 0"));
    }

    if spec.kind == DesignKind::SineFeature {
        spec.spectrum = (1..=d).map(sine_eigenvalue).collect();
        spec.eigvecs = None;
    }

    if spec.spectrum.len() != d {
        return Err(EioError::DimensionMismatch {
            what: "spectrum",
            expected: d,
            got: spec.spectrum.len(),
        });
    }
    if spec.spectrum.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(EioError::invalid("spectrum", "entries must be finite and >= 0"));
    }
    for (i, w) in spec.spectrum.windows(2).enumerate() {
        if w[1] > w[0] {
            return Err(EioError::NonmonotoneSpectrum {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }

    if let Some(v) = &spec.eigvecs {
        if v.nrows() != d || v.ncols() != d {
            return Err(EioError::DimensionMismatch {
                what: "eigvecs",
                expected: d,
                got: if v.nrows() != d { v.nrows() } else { v.ncols() },
            });
        }
        let deviation = (v.transpose() * v - DMatrix::<f64>::identity(d, d)).amax();
        if !(deviation <= ORTHOGONALITY_TOL) {
            return Err(EioError::NonorthogonalEigvecs { deviation });
        }
    }

    let diag = DMatrix::from_diagonal(&DVector::from_column_slice(&spec.spectrum));
    let sigma = match &spec.eigvecs {
        Some(v) => symmetrize(&(v * diag * v.transpose())),
        None => diag,
    };
    Ok(ValidatedSpec { spec, sigma })
}

/// An `n`-sample: covariates as columns of a `d x n` matrix plus responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    noise: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::build(x, y, None)
    }

    /// Dataset whose noise realisation is known (synthetic data).
    pub fn with_noise(x: DMatrix<f64>, y: DVector<f64>, noise: DVector<f64>) -> Result<Self> {
        Self::build(x, y, Some(noise))
    }

    fn build(x: DMatrix<f64>, y: DVector<f64>, noise: Option<DVector<f64>>) -> Result<Self> {
        let n = x.ncols();
        if n == 0 {
            return Err(EioError::invalid("n", "sample size must be >= 1"));
        }
        if y.len() != n {
            return Err(EioError::DimensionMismatch {
                what: "y",
                expected: n,
                got: y.len(),
            });
        }
        if let Some(e) = &noise {
            if e.len() != n {
                return Err(EioError::DimensionMismatch {
                    what: "noise",
                    expected: n,
                    got: e.len(),
                });
            }
        }
        let finite = x.iter().chain(y.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(EioError::invalid("dataset", "all entries must be finite"));
        }
        Ok(Dataset { x, y, noise })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise(&self) -> Option<&DVector<f64>> {
        self.noise.as_ref()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }
}

/// Sample moments `Z = X Y / n`, `Sigma_hat = X X^T / n` and, for synthetic
/// data, the noise projection `U = X eps / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub z: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub u: Option<DVector<f64>>,
}

impl SufficientStats {
    /// Assembles statistics from parts; `sigma_hat` is symmetrized.
    pub fn new(z: DVector<f64>, sigma_hat: DMatrix<f64>, u: Option<DVector<f64>>) -> Result<Self> {
        let d = z.len();
        if sigma_hat.nrows() != d || sigma_hat.ncols() != d {
            return Err(EioError::DimensionMismatch {
                what: "sigma_hat",
                expected: d,
                got: sigma_hat.nrows(),
            });
        }
        if let Some(u) = &u {
            if u.len() != d {
                return Err(EioError::DimensionMismatch {
                    what: "u",
                    expected: d,
                    got: u.len(),
                });
            }
        }
        Ok(SufficientStats {
            z,
            sigma_hat: symmetrize(&sigma_hat),
            u,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Operator penalty weight; `Infinite` selects the plug-in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mu {
    Finite(f64),
    Infinite,
}

impl Mu {
    pub fn value(self) -> f64 {
        match self {
            Mu::Finite(v) => v,
            Mu::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Mu::Infinite)
    }

    /// Finite value or `InfiniteMu`.
    pub fn finite(self) -> Result<f64> {
        match self {
            Mu::Finite(v) => Ok(v),
            Mu::Infinite => Err(EioError::InfiniteMu),
        }
    }
}

impl From<f64> for Mu {
    fn from(v: f64) -> Self {
        if v.is_infinite() && v > 0.0 {
            Mu::Infinite
        } else {
            Mu::Finite(v)
        }
    }
}

impl fmt::Display for Mu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mu::Finite(v) => write!(f, "{v}"),
            Mu::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub mu: Mu,
    pub lambda: f64,
    /// Ridge penalty, used by the baseline only.
    pub tau: f64,
    pub max_iter: usize,
    /// Relative stopping tolerance on successive `theta` iterates.
    pub tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            mu: Mu::Finite(1e8),
            lambda: 1e-3,
            tau: 1.0,
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

impl Hyperparams {
    pub fn new(mu: Mu, lambda: f64) -> Self {
        Hyperparams {
            mu,
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Mu::Finite(m) = self.mu {
            if !(m > 0.0 && m.is_finite()) {
                return Err(EioError::invalid("mu", "must be > 0"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(EioError::invalid("lambda", "must be finite and >= 0"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(EioError::invalid("tau", "must be finite and >= 0"));
        }
        if !(self.tol > 0.0) {
            return Err(EioError::invalid("tol", "must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(EioError::invalid("max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

/// A point `(theta, eta, A)` of the joint parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
    pub a: DMatrix<f64>,
}

impl Triplet {
    pub fn new(theta: DVector<f64>, eta: DVector<f64>, a: DMatrix<f64>) -> Result<Self> {
        let d = theta.len();
        if eta.len() != d {
            return Err(EioError::DimensionMismatch {
                what: "eta",
                expected: d,
                got: eta.len(),
            });
        }
        if a.nrows() != d || a.ncols() != d {
            return Err(EioError::DimensionMismatch {
                what: "A",
                expected: d,
                got: a.nrows(),
            });
        }
        Ok(Triplet { theta, eta, a })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub estimate: Triplet,
    /// Objective value after each iteration.
    pub objective_trace: Vec<f64>,
    /// `||theta_t - theta_{t-1}||` per iteration, with `theta_0 = 0`.
    pub theta_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitReport {
    pub fn theta(&self) -> &DVector<f64> {
        &self.estimate.theta
    }
}
