//! Closed-form leading terms, spectral functionals and bound right-hand
//! sides.
//!
//! The bound formulas carry the constants `C_X` and `sigma` of the design and
//! noise assumptions. Neither is computable from a sampler's parameters, so
//! both come from [`BoundConfig`]; the resulting values are diagnostics and
//! are only valid bounds when those constants are.

use nalgebra::{DMatrix, DVector};

use crate::error::{EioError, Result};
use crate::linalg::{quad_form, solve_spd, sym_eigen_sorted, sym_eigenvalues, symmetrize};
use crate::model::Mu;

/// Slack used by the exact inequality checks.
pub const INEQUALITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    /// Sub-Gaussian design constant `C_X`.
    pub c_x: f64,
    /// psi_1 norm proxy for `Sigma^{-1/2} X eps`.
    pub sigma_psi1: f64,
    /// Confidence parameter in (0, 1).
    pub delta: f64,
}

impl BoundConfig {
    pub fn new(c_x: f64, sigma_psi1: f64, delta: f64) -> Result<Self> {
        let cfg = BoundConfig {
            c_x,
            sigma_psi1,
            delta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_x > 0.0 && self.c_x.is_finite()) {
            return Err(EioError::invalid("c_x", "must be > 0"));
        }
        if !(self.sigma_psi1 >= 0.0 && self.sigma_psi1.is_finite()) {
            return Err(EioError::invalid("sigma_psi1", "must be >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EioError::invalid("delta", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub eff_rank: f64,
    pub k_star: usize,
    pub r2: f64,
    pub r4: f64,
}

fn check_nonincreasing(spectrum: &[f64]) -> Result<()> {
    for (i, w) in spectrum.windows(2).enumerate() {
        if w[1] > w[0] {
            return Err(EioError::NonmonotoneSpectrum {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }
    Ok(())
}

/// `k*(lambda) = max{k : sigma_k^2 >= 2 lambda}`, or 0 when no eigenvalue
/// reaches the threshold. Assumes a nonincreasing spectrum.
pub fn k_star(spectrum: &[f64], lambda: f64) -> usize {
    spectrum.partition_point(|s| s * s >= 2.0 * lambda)
}

/// Ridge counterpart `max{k : sigma_k >= tau}`.
pub fn ridge_k_tilde(spectrum: &[f64], tau: f64) -> usize {
    spectrum.partition_point(|&s| s >= tau)
}

/// Tail sum `r_q(k) = sum_{j > k} (sigma_j / sigma_{k+1})^q` (1-based
/// indices). Zero when `k >= d` or the tail is identically zero.
pub fn tail_ratio_sum(spectrum: &[f64], k: usize, q: f64) -> f64 {
    match spectrum.get(k) {
        Some(&pivot) if pivot > 0.0 => spectrum[k..].iter().map(|s| (s / pivot).powf(q)).sum(),
        _ => 0.0,
    }
}

/// Effective rank `Tr / max eigenvalue` of a spectrum (0 for a zero spectrum).
pub fn effective_rank_of_spectrum(spectrum: &[f64]) -> f64 {
    let top = spectrum.iter().copied().fold(0.0_f64, f64::max);
    if top > 0.0 {
        spectrum.iter().sum::<f64>() / top
    } else {
        0.0
    }
}

/// Effective rank of a symmetric PSD matrix.
pub fn effective_rank(m: &DMatrix<f64>) -> f64 {
    let top = sym_eigenvalues(m)[0];
    if top > 0.0 {
        m.trace() / top
    } else {
        0.0
    }
}

pub fn spectral_summary(spectrum: &[f64], lambda: f64) -> Result<SpectralSummary> {
    check_nonincreasing(spectrum)?;
    let k = k_star(spectrum, lambda);
    Ok(SpectralSummary {
        eff_rank: effective_rank_of_spectrum(spectrum),
        k_star: k,
        r2: tail_ratio_sum(spectrum, k, 2.0),
        r4: tail_ratio_sum(spectrum, k, 4.0),
    })
}

fn sigma_sq_plus(sigma: &DMatrix<f64>, shift: f64) -> DMatrix<f64> {
    let mut m = symmetrize(&(sigma * sigma));
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    m
}

/// Bias leading term `b_lambda = -lambda (Sigma^2 / 2 + lambda I)^{-1} theta_circ`.
pub fn bias_leading_term(sigma: &DMatrix<f64>, theta_circ: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(EioError::invalid("lambda", "must be >= 0"));
    }
    if lambda == 0.0 {
        return Ok(DVector::zeros(theta_circ.len()));
    }
    let m = sigma_sq_plus(sigma, 2.0 * lambda);
    Ok(solve_spd(m, theta_circ, false, "Sigma^2 + 2 lambda I")? * (-2.0 * lambda))
}

/// Leading position of `theta*`: `theta_circ + b_lambda`.
pub fn predicted_theta_star(sigma: &DMatrix<f64>, theta_circ: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    Ok(theta_circ + bias_leading_term(sigma, theta_circ, lambda)?)
}

/// Variance leading term
/// `zeta = Sigma U - Sigma (Sigma_hat - Sigma) b - (Sigma_hat - Sigma) Sigma b`
/// and its whitened form `zeta_tilde = (Sigma^2 + 2 lambda I)^{-1} zeta`.
pub fn variance_leading_term(
    sigma: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    u: &DVector<f64>,
    b_lambda: &DVector<f64>,
    lambda: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = u.len();
    for (what, rows, cols) in [
        ("sigma", sigma.nrows(), sigma.ncols()),
        ("sigma_hat", sigma_hat.nrows(), sigma_hat.ncols()),
        ("b_lambda", b_lambda.len(), d),
    ] {
        if rows != d || cols != d {
            return Err(EioError::DimensionMismatch { what, expected: d, got: rows });
        }
    }
    let delta = sigma_hat - sigma;
    let zeta = sigma * u - sigma * (&delta * b_lambda) - &delta * (sigma * b_lambda);
    let m = sigma_sq_plus(sigma, 2.0 * lambda);
    let zeta_tilde = solve_spd(m, &zeta, lambda == 0.0, "Sigma^2 + 2 lambda I")?;
    Ok((zeta, zeta_tilde))
}

/// Excess prediction risk `|Sigma^{1/2}(theta_hat - theta_circ)|^2`.
pub fn excess_risk(sigma: &DMatrix<f64>, theta_hat: &DVector<f64>, theta_circ: &DVector<f64>) -> f64 {
    quad_form(sigma, &(theta_hat - theta_circ)).max(0.0)
}

/// `|Sigma^{1/2} v|`.
pub fn sigma_norm(sigma: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    quad_form(sigma, v).max(0.0).sqrt()
}

/// Operator norm and effective rank of `Sigma^{1/2} A^T A Sigma^{1/2}`,
/// both read off the isospectral `A Sigma A^T`.
fn whitened_norm_and_rank(a: &DMatrix<f64>, sigma: &DMatrix<f64>) -> (f64, f64) {
    let m = symmetrize(&(a * sigma * a.transpose()));
    let top = sym_eigenvalues(&m)[0].max(0.0);
    if top > 0.0 {
        (top.sqrt(), m.trace() / top)
    } else {
        (0.0, 0.0)
    }
}

/// `Psi(n, delta) = 196 (sigma |Sigma|^{1/2} / |theta| + 2 C_X |Sigma|)^2 (r(Sigma)^2 + log(4/delta)) / n`.
pub fn psi_bound(n: usize, cfg: &BoundConfig, sigma: &DMatrix<f64>, theta_circ: &DVector<f64>) -> Result<f64> {
    cfg.validate()?;
    if n == 0 {
        return Err(EioError::invalid("n", "must be >= 1"));
    }
    let theta_norm = theta_circ.norm();
    if theta_norm == 0.0 {
        return Err(EioError::ZeroTheta);
    }
    let op = sym_eigenvalues(sigma)[0].max(0.0);
    let r = effective_rank(sigma);
    let lead = cfg.sigma_psi1 * op.sqrt() / theta_norm + 2.0 * cfg.c_x * op;
    Ok(196.0 * lead * lead * (r * r + (4.0 / cfg.delta).ln()) / n as f64)
}

/// Term-by-term value of the excess-risk bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBoundTerms {
    /// `|Sigma^{1/2} b_lambda|`.
    pub bias: f64,
    /// `4 (2 sigma + C_X |Sigma^{1/2} b|) sqrt((k* + r_4 + log(4/delta)) / n)`.
    pub noise: f64,
    /// `2 C_X |Sigma^{3/2} b| / sqrt(2 lambda) * sqrt((4k* + 4 r_2 + log(4/delta)) / n)`.
    pub design: f64,
    /// Remainder part that scales with `1/mu`.
    pub diamond_mu: f64,
    /// Remainder part that does not involve `mu`.
    pub diamond_psi: f64,
}

impl RiskBoundTerms {
    pub fn diamond(&self) -> f64 {
        self.diamond_mu + self.diamond_psi
    }

    pub fn total(&self) -> f64 {
        self.bias + self.noise + self.design + self.diamond()
    }
}

fn check_bound_args(n: usize, mu: Mu, lambda: f64) -> Result<()> {
    if n == 0 {
        return Err(EioError::invalid("n", "must be >= 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(EioError::invalid("lambda", "must be > 0"));
    }
    if let Mu::Finite(m) = mu {
        if !(m > 0.0) {
            return Err(EioError::invalid("mu", "must be > 0"));
        }
    }
    Ok(())
}

/// Remainder `diamond` split into its `1/mu` and `mu`-free parts.
fn diamond_parts(
    theta_norm: f64,
    sigma_op: f64,
    b_norm: f64,
    psi: f64,
    mu: Mu,
    lambda: f64,
) -> (f64, f64) {
    let inv_mu = 1.0 / mu.value();
    let sqrt_l = lambda.sqrt();
    let mu_part = 210.0 * (theta_norm * inv_mu + sigma_op * b_norm * inv_mu / sqrt_l) * sigma_op.sqrt() * b_norm
        + theta_norm / lambda.powf(0.25)
            * ((17.0 * theta_norm * inv_mu).powi(2) + b_norm * inv_mu / 160.0)
            * psi.sqrt();
    let psi_part = 19.0 * theta_norm / (3f64.sqrt() * lambda.powf(0.75)) * (1.0 + (psi / lambda).sqrt()) * psi;
    (mu_part, psi_part)
}

pub fn risk_bound_terms(
    n: usize,
    cfg: &BoundConfig,
    sigma: &DMatrix<f64>,
    theta_circ: &DVector<f64>,
    mu: Mu,
    lambda: f64,
) -> Result<RiskBoundTerms> {
    check_bound_args(n, mu, lambda)?;
    let psi = psi_bound(n, cfg, sigma, theta_circ)?;
    let spectrum: Vec<f64> = sym_eigenvalues(sigma).iter().map(|v| v.max(0.0)).collect();
    let summary = spectral_summary(&spectrum, lambda)?;
    let b = bias_leading_term(sigma, theta_circ, lambda)?;
    let bias = sigma_norm(sigma, &b);
    let b3 = quad_form(&(sigma * sigma * sigma), &b).max(0.0).sqrt();
    let log_term = (4.0 / cfg.delta).ln();
    let nf = n as f64;
    let ks = summary.k_star as f64;
    let noise = 4.0 * (2.0 * cfg.sigma_psi1 + cfg.c_x * bias) * ((ks + summary.r4 + log_term) / nf).sqrt();
    let design = 2.0 * cfg.c_x * b3 / (2.0 * lambda).sqrt()
        * ((4.0 * ks + 4.0 * summary.r2 + log_term) / nf).sqrt();
    let (diamond_mu, diamond_psi) = diamond_parts(theta_circ.norm(), spectrum[0], b.norm(), psi, mu, lambda);
    Ok(RiskBoundTerms {
        bias,
        noise,
        design,
        diamond_mu,
        diamond_psi,
    })
}

/// Upper bound on `|Sigma^{1/2}(theta_hat - theta_circ)|` (not squared).
pub fn risk_bound_rhs(
    n: usize,
    cfg: &BoundConfig,
    sigma: &DMatrix<f64>,
    theta_circ: &DVector<f64>,
    mu: Mu,
    lambda: f64,
) -> Result<f64> {
    Ok(risk_bound_terms(n, cfg, sigma, theta_circ, mu, lambda)?.total())
}

/// Simplified bound with `theta_circ` split along the eigenbasis at `k*`.
pub fn risk_bound_simplified_rhs(
    n: usize,
    cfg: &BoundConfig,
    sigma: &DMatrix<f64>,
    theta_circ: &DVector<f64>,
    mu: Mu,
    lambda: f64,
) -> Result<f64> {
    check_bound_args(n, mu, lambda)?;
    let psi = psi_bound(n, cfg, sigma, theta_circ)?;
    let (values, vectors) = sym_eigen_sorted(sigma);
    let spectrum: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let coords = vectors.transpose() * theta_circ;
    let summary = spectral_summary(&spectrum, lambda)?;
    let (head, tail) = split_norms(&spectrum, &coords, summary.k_star);
    let pivot = if summary.k_star > 0 { spectrum[summary.k_star - 1] } else { 0.0 };
    let log_term = (4.0 / cfg.delta).ln();
    let nf = n as f64;
    let ks = summary.k_star as f64;
    let bias_part = (pivot * pivot * head + tail).sqrt()
        * (1.0 + 8.0 * cfg.c_x * ((ks + summary.r2 + log_term) / nf).sqrt());
    let noise_part = 8.0 * cfg.sigma_psi1 * ((ks + summary.r4 + log_term) / nf).sqrt();
    let b = bias_leading_term(sigma, theta_circ, lambda)?;
    let (dm, dp) = diamond_parts(theta_circ.norm(), spectrum[0], b.norm(), psi, mu, lambda);
    Ok(bias_part + noise_part + dm + dp)
}

/// `(|Sigma^{-1/2} theta_{<=k}|^2, |Sigma^{1/2} theta_{>k}|^2)` from eigen
/// coordinates. Zero eigenvalues in the head are skipped.
fn split_norms(spectrum: &[f64], coords: &DVector<f64>, k: usize) -> (f64, f64) {
    let mut head = 0.0;
    let mut tail = 0.0;
    for (j, (&s, &beta)) in spectrum.iter().zip(coords.iter()).enumerate() {
        if j < k {
            if s > 0.0 {
                head += beta * beta / s;
            }
        } else {
            tail += s * beta * beta;
        }
    }
    (head, tail)
}

/// Bound value together with whether the sample-size precondition holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationBound {
    pub value: f64,
    pub precondition_met: bool,
}

/// Bound on `|B (Sigma_hat - Sigma) A^T|_F`:
/// `4 C_X |A Sigma^{1/2}| |B Sigma^{1/2}| sqrt((r_A r_B + log(2/delta)) / n)`.
pub fn concentration_bound_cov(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    cfg: &BoundConfig,
    n: usize,
) -> Result<ConcentrationBound> {
    cfg.validate()?;
    if n == 0 {
        return Err(EioError::invalid("n", "must be >= 1"));
    }
    let (na, ra) = whitened_norm_and_rank(a, sigma);
    let (nb, rb) = whitened_norm_and_rank(b, sigma);
    let log_term = (2.0 / cfg.delta).ln();
    let nf = n as f64;
    Ok(ConcentrationBound {
        value: 4.0 * cfg.c_x * na * nb * ((ra * rb + log_term) / nf).sqrt(),
        precondition_met: ra * rb + log_term <= 4.0 * nf,
    })
}

/// Bound on `|(1/n) sum_i B X_i eps_i|`:
/// `8 sigma |B Sigma^{1/2}| sqrt((r_B + log(2/delta)) / n)`.
pub fn concentration_bound_noise(
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    cfg: &BoundConfig,
    n: usize,
) -> Result<ConcentrationBound> {
    cfg.validate()?;
    if n == 0 {
        return Err(EioError::invalid("n", "must be >= 1"));
    }
    let (nb, rb) = whitened_norm_and_rank(b, sigma);
    let log_term = (2.0 / cfg.delta).ln();
    let nf = n as f64;
    Ok(ConcentrationBound {
        value: 8.0 * cfg.sigma_psi1 * nb * ((rb + log_term) / nf).sqrt(),
        precondition_met: rb + log_term <= nf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
}

impl Inequality {
    /// `lhs <= rhs` up to [`INEQUALITY_SLACK`] (absolute and relative).
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + INEQUALITY_SLACK * self.rhs.abs().max(1.0)
    }
}

/// Both sides of the bias-norm comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasNormBounds {
    pub k_star: usize,
    /// `|Sigma^{1/2} b|^2 <= sigma_{k*}^2/4 |Sigma^{-1/2} theta_{<=k*}|^2 + |Sigma^{1/2} theta_{>k*}|^2`.
    pub bias: Inequality,
    /// `|Sigma^{3/2} b|^2 / (2 lambda) <= sigma_{k*}^2 |Sigma^{-1/2} theta_{<=k*}|^2 + 1/4 |Sigma^{1/2} theta_{>k*}|^2`.
    pub weighted_bias: Inequality,
    /// `max(...) <= 2 tau^2 |Sigma^{1/2} (Sigma + tau I)^{-1} theta|^2` with `tau^2 = 2 lambda`.
    pub ridge: Inequality,
}

impl BiasNormBounds {
    pub fn all_hold(&self) -> bool {
        self.bias.holds() && self.weighted_bias.holds() && self.ridge.holds()
    }
}

/// Evaluates both sides of the bias-norm inequalities in the eigenbasis of
/// `Sigma`. `theta_coords` are the coordinates of `theta_circ` along the
/// eigenvectors matching `spectrum`.
pub fn bias_norm_bounds(spectrum: &[f64], theta_coords: &DVector<f64>, lambda: f64, tau: f64) -> Result<BiasNormBounds> {
    check_nonincreasing(spectrum)?;
    if theta_coords.len() != spectrum.len() {
        return Err(EioError::DimensionMismatch {
            what: "theta_coords",
            expected: spectrum.len(),
            got: theta_coords.len(),
        });
    }
    if !(lambda >= 0.0) || !(tau >= 0.0) {
        return Err(EioError::invalid("lambda/tau", "must be >= 0"));
    }
    if (tau * tau - 2.0 * lambda).abs() > 1e-12 * (2.0 * lambda).max(1.0) {
        return Err(EioError::TauLambdaMismatch { tau, lambda });
    }
    let ks = k_star(spectrum, lambda);
    let two_l = 2.0 * lambda;
    let mut bias_sq = 0.0;
    let mut weighted = 0.0;
    let mut ridge = 0.0;
    for (&s, &beta) in spectrum.iter().zip(theta_coords.iter()) {
        if s == 0.0 {
            continue;
        }
        let denom = s * s + two_l;
        // b_j = -2 lambda beta_j / (s^2 + 2 lambda)
        bias_sq += s * (two_l * beta / denom).powi(2);
        weighted += two_l * s.powi(3) * beta * beta / (denom * denom);
        ridge += s * beta * beta / (s + tau).powi(2);
    }
    let (head, tail) = split_norms(spectrum, theta_coords, ks);
    let pivot_sq = if ks > 0 { spectrum[ks - 1].powi(2) } else { 0.0 };
    Ok(BiasNormBounds {
        k_star: ks,
        bias: Inequality {
            lhs: bias_sq,
            rhs: pivot_sq / 4.0 * head + tail,
        },
        weighted_bias: Inequality {
            lhs: weighted,
            rhs: pivot_sq * head + tail / 4.0,
        },
        ridge: Inequality {
            lhs: bias_sq.max(weighted),
            rhs: 2.0 * tau * tau * ridge,
        },
    })
}
