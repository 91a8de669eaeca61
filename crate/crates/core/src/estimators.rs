//! Error-in-operator objective, its alternating minimizer, and the plug-in
//! and ridge baselines.
//!
//! The objective is
//!
//! ```text
//! L(theta, eta, A) = 1/2 |Z - eta|^2 + 1/2 |eta - A theta|^2
//!                  + mu^2/2 |Sigma_hat - A|_F^2 + lambda/2 |theta|^2
//! ```
//!
//! For fixed `(theta, A)` the optimal `eta` is `(Z + A theta) / 2`, which
//! reduces the first two terms to `1/4 |Z - A theta|^2`. Both alternating
//! steps minimize that reduced objective exactly, one block at a time.

use nalgebra::{DMatrix, DVector};

use crate::error::{EioError, Result};
use crate::linalg::{solve_spd, symmetrize};
use crate::model::{Dataset, FitReport, Hyperparams, Mu, SufficientStats, Triplet, ValidatedSpec};

/// Relative objective increase treated as divergence of the alternating loop.
pub const DIVERGENCE_SLACK: f64 = 1e-6;

/// Population moments `(Sigma, E Z = Sigma theta_circ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStats {
    pub sigma: DMatrix<f64>,
    pub ez: DVector<f64>,
}

impl PopulationStats {
    pub fn from_spec(spec: &ValidatedSpec) -> Self {
        PopulationStats {
            sigma: spec.sigma().clone(),
            ez: spec.sigma() * spec.theta_circ(),
        }
    }

    /// The population moments viewed as (noise-free) sufficient statistics.
    pub fn as_stats(&self) -> SufficientStats {
        SufficientStats {
            z: self.ez.clone(),
            sigma_hat: self.sigma.clone(),
            u: Some(DVector::zeros(self.ez.len())),
        }
    }
}

fn objective_value(
    z: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    mu: f64,
    lambda: f64,
    v: &Triplet,
) -> f64 {
    let fit = (z - &v.eta).norm_squared();
    let op = (&v.eta - &v.a * &v.theta).norm_squared();
    let dev = (sigma_hat - &v.a).norm_squared();
    let penalty = if dev == 0.0 { 0.0 } else { mu * mu * dev };
    0.5 * fit + 0.5 * op + 0.5 * penalty + 0.5 * lambda * v.theta.norm_squared()
}

fn check_triplet(d: usize, v: &Triplet) -> Result<()> {
    if v.dim() != d || v.eta.len() != d || v.a.nrows() != d || v.a.ncols() != d {
        return Err(EioError::DimensionMismatch {
            what: "triplet",
            expected: d,
            got: v.dim(),
        });
    }
    Ok(())
}

/// Empirical objective `L(v)`.
pub fn objective_empirical(stats: &SufficientStats, hp: &Hyperparams, v: &Triplet) -> Result<f64> {
    let mu = hp.mu.finite()?;
    check_triplet(stats.dim(), v)?;
    Ok(objective_value(&stats.z, &stats.sigma_hat, mu, hp.lambda, v))
}

/// Population objective: `L` with `(Z, Sigma_hat)` replaced by `(Sigma theta_circ, Sigma)`.
pub fn objective_population(pop: &PopulationStats, hp: &Hyperparams, v: &Triplet) -> Result<f64> {
    let mu = hp.mu.finite()?;
    check_triplet(pop.ez.len(), v)?;
    Ok(objective_value(&pop.ez, &pop.sigma, mu, hp.lambda, v))
}

/// `theta = (A^T A + 2 lambda I)^{-1} A^T Z`, the exact minimizer of
/// `1/4 |Z - A theta|^2 + lambda/2 |theta|^2`.
pub fn theta_update(a: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let d = z.len();
    if a.nrows() != d || a.ncols() != d {
        return Err(EioError::DimensionMismatch {
            what: "A",
            expected: d,
            got: a.nrows(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(EioError::invalid("lambda", "must be >= 0"));
    }
    let mut gram = a.tr_mul(a);
    for i in 0..d {
        gram[(i, i)] += 2.0 * lambda;
    }
    let rhs = a.tr_mul(z);
    solve_spd(gram, &rhs, lambda == 0.0, "A^T A + 2 lambda I")
}

/// Exact minimizer of `A -> 1/4 |Z - A theta|^2 + mu^2/2 |Sigma_hat - A|_F^2`:
///
/// ```text
/// A = Z theta^T (2 mu^2 I + theta theta^T)^{-1} + Sigma_hat (I + theta theta^T / (2 mu^2))^{-1}
/// ```
///
/// With `(2 mu^2 I + theta theta^T)^{-1} = (I - theta theta^T / (2 mu^2 + |theta|^2)) / (2 mu^2)`
/// both terms collapse to the rank-one correction
/// `Sigma_hat + (Z - Sigma_hat theta) theta^T / (2 mu^2 + |theta|^2)`.
pub fn a_update(
    sigma_hat: &DMatrix<f64>,
    z: &DVector<f64>,
    theta: &DVector<f64>,
    mu: Mu,
) -> Result<DMatrix<f64>> {
    let mu = mu.finite()?;
    let d = z.len();
    if theta.len() != d || sigma_hat.nrows() != d || sigma_hat.ncols() != d {
        return Err(EioError::DimensionMismatch {
            what: "a_update inputs",
            expected: d,
            got: theta.len(),
        });
    }
    let denom = 2.0 * mu * mu + theta.norm_squared();
    let residual = z - sigma_hat * theta;
    let mut a = sigma_hat.clone();
    a.ger(1.0 / denom, &residual, theta, 1.0);
    Ok(a)
}

/// One step of the alternating scheme.
#[derive(Debug, Clone)]
pub struct Step {
    pub t: usize,
    pub theta: DVector<f64>,
    pub a: DMatrix<f64>,
    pub objective: f64,
    pub residual: f64,
}

/// Iterator over the alternating minimization started at `A_0 = Sigma_hat`,
/// `theta_0 = 0`. Never terminates on its own; callers decide when to stop.
pub struct AlternatingMinimizer<'a> {
    z: &'a DVector<f64>,
    sigma_hat: &'a DMatrix<f64>,
    mu: Mu,
    lambda: f64,
    theta: DVector<f64>,
    a: DMatrix<f64>,
    t: usize,
    failed: bool,
}

impl<'a> AlternatingMinimizer<'a> {
    pub fn new(z: &'a DVector<f64>, sigma_hat: &'a DMatrix<f64>, mu: Mu, lambda: f64) -> Result<Self> {
        mu.finite()?;
        Ok(AlternatingMinimizer {
            z,
            sigma_hat,
            mu,
            lambda,
            theta: DVector::zeros(z.len()),
            a: sigma_hat.clone(),
            t: 0,
            failed: false,
        })
    }

    pub fn from_stats(stats: &'a SufficientStats, mu: Mu, lambda: f64) -> Result<Self> {
        Self::new(&stats.z, &stats.sigma_hat, mu, lambda)
    }

    fn advance(&mut self) -> Result<Step> {
        let theta = theta_update(&self.a, self.z, self.lambda)?;
        let a = a_update(self.sigma_hat, self.z, &theta, self.mu)?;
        let eta = (self.z + &a * &theta) * 0.5;
        let residual = (&theta - &self.theta).norm();
        let v = Triplet { theta, eta, a };
        let objective = objective_value(self.z, self.sigma_hat, self.mu.value(), self.lambda, &v);
        self.t += 1;
        self.theta = v.theta.clone();
        self.a = v.a.clone();
        Ok(Step {
            t: self.t,
            theta: v.theta,
            a: v.a,
            objective,
            residual,
        })
    }
}

impl Iterator for AlternatingMinimizer<'_> {
    type Item = Result<Step>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let step = self.advance();
        if step.is_err() {
            self.failed = true;
        }
        Some(step)
    }
}

fn alternating_fit(z: &DVector<f64>, sigma_hat: &DMatrix<f64>, hp: &Hyperparams) -> Result<FitReport> {
    hp.validate()?;
    let mut objective_trace = Vec::new();
    let mut theta_residuals = Vec::new();
    let mut converged = false;
    let mut last: Option<Step> = None;
    for step in AlternatingMinimizer::new(z, sigma_hat, hp.mu, hp.lambda)?.take(hp.max_iter) {
        let step = step?;
        let diverging = objective_trace
            .last()
            .is_some_and(|&prev: &f64| step.objective > prev + DIVERGENCE_SLACK * prev.abs().max(f64::MIN_POSITIVE));
        objective_trace.push(step.objective);
        theta_residuals.push(step.residual);
        let stop = step.residual <= hp.tol * step.theta.norm().max(1.0);
        last = Some(step);
        if diverging {
            break;
        }
        if stop {
            converged = true;
            break;
        }
    }
    let last = last.expect("max_iter >= 1");
    let eta = (z + &last.a * &last.theta) * 0.5;
    Ok(FitReport {
        estimate: Triplet {
            theta: last.theta,
            eta,
            a: last.a,
        },
        iterations: objective_trace.len(),
        objective_trace,
        theta_residuals,
        converged,
    })
}

/// Wraps a closed-form `mu = inf` solution into a one-iteration report.
fn plugin_report(z: &DVector<f64>, sigma_hat: &DMatrix<f64>, theta: DVector<f64>, lambda: f64) -> FitReport {
    let a = sigma_hat.clone();
    let fitted = &a * &theta;
    let eta = (z + &fitted) * 0.5;
    let objective = 0.25 * (z - &fitted).norm_squared() + 0.5 * lambda * theta.norm_squared();
    let residual = theta.norm();
    FitReport {
        estimate: Triplet { theta, eta, a },
        objective_trace: vec![objective],
        theta_residuals: vec![residual],
        iterations: 1,
        converged: true,
    }
}

/// Error-in-operator estimate by alternating minimization.
///
/// Stops when `|theta_t - theta_{t-1}| <= tol * max(1, |theta_t|)` or after
/// `max_iter` iterations. An objective increase beyond
/// [`DIVERGENCE_SLACK`] (relative) also stops the loop with
/// `converged = false`. `Mu::Infinite` delegates to [`plugin_fit`].
pub fn eio_fit(stats: &SufficientStats, hp: &Hyperparams) -> Result<FitReport> {
    hp.validate()?;
    if hp.mu.is_infinite() {
        let theta = plugin_fit(stats, hp.lambda)?;
        return Ok(plugin_report(&stats.z, &stats.sigma_hat, theta, hp.lambda));
    }
    alternating_fit(&stats.z, &stats.sigma_hat, hp)
}

/// Best parametric fit `(theta*, eta*, A*)`, the minimizer of the population
/// objective, computed by the same alternating scheme.
pub fn population_fit(pop: &PopulationStats, hp: &Hyperparams) -> Result<FitReport> {
    hp.validate()?;
    if hp.mu.is_infinite() {
        let theta = plugin_solve(&pop.sigma, &pop.ez, hp.lambda)?;
        return Ok(plugin_report(&pop.ez, &pop.sigma, theta, hp.lambda));
    }
    alternating_fit(&pop.ez, &pop.sigma, hp)
}

fn plugin_solve(sigma_hat: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(EioError::invalid("lambda", "must be >= 0"));
    }
    let d = z.len();
    let mut m = symmetrize(&(sigma_hat * sigma_hat));
    for i in 0..d {
        m[(i, i)] += 2.0 * lambda;
    }
    let rhs = sigma_hat * z;
    solve_spd(m, &rhs, lambda == 0.0, "Sigma_hat^2 + 2 lambda I")
}

/// Plug-in estimate `(Sigma_hat^2 + 2 lambda I)^{-1} Sigma_hat Z`.
pub fn plugin_fit(stats: &SufficientStats, lambda: f64) -> Result<DVector<f64>> {
    plugin_solve(&stats.sigma_hat, &stats.z, lambda)
}

/// Ridge estimate `argmin |Y - X^T theta|^2 + tau |theta|^2 = (X X^T + tau I)^{-1} X Y`.
pub fn ridge_fit(data: &Dataset, tau: f64) -> Result<DVector<f64>> {
    if !(tau >= 0.0) {
        return Err(EioError::invalid("tau", "must be >= 0"));
    }
    let x = data.x();
    let mut gram = x * x.transpose();
    for i in 0..data.dim() {
        gram[(i, i)] += tau;
    }
    let rhs = x * data.y();
    solve_spd(gram, &rhs, tau == 0.0, "X X^T + tau I")
}

/// Ridge estimate from sufficient statistics of an `n`-sample:
/// `(n Sigma_hat + tau I)^{-1} n Z`.
pub fn ridge_fit_stats(stats: &SufficientStats, n: usize, tau: f64) -> Result<DVector<f64>> {
    if !(tau >= 0.0) {
        return Err(EioError::invalid("tau", "must be >= 0"));
    }
    let nf = n as f64;
    let mut gram = &stats.sigma_hat * nf;
    for i in 0..stats.dim() {
        gram[(i, i)] += tau;
    }
    solve_spd(gram, &(&stats.z * nf), tau == 0.0, "n Sigma_hat + tau I")
}

/// Gradient of the `eta`-eliminated objective
/// `F(theta, A) = 1/4 |Z - A theta|^2 + mu^2/2 |Sigma_hat - A|_F^2 + lambda/2 |theta|^2`
/// as `(d/dtheta, d/dA)`.
pub fn reduced_gradient(
    stats: &SufficientStats,
    hp: &Hyperparams,
    theta: &DVector<f64>,
    a: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mu = hp.mu.finite()?;
    let r = &stats.z - a * theta;
    let g_theta = -(a.tr_mul(&r)) * 0.5 + theta * hp.lambda;
    let g_a = -(&r * theta.transpose()) * 0.5 + (a - &stats.sigma_hat) * (mu * mu);
    Ok((g_theta, g_a))
}
