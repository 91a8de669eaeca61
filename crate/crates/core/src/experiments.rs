//! Monte-Carlo drivers: leading-term ratio studies, grid searches, the
//! ridge comparison, the double-descent sweep and concentration scaling.
//!
//! Replicate `r` always draws its dataset from stream `r` of the plan's base
//! seed, so datasets are shared across estimators and grid points (common
//! random numbers). Work is spread over a rayon pool of `workers` threads;
//! results are collected in replicate order and reduced serially, which
//! keeps every statistic independent of the worker count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::datagen::{generate, sufficient_stats, RngStream};
use crate::error::{EioError, Result};
use crate::estimators::{eio_fit, plugin_fit, population_fit, ridge_fit_stats, PopulationStats};
use crate::linalg::sym_op_norm;
use crate::model::{Hyperparams, Mu, SufficientStats, ValidatedSpec};
use crate::theory::{
    bias_leading_term, concentration_bound_cov, concentration_bound_noise, excess_risk, sigma_norm,
    variance_leading_term, BoundConfig,
};

/// Stream offset used for the independent-dataset arm of the ridge comparison.
const INDEPENDENT_STREAM_OFFSET: u64 = 1 << 32;

/// Flag attached to records whose ratio is 0/0 in every replicate.
pub const DEGENERATE_FLAG: &str = "degenerate_0_over_0";

/// `base^k` for `k` in `lo..=hi`.
pub fn geometric_grid(base: f64, lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| base.powi(k)).collect()
}

/// `{1.3^-40, ..., 1.3^39}`.
pub fn default_lambda_grid() -> Vec<f64> {
    geometric_grid(1.3, -40, 39)
}

/// `{2^0, ..., 2^29}`.
pub fn default_mu_grid() -> Vec<f64> {
    geometric_grid(2.0, 0, 29)
}

/// Ridge penalties share the lambda grid's range.
pub fn default_tau_grid() -> Vec<f64> {
    geometric_grid(1.3, -40, 39)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub n_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
}

impl SweepPlan {
    pub fn new(n_grid: Vec<usize>, replicates: usize, base_seed: u64) -> Self {
        SweepPlan {
            n_grid,
            lambda_grid: default_lambda_grid(),
            mu_grid: default_mu_grid(),
            tau_grid: default_tau_grid(),
            replicates,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(EioError::invalid("replicates", "must be >= 1"));
        }
        if self.n_grid.contains(&0) {
            return Err(EioError::invalid("n_grid", "sample sizes must be >= 1"));
        }
        for (name, grid) in [("lambda_grid", &self.lambda_grid), ("tau_grid", &self.tau_grid)] {
            if grid.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(EioError::invalid(name, "entries must be finite and >= 0"));
            }
        }
        if self.mu_grid.iter().any(|v| !(*v > 0.0)) {
            return Err(EioError::invalid("mu_grid", "entries must be > 0"));
        }
        Ok(())
    }

    pub fn stream(&self, replicate: usize) -> RngStream {
        RngStream::new(self.base_seed, replicate as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordParams {
    pub n: Option<usize>,
    pub d: usize,
    pub lambda: Option<f64>,
    pub mu: Option<Mu>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub params: RecordParams,
    /// `None` when the statistic was skipped (see `flag`).
    pub statistic_mean: Option<f64>,
    pub statistic_sd: Option<f64>,
    pub replicates: usize,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRecord {
    pub n: Option<usize>,
    pub d: usize,
    pub stat: String,
    pub median: Option<f64>,
    pub q90: Option<f64>,
    pub bound_value: Option<f64>,
}

/// Shared inputs of every experiment.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub spec: ValidatedSpec,
    /// Iteration budget and tolerance for every EiO fit.
    pub hyper: Hyperparams,
    pub bounds: BoundConfig,
    pub workers: usize,
}

impl ExperimentContext {
    pub fn new(spec: ValidatedSpec, hyper: Hyperparams, bounds: BoundConfig, workers: usize) -> Self {
        ExperimentContext {
            spec,
            hyper,
            bounds,
            workers: workers.max(1),
        }
    }

    fn par_map<T, F>(&self, count: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| EioError::invalid("workers", e.to_string()))?;
        pool.install(|| (0..count).into_par_iter().map(f).collect())
    }

    /// Sufficient statistics of replicate `r` at sample size `n`.
    pub fn replicate_stats(&self, plan: &SweepPlan, n: usize, r: usize) -> Result<SufficientStats> {
        let data = generate(&self.spec, n, plan.stream(r))?;
        sufficient_stats(&data, Some(&self.spec))
    }

    fn risk(&self, theta: &nalgebra::DVector<f64>) -> f64 {
        excess_risk(self.spec.sigma(), theta, self.spec.theta_circ())
    }

    fn eio_theta(&self, stats: &SufficientStats, mu: Mu, lambda: f64) -> Result<nalgebra::DVector<f64>> {
        let hp = Hyperparams {
            mu,
            lambda,
            ..self.hyper
        };
        Ok(eio_fit(stats, &hp)?.estimate.theta)
    }

    fn population(&self) -> PopulationStats {
        PopulationStats::from_spec(&self.spec)
    }

    fn params(&self, n: Option<usize>) -> RecordParams {
        RecordParams {
            n,
            d: self.spec.dim(),
            lambda: None,
            mu: None,
            tau: None,
        }
    }
}

/// Sample mean and (n - 1)-normalized standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Ratio with the 0/0 case mapped to `None`.
fn guarded_ratio(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 && den.is_finite() {
        Some(num / den)
    } else {
        None
    }
}

/// Bias ratio `|Sigma^{1/2} b_lambda| / |Sigma^{1/2}(theta* - theta_circ)|`
/// for every `(mu, lambda)` pair, `mu`-major.
pub fn ratio_bias_experiment(ctx: &ExperimentContext, mu_grid: &[Mu], lambda_grid: &[f64]) -> Result<Vec<ExperimentRecord>> {
    let pop = ctx.population();
    let sigma = ctx.spec.sigma();
    let theta_circ = ctx.spec.theta_circ();
    let points: Vec<(Mu, f64)> = mu_grid
        .iter()
        .flat_map(|&mu| lambda_grid.iter().map(move |&l| (mu, l)))
        .collect();
    let ratios = ctx.par_map(points.len(), |i| {
        let (mu, lambda) = points[i];
        let b = bias_leading_term(sigma, theta_circ, lambda)?;
        let deviation = match mu {
            // closed form of theta* - theta_circ for the plug-in fit
            Mu::Infinite => b.clone(),
            Mu::Finite(_) => {
                let hp = Hyperparams { mu, lambda, ..ctx.hyper };
                population_fit(&pop, &hp)?.estimate.theta - theta_circ
            }
        };
        Ok(guarded_ratio(sigma_norm(sigma, &b), sigma_norm(sigma, &deviation)))
    })?;
    Ok(points
        .iter()
        .zip(ratios)
        .map(|(&(mu, lambda), ratio)| ExperimentRecord {
            experiment: "ratio_bias".into(),
            params: RecordParams {
                lambda: Some(lambda),
                mu: Some(mu),
                ..ctx.params(None)
            },
            statistic_mean: ratio,
            statistic_sd: ratio.map(|_| 0.0),
            replicates: 1,
            flag: ratio.is_none().then(|| DEGENERATE_FLAG.to_string()),
        })
        .collect())
}

/// Variance ratio `|Sigma^{1/2} zeta_tilde| / |Sigma^{1/2}(theta_hat - theta*)|`
/// for one set of statistics. `None` when the denominator vanishes.
pub fn variance_ratio(
    ctx: &ExperimentContext,
    stats: &SufficientStats,
    theta_star: &nalgebra::DVector<f64>,
    mu: Mu,
    lambda: f64,
) -> Result<Option<f64>> {
    let sigma = ctx.spec.sigma();
    let u = stats
        .u
        .as_ref()
        .ok_or_else(|| EioError::invalid("stats", "noise projection U is required"))?;
    let b = bias_leading_term(sigma, ctx.spec.theta_circ(), lambda)?;
    let (_, zeta_tilde) = variance_leading_term(sigma, &stats.sigma_hat, u, &b, lambda)?;
    let theta_hat = ctx.eio_theta(stats, mu, lambda)?;
    Ok(guarded_ratio(
        sigma_norm(sigma, &zeta_tilde),
        sigma_norm(sigma, &(theta_hat - theta_star)),
    ))
}

/// How the ratio-variance study picks `lambda` at each `n`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Grid(Vec<f64>),
    /// Grid-optimal `lambda` (at the study's `mu`) over the plan's lambda grid.
    Optimal,
}

pub fn ratio_variance_experiment(
    ctx: &ExperimentContext,
    plan: &SweepPlan,
    lambdas: &LambdaChoice,
    mu: Mu,
) -> Result<Vec<ExperimentRecord>> {
    plan.validate()?;
    let pop = ctx.population();
    let mut records = Vec::new();
    for &n in &plan.n_grid {
        let lambda_list = match lambdas {
            LambdaChoice::Grid(g) => g.clone(),
            LambdaChoice::Optimal => {
                let mut p = plan.clone();
                p.mu_grid = vec![mu.value()];
                let est = if mu.is_infinite() { Estimator::Plugin } else { Estimator::Eio };
                vec![grid_search(ctx, &p, est, n)?.best().point.lambda.expect("lambda grid")]
            }
        };
        for lambda in lambda_list {
            let hp = Hyperparams { mu, lambda, ..ctx.hyper };
            let theta_star = population_fit(&pop, &hp)?.estimate.theta;
            let ratios = ctx.par_map(plan.replicates, |r| {
                let stats = ctx.replicate_stats(plan, n, r)?;
                variance_ratio(ctx, &stats, &theta_star, mu, lambda)
            })?;
            let kept: Vec<f64> = ratios.into_iter().flatten().collect();
            let (mean, sd, flag) = if kept.is_empty() {
                (None, None, Some(DEGENERATE_FLAG.to_string()))
            } else {
                let (m, s) = mean_sd(&kept);
                (Some(m), Some(s), None)
            };
            records.push(ExperimentRecord {
                experiment: "ratio_variance".into(),
                params: RecordParams {
                    lambda: Some(lambda),
                    mu: Some(mu),
                    ..ctx.params(Some(n))
                },
                statistic_mean: mean,
                statistic_sd: sd,
                replicates: kept.len(),
                flag,
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Joint `(lambda, mu)` grid.
    Eio,
    /// `mu = inf`, lambda grid.
    Plugin,
    /// Tau grid.
    Ridge,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Eio => "eio",
            Estimator::Plugin => "plugin",
            Estimator::Ridge => "ridge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lambda: Option<f64>,
    pub mu: Option<Mu>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub point: GridPoint,
    pub risk_mean: f64,
    pub risk_sd: f64,
    /// Per-replicate excess risks, in replicate order.
    pub risks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub estimator: Estimator,
    pub n: usize,
    pub table: Vec<GridEntry>,
    pub best_index: usize,
}

impl GridSearchResult {
    pub fn best(&self) -> &GridEntry {
        &self.table[self.best_index]
    }

    pub fn records(&self, d: usize) -> Vec<ExperimentRecord> {
        let mut out: Vec<ExperimentRecord> = self
            .table
            .iter()
            .map(|e| entry_record(format!("grid_search[{}]", self.estimator.name()), self.n, d, e))
            .collect();
        out.push(entry_record(
            format!("grid_search[{},best]", self.estimator.name()),
            self.n,
            d,
            self.best(),
        ));
        out
    }
}

fn entry_record(experiment: String, n: usize, d: usize, e: &GridEntry) -> ExperimentRecord {
    ExperimentRecord {
        experiment,
        params: RecordParams {
            n: Some(n),
            d,
            lambda: e.point.lambda,
            mu: e.point.mu,
            tau: e.point.tau,
        },
        statistic_mean: Some(e.risk_mean),
        statistic_sd: Some(e.risk_sd),
        replicates: e.risks.len(),
        flag: None,
    }
}

fn sorted(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

fn grid_points(plan: &SweepPlan, estimator: Estimator) -> Result<Vec<GridPoint>> {
    let nonempty = |name: &'static str, g: &[f64]| {
        if g.is_empty() {
            Err(EioError::invalid(name, "grid must be nonempty"))
        } else {
            Ok(sorted(g))
        }
    };
    Ok(match estimator {
        Estimator::Eio => {
            let mus = nonempty("mu_grid", &plan.mu_grid)?;
            nonempty("lambda_grid", &plan.lambda_grid)?
                .into_iter()
                .flat_map(|l| {
                    mus.iter().map(move |&m| GridPoint {
                        lambda: Some(l),
                        mu: Some(Mu::from(m)),
                        tau: None,
                    })
                })
                .collect()
        }
        Estimator::Plugin => nonempty("lambda_grid", &plan.lambda_grid)?
            .into_iter()
            .map(|l| GridPoint {
                lambda: Some(l),
                mu: Some(Mu::Infinite),
                tau: None,
            })
            .collect(),
        Estimator::Ridge => nonempty("tau_grid", &plan.tau_grid)?
            .into_iter()
            .map(|t| GridPoint {
                lambda: None,
                mu: None,
                tau: Some(t),
            })
            .collect(),
    })
}

fn point_theta(
    ctx: &ExperimentContext,
    stats: &SufficientStats,
    n: usize,
    point: &GridPoint,
) -> Result<nalgebra::DVector<f64>> {
    match (point.tau, point.lambda, point.mu) {
        (Some(tau), _, _) => ridge_fit_stats(stats, n, tau),
        (None, Some(lambda), Some(Mu::Infinite)) => plugin_fit(stats, lambda),
        (None, Some(lambda), Some(mu)) => ctx.eio_theta(stats, mu, lambda),
        _ => Err(EioError::invalid("grid point", "incomplete hyperparameters")),
    }
}

/// Per-replicate risks for every point; `risks[r][g]`.
fn risk_matrix(
    ctx: &ExperimentContext,
    plan: &SweepPlan,
    n: usize,
    points: &[GridPoint],
    stream_offset: u64,
) -> Result<Vec<Vec<f64>>> {
    ctx.par_map(plan.replicates, |r| {
        let data = generate(&ctx.spec, n, RngStream::new(plan.base_seed, r as u64 + stream_offset))?;
        let stats = sufficient_stats(&data, Some(&ctx.spec))?;
        points
            .iter()
            .map(|p| Ok(ctx.risk(&point_theta(ctx, &stats, n, p)?)))
            .collect()
    })
}

fn tabulate(points: Vec<GridPoint>, risks: &[Vec<f64>]) -> Vec<GridEntry> {
    points
        .into_iter()
        .enumerate()
        .map(|(g, point)| {
            let column: Vec<f64> = risks.iter().map(|row| row[g]).collect();
            let (risk_mean, risk_sd) = mean_sd(&column);
            GridEntry {
                point,
                risk_mean,
                risk_sd,
                risks: column,
            }
        })
        .collect()
}

/// First index attaining the minimal mean risk. Points are ordered by
/// increasing regularization, so ties resolve toward the smaller value.
fn argmin(table: &[GridEntry]) -> usize {
    let mut best = 0;
    for (i, e) in table.iter().enumerate() {
        if e.risk_mean < table[best].risk_mean {
            best = i;
        }
    }
    best
}

/// Grid search minimizing mean excess risk over the plan's replicates.
pub fn grid_search(ctx: &ExperimentContext, plan: &SweepPlan, estimator: Estimator, n: usize) -> Result<GridSearchResult> {
    plan.validate()?;
    let points = grid_points(plan, estimator)?;
    let risks = risk_matrix(ctx, plan, n, &points, 0)?;
    let table = tabulate(points, &risks);
    let best_index = argmin(&table);
    Ok(GridSearchResult {
        estimator,
        n,
        table,
        best_index,
    })
}

/// Lambda multipliers applied to `lambda_opt(n)` in the double-descent sweep.
pub const DOUBLE_DESCENT_MULTIPLIERS: [f64; 5] = [1e-6, 1e-4, 1e-2, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleDescentPoint {
    pub n: usize,
    pub multiplier: f64,
    pub lambda: f64,
    pub mu_opt: f64,
    /// Mean and sd of the excess risk at `mu = inf`.
    pub risk_inf: (f64, f64),
    /// Mean and sd of the excess risk at `mu = mu_opt(lambda, n)`.
    pub risk_opt: (f64, f64),
    pub replicates: usize,
}

impl DoubleDescentPoint {
    fn records(&self, d: usize) -> [ExperimentRecord; 2] {
        let make = |policy: &str, mu: Mu, (mean, sd): (f64, f64)| ExperimentRecord {
            experiment: format!("double_descent[mult={},mu={policy}]", self.multiplier),
            params: RecordParams {
                n: Some(self.n),
                d,
                lambda: Some(self.lambda),
                mu: Some(mu),
                tau: None,
            },
            statistic_mean: Some(mean),
            statistic_sd: Some(sd),
            replicates: self.replicates,
            flag: None,
        };
        [
            make("inf", Mu::Infinite, self.risk_inf),
            make("opt", Mu::Finite(self.mu_opt), self.risk_opt),
        ]
    }
}

/// Risk-versus-`n` curves: `lambda_opt(n)` is found at `mu = inf` over the
/// lambda grid; for each multiplier, `mu_opt(lambda, n)` over the mu grid.
pub fn double_descent_sweep(
    ctx: &ExperimentContext,
    plan: &SweepPlan,
    multipliers: &[f64],
) -> Result<Vec<DoubleDescentPoint>> {
    plan.validate()?;
    let mut out = Vec::new();
    for &n in &plan.n_grid {
        let lambda_opt = grid_search(ctx, plan, Estimator::Plugin, n)?
            .best()
            .point
            .lambda
            .expect("plugin grid carries lambda");
        for &mult in multipliers {
            let lambda = mult * lambda_opt;
            let mut p = plan.clone();
            p.lambda_grid = vec![lambda];
            let inf = grid_search(ctx, &p, Estimator::Plugin, n)?;
            let fin = grid_search(ctx, &p, Estimator::Eio, n)?;
            let best = fin.best();
            out.push(DoubleDescentPoint {
                n,
                multiplier: mult,
                lambda,
                mu_opt: best.point.mu.map(Mu::value).expect("eio grid carries mu"),
                risk_inf: (inf.best().risk_mean, inf.best().risk_sd),
                risk_opt: (best.risk_mean, best.risk_sd),
                replicates: plan.replicates,
            });
        }
    }
    Ok(out)
}

pub fn double_descent_records(points: &[DoubleDescentPoint], d: usize) -> Vec<ExperimentRecord> {
    points.iter().flat_map(|p| p.records(d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeComparison {
    pub n: usize,
    pub eio: GridEntry,
    pub ridge: GridEntry,
    /// Mean and sd of the per-replicate `risk_eio - risk_ridge` on common datasets.
    pub paired_diff: (f64, f64),
    /// Same difference with ridge evaluated on independent datasets.
    pub independent_diff: (f64, f64),
}

impl RidgeComparison {
    pub fn records(&self, d: usize) -> Vec<ExperimentRecord> {
        let diff = |name: &str, (m, s): (f64, f64)| ExperimentRecord {
            experiment: name.to_string(),
            params: RecordParams {
                n: Some(self.n),
                d,
                lambda: self.eio.point.lambda,
                mu: self.eio.point.mu,
                tau: self.ridge.point.tau,
            },
            statistic_mean: Some(m),
            statistic_sd: Some(s),
            replicates: self.eio.risks.len(),
            flag: None,
        };
        vec![
            entry_record("ridge_compare[eio]".into(), self.n, d, &self.eio),
            entry_record("ridge_compare[ridge]".into(), self.n, d, &self.ridge),
            diff("ridge_compare[paired_diff]", self.paired_diff),
            diff("ridge_compare[independent_diff]", self.independent_diff),
        ]
    }
}

/// EiO at grid-optimal `(lambda, mu)` against ridge at grid-optimal `tau`,
/// both evaluated on the same replicate datasets.
pub fn ridge_comparison(ctx: &ExperimentContext, plan: &SweepPlan) -> Result<Vec<RidgeComparison>> {
    plan.validate()?;
    let mut out = Vec::new();
    for &n in &plan.n_grid {
        let eio = grid_search(ctx, plan, Estimator::Eio, n)?;
        let ridge = grid_search(ctx, plan, Estimator::Ridge, n)?;
        let eio_best = eio.best().clone();
        let ridge_best = ridge.best().clone();
        let paired: Vec<f64> = eio_best
            .risks
            .iter()
            .zip(&ridge_best.risks)
            .map(|(a, b)| a - b)
            .collect();
        let indep_ridge = risk_matrix(ctx, plan, n, &[ridge_best.point], INDEPENDENT_STREAM_OFFSET)?;
        let independent: Vec<f64> = eio_best
            .risks
            .iter()
            .zip(indep_ridge.iter().map(|row| row[0]))
            .map(|(a, b)| a - b)
            .collect();
        out.push(RidgeComparison {
            n,
            eio: eio_best,
            ridge: ridge_best,
            paired_diff: mean_sd(&paired),
            independent_diff: mean_sd(&independent),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationResult {
    pub records: Vec<ConcentrationRecord>,
    /// Log-log slopes of the medians against `n`, keyed by statistic name.
    pub slopes: Vec<(String, f64)>,
    /// Smallest `C_X` for which the Frobenius 0.9-quantile stays below the
    /// covariance bound at every `n`.
    pub min_c_x: f64,
}

pub const CONCENTRATION_STATS: [&str; 3] = ["sigma_op", "sigma_fro", "u_norm"];

/// Empirical quantiles of `|Sigma_hat - Sigma|_op`, `|Sigma_hat - Sigma|_F` and
/// `|U|` across replicates, next to the matching concentration bounds.
pub fn concentration_montecarlo(ctx: &ExperimentContext, plan: &SweepPlan) -> Result<ConcentrationResult> {
    plan.validate()?;
    if plan.n_grid.is_empty() {
        return Err(EioError::invalid("n_grid", "grid must be nonempty"));
    }
    let sigma = ctx.spec.sigma();
    let d = ctx.spec.dim();
    let id = DMatrix::<f64>::identity(d, d);
    let mut records = Vec::new();
    let mut medians: Vec<[f64; 3]> = Vec::new();
    let mut min_c_x = 0.0_f64;
    for &n in &plan.n_grid {
        let samples = ctx.par_map(plan.replicates, |r| {
            let stats = ctx.replicate_stats(plan, n, r)?;
            let dev = &stats.sigma_hat - sigma;
            let u = stats.u.as_ref().map(|u| u.norm()).unwrap_or(0.0);
            Ok([sym_op_norm(&dev), dev.norm(), u])
        })?;
        let cov = concentration_bound_cov(&id, &id, sigma, &ctx.bounds, n)?;
        let noise = concentration_bound_noise(&id, sigma, &ctx.bounds, n)?;
        let unit_cov = concentration_bound_cov(
            &id,
            &id,
            sigma,
            &BoundConfig {
                c_x: 1.0,
                ..ctx.bounds
            },
            n,
        )?;
        let mut med = [0.0; 3];
        for (k, name) in CONCENTRATION_STATS.iter().enumerate() {
            let column: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let median = quantile(&column, 0.5);
            let q90 = quantile(&column, 0.9);
            med[k] = median;
            let bound = if k == 2 { noise.value } else { cov.value };
            if k == 1 && unit_cov.value > 0.0 {
                min_c_x = min_c_x.max(q90 / unit_cov.value);
            }
            records.push(ConcentrationRecord {
                n: Some(n),
                d,
                stat: name.to_string(),
                median: Some(median),
                q90: Some(q90),
                bound_value: Some(bound),
            });
        }
        medians.push(med);
    }
    let ns: Vec<f64> = plan.n_grid.iter().map(|&n| n as f64).collect();
    let mut slopes = Vec::new();
    if ns.len() >= 2 {
        for (k, name) in CONCENTRATION_STATS.iter().enumerate() {
            let ys: Vec<f64> = medians.iter().map(|m| m[k]).collect();
            if ys.iter().all(|&y| y > 0.0) {
                let slope = log_log_slope(&ns, &ys);
                slopes.push((name.to_string(), slope));
                records.push(ConcentrationRecord {
                    n: None,
                    d,
                    stat: format!("slope:{name}"),
                    median: Some(slope),
                    q90: None,
                    bound_value: None,
                });
            }
        }
    }
    records.push(ConcentrationRecord {
        n: None,
        d,
        stat: "min_c_x".into(),
        median: Some(min_c_x),
        q90: None,
        bound_value: None,
    });
    Ok(ConcentrationResult {
        records,
        slopes,
        min_c_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_grids_match_protocol() {
        let l = default_lambda_grid();
        assert_eq!(l.len(), 80);
        assert_relative_eq!(l[0], 1.3f64.powf(-40.0), max_relative = 1e-13);
        assert_relative_eq!(l[79], 1.3f64.powf(39.0), max_relative = 1e-13);
        let m = default_mu_grid();
        assert_eq!(m.len(), 30);
        assert_eq!(m[0], 1.0);
        assert_eq!(m[29], 536870912.0);
    }

    #[test]
    fn quantile_and_mean() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        let (m, s) = mean_sd(&xs);
        assert_eq!(m, 2.5);
        assert_relative_eq!(s, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert_relative_eq!(log_log_slope(&x, &y), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn argmin_prefers_first_on_ties() {
        let e = |risk: f64| GridEntry {
            point: GridPoint { lambda: None, mu: None, tau: Some(1.0) },
            risk_mean: risk,
            risk_sd: 0.0,
            risks: vec![],
        };
        let table = vec![e(3.0), e(2.0), e(5.0), e(1.0)];
        assert_eq!(argmin(&table), 3);
        let tied = vec![e(4.0), e(2.0), e(2.0)];
        assert_eq!(argmin(&tied), 1);
    }

    #[test]
    fn grid_points_sorted_and_deduplicated() {
        let mut plan = SweepPlan::new(vec![10], 1, 0);
        plan.tau_grid = vec![3.0, 1.0, 3.0];
        let pts = grid_points(&plan, Estimator::Ridge).unwrap();
        assert_eq!(pts.iter().map(|p| p.tau.unwrap()).collect::<Vec<_>>(), vec![1.0, 3.0]);
        plan.lambda_grid = vec![];
        assert!(grid_points(&plan, Estimator::Plugin).is_err());
    }
}
