//! Synthetic samplers for the sine-feature and Gaussian designs.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{EioError, Result};
use crate::linalg::symmetrize;
use crate::model::{Dataset, DesignKind, SufficientStats, ValidatedSpec};

/// Identifies an independent random stream: a `(seed, stream_id)` pair always
/// produces the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn uniform_pm1<R: Rng>(rng: &mut R) -> f64 {
    2.0 * rng.random::<f64>() - 1.0
}

fn responses(
    x: &DMatrix<f64>,
    theta: &DVector<f64>,
    noise: &DVector<f64>,
) -> DVector<f64> {
    x.tr_mul(theta) + noise
}

/// Samples `n` points of the sine-feature design
/// `X_k = k^{-1/8} sin(pi k xi_k)`, `xi_k ~ Uniform[-1, 1]` i.i.d., with
/// Gaussian noise.
pub fn gen_sine_design(spec: &ValidatedSpec, n: usize, stream: RngStream) -> Result<Dataset> {
    if spec.kind() != DesignKind::SineFeature {
        return Err(EioError::KindMismatch {
            expected: DesignKind::SineFeature.name(),
            got: spec.kind().name(),
        });
    }
    if n == 0 {
        return Err(EioError::invalid("n", "sample size must be >= 1"));
    }
    let d = spec.dim();
    let scale: Vec<f64> = (1..=d).map(|k| (k as f64).powf(-0.125)).collect();
    let freq: Vec<f64> = (1..=d).map(|k| PI * k as f64).collect();
    let mut rng = stream.rng();
    let mut x = DMatrix::zeros(d, n);
    let mut eps = DVector::zeros(n);
    for i in 0..n {
        let mut col = x.column_mut(i);
        for k in 0..d {
            col[k] = scale[k] * (freq[k] * uniform_pm1(&mut rng)).sin();
        }
        let g: f64 = rng.sample(StandardNormal);
        eps[i] = spec.noise_std() * g;
    }
    let y = responses(&x, spec.theta_circ(), &eps);
    Dataset::with_noise(x, y, eps)
}

/// Samples `n` points `X_i = V diag(sqrt(sigma)) g_i`, `g_i ~ N(0, I)`.
///
/// Accepts both Gaussian-family kinds (spectrum or explicit covariance).
pub fn gen_gaussian_design(spec: &ValidatedSpec, n: usize, stream: RngStream) -> Result<Dataset> {
    if spec.kind() == DesignKind::SineFeature {
        return Err(EioError::KindMismatch {
            expected: DesignKind::GaussianSpectrum.name(),
            got: spec.kind().name(),
        });
    }
    if n == 0 {
        return Err(EioError::invalid("n", "sample size must be >= 1"));
    }
    let d = spec.dim();
    let roots: Vec<f64> = spec.spectrum().iter().map(|s| s.sqrt()).collect();
    let mut rng = stream.rng();
    let mut g = DMatrix::zeros(d, n);
    let mut eps = DVector::zeros(n);
    for i in 0..n {
        for k in 0..d {
            let v: f64 = rng.sample(StandardNormal);
            g[(k, i)] = roots[k] * v;
        }
        let e: f64 = rng.sample(StandardNormal);
        eps[i] = spec.noise_std() * e;
    }
    let x = match spec.eigvecs() {
        Some(v) => v * g,
        None => g,
    };
    let y = responses(&x, spec.theta_circ(), &eps);
    Dataset::with_noise(x, y, eps)
}

/// Dispatches to the sampler matching the design kind.
pub fn generate(spec: &ValidatedSpec, n: usize, stream: RngStream) -> Result<Dataset> {
    match spec.kind() {
        DesignKind::SineFeature => gen_sine_design(spec, n, stream),
        DesignKind::GaussianSpectrum | DesignKind::ExplicitCovariance => {
            gen_gaussian_design(spec, n, stream)
        }
    }
}

pub fn true_covariance(spec: &ValidatedSpec) -> DMatrix<f64> {
    spec.sigma().clone()
}

/// `Z = X Y / n`, `Sigma_hat = X X^T / n` and `U`.
///
/// `U` is `X eps / n` when the dataset carries its noise, otherwise
/// `Z - Sigma_hat theta_circ` when a spec is supplied.
pub fn sufficient_stats(data: &Dataset, spec: Option<&ValidatedSpec>) -> Result<SufficientStats> {
    let n = data.n() as f64;
    let x = data.x();
    if let Some(s) = spec {
        if s.dim() != data.dim() {
            return Err(EioError::DimensionMismatch {
                what: "dataset dim",
                expected: s.dim(),
                got: data.dim(),
            });
        }
    }
    let z = x * data.y() / n;
    let sigma_hat = symmetrize(&(x * x.transpose() / n));
    let u = match (data.noise(), spec) {
        (Some(eps), _) => Some(x * eps / n),
        (None, Some(s)) => Some(&z - &sigma_hat * s.theta_circ()),
        (None, None) => None,
    };
    SufficientStats::new(z, sigma_hat, u)
}

/// Writes a dataset as CSV with header `i,x_1..x_d,y`.
pub fn write_dataset_csv<W: Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    let d = data.dim();
    let mut header = String::from("i");
    for k in 1..=d {
        header.push_str(&format!(",x_{k}"));
    }
    header.push_str(",y\n");
    out.write_all(header.as_bytes())?;
    for i in 0..data.n() {
        let mut line = format!("{}", i + 1);
        for k in 0..d {
            line.push(',');
            line.push_str(&crate::io::fmt_float(data.x()[(k, i)]));
        }
        line.push(',');
        line.push_str(&crate::io::fmt_float(data.y()[i]));
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_spec, DesignSpec};
    use approx::assert_relative_eq;

    fn sample_var(v: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = v.clone().count() as f64;
        let mean = v.clone().sum::<f64>() / n;
        v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn sine_coordinate_variance_matches_integral() {
        // Var(sin(pi xi)) = 1/2 for xi ~ Uniform[-1, 1].
        let spec = validate_spec(DesignSpec::sine(1, DVector::from_element(1, 1.0), 0.0)).unwrap();
        let data = gen_sine_design(&spec, 1_000_000, RngStream::new(7, 0)).unwrap();
        let var = sample_var(data.x().row(0).iter().copied());
        assert!((var - 0.5).abs() <= 0.005, "variance {var}");
    }

    #[test]
    fn sine_per_coordinate_variances_approach_spectrum() {
        let spec = validate_spec(DesignSpec::sine_default(200)).unwrap();
        let data = gen_sine_design(&spec, 500, RngStream::new(1, 3)).unwrap();
        let stats = sufficient_stats(&data, Some(&spec)).unwrap();
        // mean-zero coordinates: diag(Sigma_hat) estimates the variances.
        // Var(X_k^2)/n <= 0.25/500, so 5 sd is 0.11.
        for k in 0..200 {
            let err = (stats.sigma_hat[(k, k)] - spec.spectrum()[k]).abs();
            assert!(err < 0.11, "k={k} err={err}");
        }
    }

    #[test]
    fn noiseless_responses_are_exact() {
        let spec = validate_spec(DesignSpec::sine(4, DVector::from_element(4, 0.5), 0.0)).unwrap();
        let data = gen_sine_design(&spec, 30, RngStream::new(0, 0)).unwrap();
        let expected = data.x().tr_mul(spec.theta_circ());
        assert_eq!(data.y(), &expected);
    }

    #[test]
    fn gaussian_isotropic_covariance() {
        let spec = validate_spec(DesignSpec::gaussian(vec![1.0; 3], None, DVector::zeros(3), 1.0)).unwrap();
        let data = gen_gaussian_design(&spec, 100_000, RngStream::new(3, 1)).unwrap();
        let stats = sufficient_stats(&data, None).unwrap();
        let dev = crate::linalg::sym_op_norm(&(stats.sigma_hat - DMatrix::identity(3, 3)));
        assert!(dev < 0.05, "operator deviation {dev}");
    }

    #[test]
    fn gaussian_response_variance() {
        // Var(Y) = theta^T Sigma theta = 4.
        let spec = validate_spec(DesignSpec::gaussian(
            vec![4.0, 1.0],
            None,
            DVector::from_vec(vec![1.0, 0.0]),
            0.0,
        ))
        .unwrap();
        let data = gen_gaussian_design(&spec, 10_000, RngStream::new(11, 0)).unwrap();
        let var = sample_var(data.y().iter().copied());
        assert!((var - 4.0).abs() <= 0.2, "variance {var}");
    }

    #[test]
    fn same_stream_same_dataset() {
        let spec = validate_spec(DesignSpec::gaussian(vec![2.0, 1.0], None, DVector::from_vec(vec![1.0, 1.0]), 0.5)).unwrap();
        let a = gen_gaussian_design(&spec, 50, RngStream::new(5, 9)).unwrap();
        let b = gen_gaussian_design(&spec, 50, RngStream::new(5, 9)).unwrap();
        let c = gen_gaussian_design(&spec, 50, RngStream::new(5, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let sine = validate_spec(DesignSpec::sine_default(3)).unwrap();
        let gauss = validate_spec(DesignSpec::gaussian(vec![1.0; 3], None, DVector::zeros(3), 0.0)).unwrap();
        assert!(matches!(gen_gaussian_design(&sine, 5, RngStream::new(0, 0)), Err(EioError::KindMismatch { .. })));
        assert!(matches!(gen_sine_design(&gauss, 5, RngStream::new(0, 0)), Err(EioError::KindMismatch { .. })));
    }

    #[test]
    fn true_covariance_examples() {
        let sine = validate_spec(DesignSpec::sine_default(3)).unwrap();
        let s = true_covariance(&sine);
        assert_eq!(s[(0, 0)], 0.5);
        assert_eq!(s[(1, 1)], 2f64.powf(-0.25) / 2.0);
        assert_eq!(s[(2, 2)], 3f64.powf(-0.25) / 2.0);
        assert_eq!(s[(0, 1)], 0.0);

        let iso = validate_spec(DesignSpec::gaussian(vec![1.0; 3], None, DVector::zeros(3), 0.0)).unwrap();
        assert_eq!(true_covariance(&iso), DMatrix::identity(3, 3));

        // direct multiply oracle: R diag(2, 1) R^T
        let (sn, cs) = std::f64::consts::FRAC_PI_4.sin_cos();
        let r = DMatrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
        let rot = validate_spec(DesignSpec::gaussian(vec![2.0, 1.0], Some(r.clone()), DVector::zeros(2), 0.0)).unwrap();
        let s = true_covariance(&rot);
        let mut oracle = [[0.0; 2]; 2];
        let diag = [2.0, 1.0];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    oracle[i][j] += r[(i, k)] * diag[k] * r[(j, k)];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(s[(i, j)], oracle[i][j], epsilon = 1e-14);
            }
        }
        assert_relative_eq!(s.trace(), 3.0, epsilon = 1e-12);
        assert_relative_eq!(s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn single_sample_stats() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let data = Dataset::new(x, DVector::from_element(1, 2.0)).unwrap();
        let stats = sufficient_stats(&data, None).unwrap();
        assert_eq!(stats.z, DVector::from_vec(vec![2.0, 0.0]));
        assert_eq!(stats.sigma_hat, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(stats.u.is_none());
    }

    #[test]
    fn noiseless_u_vanishes() {
        let spec = validate_spec(DesignSpec::sine(5, DVector::from_element(5, 1.0), 0.0)).unwrap();
        let data = gen_sine_design(&spec, 40, RngStream::new(2, 2)).unwrap();
        let stats = sufficient_stats(&data, Some(&spec)).unwrap();
        assert!(stats.u.unwrap().amax() <= 1e-12);
    }

    #[test]
    fn z_matches_naive_summation() {
        let spec = validate_spec(DesignSpec::gaussian(vec![2.0, 1.0, 0.5], None, DVector::from_vec(vec![1.0, -1.0, 0.3]), 0.2)).unwrap();
        let data = gen_gaussian_design(&spec, 5, RngStream::new(4, 4)).unwrap();
        let stats = sufficient_stats(&data, Some(&spec)).unwrap();
        for k in 0..3 {
            let mut acc = 0.0;
            for i in 0..5 {
                acc += data.x()[(k, i)] * data.y()[i];
            }
            assert_relative_eq!(stats.z[k], acc / 5.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn stats_identity_with_recorded_noise() {
        let spec = validate_spec(DesignSpec::sine_default(20)).unwrap();
        let data = gen_sine_design(&spec, 100, RngStream::new(8, 1)).unwrap();
        let stats = sufficient_stats(&data, Some(&spec)).unwrap();
        let recon = &stats.sigma_hat * spec.theta_circ() + stats.u.as_ref().unwrap();
        assert!((&recon - &stats.z).norm() <= 1e-10 * stats.z.norm());
        assert_eq!(stats.sigma_hat, stats.sigma_hat.transpose());
    }

    #[test]
    fn dataset_csv_layout() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        let data = Dataset::new(x, DVector::from_element(1, 2.0)).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i,x_1,x_2,y"));
        assert_eq!(
            lines.next(),
            Some("1,1.0000000000000000e0,5.0000000000000000e-1,2.0000000000000000e0")
        );
    }
}
