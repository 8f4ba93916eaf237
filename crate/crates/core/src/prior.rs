//! Prior distributions over θ.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Prior {
    /// `N(mean, cov)`.
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Independent `N(mean_i, var_i)` coordinates.
    DiagonalGaussian { mean: Vec<f64>, var: Vec<f64> },
    /// `N(mean, diag(var))` restricted to the positive orthant. The density
    /// is left unnormalised by the orthant mass.
    TruncatedGaussian { mean: Vec<f64>, var: Vec<f64> },
    /// Half-normal on `(0, ∞)` with the given scale, one coordinate.
    HalfNormal { scale: f64 },
    /// Uniform on a box.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl Prior {
    pub fn standard_normal(dim: usize) -> Self {
        Prior::DiagonalGaussian {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Gaussian { mean, .. }
            | Prior::DiagonalGaussian { mean, .. }
            | Prior::TruncatedGaussian { mean, .. } => mean.len(),
            Prior::HalfNormal { .. } => 1,
            Prior::Uniform { lower, .. } => lower.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        match self {
            Prior::Gaussian { mean, cov } => {
                if cov.len() != mean.len() || cov.iter().any(|r| r.len() != mean.len()) {
                    return bad("prior covariance shape does not match mean");
                }
                self.gaussian_cov().map(|_| ())
            }
            Prior::DiagonalGaussian { mean, var } | Prior::TruncatedGaussian { mean, var } => {
                check_dim(mean.len(), var.len())?;
                if var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("prior variances must be positive");
                }
                Ok(())
            }
            Prior::HalfNormal { scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return bad("half-normal scale must be positive");
                }
                Ok(())
            }
            Prior::Uniform { lower, upper } => {
                check_dim(lower.len(), upper.len())?;
                if lower.iter().zip(upper).any(|(l, u)| !(l < u && l.is_finite() && u.is_finite())) {
                    return bad("uniform prior needs finite lower < upper");
                }
                Ok(())
            }
        }
    }

    fn gaussian_cov(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let Prior::Gaussian { mean, cov } = self else {
            unreachable!()
        };
        let k = mean.len();
        let m = DMatrix::from_fn(k, k, |i, j| cov[i][j]);
        Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite("prior covariance".into()))
    }

    /// Mean and covariance of the underlying Gaussian, when there is one.
    pub fn gaussian_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            Prior::Gaussian { mean, cov } => {
                let k = mean.len();
                Some((DVector::from_column_slice(mean), DMatrix::from_fn(k, k, |i, j| cov[i][j])))
            }
            Prior::DiagonalGaussian { mean, var } | Prior::TruncatedGaussian { mean, var } => Some((
                DVector::from_column_slice(mean),
                DMatrix::from_diagonal(&DVector::from_column_slice(var)),
            )),
            _ => None,
        }
    }

    pub fn is_truncated(&self) -> bool {
        matches!(self, Prior::TruncatedGaussian { .. })
    }

    /// Log-density, `−∞` outside the support.
    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        if theta.len() != self.dim() || theta.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match self {
            Prior::Gaussian { mean, .. } => {
                let ch = match self.gaussian_cov() {
                    Ok(c) => c,
                    Err(_) => return f64::NEG_INFINITY,
                };
                let r = theta - DVector::from_column_slice(mean);
                let z = ch.l().solve_lower_triangular(&r).expect("nonsingular factor");
                let logdet: f64 = ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
                -0.5 * z.norm_squared() - 0.5 * logdet - 0.5 * mean.len() as f64 * LN_2PI
            }
            Prior::DiagonalGaussian { mean, var } => diag_gauss(theta, mean, var),
            Prior::TruncatedGaussian { mean, var } => {
                if theta.iter().any(|v| *v < 0.0) {
                    f64::NEG_INFINITY
                } else {
                    diag_gauss(theta, mean, var)
                }
            }
            Prior::HalfNormal { scale } => {
                let t = theta[0];
                if t <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    std::f64::consts::LN_2 - 0.5 * LN_2PI - scale.ln() - 0.5 * (t / scale).powi(2)
                }
            }
            Prior::Uniform { lower, upper } => {
                let inside = theta.iter().zip(lower.iter().zip(upper)).all(|(t, (l, u))| *t >= *l && *t <= *u);
                if inside {
                    -lower.iter().zip(upper).map(|(l, u)| (u - l).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut z = |n: usize| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        match self {
            Prior::Gaussian { mean, .. } => {
                let l = self.gaussian_cov().expect("validated").l();
                DVector::from_column_slice(mean) + l * z(mean.len())
            }
            Prior::DiagonalGaussian { mean, var } => {
                let e = z(mean.len());
                DVector::from_fn(mean.len(), |i, _| mean[i] + var[i].sqrt() * e[i])
            }
            Prior::TruncatedGaussian { mean, var } => DVector::from_fn(mean.len(), |i, _| loop {
                let v = mean[i] + var[i].sqrt() * rng.sample::<f64, _>(StandardNormal);
                if v >= 0.0 {
                    break v;
                }
            }),
            Prior::HalfNormal { scale } => DVector::from_element(1, (scale * z(1)[0]).abs()),
            Prior::Uniform { lower, upper } => {
                DVector::from_fn(lower.len(), |i, _| rng.random_range(lower[i]..upper[i]))
            }
        }
    }
}

fn diag_gauss(theta: &DVector<f64>, mean: &[f64], var: &[f64]) -> f64 {
    theta
        .iter()
        .zip(mean.iter().zip(var))
        .map(|(t, (m, v))| -0.5 * (t - m).powi(2) / v - 0.5 * (LN_2PI + v.ln()))
        .sum()
}
