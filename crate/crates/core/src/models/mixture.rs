//! Two-component Gaussian mixture `θ N(μ, 1) + (1 − θ) N(−μ, 1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ScoreModel;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// Mixture with known separation `μ` and unknown weight `θ ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMixture {
    pub mu: f64,
}

impl GaussianMixture {
    pub fn new(mu: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidInput("mixture separation must be finite".into()));
        }
        Ok(Self { mu })
    }

    /// Posterior probability of the `+μ` component.
    fn responsibility(&self, x: f64, theta: f64) -> f64 {
        if theta <= 0.0 {
            return 0.0;
        }
        if theta >= 1.0 {
            return 1.0;
        }
        let z = (theta / (1.0 - theta)).ln() + 2.0 * self.mu * x;
        1.0 / (1.0 + (-z).exp())
    }
}

impl ScoreModel for GaussianMixture {
    fn name(&self) -> &str {
        "gaussian-mixture"
    }

    fn data_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        check_dim(1, theta.len())?;
        if (0.0..=1.0).contains(&theta[0]) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("mixture weight {} outside [0,1]", theta[0])))
        }
    }

    fn score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(1, x.len())?;
        self.check_theta(theta)?;
        let w = self.responsibility(x[0], theta[0]);
        Ok(DVector::from_element(1, -x[0] + self.mu * (2.0 * w - 1.0)))
    }

    fn theta_grad_score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(1, x.len())?;
        self.check_theta(theta)?;
        let t = theta[0];
        // ∂w/∂θ = ρ / (θρ + 1 − θ)², with ρ the component density ratio,
        // evaluated on whichever side keeps ρ ≤ 1.
        let e = 2.0 * self.mu * x[0];
        let dw = if e <= 0.0 {
            let rho = e.exp();
            rho / (t * rho + 1.0 - t).powi(2)
        } else {
            let rho = (-e).exp();
            rho / (t + (1.0 - t) * rho).powi(2)
        };
        Ok(DMatrix::from_element(1, 1, 2.0 * self.mu * dw))
    }

    fn has_analytic_theta_grad(&self) -> bool {
        true
    }

    fn log_density(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Option<f64> {
        let t = theta[0];
        let c = -0.5 * (2.0 * std::f64::consts::PI).ln();
        let a = t.ln() - 0.5 * (x[0] - self.mu).powi(2);
        let b = (1.0 - t).ln() - 0.5 * (x[0] + self.mu).powi(2);
        Some(c + crate::numeric::log_sum_exp(&[a, b]))
    }

    fn sample(&self, theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        self.check_theta(theta)?;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let centre = if rng.random::<f64>() < theta[0] { self.mu } else { -self.mu };
                centre + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Dataset::from_scalars(&xs)
    }
}
