//! Reference generalised posteriors for the normal location model
//! `N(θ, 1)` with a `N(0, 1)` prior: the power posterior with its
//! calibrated exponent, and MMD-Bayes with kernel `exp(−(x − y)²)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::numeric::pairwise_sum;
use crate::prior::Prior;
use crate::sampler::GeneralisedTarget;

fn scalars(data: &Dataset) -> Result<Vec<f64>> {
    check_dim(1, data.dim())?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    Ok(data.points().iter().map(|p| p[0]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPosterior {
    pub beta: f64,
    pub mean: f64,
    pub var: f64,
}

/// `β = {(2 + x̄²) / (1 + n⁻¹Σx²)}^{1/2}`; the posterior is
/// `N(βn x̄ / (1 + βn), 1 / (1 + βn))`.
pub fn power_posterior(data: &Dataset) -> Result<PowerPosterior> {
    let xs = scalars(data)?;
    let n = xs.len() as f64;
    let xbar = pairwise_sum(&xs) / n;
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let m2 = pairwise_sum(&sq) / n;
    let beta = ((2.0 + xbar * xbar) / (1.0 + m2)).sqrt();
    Ok(PowerPosterior {
        beta,
        mean: beta * n * xbar / (1.0 + beta * n),
        var: 1.0 / (1.0 + beta * n),
    })
}

/// `MMD²(N(θ,1), P_n)` for `k(x, y) = exp(−(x − y)²)`:
/// `1/√5 − (2/n) Σ 3^{−1/2} exp(−(θ − x_i)²/3) + n⁻² Σ_ij exp(−(x_i − x_j)²)`.
pub fn mmd_squared(theta: f64, xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let cross: Vec<f64> = xs.iter().map(|x| (-(theta - x).powi(2) / 3.0).exp()).collect();
    let gram: Vec<f64> = xs
        .iter()
        .flat_map(|a| xs.iter().map(move |b| (-(a - b).powi(2)).exp()))
        .collect();
    5f64.sqrt().recip() - 2.0 / (n * 3f64.sqrt()) * pairwise_sum(&cross) + pairwise_sum(&gram) / (n * n)
}

/// `N(0,1)` prior times `exp(−βn MMD²)`.
pub fn mmd_bayes_target(data: &Dataset, beta: f64) -> Result<GeneralisedTarget<'static>> {
    let xs = scalars(data)?;
    let n = xs.len();
    GeneralisedTarget::new(
        Prior::standard_normal(1),
        Box::new(move |t: &DVector<f64>| Ok(mmd_squared(t[0], &xs))),
        beta,
        n,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gauss_hermite_normal;
    use crate::sampler::grid_quadrature;
    use approx::assert_relative_eq;

    #[test]
    fn idealised_moments_give_unit_beta() {
        let data = Dataset::from_scalars(&[-1.0, 1.0]).unwrap();
        let p = power_posterior(&data).unwrap();
        assert_relative_eq!(p.beta, 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.mean, 0.0);
        assert_relative_eq!(p.var, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn mmd_matches_gauss_hermite_expectations() {
        let (z, w) = gauss_hermite_normal(60);
        let xs = [0.3, -1.2, 2.0];
        for theta in [-1.0, 0.0, 0.7, 3.0] {
            let mut e_pp = 0.0;
            for (za, wa) in z.iter().zip(&w) {
                for (zb, wb) in z.iter().zip(&w) {
                    e_pp += wa * wb * (-(za - zb).powi(2)).exp();
                }
            }
            let e_pn: f64 = xs
                .iter()
                .map(|x| z.iter().zip(&w).map(|(z, w)| w * (-(theta + z - x).powi(2)).exp()).sum::<f64>())
                .sum::<f64>()
                / 3.0;
            let e_nn: f64 = xs.iter().flat_map(|a| xs.iter().map(move |b| (-(a - b).powi(2)).exp())).sum::<f64>() / 9.0;
            assert_relative_eq!(mmd_squared(theta, &xs), e_pp - 2.0 * e_pn + e_nn, epsilon = 1e-10);
        }
        // single datum at the origin
        let one = mmd_squared(0.0, &[0.0]);
        assert_relative_eq!(one, 5f64.sqrt().recip() - 2.0 / 3f64.sqrt() + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mmd_posterior_is_symmetric_for_symmetric_data() {
        let data = Dataset::from_scalars(&[-2.0, -0.5, 0.5, 2.0]).unwrap();
        let t = mmd_bayes_target(&data, 1.0).unwrap();
        let g = grid_quadrature(&t, &[(-8.0, 8.0)], 801).unwrap();
        let d = &g.density;
        for i in 0..d.len() {
            assert_relative_eq!(d[i], d[d.len() - 1 - i], max_relative = 1e-12);
        }
        assert!(g.mean[0].abs() < 1e-12);
    }
}
