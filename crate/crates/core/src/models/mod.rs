//! Statistical models seen only through their scores (or, on binary
//! lattices, through single-site probability ratios).

mod contamination;
mod expfam;
mod ising;
mod mixture;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::numeric::fd_jacobian;

pub use contamination::{contaminate, ContaminationMode, ContaminationSpec};
pub use expfam::{
    make_egm_model, make_kef_model, make_liu_model, make_normal_location, egm_edge_index,
    liu_precision, CustomReparam, EgmStats, ExponentialFamily, KefStats, LiuStats,
    NormalLocationStats, Reparam, SufficientStatistics,
};
pub use ising::IsingModel;
pub use mixture::GaussianMixture;

/// Scores affine in a feature vector: `s(x; θ) = G(x) e(θ) + g(x)`.
/// The KSD loss is then a quadratic in `e` whose coefficients cost one
/// pass over the pairs.
pub trait AffineScore: Send + Sync {
    fn feature_dim(&self) -> usize;
    /// `G(x)` (`d×k`) and `g(x)`.
    fn basis(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>);
    fn features(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// `k×p` Jacobian of the features.
    fn feature_jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64>;
}

/// A parametric model exposed through `∇_x log p_θ(x)` (continuous) or the
/// ratio vector `p_θ(x^{(i)})/p_θ(x) − 1` (binary lattice).
pub trait ScoreModel: Send + Sync {
    fn name(&self) -> &str;
    fn data_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn is_discrete(&self) -> bool {
        false
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        check_dim(self.data_dim(), x.len())
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        check_dim(self.param_dim(), theta.len())?;
        if theta.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("non-finite parameter".into()))
        }
    }

    fn score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// `∂ score / ∂θ` as a `d×p` matrix. Central differences unless the
    /// model overrides it.
    fn theta_grad_score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let mut err = None;
        let jac = fd_jacobian(
            |t| match self.score(x, t) {
                Ok(s) => s,
                Err(e) => {
                    err = Some(e);
                    DVector::zeros(self.data_dim())
                }
            },
            theta,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(jac),
        }
    }

    fn has_analytic_theta_grad(&self) -> bool {
        false
    }

    /// Normalised log-density, when tractable.
    fn log_density(&self, _x: &DVector<f64>, _theta: &DVector<f64>) -> Option<f64> {
        None
    }

    fn exponential_family(&self) -> Option<&ExponentialFamily> {
        None
    }

    fn affine_score(&self) -> Option<&dyn AffineScore> {
        self.exponential_family().map(|ef| ef as &dyn AffineScore)
    }

    /// Draw `n` observations at `theta`.
    fn sample(&self, _theta: &DVector<f64>, _n: usize, _rng: &mut ChaCha8Rng) -> Result<Dataset> {
        Err(Error::Unsupported(format!("{} has no sampler", self.name())))
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        check_dim(self.data_dim(), data.dim())?;
        for x in data.points() {
            self.check_point(x)?;
        }
        Ok(())
    }
}
