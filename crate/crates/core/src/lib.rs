//! Generalised Bayesian inference with a kernel Stein discrepancy loss.
//!
//! A model is seen only through its score `∇_x log p_θ(x)` (or, on binary
//! lattices, single-site probability ratios), so normalising constants
//! never need to be computed. The loss is the V-statistic estimate of
//! `KSD²(P_θ ‖ P_n)` and the generalised posterior is
//! `π(θ) exp(−βn KSD²)`.

pub mod baselines;
pub mod calibration;
pub mod conjugate;
pub mod data;
pub mod error;
pub mod kernel;
pub mod ksd;
pub mod models;
pub mod numeric;
pub mod prior;
pub mod robustness;
pub mod sampler;
pub mod stein;

pub use calibration::{beta_select, minimum_ksd, CalibrationResult, Init, MinKsdOptions};
pub use conjugate::{affine_quadratic, conjugate_update, quadratic_coeffs, GaussianPosterior, QuadraticLoss};
pub use data::Dataset;
pub use error::{Error, Result};
pub use kernel::{ImqBase, WeightedKernel, WeightingFunction};
pub use ksd::{ksd_grad_theta, ksd_hess_theta, ksd_vstat, GramCache, KsdValue};
pub use models::{AffineScore, ContaminationSpec, ScoreModel};
pub use prior::Prior;
pub use sampler::{grid_quadrature, rwm_sample, Chain, GeneralisedTarget, RwmOptions};
pub use stein::{BinaryLatticeKernel, SteinKernel};
