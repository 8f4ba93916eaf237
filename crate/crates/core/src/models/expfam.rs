//! Exponential families `p_θ(x) ∝ exp(η(θ)·t(x) + b(x))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::{AffineScore, ScoreModel};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// Sufficient statistic `t: R^d → R^k` and base term `b: R^d → R`, with
/// their x-gradients.
pub trait SufficientStatistics: Send + Sync {
    fn data_dim(&self) -> usize;
    fn stat_dim(&self) -> usize;
    fn t(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `d×k` matrix with `(∇t)_{ak} = ∂t_k/∂x_a`.
    fn grad_t(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn b(&self, x: &DVector<f64>) -> f64;
    fn grad_b(&self, x: &DVector<f64>) -> DVector<f64>;
}

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type HessFn = dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;
type SamplerFn = dyn Fn(&DVector<f64>, usize, &mut ChaCha8Rng) -> Result<Dataset> + Send + Sync;
type LogPartitionFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// A non-identity map `θ ↦ η(θ)`.
#[derive(Clone)]
pub struct CustomReparam {
    pub param_dim: usize,
    pub eta: Arc<VecFn>,
    /// `k×p` Jacobian.
    pub jacobian: Arc<MatFn>,
    /// `p×p` Hessian of each `η_k`; finite differences are used when absent.
    pub hessians: Option<Arc<HessFn>>,
}

#[derive(Clone)]
pub enum Reparam {
    Natural,
    Custom(CustomReparam),
}

/// An exponential-family model with optional exact sampler and log-partition.
#[derive(Clone)]
pub struct ExponentialFamily {
    name: String,
    stats: Arc<dyn SufficientStatistics>,
    reparam: Reparam,
    prior_variances: Option<DVector<f64>>,
    log_partition: Option<Arc<LogPartitionFn>>,
    sampler: Option<Arc<SamplerFn>>,
}

impl fmt::Debug for ExponentialFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExponentialFamily")
            .field("name", &self.name)
            .field("d", &self.stats.data_dim())
            .field("k", &self.stats.stat_dim())
            .field("natural", &self.is_natural())
            .finish()
    }
}

impl ExponentialFamily {
    pub fn new(name: impl Into<String>, stats: Arc<dyn SufficientStatistics>) -> Self {
        Self {
            name: name.into(),
            stats,
            reparam: Reparam::Natural,
            prior_variances: None,
            log_partition: None,
            sampler: None,
        }
    }

    pub fn with_reparam(mut self, reparam: Reparam) -> Self {
        self.reparam = reparam;
        self
    }

    pub fn with_prior_variances(mut self, v: DVector<f64>) -> Self {
        self.prior_variances = Some(v);
        self
    }

    pub fn with_log_partition(mut self, a: Arc<LogPartitionFn>) -> Self {
        self.log_partition = Some(a);
        self
    }

    pub fn with_sampler(mut self, s: Arc<SamplerFn>) -> Self {
        self.sampler = Some(s);
        self
    }

    pub fn stats(&self) -> &dyn SufficientStatistics {
        self.stats.as_ref()
    }

    pub fn stat_dim(&self) -> usize {
        self.stats.stat_dim()
    }

    pub fn is_natural(&self) -> bool {
        matches!(self.reparam, Reparam::Natural)
    }

    pub fn reparam(&self) -> &Reparam {
        &self.reparam
    }

    /// Recommended prior variances, when the model defines them.
    pub fn prior_variances(&self) -> Option<&DVector<f64>> {
        self.prior_variances.as_ref()
    }

    pub fn eta(&self, theta: &DVector<f64>) -> DVector<f64> {
        match &self.reparam {
            Reparam::Natural => theta.clone(),
            Reparam::Custom(c) => (c.eta)(theta),
        }
    }

    /// `k×p` Jacobian of η.
    pub fn eta_jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        match &self.reparam {
            Reparam::Natural => DMatrix::identity(theta.len(), theta.len()),
            Reparam::Custom(c) => (c.jacobian)(theta),
        }
    }

    /// Hessians of each η component; `None` for natural families (all zero).
    pub fn eta_hessians(&self, theta: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        match &self.reparam {
            Reparam::Natural => None,
            Reparam::Custom(c) => Some(match &c.hessians {
                Some(h) => h(theta),
                None => {
                    let k = self.stat_dim();
                    let p = theta.len();
                    let mut out = vec![DMatrix::zeros(p, p); k];
                    for h in 0..p {
                        let step = crate::numeric::fd_step(theta[h]);
                        let mut tp = theta.clone();
                        let mut tm = theta.clone();
                        tp[h] += step;
                        tm[h] -= step;
                        let d = ((c.jacobian)(&tp) - (c.jacobian)(&tm)) / (2.0 * step);
                        for (kk, m) in out.iter_mut().enumerate() {
                            for l in 0..p {
                                m[(h, l)] = d[(kk, l)];
                            }
                        }
                    }
                    out.iter().map(crate::numeric::symmetrize).collect()
                }
            }),
        }
    }
}

impl AffineScore for ExponentialFamily {
    fn feature_dim(&self) -> usize {
        self.stat_dim()
    }

    fn basis(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        (self.stats.grad_t(x), self.stats.grad_b(x))
    }

    fn features(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.eta(theta)
    }

    fn feature_jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        self.eta_jacobian(theta)
    }
}

impl ScoreModel for ExponentialFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn data_dim(&self) -> usize {
        self.stats.data_dim()
    }

    fn param_dim(&self) -> usize {
        match &self.reparam {
            Reparam::Natural => self.stats.stat_dim(),
            Reparam::Custom(c) => c.param_dim,
        }
    }

    fn score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.data_dim(), x.len())?;
        self.check_theta(theta)?;
        Ok(self.stats.grad_t(x) * self.eta(theta) + self.stats.grad_b(x))
    }

    fn theta_grad_score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.data_dim(), x.len())?;
        self.check_theta(theta)?;
        Ok(self.stats.grad_t(x) * self.eta_jacobian(theta))
    }

    fn has_analytic_theta_grad(&self) -> bool {
        true
    }

    fn log_density(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Option<f64> {
        let a = self.log_partition.as_ref()?;
        Some(self.eta(theta).dot(&self.stats.t(x)) + self.stats.b(x) - a(theta))
    }

    fn exponential_family(&self) -> Option<&ExponentialFamily> {
        Some(self)
    }

    fn sample(&self, theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        self.check_theta(theta)?;
        match &self.sampler {
            Some(s) => s(theta, n, rng),
            None => Err(Error::Unsupported(format!("{} has no exact sampler", self.name))),
        }
    }
}

/// `N(θ, 1)`: `t(x) = x`, `b(x) = −x²/2`.
#[derive(Debug, Clone, Copy)]
pub struct NormalLocationStats;

impl SufficientStatistics for NormalLocationStats {
    fn data_dim(&self) -> usize {
        1
    }
    fn stat_dim(&self) -> usize {
        1
    }
    fn t(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn grad_t(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn b(&self, x: &DVector<f64>) -> f64 {
        -0.5 * x[0] * x[0]
    }
    fn grad_b(&self, x: &DVector<f64>) -> DVector<f64> {
        -x
    }
}

pub fn make_normal_location() -> ExponentialFamily {
    let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    ExponentialFamily::new("normal-location", Arc::new(NormalLocationStats))
        .with_log_partition(Arc::new(move |t: &DVector<f64>| 0.5 * t[0] * t[0] + ln_sqrt_2pi))
        .with_sampler(Arc::new(|theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng| {
            let xs: Vec<f64> = (0..n)
                .map(|_| theta[0] + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Dataset::from_scalars(&xs)
        }))
}

/// Precision matrix `P` with `b(x) = −½ xᵀPx` for the five-dimensional
/// tanh model.
pub fn liu_precision() -> DMatrix<f64> {
    let mut p = DMatrix::identity(5, 5);
    p[(0, 1)] = -0.6;
    p[(1, 0)] = -0.6;
    for i in 2..5 {
        p[(0, i)] = -0.2;
        p[(i, 0)] = -0.2;
    }
    p
}

/// `t(x) = (tanh x₄, tanh x₅)` with a Gaussian base term.
#[derive(Debug, Clone)]
pub struct LiuStats {
    precision: DMatrix<f64>,
}

impl Default for LiuStats {
    fn default() -> Self {
        Self {
            precision: liu_precision(),
        }
    }
}

impl SufficientStatistics for LiuStats {
    fn data_dim(&self) -> usize {
        5
    }
    fn stat_dim(&self) -> usize {
        2
    }
    fn t(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[3].tanh(), x[4].tanh()])
    }
    fn grad_t(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(5, 2);
        g[(3, 0)] = 1.0 - x[3].tanh().powi(2);
        g[(4, 1)] = 1.0 - x[4].tanh().powi(2);
        g
    }
    fn b(&self, x: &DVector<f64>) -> f64 {
        -0.5 * x.dot(&(&self.precision * x))
    }
    fn grad_b(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * x)
    }
}

/// Five-dimensional tanh model; exact sampling only at `θ = 0`, where the
/// model is `N(0, P⁻¹)`.
pub fn make_liu_model() -> ExponentialFamily {
    let stats = LiuStats::default();
    let chol = Cholesky::new(stats.precision.clone()).expect("tanh model precision is SPD");
    let l = chol.l();
    ExponentialFamily::new("liu", Arc::new(stats)).with_sampler(Arc::new(
        move |theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng| {
            if theta.iter().any(|&t| t != 0.0) {
                return Err(Error::Unsupported(
                    "exact sampling of the tanh model is only available at theta = 0".into(),
                ));
            }
            // P = L Lᵀ, so x = L⁻ᵀ z has covariance P⁻¹.
            let pts = (0..n)
                .map(|_| {
                    let z = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
                    l.transpose()
                        .solve_upper_triangular(&z)
                        .expect("triangular factor is nonsingular")
                })
                .collect();
            Dataset::new(pts)
        },
    ))
}

/// Kernel exponential family basis `φ_{i+1}(x) = xⁱ/√(i!) e^{−x²/2}` with
/// reference density `N(0, 3²)`.
#[derive(Debug, Clone, Copy)]
pub struct KefStats {
    p: usize,
}

impl KefStats {
    /// `c_i = xⁱ/√(i!)` for `i = 0..=m`.
    fn scaled_powers(x: f64, m: usize) -> Vec<f64> {
        let mut c = Vec::with_capacity(m + 1);
        c.push(1.0);
        for i in 1..=m {
            c.push(c[i - 1] * x / (i as f64).sqrt());
        }
        c
    }
}

impl SufficientStatistics for KefStats {
    fn data_dim(&self) -> usize {
        1
    }
    fn stat_dim(&self) -> usize {
        self.p
    }
    fn t(&self, x: &DVector<f64>) -> DVector<f64> {
        let e = (-0.5 * x[0] * x[0]).exp();
        let c = Self::scaled_powers(x[0], self.p);
        DVector::from_fn(self.p, |i, _| c[i] * e)
    }
    fn grad_t(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let e = (-0.5 * x[0] * x[0]).exp();
        let c = Self::scaled_powers(x[0], self.p);
        DMatrix::from_fn(1, self.p, |_, i| {
            let lower = if i == 0 { 0.0 } else { (i as f64).sqrt() * c[i - 1] };
            e * (lower - ((i + 1) as f64).sqrt() * c[i + 1])
        })
    }
    fn b(&self, x: &DVector<f64>) -> f64 {
        -x[0] * x[0] / 18.0
    }
    fn grad_b(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, -x[0] / 9.0)
    }
}

/// Kernel exponential family with `p` basis functions, `1 ≤ p ≤ 30`.
/// Prior variances `100 i^{-1.1}` are attached as metadata.
pub fn make_kef_model(p: usize) -> Result<ExponentialFamily> {
    if !(1..=30).contains(&p) {
        return Err(Error::InvalidInput(format!("basis count must lie in 1..=30, got {p}")));
    }
    let var = DVector::from_fn(p, |i, _| 100.0 * ((i + 1) as f64).powf(-1.1));
    Ok(ExponentialFamily::new("kef", Arc::new(KefStats { p })).with_prior_variances(var))
}

/// Position of the pair `(i, j)`, `i < j`, in the stacked EGM parameter.
pub fn egm_edge_index(d: usize, i: usize, j: usize) -> usize {
    assert!(i < j && j < d, "edge indices must satisfy i < j < d");
    d + i * (2 * d - i - 1) / 2 + (j - i - 1)
}

/// Exponential graphical model in log coordinates `x = log w`:
/// `t = (−e^{x_i}; −e^{x_i + x_j})`, `b(x) = Σ x_i` (change-of-variables term).
#[derive(Debug, Clone, Copy)]
pub struct EgmStats {
    d: usize,
}

impl EgmStats {
    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.d).flat_map(move |i| (i + 1..self.d).map(move |j| (i, j)))
    }
}

impl SufficientStatistics for EgmStats {
    fn data_dim(&self) -> usize {
        self.d
    }
    fn stat_dim(&self) -> usize {
        self.d * (self.d + 1) / 2
    }
    fn t(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut t = DVector::zeros(self.stat_dim());
        for i in 0..self.d {
            t[i] = -x[i].exp();
        }
        for (k, (i, j)) in self.pairs().enumerate() {
            t[self.d + k] = -(x[i] + x[j]).exp();
        }
        t
    }
    fn grad_t(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.d, self.stat_dim());
        for i in 0..self.d {
            g[(i, i)] = -x[i].exp();
        }
        for (k, (i, j)) in self.pairs().enumerate() {
            let e = -(x[i] + x[j]).exp();
            g[(i, self.d + k)] = e;
            g[(j, self.d + k)] = e;
        }
        g
    }
    fn b(&self, x: &DVector<f64>) -> f64 {
        x.sum()
    }
    fn grad_b(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(self.d, 1.0)
    }
}

/// Gibbs settings for the EGM sampler.
const EGM_BURN_IN: usize = 1000;
const EGM_THIN: usize = 10;

/// Exponential graphical model on `d ≥ 2` nodes with a Gibbs sampler in
/// the original positive coordinates (each `w_i` given the rest is
/// exponential).
pub fn make_egm_model(d: usize) -> Result<ExponentialFamily> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("graphical model needs d >= 2, got {d}")));
    }
    let stats = EgmStats { d };
    Ok(ExponentialFamily::new("egm", Arc::new(stats)).with_sampler(Arc::new(
        move |theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng| {
            if (0..d).any(|i| theta[i] <= 0.0) || (d..theta.len()).any(|k| theta[k] < 0.0) {
                return Err(Error::InvalidInput(
                    "graphical model needs positive node and non-negative edge parameters".into(),
                ));
            }
            let edge = |i: usize, j: usize| {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                theta[egm_edge_index(d, a, b)]
            };
            let mut w = DVector::from_fn(d, |i, _| 1.0 / theta[i]);
            let sweep = |w: &mut DVector<f64>, rng: &mut ChaCha8Rng| {
                for i in 0..d {
                    let rate = theta[i] + (0..d).filter(|&j| j != i).map(|j| edge(i, j) * w[j]).sum::<f64>();
                    w[i] = Exp::new(rate).expect("positive rate").sample(rng).max(f64::MIN_POSITIVE);
                }
            };
            for _ in 0..EGM_BURN_IN {
                sweep(&mut w, rng);
            }
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                for _ in 0..EGM_THIN {
                    sweep(&mut w, rng);
                }
                pts.push(w.map(f64::ln));
            }
            Dataset::new(pts)
        },
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn fd_check(stats: &dyn SufficientStatistics, x: &DVector<f64>) -> f64 {
        let h = 1e-6;
        let g = stats.grad_t(x);
        let gb = stats.grad_b(x);
        let mut worst: f64 = 0.0;
        for a in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += h;
            xm[a] -= h;
            let dt = (stats.t(&xp) - stats.t(&xm)) / (2.0 * h);
            for k in 0..dt.len() {
                worst = worst.max((dt[k] - g[(a, k)]).abs() / dt[k].abs().max(1e-3));
            }
            let db = (stats.b(&xp) - stats.b(&xm)) / (2.0 * h);
            worst = worst.max((db - gb[a]).abs() / db.abs().max(1e-3));
        }
        worst
    }

    #[test]
    fn normal_location_examples() {
        let m = make_normal_location();
        assert_eq!(m.score(&v(&[0.0]), &v(&[1.0])).unwrap()[0], 1.0);
        assert_eq!(m.stats().t(&v(&[3.0]))[0], 3.0);
        assert_eq!(m.stats().grad_b(&v(&[3.0]))[0], -3.0);
        for x in [-2.0, 0.3, 4.0] {
            let r = m.log_density(&v(&[x]), &v(&[1.0])).unwrap() - m.log_density(&v(&[x]), &v(&[0.0])).unwrap();
            assert_relative_eq!(r, x - 0.5, epsilon = 1e-14);
        }
        let x = v(&[0.7]);
        let ld = m.log_density(&x, &v(&[0.2])).unwrap();
        let gauss = -0.5 * (0.5f64).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(ld, gauss, epsilon = 1e-14);
    }

    #[test]
    fn liu_examples() {
        let m = make_liu_model();
        let x = v(&[0.3, -1.0, 0.5, 0.8, -1.2]);
        let g = m.stats().grad_t(&x);
        for a in 0..3 {
            assert_eq!(g.row(a).amax(), 0.0);
        }
        assert_relative_eq!(g[(3, 0)], 1.0 / 0.8f64.cosh().powi(2), epsilon = 1e-14);
        assert_relative_eq!(g[(4, 1)], 1.0 / 1.2f64.cosh().powi(2), epsilon = 1e-14);
        assert_eq!(g[(3, 1)], 0.0);
        // grad_b agrees with an independent expansion of the printed b(x).
        let b = |x: &DVector<f64>| {
            -0.5 * x.norm_squared() + 0.6 * x[0] * x[1] + 0.2 * (x[0] * x[2] + x[0] * x[3] + x[0] * x[4])
        };
        assert_relative_eq!(m.stats().b(&x), b(&x), epsilon = 1e-14);
        assert!(fd_check(m.stats(), &x) < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.sample(&v(&[0.1, 0.0]), 3, &mut rng), Err(Error::Unsupported(_))));
    }

    #[test]
    fn liu_sampler_has_model_covariance() {
        let m = make_liu_model();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data = m.sample(&v(&[0.0, 0.0]), 20_000, &mut rng).unwrap();
        let cov = data.covariance().unwrap();
        let target = liu_precision().try_inverse().unwrap();
        assert!((cov - &target).abs().max() < 0.06, "{target}");
    }

    #[test]
    fn kef_examples() {
        let m = make_kef_model(25).unwrap();
        let t0 = m.stats().t(&v(&[0.0]));
        assert_eq!(t0[0], 1.0);
        assert_eq!(t0[1], 0.0);
        let t1 = m.stats().t(&v(&[1.0]));
        assert_relative_eq!(t1[2], 0.5f64.sqrt() * (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(t1[2], 0.42888194248035344, epsilon = 1e-15);
        for x in [-2.5, -0.4, 0.0, 1.3, 3.0] {
            assert!(fd_check(m.stats(), &v(&[x])) < 1e-6, "x={x}");
        }
        assert_relative_eq!(m.prior_variances().unwrap()[1], 100.0 * 2f64.powf(-1.1));
        assert!(make_kef_model(0).is_err());
        assert!(make_kef_model(31).is_err());
    }

    #[test]
    fn egm_examples() {
        let m = make_egm_model(2).unwrap();
        assert_eq!(m.param_dim(), 3);
        let x = v(&[0.3, -0.4]);
        let g = m.stats().grad_t(&x);
        let expect = DMatrix::from_row_slice(
            2,
            3,
            &[-(0.3f64).exp(), 0.0, -(-0.1f64).exp(), 0.0, -(-0.4f64).exp(), -(-0.1f64).exp()],
        );
        assert!((g - expect).abs().max() < 1e-15);
        assert_eq!(m.stats().grad_b(&x), v(&[1.0, 1.0]));
        assert_eq!(m.score(&x, &v(&[0.0, 0.0, 0.0])).unwrap(), v(&[1.0, 1.0]));
        assert!(make_egm_model(1).is_err());
        let m4 = make_egm_model(4).unwrap();
        assert!(fd_check(m4.stats(), &v(&[0.1, -0.5, 0.9, 0.0])) < 1e-6);
        assert_eq!(egm_edge_index(4, 0, 1), 4);
        assert_eq!(egm_edge_index(4, 2, 3), 9);
    }

    #[test]
    fn egm_gibbs_matches_independent_exponentials() {
        // With zero edge weights the nodes are independent Exp(θ_i), so
        // log w has mean −γ_E − log θ_i.
        let m = make_egm_model(3).unwrap();
        let theta = v(&[1.0, 2.0, 0.5, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = m.sample(&theta, 4000, &mut rng).unwrap();
        let mean = data.mean();
        let euler = 0.5772156649015329;
        for i in 0..3 {
            let target = -euler - theta[i].ln();
            // sd of log Exp is π/√6 ≈ 1.28
            assert!((mean[i] - target).abs() < 4.0 * 1.29 / 4000f64.sqrt(), "{i}: {} vs {target}", mean[i]);
        }
    }

    #[test]
    fn samplers_are_deterministic() {
        for m in [make_normal_location(), make_liu_model()] {
            let theta = DVector::zeros(m.param_dim());
            let a = m.sample(&theta, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let b = m.sample(&theta, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn score_is_gradient_of_unnormalised_log_density(
            x in proptest::collection::vec(-2.0f64..2.0, 5),
            th in proptest::collection::vec(-2.0f64..2.0, 25),
            which in 0usize..4,
        ) {
            let (m, d) = match which {
                0 => (make_normal_location(), 1),
                1 => (make_liu_model(), 5),
                2 => (make_kef_model(25).unwrap(), 1),
                _ => (make_egm_model(3).unwrap(), 3),
            };
            let x = DVector::from_column_slice(&x[..d]);
            let theta = DVector::from_column_slice(&th[..m.param_dim()]);
            let f = |z: &DVector<f64>| m.eta(&theta).dot(&m.stats().t(z)) + m.stats().b(z);
            let fd = crate::numeric::fd_gradient(f, &x);
            let s = m.score(&x, &theta).unwrap();
            for a in 0..d {
                prop_assert!((fd[a] - s[a]).abs() <= 1e-5 * s[a].abs().max(1.0), "{} vs {}", fd[a], s[a]);
            }
            let fdg = crate::numeric::fd_jacobian(|t| m.score(&x, t).unwrap(), &theta);
            let g = m.theta_grad_score(&x, &theta).unwrap();
            prop_assert!((fdg - g).abs().max() < 1e-6);
        }
    }
}
