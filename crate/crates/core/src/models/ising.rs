//! Ising model `p_θ(x) ∝ exp(θ⁻¹ Σ_{(i,j)∈E} x_i x_j)` on a square lattice
//! with free boundary, states in `{−1, +1}^{side²}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AffineScore, ScoreModel};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// Local products `x_i h_i` lie in `−4..=4`.
const MAX_DEGREE: i64 = 4;

/// Largest lattice size accepted by [`IsingModel::enumerate`].
const MAX_ENUMERATION_DIM: usize = 20;

#[derive(Debug, Clone)]
pub struct IsingModel {
    side: usize,
    neighbours: Vec<Vec<usize>>,
    /// Gibbs sweeps discarded before the first kept state.
    pub burn_in: usize,
    /// Gibbs sweeps between kept states.
    pub thin: usize,
}

impl IsingModel {
    pub fn new(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidInput(format!("lattice side must be >= 2, got {side}")));
        }
        let idx = |r: usize, c: usize| r * side + c;
        let mut neighbours = vec![Vec::new(); side * side];
        for r in 0..side {
            for c in 0..side {
                let nb = &mut neighbours[idx(r, c)];
                if r > 0 {
                    nb.push(idx(r - 1, c));
                }
                if r + 1 < side {
                    nb.push(idx(r + 1, c));
                }
                if c > 0 {
                    nb.push(idx(r, c - 1));
                }
                if c + 1 < side {
                    nb.push(idx(r, c + 1));
                }
            }
        }
        Ok(Self {
            side,
            neighbours,
            burn_in: 10_000,
            thin: 10,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    fn local_field(&self, x: &DVector<f64>, i: usize) -> f64 {
        self.neighbours[i].iter().map(|&j| x[j]).sum()
    }

    /// `Σ_{(i,j)∈E} x_i x_j`, each edge counted once.
    pub fn interaction(&self, x: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            for &j in &self.neighbours[i] {
                if j > i {
                    s += x[i] * x[j];
                }
            }
        }
        s
    }

    fn check_temperature(theta: &DVector<f64>) -> Result<()> {
        check_dim(1, theta.len())?;
        if theta[0] > 0.0 && theta[0].is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("temperature must be positive, got {}", theta[0])))
        }
    }

    /// Every state with its exact probability. Only for small lattices.
    pub fn enumerate(&self, theta: &DVector<f64>) -> Result<Vec<(DVector<f64>, f64)>> {
        Self::check_temperature(theta)?;
        let d = self.side * self.side;
        if d > MAX_ENUMERATION_DIM {
            return Err(Error::Unsupported(format!("enumeration of {d} spins")));
        }
        let states: Vec<DVector<f64>> = (0..1u64 << d)
            .map(|bits| DVector::from_fn(d, |i, _| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }))
            .collect();
        let logs: Vec<f64> = states.iter().map(|x| self.interaction(x) / theta[0]).collect();
        let z = crate::numeric::log_sum_exp(&logs);
        Ok(states.into_iter().zip(logs).map(|(x, l)| (x, (l - z).exp())).collect())
    }

    fn sweep(&self, x: &mut DVector<f64>, temp: f64, rng: &mut ChaCha8Rng) {
        for i in 0..x.len() {
            let h = self.local_field(x, i);
            let p_up = 1.0 / (1.0 + (-2.0 * h / temp).exp());
            x[i] = if rng.random::<f64>() < p_up { 1.0 } else { -1.0 };
        }
    }
}

/// The ratio at site `i` depends on `x` only through `a_i = x_i h_i`, so
/// `r(x) = G(x) e(θ)` with `e_a = exp(−2a/θ) − 1` and `G` a 0/1 selector.
impl AffineScore for IsingModel {
    fn feature_dim(&self) -> usize {
        (2 * MAX_DEGREE + 1) as usize
    }

    fn basis(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let d = x.len();
        let mut g = DMatrix::zeros(d, self.feature_dim());
        for i in 0..d {
            let a = (x[i] * self.local_field(x, i)).round() as i64;
            g[(i, (a + MAX_DEGREE) as usize)] = 1.0;
        }
        (g, DVector::zeros(d))
    }

    fn features(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.feature_dim(), |k, _| {
            let a = k as f64 - MAX_DEGREE as f64;
            (-2.0 * a / theta[0]).exp_m1()
        })
    }

    fn feature_jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let t = theta[0];
        DMatrix::from_fn(self.feature_dim(), 1, |k, _| {
            let a = 2.0 * (k as f64 - MAX_DEGREE as f64);
            (-a / t).exp() * a / (t * t)
        })
    }
}

impl ScoreModel for IsingModel {
    fn name(&self) -> &str {
        "ising"
    }

    fn data_dim(&self) -> usize {
        self.side * self.side
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn is_discrete(&self) -> bool {
        true
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        check_dim(self.data_dim(), x.len())?;
        if x.iter().all(|&v| v == 1.0 || v == -1.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput("lattice coordinates must be -1 or +1".into()))
        }
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        Self::check_temperature(theta)
    }

    /// `r_i = p(x with site i flipped)/p(x) − 1 = exp(−2 x_i h_i / θ) − 1`.
    fn score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        Self::check_temperature(theta)?;
        Ok(DVector::from_fn(x.len(), |i, _| {
            (-2.0 * x[i] * self.local_field(x, i) / theta[0]).exp_m1()
        }))
    }

    fn theta_grad_score(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Self::check_temperature(theta)?;
        let t = theta[0];
        Ok(DMatrix::from_fn(x.len(), 1, |i, _| {
            let a = 2.0 * x[i] * self.local_field(x, i);
            (-a / t).exp() * a / (t * t)
        }))
    }

    fn has_analytic_theta_grad(&self) -> bool {
        true
    }

    fn affine_score(&self) -> Option<&dyn AffineScore> {
        Some(self)
    }

    fn sample(&self, theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        Self::check_temperature(theta)?;
        let d = self.data_dim();
        let mut x = DVector::from_fn(d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        for _ in 0..self.burn_in {
            self.sweep(&mut x, theta[0], rng);
        }
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..self.thin.max(1) {
                self.sweep(&mut x, theta[0], rng);
            }
            pts.push(x.clone());
        }
        Dataset::new(pts)
    }
}
