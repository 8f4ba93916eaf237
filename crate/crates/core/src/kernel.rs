//! Matrix-valued kernels `K(x, x') = M(x) φ(x, x') M(x')ᵀ` with a radial
//! inverse multi-quadric base and a matrix weighting function.
//!
//! Besides the kernel value, Stein discrepancies need three derivative
//! contractions of `K`:
//!
//! * `div_xp[i] = Σ_j ∂/∂x'_j K_ij`
//! * `div_x[j]  = Σ_i ∂/∂x_i  K_ij`
//! * `trace     = Σ_ij ∂²/∂x_i∂x'_j K_ij`
//!
//! All of them are formed with the product rule. For a weight `M` only its
//! value and its column divergence `c_a(x) = Σ_j ∂_j M_ja(x)` enter, so the
//! full Jacobian is needed only for validation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// Default IMQ exponent.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Default linear shrinkage intensity for [`adaptive_sigma`].
pub const DEFAULT_SHRINKAGE: f64 = 0.1;

fn check_finite(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite input coordinate".into()))
    }
}

/// Inverse multi-quadric base kernel `(1 + (x-x')ᵀ Σ⁻¹ (x-x'))^{-γ}`.
#[derive(Clone)]
pub struct ImqBase {
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    sigma_inv: DMatrix<f64>,
    gamma: f64,
}

impl fmt::Debug for ImqBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImqBase")
            .field("sigma", &self.sigma)
            .field("gamma", &self.gamma)
            .finish()
    }
}

/// Radial quantities shared by the kernel and its derivatives.
struct Radial {
    phi: f64,
    grad_x: DVector<f64>,
    /// Mixed Hessian `∂²φ/∂x_i∂x'_j`.
    mixed: DMatrix<f64>,
}

impl ImqBase {
    pub fn new(sigma: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if !sigma.is_square() || sigma.nrows() == 0 {
            return Err(Error::InvalidInput("sigma must be a nonempty square matrix".into()));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > 1e-12 * sigma.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite("sigma is not symmetric".into()));
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("IMQ scale matrix".into()))?;
        let sigma_inv = chol.inverse();
        Ok(Self {
            sigma,
            chol,
            sigma_inv,
            gamma,
        })
    }

    /// Scalar length-scale parametrisation, `Σ = ℓ² I_d`.
    pub fn isotropic(dim: usize, lengthscale: f64, gamma: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid length-scale {lengthscale}")));
        }
        Self::new(DMatrix::identity(dim, dim) * (lengthscale * lengthscale), gamma)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Cholesky factor `L` with `Σ = L Lᵀ`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `φ(x, x')`.
    pub fn eval(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), xp.len())?;
        check_finite(x)?;
        check_finite(xp)?;
        let u = x - xp;
        let q = u.dot(&(&self.sigma_inv * &u));
        Ok((1.0 + q).powf(-self.gamma))
    }

    fn radial(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Radial {
        let g = self.gamma;
        let u = x - xp;
        let v = &self.sigma_inv * &u;
        let base = 1.0 + u.dot(&v);
        let phi = base.powf(-g);
        let p1 = phi / base; // base^{-γ-1}
        let p2 = p1 / base; // base^{-γ-2}
        let grad_x = &v * (-2.0 * g * p1);
        let mixed = &self.sigma_inv * (2.0 * g * p1) - (&v * v.transpose()) * (4.0 * g * (g + 1.0) * p2);
        Radial { phi, grad_x, mixed }
    }
}

/// Base kernel: the IMQ, or the constant kernel `φ ≡ 1`.
#[derive(Debug, Clone)]
pub enum BaseKernel {
    Imq(ImqBase),
    /// `φ ≡ 1`; with identity weight this is the rank-one kernel `K = I_d`.
    Constant,
}

impl BaseKernel {
    fn radial(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Radial {
        match self {
            BaseKernel::Imq(b) => b.radial(x, xp),
            BaseKernel::Constant => {
                let d = x.len();
                Radial {
                    phi: 1.0,
                    grad_x: DVector::zeros(d),
                    mixed: DMatrix::zeros(d, d),
                }
            }
        }
    }
}

type WeightEval = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type WeightJacobian = dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;

/// User-supplied weighting function.
#[derive(Clone)]
pub struct CustomWeight {
    dim: usize,
    eval: Arc<WeightEval>,
    jacobian: Option<Arc<WeightJacobian>>,
}

/// Identifies the family of a [`WeightingFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightTag {
    Identity,
    ScalarRational,
    LiuDiagonal,
    ExpDiagonal,
    Indicator,
    Custom,
}

/// Matrix-valued weighting function `M(x)`.
#[derive(Clone)]
pub enum WeightingFunction {
    /// `M(x) = I_d`.
    Identity,
    /// `M(x) = (a² / (a² + ‖x − b·1‖²))^{c/2} I_d`; with `d = 1`, `a = 1`,
    /// `b = 0`, `c = 1` this is `(1 + x²)^{-1/2}`.
    ScalarRational { a: f64, b: f64, c: f64 },
    /// `diag((1+‖x‖²)^{-1/2}, (1+x₁²+x₂²)^{-1/2}, …, (1+x₁²+x_d²)^{-1/2})`.
    LiuDiagonal,
    /// `M(x)_ii = exp(-x_i)`.
    ExpDiagonal,
    /// `M(x) = 1{|Σ_i x_i| ≤ max_abs_sum} I_d`, for binary data only.
    Indicator { max_abs_sum: f64 },
    Custom(CustomWeight),
}

impl fmt::Debug for WeightingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightingFunction::Identity => write!(f, "Identity"),
            WeightingFunction::ScalarRational { a, b, c } => {
                write!(f, "ScalarRational {{ a: {a}, b: {b}, c: {c} }}")
            }
            WeightingFunction::LiuDiagonal => write!(f, "LiuDiagonal"),
            WeightingFunction::ExpDiagonal => write!(f, "ExpDiagonal"),
            WeightingFunction::Indicator { max_abs_sum } => {
                write!(f, "Indicator {{ max_abs_sum: {max_abs_sum} }}")
            }
            WeightingFunction::Custom(c) => write!(f, "Custom {{ dim: {} }}", c.dim),
        }
    }
}

/// Weight value and column divergence at one point. `None` means identity.
#[derive(Debug, Clone)]
pub struct PointWeight(Option<(DMatrix<f64>, DVector<f64>)>);

impl WeightingFunction {
    /// Indicator weight keeping states whose magnetisation satisfies
    /// `|Σ x_i| ≤ fraction · d`.
    pub fn indicator_fraction(dim: usize, fraction: f64) -> Self {
        WeightingFunction::Indicator {
            max_abs_sum: fraction * dim as f64,
        }
    }

    /// Build a custom weight. When a Jacobian is supplied it is checked
    /// against central finite differences at a few fixed probe points.
    pub fn custom(
        dim: usize,
        eval: Arc<WeightEval>,
        jacobian: Option<Arc<WeightJacobian>>,
    ) -> Result<Self> {
        let w = WeightingFunction::Custom(CustomWeight {
            dim,
            eval,
            jacobian,
        });
        if let WeightingFunction::Custom(c) = &w {
            if c.jacobian.is_some() {
                for k in 0..3 {
                    let x = DVector::from_fn(dim, |i, _| 0.37 * (k as f64 + 1.0) * ((i as f64) - 0.5 * k as f64).sin());
                    let err = w.jacobian_fd_error(&x)?;
                    if err > 1e-5 {
                        return Err(Error::InvalidInput(format!(
                            "custom weight jacobian disagrees with finite differences (rel. err {err:.2e})"
                        )));
                    }
                }
            }
        }
        Ok(w)
    }

    pub fn tag(&self) -> WeightTag {
        match self {
            WeightingFunction::Identity => WeightTag::Identity,
            WeightingFunction::ScalarRational { .. } => WeightTag::ScalarRational,
            WeightingFunction::LiuDiagonal => WeightTag::LiuDiagonal,
            WeightingFunction::ExpDiagonal => WeightTag::ExpDiagonal,
            WeightingFunction::Indicator { .. } => WeightTag::Indicator,
            WeightingFunction::Custom(_) => WeightTag::Custom,
        }
    }

    fn structure(&self) -> Structure {
        match self {
            WeightingFunction::Identity
            | WeightingFunction::ScalarRational { .. }
            | WeightingFunction::Indicator { .. } => Structure::Scalar,
            WeightingFunction::LiuDiagonal | WeightingFunction::ExpDiagonal => Structure::Diagonal,
            WeightingFunction::Custom(_) => Structure::Full,
        }
    }

    /// Whether `M` is diagonal with a scalar multiple of the identity,
    /// returning that scalar.
    pub(crate) fn scalar_value(&self, x: &DVector<f64>) -> Option<f64> {
        match self {
            WeightingFunction::Identity => Some(1.0),
            WeightingFunction::ScalarRational { a, b, c } => {
                let r2: f64 = x.iter().map(|xi| (xi - b) * (xi - b)).sum();
                Some((a * a / (a * a + r2)).powf(0.5 * c))
            }
            WeightingFunction::Indicator { max_abs_sum } => {
                let s: f64 = x.iter().sum();
                Some(if s.abs() <= *max_abs_sum + 1e-9 { 1.0 } else { 0.0 })
            }
            _ => None,
        }
    }

    /// `M(x)`.
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        if let Some(s) = self.scalar_value(x) {
            return DMatrix::identity(d, d) * s;
        }
        match self {
            WeightingFunction::LiuDiagonal => DMatrix::from_diagonal(&liu_diag(x)),
            WeightingFunction::ExpDiagonal => {
                DMatrix::from_diagonal(&x.map(|v| (-v).exp()))
            }
            WeightingFunction::Custom(c) => (c.eval)(x),
            _ => unreachable!("scalar weights handled above"),
        }
    }

    /// `∂M/∂x_k` for `k = 0..d`.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let d = x.len();
        let zero = || DMatrix::<f64>::zeros(d, d);
        let mut jac = vec![zero(); d];
        match self {
            WeightingFunction::Identity | WeightingFunction::Indicator { .. } => {}
            WeightingFunction::ScalarRational { a, b, c } => {
                let r2: f64 = x.iter().map(|xi| (xi - b) * (xi - b)).sum();
                let m = (a * a / (a * a + r2)).powf(0.5 * c);
                for (k, jk) in jac.iter_mut().enumerate() {
                    let dm = -c * m * (x[k] - b) / (a * a + r2);
                    jk.fill_diagonal(dm);
                }
            }
            WeightingFunction::LiuDiagonal => {
                let total = 1.0 + x.norm_squared();
                for (k, jk) in jac.iter_mut().enumerate() {
                    jk[(0, 0)] = -x[k] * total.powf(-1.5);
                }
                for i in 1..d {
                    let base = 1.0 + x[0] * x[0] + x[i] * x[i];
                    jac[0][(i, i)] += -x[0] * base.powf(-1.5);
                    jac[i][(i, i)] += -x[i] * base.powf(-1.5);
                }
            }
            WeightingFunction::ExpDiagonal => {
                for (k, jk) in jac.iter_mut().enumerate() {
                    jk[(k, k)] = -(-x[k]).exp();
                }
            }
            WeightingFunction::Custom(c) => {
                let j = c.jacobian.as_ref().ok_or_else(|| {
                    Error::Unsupported("custom weight has no jacobian".into())
                })?;
                jac = j(x);
                if jac.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: jac.len(),
                    });
                }
            }
        }
        Ok(jac)
    }

    /// Column divergence `c_a(x) = Σ_j ∂_j M_ja(x)`.
    pub fn column_divergence(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let d = x.len();
        match self {
            WeightingFunction::Identity | WeightingFunction::Indicator { .. } => {
                Ok(DVector::zeros(d))
            }
            WeightingFunction::ScalarRational { a, b, c } => {
                let r2: f64 = x.iter().map(|xi| (xi - b) * (xi - b)).sum();
                let m = (a * a / (a * a + r2)).powf(0.5 * c);
                Ok(x.map(|xk| -c * m * (xk - b) / (a * a + r2)))
            }
            WeightingFunction::ExpDiagonal => Ok(x.map(|v| -(-v).exp())),
            _ => {
                let jac = self.jacobian(x)?;
                Ok(DVector::from_fn(d, |a, _| (0..d).map(|j| jac[j][(j, a)]).sum()))
            }
        }
    }

    pub(crate) fn at(&self, x: &DVector<f64>) -> Result<PointWeight> {
        if matches!(self, WeightingFunction::Identity) {
            return Ok(PointWeight(None));
        }
        Ok(PointWeight(Some((self.eval(x), self.column_divergence(x)?))))
    }

    /// Largest relative error between the analytic Jacobian and central
    /// differences of `eval` at `x` (step 1e-5).
    pub fn jacobian_fd_error(&self, x: &DVector<f64>) -> Result<f64> {
        let h = 1e-5;
        let jac = self.jacobian(x)?;
        let mut worst: f64 = 0.0;
        for (k, jk) in jac.iter().enumerate() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
            let scale = fd.abs().max().max(jk.abs().max()).max(1e-3);
            worst = worst.max((fd - jk).abs().max() / scale);
        }
        Ok(worst)
    }
}

fn liu_diag(x: &DVector<f64>) -> DVector<f64> {
    let d = x.len();
    DVector::from_fn(d, |i, _| {
        if i == 0 {
            (1.0 + x.norm_squared()).powf(-0.5)
        } else {
            (1.0 + x[0] * x[0] + x[i] * x[i]).powf(-0.5)
        }
    })
}

/// A `d×d` kernel value stored compactly when it has structure.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelBlock {
    /// `c · I_d`.
    Scaled(f64),
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl KernelBlock {
    pub fn to_matrix(&self, dim: usize) -> DMatrix<f64> {
        match self {
            KernelBlock::Scaled(c) => DMatrix::identity(dim, dim) * *c,
            KernelBlock::Diagonal(v) => DMatrix::from_diagonal(v),
            KernelBlock::Full(m) => m.clone(),
        }
    }

    /// `K v`.
    pub fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            KernelBlock::Scaled(c) => v * *c,
            KernelBlock::Diagonal(g) => g.component_mul(v),
            KernelBlock::Full(m) => m * v,
        }
    }

    /// `Kᵀ v`.
    pub fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            KernelBlock::Full(m) => m.tr_mul(v),
            other => other.mul(v),
        }
    }

    /// `uᵀ K v`.
    pub fn quad(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match self {
            KernelBlock::Scaled(c) => c * u.dot(v),
            KernelBlock::Diagonal(g) => u.iter().zip(g.iter()).zip(v.iter()).map(|((a, b), c)| a * b * c).sum(),
            KernelBlock::Full(m) => u.dot(&(m * v)),
        }
    }

    pub fn transpose(&self) -> KernelBlock {
        match self {
            KernelBlock::Full(m) => KernelBlock::Full(m.transpose()),
            other => other.clone(),
        }
    }
}

/// Structure shared by every value of a weighting function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Structure {
    Scalar,
    Diagonal,
    Full,
}

/// Kernel value and the three derivative contractions at one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPieces {
    pub k: KernelBlock,
    pub div_x: DVector<f64>,
    pub div_xp: DVector<f64>,
    pub trace: f64,
}

/// `K(x, x') = M(x) φ(x, x') M(x')ᵀ`.
#[derive(Debug, Clone)]
pub struct WeightedKernel {
    base: BaseKernel,
    weight: WeightingFunction,
    dim: usize,
}

impl WeightedKernel {
    pub fn new(base: BaseKernel, weight: WeightingFunction, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("kernel dimension must be >= 1".into()));
        }
        if let BaseKernel::Imq(b) = &base {
            check_dim(dim, b.dim())?;
        }
        if let WeightingFunction::Custom(c) = &weight {
            check_dim(dim, c.dim)?;
        }
        Ok(Self { base, weight, dim })
    }

    pub fn imq(base: ImqBase, weight: WeightingFunction) -> Result<Self> {
        let dim = base.dim();
        Self::new(BaseKernel::Imq(base), weight, dim)
    }

    /// Constant identity kernel `K ≡ I_d`.
    pub fn constant_identity(dim: usize) -> Self {
        Self {
            base: BaseKernel::Constant,
            weight: WeightingFunction::Identity,
            dim,
        }
    }

    /// IMQ with `γ = 1/2` and the data-adaptive scale matrix.
    pub fn default_for(data: &Dataset, weight: WeightingFunction) -> Result<Self> {
        let sigma = adaptive_sigma(data, DEFAULT_SHRINKAGE)?;
        Self::imq(ImqBase::new(sigma, DEFAULT_GAMMA)?, weight)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> &BaseKernel {
        &self.base
    }

    pub fn weight(&self) -> &WeightingFunction {
        &self.weight
    }

    fn check_pair(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, xp.len())?;
        check_finite(x)?;
        check_finite(xp)
    }

    /// `K(x, x')`.
    pub fn eval(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_pair(x, xp)?;
        let phi = self.base.radial(x, xp).phi;
        Ok(self.weight.eval(x) * self.weight.eval(xp).transpose() * phi)
    }

    /// Value plus derivative contractions.
    pub fn pieces(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<KernelPieces> {
        self.check_pair(x, xp)?;
        let wx = self.weight.at(x)?;
        let wxp = self.weight.at(xp)?;
        Ok(self.pieces_with(x, &wx, xp, &wxp))
    }

    pub(crate) fn point_weight(&self, x: &DVector<f64>) -> Result<PointWeight> {
        self.weight.at(x)
    }

    /// Hash identifying the kernel configuration, used to tie caches to
    /// the kernel they were built with.
    pub fn id(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        format!("{:?}|{:?}|{}", self.base, self.weight, self.dim).hash(&mut h);
        h.finish()
    }

    /// Pieces with weights precomputed at both points.
    pub(crate) fn pieces_with(
        &self,
        x: &DVector<f64>,
        wx: &PointWeight,
        xp: &DVector<f64>,
        wxp: &PointWeight,
    ) -> KernelPieces {
        let r = self.base.radial(x, xp);
        let grad_xp = -&r.grad_x;
        match (&wx.0, &wxp.0) {
            (None, None) => KernelPieces {
                k: KernelBlock::Scaled(r.phi),
                div_x: r.grad_x,
                div_xp: grad_xp,
                trace: r.mixed.trace(),
            },
            _ => {
                let eye = DMatrix::identity(self.dim, self.dim);
                let zero = DVector::zeros(self.dim);
                let (a, c) = wx.0.as_ref().map(|(m, c)| (m, c)).unwrap_or((&eye, &zero));
                let (b, cp) = wxp.0.as_ref().map(|(m, c)| (m, c)).unwrap_or((&eye, &zero));
                let at_grad = a.transpose() * &r.grad_x;
                let bt_gradp = b.transpose() * &grad_xp;
                let k = a * b.transpose() * r.phi;
                let k = match self.weight.structure() {
                    Structure::Scalar => KernelBlock::Scaled(k[(0, 0)]),
                    Structure::Diagonal => KernelBlock::Diagonal(k.diagonal()),
                    Structure::Full => KernelBlock::Full(k),
                };
                let div_xp = a * (&bt_gradp + cp * r.phi);
                let div_x = b * (&at_grad + c * r.phi);
                let trace = (a.transpose() * &r.mixed * b).trace()
                    + at_grad.dot(cp)
                    + bt_gradp.dot(c)
                    + r.phi * c.dot(cp);
                KernelPieces {
                    k,
                    div_x,
                    div_xp,
                    trace,
                }
            }
        }
    }

    /// `∇_{x'} · K(x, x')`, indexed by row.
    pub fn div_xp(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.pieces(x, xp)?.div_xp)
    }

    /// `∇_x · K(x, x')`, indexed by column.
    pub fn div_x(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.pieces(x, xp)?.div_x)
    }

    /// `Σ_ij ∂²K_ij / ∂x_i ∂x'_j`.
    pub fn double_div(&self, x: &DVector<f64>, xp: &DVector<f64>) -> Result<f64> {
        Ok(self.pieces(x, xp)?.trace)
    }
}

/// Data-adaptive scale matrix: linear shrinkage of the sample covariance
/// towards `(tr S / d) I`.
pub fn adaptive_sigma(data: &Dataset, shrinkage: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidInput(format!(
            "shrinkage must lie in [0,1], got {shrinkage}"
        )));
    }
    let s = data.covariance()?;
    let d = data.dim();
    let avg = s.trace() / d as f64;
    if !(avg > 0.0) {
        return Err(Error::DegenerateData("zero sample variance".into()));
    }
    let sigma = s * (1.0 - shrinkage) + DMatrix::identity(d, d) * (shrinkage * avg);
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    if Cholesky::new(sigma.clone()).is_none() {
        return Err(Error::DegenerateData(
            "shrunk covariance is not positive definite".into(),
        ));
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
    }

    fn all_smooth_weights(d: usize) -> Vec<WeightingFunction> {
        let mut ws = vec![
            WeightingFunction::Identity,
            WeightingFunction::ScalarRational { a: 1.0, b: 0.0, c: 1.0 },
            WeightingFunction::ScalarRational { a: 0.7, b: 0.4, c: 2.5 },
            WeightingFunction::LiuDiagonal,
            WeightingFunction::ExpDiagonal,
        ];
        let rot = DMatrix::from_fn(d, d, |i, j| 0.3 * (i as f64) - 0.2 * (j as f64) + if i == j { 1.0 } else { 0.0 });
        let rot2 = rot.clone();
        ws.push(
            WeightingFunction::custom(
                d,
                Arc::new(move |x: &DVector<f64>| &rot * (1.0 + x.norm_squared()).powf(-0.5)),
                Some(Arc::new(move |x: &DVector<f64>| {
                    let base = 1.0 + x.norm_squared();
                    (0..x.len()).map(|k| &rot2 * (-x[k] * base.powf(-1.5))).collect()
                })),
            )
            .unwrap(),
        );
        ws
    }

    fn random_sigma(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    #[test]
    fn imq_examples() {
        let b = ImqBase::isotropic(1, 1.0, 0.5).unwrap();
        assert_eq!(b.eval(&v(&[0.3]), &v(&[0.3])).unwrap(), 1.0);
        assert_relative_eq!(b.eval(&v(&[0.0]), &v(&[1.0])).unwrap(), 2f64.powf(-0.5), epsilon = 1e-15);
        assert!(matches!(
            b.eval(&v(&[f64::INFINITY]), &v(&[0.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn imq_matches_independent_evaluation() {
        // Values from an independent 50-digit mpmath evaluation of
        // (1 + |x-x'|^2)^(-1/2) at the listed points.
        let b = ImqBase::isotropic(2, 1.0, 0.5).unwrap();
        let cases = [
            ([0.1, -0.7], [1.3, 0.25], 0.5469709887444195),
            ([-2.0, 3.5], [0.5, -1.0], 0.1906925178491185),
            ([0.0, 0.0], [1e-3, 2e-3], 0.9999975000093750),
        ];
        for (x, y, expected) in cases {
            assert_relative_eq!(b.eval(&v(&x), &v(&y)).unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn imq_rejects_bad_parameters() {
        assert!(ImqBase::isotropic(1, 1.0, 1.0).is_err());
        assert!(ImqBase::isotropic(1, 1.0, 0.0).is_err());
        assert!(ImqBase::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.5).is_err());
        assert!(ImqBase::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]), 0.5).is_err());
    }

    #[test]
    fn kernel_eval_examples() {
        let ident = WeightedKernel::imq(ImqBase::isotropic(3, 1.0, 0.5).unwrap(), WeightingFunction::Identity).unwrap();
        let x = v(&[0.2, -1.0, 4.0]);
        assert_eq!(ident.eval(&x, &x).unwrap(), DMatrix::identity(3, 3));

        let robust = WeightedKernel::imq(
            ImqBase::isotropic(1, 1.0, 0.5).unwrap(),
            WeightingFunction::ScalarRational { a: 1.0, b: 0.0, c: 1.0 },
        )
        .unwrap();
        assert_relative_eq!(robust.eval(&v(&[0.0]), &v(&[0.0])).unwrap()[(0, 0)], 1.0);
        assert_relative_eq!(robust.eval(&v(&[0.0]), &v(&[1.0])).unwrap()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let k = WeightedKernel::imq(ImqBase::isotropic(1, 1.0, 0.5).unwrap(), WeightingFunction::Identity).unwrap();
        let x = v(&[0.8]);
        assert_eq!(k.div_x(&x, &x).unwrap()[0], 0.0);
        assert_eq!(k.div_xp(&x, &x).unwrap()[0], 0.0);
        assert_relative_eq!(k.double_div(&x, &x).unwrap(), 1.0, epsilon = 1e-15);

        let bad = WeightingFunction::Custom(CustomWeight {
            dim: 1,
            eval: Arc::new(|_x: &DVector<f64>| DMatrix::identity(1, 1)),
            jacobian: None,
        });
        let k = WeightedKernel::imq(ImqBase::isotropic(1, 1.0, 0.5).unwrap(), bad).unwrap();
        assert!(matches!(k.pieces(&x, &x), Err(Error::Unsupported(_))));
    }

    #[test]
    fn custom_weight_with_wrong_jacobian_is_rejected() {
        let res = WeightingFunction::custom(
            2,
            Arc::new(|x: &DVector<f64>| DMatrix::identity(2, 2) * x[0].sin()),
            Some(Arc::new(|_x: &DVector<f64>| vec![DMatrix::zeros(2, 2); 2])),
        );
        assert!(res.is_err());
    }

    #[test]
    fn weight_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1usize, 2, 5] {
            for w in all_smooth_weights(d) {
                for _ in 0..50 {
                    let x = rand_vec(&mut rng, d, 2.0);
                    let err = w.jacobian_fd_error(&x).unwrap();
                    assert!(err < 1e-5, "{w:?} d={d} err={err}");
                }
            }
        }
        let id = WeightingFunction::Identity;
        let x = v(&[1.0, -2.0]);
        assert_eq!(id.eval(&x), DMatrix::identity(2, 2));
        assert!(id.jacobian(&x).unwrap().iter().all(|j| j.iter().all(|&e| e == 0.0)));
    }

    /// Central-difference oracle built from `eval` alone.
    fn fd_pieces(k: &WeightedKernel, x: &DVector<f64>, xp: &DVector<f64>) -> KernelPieces {
        let h = 1e-5;
        let d = x.len();
        let kk = k.eval(x, xp).unwrap();
        let shift = |z: &DVector<f64>, i: usize, s: f64| {
            let mut z = z.clone();
            z[i] += s;
            z
        };
        let div_xp = DVector::from_fn(d, |i, _| {
            (0..d)
                .map(|j| {
                    (k.eval(x, &shift(xp, j, h)).unwrap()[(i, j)] - k.eval(x, &shift(xp, j, -h)).unwrap()[(i, j)]) / (2.0 * h)
                })
                .sum()
        });
        let div_x = DVector::from_fn(d, |j, _| {
            (0..d)
                .map(|i| {
                    (k.eval(&shift(x, i, h), xp).unwrap()[(i, j)] - k.eval(&shift(x, i, -h), xp).unwrap()[(i, j)]) / (2.0 * h)
                })
                .sum()
        });
        let h2 = 1e-4;
        let mut trace = 0.0;
        for i in 0..d {
            for j in 0..d {
                let f = |si: f64, sj: f64| k.eval(&shift(x, i, si), &shift(xp, j, sj)).unwrap()[(i, j)];
                trace += (f(h2, h2) - f(h2, -h2) - f(-h2, h2) + f(-h2, -h2)) / (4.0 * h2 * h2);
            }
        }
        KernelPieces {
            k: KernelBlock::Full(kk),
            div_x,
            div_xp,
            trace,
        }
    }

    fn rel(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [1usize, 2, 3, 5] {
            let sigma = random_sigma(&mut rng, d);
            for w in all_smooth_weights(d) {
                let k = WeightedKernel::imq(ImqBase::new(sigma.clone(), 0.5).unwrap(), w.clone()).unwrap();
                for _ in 0..50 {
                    let x = rand_vec(&mut rng, d, 1.5);
                    let xp = rand_vec(&mut rng, d, 1.5);
                    let a = k.pieces(&x, &xp).unwrap();
                    let f = fd_pieces(&k, &x, &xp);
                    for i in 0..d {
                        assert!(rel(a.div_xp[i], f.div_xp[i], 1e-2) < 1e-4, "div_xp {w:?}");
                        assert!(rel(a.div_x[i], f.div_x[i], 1e-2) < 1e-4, "div_x {w:?}");
                    }
                    assert!(rel(a.trace, f.trace, 1e-1) < 1e-4, "trace {w:?} {} {}", a.trace, f.trace);
                }
            }
        }
    }

    #[test]
    fn kernel_is_symmetric_under_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 3;
        for w in all_smooth_weights(d) {
            let k = WeightedKernel::imq(ImqBase::new(random_sigma(&mut rng, d), 0.5).unwrap(), w).unwrap();
            for _ in 0..100 {
                let x = rand_vec(&mut rng, d, 2.0);
                let xp = rand_vec(&mut rng, d, 2.0);
                let a = k.eval(&x, &xp).unwrap();
                let b = k.eval(&xp, &x).unwrap();
                assert!((a - b.transpose()).abs().max() < 1e-15);
            }
        }
    }

    #[test]
    fn block_gram_matrix_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 2;
        for w in all_smooth_weights(d) {
            let k = WeightedKernel::imq(ImqBase::new(random_sigma(&mut rng, d), 0.5).unwrap(), w).unwrap();
            let pts: Vec<_> = (0..10).map(|_| rand_vec(&mut rng, d, 2.0)).collect();
            let mut g = DMatrix::zeros(10 * d, 10 * d);
            for (i, x) in pts.iter().enumerate() {
                for (j, xp) in pts.iter().enumerate() {
                    g.view_mut((i * d, j * d), (d, d)).copy_from(&k.eval(x, xp).unwrap());
                }
            }
            let g = (&g + g.transpose()) * 0.5;
            let min = g.symmetric_eigen().eigenvalues.min();
            assert!(min >= -1e-8, "min eig {min}");
        }
    }

    #[test]
    fn rational_weight_bound() {
        for (a, b) in [(1.0, 0.0), (0.5, 2.0), (3.0, -1.0)] {
            let w = WeightingFunction::ScalarRational { a, b, c: 1.0 };
            for theta in [-3.0, 0.0, 1.0, 4.0] {
                let bound: f64 = a * a + (theta - b) * (theta - b);
                let sup = (0..10_000)
                    .map(|i| -50.0 + 100.0 * i as f64 / 9_999.0)
                    .map(|y| {
                        let m = w.eval(&v(&[y]))[(0, 0)];
                        (m * (theta - y)).powi(2)
                    })
                    .fold(0.0f64, f64::max);
                assert!(sup <= bound + 1e-12, "sup {sup} bound {bound}");
            }
        }
    }

    #[test]
    fn adaptive_sigma_examples() {
        let two = Dataset::from_scalars(&[-1.0, 1.0]).unwrap();
        assert_eq!(adaptive_sigma(&two, 0.0).unwrap()[(0, 0)], 2.0);
        assert!(matches!(
            adaptive_sigma(&Dataset::from_scalars(&[1.0]).unwrap(), 0.1),
            Err(Error::DegenerateData(_))
        ));
        assert!(matches!(
            adaptive_sigma(&Dataset::from_scalars(&[1.0, 1.0, 1.0]).unwrap(), 0.1),
            Err(Error::DegenerateData(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..1.0)])
            .collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let s = data.covariance().unwrap();
        let full = adaptive_sigma(&data, 1.0).unwrap();
        assert!((full - DMatrix::identity(3, 3) * (s.trace() / 3.0)).abs().max() < 1e-14);
    }

    #[test]
    fn adaptive_sigma_monte_carlo_sanity() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n1 = Normal::new(0.0, 1.0).unwrap();
        let n2 = Normal::new(0.0, 2.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![n1.sample(&mut rng), n2.sample(&mut rng)]).collect();
        let sigma = adaptive_sigma(&Dataset::from_rows(&rows).unwrap(), 0.1).unwrap();
        let eig = sigma.symmetric_eigen().eigenvalues;
        assert!(eig.min() >= 0.5 && eig.max() <= 6.0, "{eig}");
    }
}
