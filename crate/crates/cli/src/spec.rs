//! Model, weighting-function and kernel choices shared by the config file
//! and the single-purpose subcommands.

use std::str::FromStr;

use ksd_bayes::kernel::{adaptive_sigma, BaseKernel, DEFAULT_GAMMA, DEFAULT_SHRINKAGE};
use ksd_bayes::models::{
    egm_edge_index, make_egm_model, make_kef_model, make_liu_model, make_normal_location, ExponentialFamily,
    GaussianMixture, IsingModel,
};
use ksd_bayes::{BinaryLatticeKernel, Dataset, ImqBase, Prior, ScoreModel, SteinKernel, WeightedKernel, WeightingFunction};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    NormalLocation,
    Liu,
    Kef {
        #[serde(default = "default_basis")]
        basis: usize,
    },
    Egm {
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    Ising {
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        burn_in: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thin: Option<usize>,
    },
    Mixture {
        #[serde(default = "default_mu")]
        mu: f64,
    },
}

fn default_basis() -> usize {
    25
}
fn default_nodes() -> usize {
    11
}
fn default_side() -> usize {
    6
}
fn default_mu() -> f64 {
    5.0
}

impl FromStr for ModelSpec {
    type Err = CliError;

    /// `normal-location`, `liu`, `kef[:p]`, `egm[:d]`, `ising[:side]`,
    /// `mixture[:mu]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let bad = || CliError::Config(format!("cannot parse model spec {s:?}"));
        let int = |d: usize| arg.map_or(Ok(d), |a| a.parse::<usize>().map_err(|_| bad()));
        Ok(match name {
            "normal-location" if arg.is_none() => ModelSpec::NormalLocation,
            "liu" if arg.is_none() => ModelSpec::Liu,
            "kef" => ModelSpec::Kef { basis: int(25)? },
            "egm" => ModelSpec::Egm { nodes: int(11)? },
            "ising" => ModelSpec::Ising {
                side: int(6)?,
                burn_in: None,
                thin: None,
            },
            "mixture" => ModelSpec::Mixture {
                mu: arg.map_or(Ok(5.0), |a| a.parse::<f64>().map_err(|_| bad()))?,
            },
            _ => return Err(bad()),
        })
    }
}

/// A constructed model.
pub enum Model {
    Family(ExponentialFamily),
    Ising(IsingModel),
    Mixture(GaussianMixture),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn ScoreModel {
        match self {
            Model::Family(m) => m,
            Model::Ising(m) => m,
            Model::Mixture(m) => m,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        Ok(match self {
            ModelSpec::NormalLocation => Model::Family(make_normal_location()),
            ModelSpec::Liu => Model::Family(make_liu_model()),
            ModelSpec::Kef { basis } => Model::Family(make_kef_model(*basis)?),
            ModelSpec::Egm { nodes } => Model::Family(make_egm_model(*nodes)?),
            ModelSpec::Ising { side, burn_in, thin } => {
                let mut m = IsingModel::new(*side)?;
                if let Some(b) = burn_in {
                    m.burn_in = *b;
                }
                if let Some(t) = thin {
                    m.thin = *t;
                }
                Model::Ising(m)
            }
            ModelSpec::Mixture { mu } => Model::Mixture(GaussianMixture::new(*mu)?),
        })
    }

    pub fn data_dim(&self) -> usize {
        match self {
            ModelSpec::NormalLocation | ModelSpec::Kef { .. } | ModelSpec::Mixture { .. } => 1,
            ModelSpec::Liu => 5,
            ModelSpec::Egm { nodes } => *nodes,
            ModelSpec::Ising { side, .. } => side * side,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            ModelSpec::NormalLocation | ModelSpec::Ising { .. } | ModelSpec::Mixture { .. } => 1,
            ModelSpec::Liu => 2,
            ModelSpec::Kef { basis } => *basis,
            ModelSpec::Egm { nodes } => nodes * (nodes + 1) / 2,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ModelSpec::Ising { .. })
    }

    pub fn default_prior(&self) -> Prior {
        let p = self.param_dim();
        match self {
            ModelSpec::NormalLocation => Prior::standard_normal(1),
            ModelSpec::Liu => Prior::DiagonalGaussian {
                mean: vec![0.0; 2],
                var: vec![100.0; 2],
            },
            ModelSpec::Kef { .. } => Prior::DiagonalGaussian {
                mean: vec![0.0; p],
                var: (1..=p).map(|i| 100.0 * (i as f64).powf(-1.1)).collect(),
            },
            ModelSpec::Egm { .. } => Prior::TruncatedGaussian {
                mean: vec![0.0; p],
                var: vec![1.0; p],
            },
            ModelSpec::Ising { .. } => Prior::HalfNormal { scale: 3.0 },
            ModelSpec::Mixture { .. } => Prior::Uniform {
                lower: vec![0.0],
                upper: vec![1.0],
            },
        }
    }

    /// Parameter used to simulate data when none is configured.
    pub fn default_theta(&self) -> Option<Vec<f64>> {
        match self {
            ModelSpec::NormalLocation => Some(vec![1.0]),
            ModelSpec::Liu => Some(vec![0.0, 0.0]),
            ModelSpec::Kef { .. } => None,
            ModelSpec::Egm { nodes } => {
                let d = *nodes;
                let mut t = vec![1.0; self.param_dim()];
                for i in 0..d {
                    for j in i + 1..d {
                        t[egm_edge_index(d, i, j)] = if j == i + 1 { 0.5 } else { 0.0 };
                    }
                }
                Some(t)
            }
            ModelSpec::Ising { .. } => Some(vec![5.0]),
            ModelSpec::Mixture { .. } => Some(vec![0.5]),
        }
    }

    pub fn default_weight(&self) -> WeightSpec {
        match self {
            ModelSpec::NormalLocation | ModelSpec::Kef { .. } => WeightSpec::Rational { a: 1.0, b: 0.0, c: 1.0 },
            ModelSpec::Liu => WeightSpec::LiuDiagonal,
            ModelSpec::Egm { .. } => WeightSpec::ExpDiagonal,
            ModelSpec::Ising { .. } => WeightSpec::Indicator { fraction: 0.9 },
            ModelSpec::Mixture { .. } => WeightSpec::Identity,
        }
    }

    /// Parameter labels used in output tables.
    pub fn param_names(&self) -> Vec<String> {
        match self {
            ModelSpec::Egm { nodes } => {
                let d = *nodes;
                let mut names: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
                for i in 1..=d {
                    for j in i + 1..=d {
                        names.push(format!("theta_{i}_{j}"));
                    }
                }
                names
            }
            _ if self.param_dim() == 1 => vec!["theta".into()],
            _ => (1..=self.param_dim()).map(|i| format!("theta_{i}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    Identity,
    /// `(a² / (a² + ‖x − b‖²))^{c/2} I`.
    Rational {
        #[serde(default = "one")]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default = "one")]
        c: f64,
    },
    LiuDiagonal,
    ExpDiagonal,
    /// Binary lattices: keep states with `|Σ x| ≤ fraction · d`.
    Indicator {
        #[serde(default = "nine_tenths")]
        fraction: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn nine_tenths() -> f64 {
    0.9
}

impl FromStr for WeightSpec {
    type Err = CliError;

    /// `identity`, `rational[:a,b,c]`, `liu-diagonal`, `exp-diagonal`,
    /// `indicator[:fraction]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let bad = || CliError::Config(format!("cannot parse weight spec {s:?}"));
        Ok(match (name, arg) {
            ("identity", None) => WeightSpec::Identity,
            ("liu-diagonal", None) => WeightSpec::LiuDiagonal,
            ("exp-diagonal", None) => WeightSpec::ExpDiagonal,
            ("rational", None) => WeightSpec::Rational { a: 1.0, b: 0.0, c: 1.0 },
            ("rational", Some(a)) => {
                let v: Vec<f64> = a
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                match v[..] {
                    [a, b, c] => WeightSpec::Rational { a, b, c },
                    _ => return Err(bad()),
                }
            }
            ("indicator", f) => WeightSpec::Indicator {
                fraction: f.map_or(Ok(0.9), |f| f.parse::<f64>().map_err(|_| bad()))?,
            },
            _ => return Err(bad()),
        })
    }
}

impl WeightSpec {
    pub fn build(&self, dim: usize) -> WeightingFunction {
        match self {
            WeightSpec::Identity => WeightingFunction::Identity,
            WeightSpec::Rational { a, b, c } => WeightingFunction::ScalarRational { a: *a, b: *b, c: *c },
            WeightSpec::LiuDiagonal => WeightingFunction::LiuDiagonal,
            WeightSpec::ExpDiagonal => WeightingFunction::ExpDiagonal,
            WeightSpec::Indicator { fraction } => WeightingFunction::indicator_fraction(dim, *fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Falls back to the model's robust default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightSpec>,
    /// Isotropic IMQ length-scale; the data-adaptive scale matrix is used
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    pub gamma: f64,
    pub shrinkage: f64,
    /// Use the constant kernel `K ≡ I` instead of the IMQ.
    pub constant: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            weight: None,
            lengthscale: None,
            gamma: DEFAULT_GAMMA,
            shrinkage: DEFAULT_SHRINKAGE,
            constant: false,
        }
    }
}

impl KernelConfig {
    pub fn weight_for(&self, model: &ModelSpec) -> WeightSpec {
        self.weight.clone().unwrap_or_else(|| model.default_weight())
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CliError::Config(format!("kernel.gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return Err(CliError::Config(format!("kernel.shrinkage must lie in [0,1], got {}", self.shrinkage)));
        }
        if let Some(l) = self.lengthscale {
            if !(l > 0.0 && l.is_finite()) {
                return Err(CliError::Config(format!("kernel.lengthscale must be positive, got {l}")));
            }
        }
        let w = self.weight_for(model);
        match (model.is_discrete(), &w) {
            (true, WeightSpec::Identity | WeightSpec::Indicator { .. }) => {}
            (true, _) => return Err(CliError::Config("binary lattices take identity or indicator weights".into())),
            (false, WeightSpec::Indicator { .. }) => {
                return Err(CliError::Config("indicator weights are for binary lattices".into()))
            }
            _ => {}
        }
        if model.is_discrete() && (self.constant || self.lengthscale.is_some()) {
            return Err(CliError::Config("lattice kernels take no scale settings".into()));
        }
        Ok(())
    }

    pub fn build(&self, model: &ModelSpec, data: &Dataset) -> Result<Box<dyn SteinKernel>> {
        self.validate(model)?;
        let d = model.data_dim();
        let weight = self.weight_for(model).build(d);
        if model.is_discrete() {
            return Ok(Box::new(BinaryLatticeKernel::new(d, weight)?));
        }
        let base = if self.constant {
            BaseKernel::Constant
        } else if let Some(l) = self.lengthscale {
            BaseKernel::Imq(ImqBase::isotropic(d, l, self.gamma)?)
        } else {
            BaseKernel::Imq(ImqBase::new(adaptive_sigma(data, self.shrinkage)?, self.gamma)?)
        };
        Ok(Box::new(WeightedKernel::new(base, weight, d)?))
    }
}

pub fn vector(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}
