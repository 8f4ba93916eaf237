//! ε-contamination of a dataset.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};

/// How a contaminated row is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ContaminationMode {
    /// Replace with a draw from `N(y, scale² I)`.
    ReplaceDraw { y: Vec<f64>, scale: f64 },
    /// Shift the row to `x + y`.
    Shift { y: Vec<f64> },
    /// Replace with `y`.
    ReplaceFixed { y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub mode: ContaminationMode,
}

impl ContaminationSpec {
    pub fn none() -> Self {
        Self {
            epsilon: 0.0,
            mode: ContaminationMode::ReplaceFixed { y: vec![] },
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidInput(format!("epsilon {} outside [0,1]", self.epsilon)));
        }
        if self.epsilon == 0.0 {
            return Ok(());
        }
        let y = match &self.mode {
            ContaminationMode::ReplaceDraw { y, scale } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidInput(format!("invalid contamination scale {scale}")));
                }
                y
            }
            ContaminationMode::Shift { y } | ContaminationMode::ReplaceFixed { y } => y,
        };
        check_dim(dim, y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite contaminant".into()));
        }
        Ok(())
    }
}

/// Contaminate each row independently with probability ε. The returned
/// dataset flags which rows were changed.
pub fn contaminate(data: &Dataset, spec: &ContaminationSpec, seed: u64) -> Result<Dataset> {
    spec.validate(data.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(data.len());
    let mut flags = Vec::with_capacity(data.len());
    for x in data.points() {
        let hit = rng.random::<f64>() < spec.epsilon;
        if !hit {
            pts.push(x.clone());
            flags.push(false);
            continue;
        }
        let row = match &spec.mode {
            ContaminationMode::ReplaceDraw { y, scale } => DVector::from_fn(y.len(), |i, _| {
                y[i] + scale * rng.sample::<f64, _>(StandardNormal)
            }),
            ContaminationMode::Shift { y } => x + DVector::from_column_slice(y),
            ContaminationMode::ReplaceFixed { y } => DVector::from_column_slice(y),
        };
        pts.push(row);
        flags.push(true);
    }
    Dataset::with_flags(pts, flags)
}
