//! Synthetic data and the preprocessing steps offered by `gen-data`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Components `(mean, sd, weight)` of a galaxy-velocity-like mixture
/// (in 1000 km/s): a small cluster either side of a broad main body.
pub const TRIMODAL: [(f64, f64, f64); 3] = [(9.7, 0.5, 0.085), (21.0, 2.0, 0.83), (33.0, 1.0, 0.085)];

pub fn trimodal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let comps: Vec<Normal<f64>> = TRIMODAL
        .iter()
        .map(|(m, s, _)| Normal::new(*m, *s).expect("valid component"))
        .collect();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = comps.len() - 1;
            for (i, (_, _, w)) in TRIMODAL.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            comps[pick].sample(rng)
        })
        .collect()
}

/// Elementwise square root; negative entries are an error.
pub fn sqrt_transform(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, String> {
    rows.iter()
        .map(|r| {
            r.iter()
                .map(|v| if *v >= 0.0 { Ok(v.sqrt()) } else { Err(format!("cannot take square root of {v}")) })
                .collect()
        })
        .collect()
}

fn column_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / (n - 1.0).max(1.0);
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Drop rows with any coordinate more than `k` sample sd from its column mean.
pub fn remove_outliers(rows: &[Vec<f64>], k: f64) -> Vec<Vec<f64>> {
    let (mean, sd) = column_moments(rows);
    rows.iter()
        .filter(|r| {
            r.iter()
                .zip(mean.iter().zip(&sd))
                .all(|(v, (m, s))| *s == 0.0 || (v - m).abs() <= k * s)
        })
        .cloned()
        .collect()
}

/// Divide each column by its sample sd (no centring).
pub fn unit_sd(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (_, sd) = column_moments(rows);
    rows.iter()
        .map(|r| r.iter().zip(&sd).map(|(v, s)| if *s > 0.0 { v / s } else { *v }).collect())
        .collect()
}
