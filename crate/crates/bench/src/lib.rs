//! Fixtures shared by the benchmarks.

use ksd_bayes::models::{make_liu_model, make_normal_location, ExponentialFamily, IsingModel};
use ksd_bayes::{BinaryLatticeKernel, Dataset, ScoreModel, WeightedKernel, WeightingFunction};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture<M, K> {
    pub model: M,
    pub kernel: K,
    pub data: Dataset,
    pub theta: DVector<f64>,
}

/// Normal location, `n` draws at θ = 1, rational weight.
pub fn normal(n: usize, seed: u64) -> Fixture<ExponentialFamily, WeightedKernel> {
    let model = make_normal_location();
    let theta = DVector::from_element(1, 1.0);
    let data = model.sample(&theta, n, &mut ChaCha8Rng::seed_from_u64(seed)).expect("sample");
    let kernel = WeightedKernel::default_for(&data, WeightingFunction::ScalarRational { a: 1.0, b: 0.0, c: 1.0 })
        .expect("kernel");
    Fixture { model, kernel, data, theta }
}

/// Five-dimensional Liu model; data drawn at θ = 0, evaluated at (0.5, −0.5).
pub fn liu(n: usize, seed: u64) -> Fixture<ExponentialFamily, WeightedKernel> {
    let model = make_liu_model();
    let data = model
        .sample(&DVector::zeros(2), n, &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("sample");
    let theta = DVector::from_column_slice(&[0.5, -0.5]);
    let kernel = WeightedKernel::default_for(&data, WeightingFunction::LiuDiagonal).expect("kernel");
    Fixture { model, kernel, data, theta }
}

/// `side × side` Ising lattice at temperature 5.
pub fn ising(side: usize, n: usize, seed: u64) -> Fixture<IsingModel, BinaryLatticeKernel> {
    let model = IsingModel::new(side).expect("lattice");
    let theta = DVector::from_element(1, 5.0);
    let data = model.sample(&theta, n, &mut ChaCha8Rng::seed_from_u64(seed)).expect("sample");
    let kernel = BinaryLatticeKernel::new(side * side, WeightingFunction::Identity).expect("kernel");
    Fixture { model, kernel, data, theta }
}
