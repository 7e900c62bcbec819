#![allow(dead_code)]

use rand::Rng as _;
use sptucker::model::{FactorMatrix, KruskalCore, TuckerModel};
use sptucker::rng::{self, Rng};

pub fn uniform_vec(r: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Model with every parameter drawn from U(−1, 1).
pub fn random_model(dims: &[usize], j: &[usize], r_core: usize, seed: u64) -> TuckerModel {
    let mut r = rng::seeded(seed);
    let factors = dims
        .iter()
        .zip(j)
        .map(|(&d, &jn)| FactorMatrix::from_vec(d, jn, uniform_vec(&mut r, d * jn)).unwrap())
        .collect();
    let mut core = KruskalCore::zeros(j, r_core);
    for (n, &jn) in j.iter().enumerate() {
        for k in 0..r_core {
            let col = uniform_vec(&mut r, jn);
            core.column_mut(n, k).copy_from_slice(&col);
        }
    }
    TuckerModel::from_parts(dims, factors, core).unwrap()
}

pub fn random_index(r: &mut Rng, dims: &[usize]) -> Vec<usize> {
    dims.iter().map(|&d| r.random_range(0..d)).collect()
}

/// `|a − b| / |b|`, or `|a|` when `b` is zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
