//! Parameter initializers.

use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::numerics::Scalar;
use crate::Rng;

/// Normal(0, std) truncated to two standard deviations.
pub fn trunc_normal<T: Scalar>(rng: &mut Rng, n: usize, std: f64) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    (0..n)
        .map(|_| loop {
            let v: f64 = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::c(v);
            }
        })
        .collect()
}

/// Uniform on `[-a, a]`.
pub fn uniform<T: Scalar>(rng: &mut Rng, n: usize, a: f64) -> Vec<T> {
    (0..n).map(|_| T::c(rng.random_range(-a..=a))).collect()
}
