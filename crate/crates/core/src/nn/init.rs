//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Glorot uniform law.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform tensor: i.i.d. draws on `[-a, a]`, `a = glorot_bound(fan_in, fan_out)`.
///
/// Values are drawn in `f64` and cast, so `f32` and `f64` tensors built from
/// the same seed agree up to rounding.
pub fn glorot_uniform<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Tensor<T> {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    uniform_tensor(shape, glorot_bound(fan_in, fan_out), seed)
}

/// Uniform tensor on `[-bound, bound]`.
pub fn uniform_tensor<T: Scalar>(shape: &[usize], bound: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Derives an independent sub-seed for parameter `index` under `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_stay_within_bound() {
        let a = glorot_bound(40, 40);
        let t: Tensor<f64> = glorot_uniform(&[40, 40, 2], 80, 80, 11);
        let a2 = glorot_bound(80, 80);
        assert!(a2 < a);
        assert!(t.data().iter().all(|v| v.abs() <= a2));
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = glorot_uniform(&[8, 4, 2], 8, 16, 42);
        let b: Tensor<f32> = glorot_uniform(&[8, 4, 2], 8, 16, 42);
        let c: Tensor<f32> = glorot_uniform(&[8, 4, 2], 8, 16, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_variance_matches_uniform_law() {
        // Var(U[-a, a]) = a^2 / 3
        let a = glorot_bound(3, 5);
        let t: Tensor<f64> = glorot_uniform(&[100_000], 3, 5, 2024);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = a * a / 3.0;
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn sub_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| sub_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
