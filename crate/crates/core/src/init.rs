//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mlp::MlpArch;
use crate::rng::{rng_from_seed, ChaCha8Rng};
use crate::tensor::Tensor;

/// Glorot (Xavier) uniform: entries in `±sqrt(6 / (fan_in + fan_out))`.
/// `fan_in` is the first dimension and `fan_out` the product of the rest.
pub fn glorot_init(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    glorot_with(shape, &mut rng)
}

pub fn glorot_with(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = shape.first().copied().unwrap_or(1);
    let fan_out: usize = shape.iter().skip(1).product::<usize>().max(1);
    let n: usize = shape.iter().product();
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts_unchecked(shape.to_vec(), data)
}

/// Flat parameters for `arch`: Glorot-uniform weights, zero biases.
pub fn init_mlp_params(arch: &MlpArch, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut params = Vec::with_capacity(arch.param_count());
    for (fan_in, fan_out) in arch.layer_dims() {
        params.extend(glorot_with(&[fan_in, fan_out], &mut rng).into_data());
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    params
}

pub fn standard_normal(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::from_parts_unchecked(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::OutputHead;

    #[test]
    fn same_seed_is_bit_identical() {
        assert_eq!(glorot_init(&[7, 3], 11), glorot_init(&[7, 3], 11));
        assert_ne!(glorot_init(&[7, 3], 11), glorot_init(&[7, 3], 12));
    }

    #[test]
    fn bound_for_four_by_two_is_one() {
        let t = glorot_init(&[4, 2], 3);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn moments_match_uniform() {
        // U(-b, b) has mean 0 and variance b^2 / 3 = 2 / (fan_in + fan_out).
        let (fan_in, fan_out) = (200, 500);
        let t = glorot_init(&[fan_in, fan_out], 5);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected_var = 2.0 / (fan_in + fan_out) as f64;
        assert!(mean.abs() < 3.0 * (expected_var / n).sqrt(), "mean {mean}");
        assert!((var / expected_var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn mlp_biases_start_at_zero() {
        let arch = MlpArch::new(4, &[3], 2, OutputHead::Linear);
        let p = init_mlp_params(&arch, 1);
        assert_eq!(p.len(), arch.param_count());
        assert_eq!(&p[12..15], &[0.0; 3]);
        assert_eq!(&p[21..23], &[0.0; 2]);
        assert!(p[..12].iter().all(|v| *v != 0.0));
    }
}
