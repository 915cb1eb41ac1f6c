//! Deterministic parameter initializers.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::Arr;

/// He-style normal init scaled for leaky activations:
/// `std = gain / sqrt(fan_in)` with `gain = sqrt(2 / (1 + slope^2))`.
pub fn he_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, slope: f32) -> Arr {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let std = gain / (fan_in as f32).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let z: f32 = rng.sample(StandardNormal);
        z * std
    })
}

/// Conv weight `[OC, C, KH, KW]`, fan-in = C*KH*KW.
pub fn conv_weight<R: Rng>(rng: &mut R, oc: usize, c: usize, kh: usize, kw: usize) -> Arr {
    he_normal(rng, &[oc, c, kh, kw], c * kh * kw, 0.2)
}

/// Dense weight `[IN, OUT]`, fan-in = IN.
pub fn dense_weight<R: Rng>(rng: &mut R, input: usize, output: usize) -> Arr {
    he_normal(rng, &[input, output], input, 0.2)
}

pub fn zeros(shape: &[usize]) -> Arr {
    ArrayD::zeros(IxDyn(shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn init_is_deterministic_for_a_seed() {
        let a = conv_weight(&mut ChaCha20Rng::seed_from_u64(9), 4, 3, 3, 3);
        let b = conv_weight(&mut ChaCha20Rng::seed_from_u64(9), 4, 3, 3, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn he_std_is_roughly_right() {
        let w = he_normal(&mut ChaCha20Rng::seed_from_u64(1), &[20000], 100, 0.0);
        let mean: f32 = w.iter().sum::<f32>() / w.len() as f32;
        let var: f32 = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / w.len() as f32;
        let expect = 2.0 / 100.0;
        assert!((var - expect).abs() < expect * 0.1, "var {var} vs {expect}");
    }
}
