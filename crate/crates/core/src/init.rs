use rand::Rng;

use crate::numkit::Tensor;

/// Weight matrix with entries uniform in `[-a, a]`, `a = sqrt(1 / fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive dims")
}

pub fn zero_bias(len: usize) -> Tensor {
    Tensor::zeros(&[len])
}
