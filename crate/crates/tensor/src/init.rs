use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// He-uniform: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
