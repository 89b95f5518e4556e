use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Single bias-corrected Adam update of one tensor. `step` counts from 1.
pub fn adam_update<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    first_moment: &mut Tensor<T>,
    second_moment: &mut Tensor<T>,
    step: u64,
    cfg: &AdamConfig,
) {
    assert_eq!(param.shape(), grad.shape(), "adam: gradient shape");
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(step as i32));
    let c2 = T::lit(1.0 - cfg.beta2.powi(step as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    let one = T::one();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(first_moment.data_mut())
        .zip(second_moment.data_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first: Vec<_> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` of `None` leaves parameter `i` and its moments alone.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) {
        assert_eq!(params.len(), self.first.len(), "adam: parameter count changed");
        assert_eq!(params.len(), grads.len(), "adam: gradient count");
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if let Some(g) = g {
                adam_update(p, g, &mut self.first[i], &mut self.second[i], self.step, &self.config);
            }
        }
    }
}
