//! Adam optimizer with state keyed by parameter name, checkpointable for
//! exact training resume.

use std::collections::HashMap;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global step, shared across parameters (bias correction).
    pub step: u64,
    pub state: HashMap<String, AdamState<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            state: HashMap::new(),
        }
    }

    /// Advance the shared step counter; call once per optimization step,
    /// before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) {
        debug_assert_eq!(param.shape(), grad.shape(), "adam: grad shape mismatch");
        let st = self.state.entry(name.to_string()).or_insert_with(|| AdamState {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
        });
        let b1 = T::cast(self.beta1);
        let b2 = T::cast(self.beta2);
        let one = T::one();
        let bc1 = T::cast(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::cast(1.0 - self.beta2.powi(self.step as i32));
        let lr_t = T::cast(lr);
        let eps = T::cast(self.eps);
        for ((p, g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data().iter())
            .zip(st.m.data_mut().iter_mut().zip(st.v.data_mut().iter_mut()))
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_a_quadratic() {
        let mut p = Tensor::<f64>::from_vec(&[2], vec![3.0, -2.0]);
        let mut adam = Adam::new();
        for _ in 0..2000 {
            let grad = p.map(|v| 2.0 * v);
            adam.begin_step();
            adam.update("p", &mut p, &grad, 1e-2);
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-3), "{:?}", p.data());
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut p = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0]);
            let mut adam = Adam::new();
            for i in 0..50 {
                let grad = p.map(|v| v * (i as f32 * 0.1 + 0.5));
                adam.begin_step();
                adam.update("p", &mut p, &grad, 1e-3);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
