//! Adaptive-moment optimizer.

use super::graph::Graph;
use super::params::ParamStore;

/// Adam with configurable moment decays. The style-transfer training uses
/// `beta1 = 0.0, beta2 = 0.99`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
        }
    }

    /// Applies one update using the gradients accumulated in `graph` for the
    /// parameters bound from `store`. Parameters without a gradient are left
    /// untouched. Returns the global gradient L2 norm (diagnostic).
    pub fn step(&mut self, store: &mut ParamStore, graph: &Graph) -> f32 {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - (self.beta1 as f64).powf(t);
        let bc2 = 1.0 - (self.beta2 as f64).powf(t);
        let mut sq_norm = 0.0f64;

        let bound: Vec<(usize, super::graph::Var)> = graph.bound_params().collect();
        let params = store.params_mut();
        for (id, var) in bound {
            let Some(grad) = graph.grad(var) else {
                continue;
            };
            let p = &mut params[id];
            debug_assert_eq!(grad.shape(), p.value.shape());
            for ((g, m), (v, w)) in grad
                .iter()
                .zip(p.m.iter_mut())
                .zip(p.v.iter_mut().zip(p.value.iter_mut()))
            {
                sq_norm += (*g as f64) * (*g as f64);
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m as f64 / bc1;
                let v_hat = *v as f64 / bc2;
                *w -= (self.lr as f64 * m_hat / (v_hat.sqrt() + self.eps as f64)) as f32;
            }
        }
        sq_norm.sqrt() as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize (w - 3)^2 elementwise.
        let mut store = ParamStore::new();
        let id = store.register("w", ArrayD::from_elem(IxDyn(&[4]), 0.0f32));
        let mut adam = Adam::new(0.1, 0.0, 0.99);
        for _ in 0..300 {
            let mut g = Graph::new();
            let w = store.var(&mut g, id);
            let t = g.add_scalar(w, -3.0);
            let sq = g.mul(t, t);
            let loss = g.sum_all(sq);
            g.backward(loss);
            adam.step(&mut store, &g);
        }
        for &v in store.value(id).iter() {
            assert!((v - 3.0).abs() < 0.05, "converged to {v}");
        }
    }

    #[test]
    fn bias_correction_first_step_moves_by_lr() {
        // With beta1 = 0, the first step is lr * g / (|g| + eps) = lr * sign(g).
        let mut store = ParamStore::new();
        let id = store.register("w", ArrayD::from_elem(IxDyn(&[1]), 1.0f32));
        let mut adam = Adam::new(0.01, 0.0, 0.99);
        let mut g = Graph::new();
        let w = store.var(&mut g, id);
        let loss = g.sum_all(w);
        g.backward(loss);
        adam.step(&mut store, &g);
        let v = store.value(id)[[0]];
        assert!((v - (1.0 - 0.01)).abs() < 1e-5, "got {v}");
    }
}
