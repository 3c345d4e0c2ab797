use std::collections::HashMap;

use super::graph::Gradients;
use super::params::{ParamId, ParamStore};

/// Adam over a fixed set of parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    params: Vec<ParamId>,
    state: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64, params: Vec<ParamId>) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None, params, state: HashMap::new(), step: 0 }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update using whichever owned parameters received gradients.
    pub fn step(&mut self, ps: &mut ParamStore, grads: &Gradients) {
        let all: HashMap<ParamId, &super::Tensor> = grads.params().into_iter().collect();
        let owned: Vec<(ParamId, &super::Tensor)> =
            self.params.iter().filter_map(|id| all.get(id).map(|g| (*id, *g))).collect();
        if owned.is_empty() {
            return;
        }
        self.step += 1;
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = owned.iter().map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (id, g) in owned {
            let (m, v) = self.state.entry(id).or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            let p = ps.get_mut(id);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * scale;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Write running-statistic updates produced during a training forward pass.
pub fn apply_buffer_updates(ps: &mut ParamStore, updates: Vec<(ParamId, super::Tensor)>) {
    for (id, t) in updates {
        ps.set(id, t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut ps = ParamStore::new();
        let id = ps.add("x", Tensor::new(vec![2], vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1, vec![id]);
        for _ in 0..300 {
            let g = Graph::training(0);
            let x = g.param(&ps, id);
            let loss = g.mse(x, &Tensor::new(vec![2], vec![1.0, 1.0]));
            let grads = g.backward(loss);
            opt.step(&mut ps, &grads);
        }
        assert!(ps.get(id).data().iter().all(|v| (v - 1.0).abs() < 1e-2), "{:?}", ps.get(id));
    }

    #[test]
    fn unowned_parameters_are_untouched() {
        let mut ps = ParamStore::new();
        let a = ps.add("a", Tensor::scalar(1.0));
        let b = ps.add("b", Tensor::scalar(1.0));
        let mut opt = Adam::new(0.1, vec![a]);
        let g = Graph::training(0);
        let s = g.add(g.param(&ps, a), g.param(&ps, b));
        let grads = g.backward(s);
        opt.step(&mut ps, &grads);
        assert_ne!(ps.get(a).item(), 1.0);
        assert_eq!(ps.get(b).item(), 1.0);
    }
}
