use crate::models::{Parameterized, Weights};

/// Gradient descent with momentum: `v = μ v + g`, `p -= lr v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Weights,
}

impl MomentumSgd {
    pub fn new(learning_rate: f64, momentum: f64, like: &Weights) -> Self {
        Self { learning_rate, momentum, velocity: like.zeros_like() }
    }

    pub fn step(&mut self, weights: &mut Weights, grads: &Weights) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        let params = weights.params_mut();
        let vel = self.velocity.params_mut();
        let g = grads.params();
        for (((_, p), (_, v)), (_, g)) in params.into_iter().zip(vel).zip(g) {
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
        }
    }
}
