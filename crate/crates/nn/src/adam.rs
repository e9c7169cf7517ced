use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::net::Net;

/// Adam with a learning rate decayed linearly to zero over `total_steps` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<F> {
    pub lr0: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub total_steps: usize,
    pub step: usize,
    m: Net<F>,
    v: Net<F>,
}

impl<F: Float> Adam<F> {
    pub fn new(net: &Net<F>, lr0: F, total_steps: usize) -> Self {
        Adam {
            lr0,
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            eps: F::from(1e-8).unwrap(),
            total_steps,
            step: 0,
            m: net.zeros_like(),
            v: net.zeros_like(),
        }
    }

    /// Learning rate for the next update.
    pub fn lr(&self) -> F {
        if self.total_steps == 0 {
            return self.lr0;
        }
        let frac = F::from(self.step).unwrap() / F::from(self.total_steps).unwrap();
        self.lr0 * (F::one() - frac).max(F::zero())
    }

    /// Applies one descent step with gradient `grad`.
    pub fn update(&mut self, net: &mut Net<F>, grad: &Net<F>) {
        let lr = self.lr();
        self.step += 1;
        let t = self.step as i32;
        let c1 = F::one() - self.beta1.powi(t);
        let c2 = F::one() - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let params = net.tensors_mut();
        let grads = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (F::one() - b1) * g[k];
                v[k] = b2 * v[k] + (F::one() - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] = p[k] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_global_norm<F: Float>(grad: &mut Net<F>, max_norm: F) -> F {
    let norm = grad.norm_sq().sqrt();
    if norm > max_norm {
        grad.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn tiny() -> Net<f64> {
        Net::zeros(NetConfig {
            obs_dim: 1,
            fp_dim: 0,
            obs_hidden: 1,
            fp_hidden: 0,
            lstm: 1,
            out: 1,
        })
    }

    #[test]
    fn five_steps_by_hand() {
        let mut net = tiny();
        let mut grad = net.zeros_like();
        let mut opt = Adam::new(&net, 0.1, 10);
        let gs = [1.0, -2.0, 0.5, 0.0, 3.0];
        let (mut m, mut v, mut p) = (0.0f64, 0.0f64, 0.0f64);
        for (s, &g) in gs.iter().enumerate() {
            grad.head.b[0] = g;
            opt.update(&mut net, &grad);
            let lr = 0.1 * (1.0 - s as f64 / 10.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (s + 1) as i32;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((net.head.b[0] - p).abs() < 1e-14, "step {s}");
            assert_eq!(net.head.w[0], 0.0);
        }
        // first step moves by lr0 * sign(g)
        assert!((opt.lr() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn lr_reaches_zero() {
        let net = tiny();
        let mut opt = Adam::new(&net, 1.0, 4);
        opt.step = 4;
        assert_eq!(opt.lr(), 0.0);
        opt.step = 9;
        assert_eq!(opt.lr(), 0.0);
    }

    #[test]
    fn clipping() {
        let mut g = tiny();
        g.head.b[0] = 30.0;
        g.head.w[0] = 40.0;
        let n = clip_global_norm(&mut g, 40.0);
        assert!((n - 50.0).abs() < 1e-12);
        assert!((g.norm_sq().sqrt() - 40.0).abs() < 1e-12);
        let n2 = clip_global_norm(&mut g, 40.0);
        assert!((n2 - 40.0).abs() < 1e-12);
        assert!((g.head.b[0] - 24.0).abs() < 1e-12);
    }
}
