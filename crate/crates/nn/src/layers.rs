use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::NnError;

/// Fully connected layer `y = W x + b`, `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<F> {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<F>,
    pub b: Vec<F>,
}

impl<F: Float> Dense<F> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            w: vec![F::zero(); n_in * n_out],
            b: vec![F::zero(); n_out],
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in), zero biases.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(n_in, n_out);
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        for w in &mut d.w {
            *w = F::from(rng.random_range(-bound..=bound)).unwrap();
        }
        d
    }

    pub fn forward(&self, x: &[F], y: &mut [F]) {
        debug_assert_eq!(x.len(), self.n_in);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc = acc + *wi * *xi;
            }
            *yo = acc;
        }
    }

    /// Accumulates parameter gradients into `grad` and, when given, writes dL/dx.
    pub fn backward(&self, x: &[F], dy: &[F], grad: &mut Dense<F>, dx: Option<&mut [F]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == F::zero() {
                continue;
            }
            grad.b[o] = grad.b[o] + g;
            let row = &mut grad.w[o * self.n_in..(o + 1) * self.n_in];
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw = *gw + g * *xi;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = F::zero());
            for (o, &g) in dy.iter().enumerate() {
                if g == F::zero() {
                    continue;
                }
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                for (d, wi) in dx.iter_mut().zip(row) {
                    *d = *d + g * *wi;
                }
            }
        }
    }

    pub fn check_input(&self, x: &[F], layer: &'static str) -> Result<(), NnError> {
        if x.len() != self.n_in {
            return Err(NnError::Shape {
                layer,
                expected: self.n_in,
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// LSTM cell with gates stacked (input, forget, cell, output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm<F> {
    pub n_in: usize,
    pub hidden: usize,
    /// `4H x I`.
    pub wx: Vec<F>,
    /// `4H x H`.
    pub wh: Vec<F>,
    pub b: Vec<F>,
}

/// Values kept from one LSTM step for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache<F> {
    pub x: Vec<F>,
    pub h_prev: Vec<F>,
    pub c_prev: Vec<F>,
    /// Activated gates, `4H`.
    pub gates: Vec<F>,
    pub c: Vec<F>,
    pub tanh_c: Vec<F>,
}

impl<F: Float> Lstm<F> {
    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        Lstm {
            n_in,
            hidden,
            wx: vec![F::zero(); 4 * hidden * n_in],
            wh: vec![F::zero(); 4 * hidden * hidden],
            b: vec![F::zero(); 4 * hidden],
        }
    }

    /// Fan-in uniform input weights, orthogonal recurrent blocks, forget bias 1.
    pub fn init<R: Rng>(n_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(n_in, hidden);
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        for w in &mut l.wx {
            *w = F::from(rng.random_range(-bound..=bound)).unwrap();
        }
        for gate in 0..4 {
            let q = orthogonal(hidden, rng);
            for r in 0..hidden {
                for c in 0..hidden {
                    l.wh[(gate * hidden + r) * hidden + c] = F::from(q[r * hidden + c]).unwrap();
                }
            }
        }
        for k in hidden..2 * hidden {
            l.b[k] = F::one();
        }
        l
    }

    pub fn forward(&self, x: &[F], h_prev: &[F], c_prev: &[F]) -> LstmCache<F> {
        let hd = self.hidden;
        let mut z = self.b.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            let rx = &self.wx[r * self.n_in..(r + 1) * self.n_in];
            let mut acc = *zr;
            for (w, v) in rx.iter().zip(x) {
                acc = acc + *w * *v;
            }
            let rh = &self.wh[r * hd..(r + 1) * hd];
            for (w, v) in rh.iter().zip(h_prev) {
                acc = acc + *w * *v;
            }
            *zr = acc;
        }
        for (k, g) in z.iter_mut().enumerate() {
            *g = if (2 * hd..3 * hd).contains(&k) {
                g.tanh()
            } else {
                sigmoid(*g)
            };
        }
        let mut c = vec![F::zero(); hd];
        let mut tanh_c = vec![F::zero(); hd];
        for j in 0..hd {
            c[j] = z[hd + j] * c_prev[j] + z[j] * z[2 * hd + j];
            tanh_c[j] = c[j].tanh();
        }
        LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: z,
            c,
            tanh_c,
        }
    }

    /// Hidden output of a cached step.
    pub fn hidden_of(&self, cache: &LstmCache<F>) -> Vec<F> {
        let hd = self.hidden;
        (0..hd).map(|j| cache.gates[3 * hd + j] * cache.tanh_c[j]).collect()
    }

    /// Backward through one step given dL/dh and dL/dc flowing into it. Returns
    /// (dL/dx, dL/dh_prev, dL/dc_prev).
    pub fn backward(
        &self,
        cache: &LstmCache<F>,
        dh: &[F],
        dc_next: &[F],
        grad: &mut Lstm<F>,
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let hd = self.hidden;
        let g = &cache.gates;
        let mut dz = vec![F::zero(); 4 * hd];
        let mut dc_prev = vec![F::zero(); hd];
        for j in 0..hd {
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = cache.tanh_c[j];
            let dc = dc_next[j] + dh[j] * o * (F::one() - tc * tc);
            let d_o = dh[j] * tc;
            let d_i = dc * gg;
            let d_f = dc * cache.c_prev[j];
            let d_g = dc * i;
            dc_prev[j] = dc * f;
            dz[j] = d_i * i * (F::one() - i);
            dz[hd + j] = d_f * f * (F::one() - f);
            dz[2 * hd + j] = d_g * (F::one() - gg * gg);
            dz[3 * hd + j] = d_o * o * (F::one() - o);
        }
        let mut dx = vec![F::zero(); self.n_in];
        let mut dh_prev = vec![F::zero(); hd];
        for (r, &d) in dz.iter().enumerate() {
            if d == F::zero() {
                continue;
            }
            grad.b[r] = grad.b[r] + d;
            let off_x = r * self.n_in;
            for k in 0..self.n_in {
                grad.wx[off_x + k] = grad.wx[off_x + k] + d * cache.x[k];
                dx[k] = dx[k] + d * self.wx[off_x + k];
            }
            let off_h = r * hd;
            for k in 0..hd {
                grad.wh[off_h + k] = grad.wh[off_h + k] + d * cache.h_prev[k];
                dh_prev[k] = dh_prev[k] + d * self.wh[off_h + k];
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

/// Random `n x n` orthogonal matrix (Gram-Schmidt on a Gaussian matrix), row-major.
pub fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q.concat()
}

/// Numerically stable softmax.
pub fn softmax<F: Float>(z: &[F]) -> Vec<F> {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = z.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().copied().fold(F::zero(), |a, b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

/// log softmax.
pub fn log_softmax<F: Float>(z: &[F]) -> Vec<F> {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let s = z.iter().map(|&v| (v - m).exp()).fold(F::zero(), |a, b| a + b);
    let lse = m + s.ln();
    z.iter().map(|&v| v - lse).collect()
}

/// -sum p log p.
pub fn entropy<F: Float>(p: &[F]) -> F {
    p.iter()
        .filter(|&&v| v > F::zero())
        .fold(F::zero(), |acc, &v| acc - v * v.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 7;
        let q = orthogonal(n, &mut rng);
        for a in 0..n {
            for b in 0..n {
                let d: f64 = (0..n).map(|k| q[a * n + k] * q[b * n + k]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_simplex() {
        let p = softmax(&[1000.0, -1000.0, 0.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
        let u = softmax(&[0.0f64; 8]);
        assert!(u.iter().all(|&v| v == 0.125));
        assert!((entropy(&u) - 8f64.ln()).abs() < 1e-12);
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let p = softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in lp.iter().zip(&p) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_init_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l: Lstm<f64> = Lstm::init(3, 4, &mut rng);
        assert_eq!(&l.b[4..8], &[1.0; 4]);
        assert_eq!(&l.b[..4], &[0.0; 4]);
    }

    proptest::proptest! {
        #[test]
        fn softmax_simplex_prop(z in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&z);
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h = entropy(&p);
            proptest::prop_assert!(h >= -1e-12 && h <= (z.len() as f64).ln() + 1e-12);
        }
    }
}
