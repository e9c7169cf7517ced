use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{softmax, Dense, Lstm, LstmCache};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub obs_dim: usize,
    /// 0 disables the fingerprint branch.
    pub fp_dim: usize,
    pub obs_hidden: usize,
    pub fp_hidden: usize,
    pub lstm: usize,
    pub out: usize,
}

impl NetConfig {
    /// Actor: obs -> 128, fingerprints -> 64, LSTM 64, 8 logits.
    pub fn actor(obs_dim: usize, fp_dim: usize, actions: usize) -> Self {
        NetConfig {
            obs_dim,
            fp_dim,
            obs_hidden: 128,
            fp_hidden: 64,
            lstm: 64,
            out: actions,
        }
    }

    /// Critic: same trunk, one linear output.
    pub fn critic(obs_dim: usize, fp_dim: usize) -> Self {
        NetConfig {
            out: 1,
            ..Self::actor(obs_dim, fp_dim, 1)
        }
    }

    fn trunk_width(&self) -> usize {
        self.obs_hidden + if self.fp_dim > 0 { self.fp_hidden } else { 0 }
    }
}

/// Recurrent context carried between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Float> Context<F> {
    pub fn zeros(hidden: usize) -> Self {
        Context {
            h: vec![F::zero(); hidden],
            c: vec![F::zero(); hidden],
        }
    }
}

/// Forward values of one step, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache<F> {
    pub obs: Vec<F>,
    pub fp: Vec<F>,
    pub a_obs: Vec<F>,
    pub a_fp: Vec<F>,
    pub lstm: LstmCache<F>,
    pub h: Vec<F>,
    /// Logits (actor) or the value (critic).
    pub out: Vec<F>,
}

/// Two-branch input, LSTM trunk, linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net<F> {
    pub cfg: NetConfig,
    pub obs_fc: Dense<F>,
    pub fp_fc: Option<Dense<F>>,
    pub lstm: Lstm<F>,
    pub head: Dense<F>,
}

impl<F: Float> Net<F> {
    pub fn zeros(cfg: NetConfig) -> Self {
        Net {
            cfg,
            obs_fc: Dense::zeros(cfg.obs_dim, cfg.obs_hidden),
            fp_fc: (cfg.fp_dim > 0).then(|| Dense::zeros(cfg.fp_dim, cfg.fp_hidden)),
            lstm: Lstm::zeros(cfg.trunk_width(), cfg.lstm),
            head: Dense::zeros(cfg.lstm, cfg.out),
        }
    }

    pub fn init<R: Rng>(cfg: NetConfig, rng: &mut R) -> Self {
        Net {
            cfg,
            obs_fc: Dense::init(cfg.obs_dim, cfg.obs_hidden, rng),
            fp_fc: (cfg.fp_dim > 0).then(|| Dense::init(cfg.fp_dim, cfg.fp_hidden, rng)),
            lstm: Lstm::init(cfg.trunk_width(), cfg.lstm, rng),
            head: Dense::init(cfg.lstm, cfg.out, rng),
        }
    }

    /// A zeroed network of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg)
    }

    pub fn context(&self) -> Context<F> {
        Context::zeros(self.cfg.lstm)
    }

    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![&self.obs_fc.w, &self.obs_fc.b];
        if let Some(fp) = &self.fp_fc {
            out.push(&fp.w);
            out.push(&fp.b);
        }
        out.extend([
            &self.lstm.wx[..],
            &self.lstm.wh[..],
            &self.lstm.b[..],
            &self.head.w[..],
            &self.head.b[..],
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![&mut self.obs_fc.w, &mut self.obs_fc.b];
        if let Some(fp) = &mut self.fp_fc {
            out.push(&mut fp.w);
            out.push(&mut fp.b);
        }
        out.push(&mut self.lstm.wx);
        out.push(&mut self.lstm.wh);
        out.push(&mut self.lstm.b);
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Squared L2 norm over all parameters.
    pub fn norm_sq(&self) -> F {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(F::zero(), |a, &v| a + v * v)
    }

    pub fn scale(&mut self, k: F) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v * k);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x = *x + *y);
        }
    }

    /// Order-sensitive checksum of every parameter's bits (f64 view).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                let bits = v.to_f64().unwrap_or(f64::NAN).to_bits();
                h = (h ^ bits).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn step(&self, obs: &[F], fp: &[F], ctx: &Context<F>) -> Result<(StepCache<F>, Context<F>), NnError> {
        self.obs_fc.check_input(obs, "observation dense")?;
        match &self.fp_fc {
            Some(d) => d.check_input(fp, "fingerprint dense")?,
            None if !fp.is_empty() => {
                return Err(NnError::Shape {
                    layer: "fingerprint dense",
                    expected: 0,
                    got: fp.len(),
                })
            }
            None => {}
        }
        if ctx.h.len() != self.cfg.lstm || ctx.c.len() != self.cfg.lstm {
            return Err(NnError::Shape {
                layer: "lstm context",
                expected: self.cfg.lstm,
                got: ctx.h.len(),
            });
        }
        let mut a_obs = vec![F::zero(); self.cfg.obs_hidden];
        self.obs_fc.forward(obs, &mut a_obs);
        a_obs.iter_mut().for_each(|v| *v = v.max(F::zero()));
        let mut a_fp = Vec::new();
        if let Some(d) = &self.fp_fc {
            a_fp = vec![F::zero(); self.cfg.fp_hidden];
            d.forward(fp, &mut a_fp);
            a_fp.iter_mut().for_each(|v| *v = v.max(F::zero()));
        }
        let mut x = a_obs.clone();
        x.extend_from_slice(&a_fp);
        let lstm = self.lstm.forward(&x, &ctx.h, &ctx.c);
        let h = self.lstm.hidden_of(&lstm);
        let mut out = vec![F::zero(); self.cfg.out];
        self.head.forward(&h, &mut out);
        let next = Context {
            h: h.clone(),
            c: lstm.c.clone(),
        };
        Ok((
            StepCache {
                obs: obs.to_vec(),
                fp: fp.to_vec(),
                a_obs,
                a_fp,
                lstm,
                h,
                out,
            },
            next,
        ))
    }

    /// Policy simplex for one step.
    pub fn policy(&self, obs: &[F], fp: &[F], ctx: &Context<F>) -> Result<(Vec<F>, Context<F>), NnError> {
        let (cache, next) = self.step(obs, fp, ctx)?;
        Ok((softmax(&cache.out), next))
    }

    /// Scalar value for one step.
    pub fn value(&self, obs: &[F], fp: &[F], ctx: &Context<F>) -> Result<(F, Context<F>), NnError> {
        let (cache, next) = self.step(obs, fp, ctx)?;
        Ok((cache.out[0], next))
    }

    /// Runs a window of steps from `ctx0`; a `true` in `resets` zeroes the context
    /// before that step.
    pub fn forward_seq(
        &self,
        obs: &[Vec<F>],
        fps: &[Vec<F>],
        resets: &[bool],
        ctx0: &Context<F>,
    ) -> Result<Vec<StepCache<F>>, NnError> {
        let mut ctx = ctx0.clone();
        let mut out = Vec::with_capacity(obs.len());
        for t in 0..obs.len() {
            if resets[t] {
                ctx = self.context();
            }
            let (cache, next) = self.step(&obs[t], &fps[t], &ctx)?;
            out.push(cache);
            ctx = next;
        }
        Ok(out)
    }

    /// Backpropagation through time over a window. `d_out[t]` is dL/d(out_t). The
    /// context entering the window is treated as a constant.
    pub fn backward_seq(&self, caches: &[StepCache<F>], resets: &[bool], d_out: &[Vec<F>], grad: &mut Net<F>) {
        let hd = self.cfg.lstm;
        let mut dh_next = vec![F::zero(); hd];
        let mut dc_next = vec![F::zero(); hd];
        let mut dh = vec![F::zero(); hd];
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            self.head.backward(&c.h, &d_out[t], &mut grad.head, Some(&mut dh));
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a = *a + *b;
            }
            let (dx, dh_prev, dc_prev) = self.lstm.backward(&c.lstm, &dh, &dc_next, &mut grad.lstm);
            let oh = self.cfg.obs_hidden;
            let d_obs: Vec<F> = (0..oh)
                .map(|k| if c.a_obs[k] > F::zero() { dx[k] } else { F::zero() })
                .collect();
            self.obs_fc.backward(&c.obs, &d_obs, &mut grad.obs_fc, None);
            if let (Some(fp), Some(gfp)) = (&self.fp_fc, &mut grad.fp_fc) {
                let d_fp: Vec<F> = (0..self.cfg.fp_hidden)
                    .map(|k| if c.a_fp[k] > F::zero() { dx[oh + k] } else { F::zero() })
                    .collect();
                fp.backward(&c.fp, &d_fp, gfp, None);
            }
            if resets[t] {
                dh_next.iter_mut().for_each(|v| *v = F::zero());
                dc_next.iter_mut().for_each(|v| *v = F::zero());
            } else {
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
        }
    }
}
