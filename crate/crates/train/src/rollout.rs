use std::sync::Arc;

use emvlab::env::{Env, EnvConfig};
use emvlab::TrafficMap;
use emvlab_nn::Context;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{agent_fingerprints, normalize_locals, uniform_policies, Agent, Checkpoint};
use crate::config::TrainerConfig;
use crate::TrainError;

/// One MDP step for all agents, indexed `[agent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: Vec<Vec<f64>>,
    /// Observation with neighbour blocks scaled by α.
    pub critic_obs: Vec<Vec<f64>>,
    pub fps: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub adjusted: Vec<f64>,
    /// Frozen-critic value of this step's state.
    pub values: Vec<f64>,
    /// First step of an episode: recurrent context starts from zero.
    pub reset: bool,
    /// Last step of an episode: no bootstrap.
    pub terminal: bool,
}

/// Contiguous steps collected under fixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub steps: Vec<StepRecord>,
    pub actor_ctx0: Vec<Context<f64>>,
    pub critic_ctx0: Vec<Context<f64>>,
    /// Frozen-critic value of the state after the last step (0 when it was terminal).
    pub bootstrap: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn resets(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.reset).collect()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
        self.bootstrap.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Per-episode learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Summed adjusted reward per agent.
    pub agent_rewards: Vec<f64>,
    /// Summed local reward over all agents and steps.
    pub global_reward: f64,
}

/// Carries environment and recurrent state across batches.
pub struct Runner {
    map: Arc<TrafficMap>,
    env_cfg: EnvConfig,
    trainer: TrainerConfig,
    fingerprints: bool,
    env: Env,
    episode: usize,
    fresh: bool,
    actor_ctx: Vec<Context<f64>>,
    critic_ctx: Vec<Context<f64>>,
    prev: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    ep_adjusted: Vec<f64>,
    ep_global: f64,
    pub logs: Vec<EpisodeLog>,
}

impl Runner {
    /// Starts at episode `ckpt.episodes_done`.
    pub fn new(map: Arc<TrafficMap>, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let n = map.intersection_count();
        let episode = ckpt.episodes_done;
        let env = Env::new(map.clone(), ckpt.env.clone(), ckpt.trainer.episode_seed(episode))?;
        Ok(Runner {
            env,
            env_cfg: ckpt.env.clone(),
            trainer: ckpt.trainer.clone(),
            fingerprints: ckpt.use_fingerprints(),
            episode,
            fresh: true,
            actor_ctx: ckpt.agents.iter().map(|a| a.actor.context()).collect(),
            critic_ctx: ckpt.agents.iter().map(|a| a.critic.context()).collect(),
            prev: uniform_policies(n),
            rng: ChaCha8Rng::seed_from_u64(ckpt.trainer.seed ^ 0x5eed_a2c0),
            ep_adjusted: vec![0.0; n],
            ep_global: 0.0,
            logs: Vec::new(),
            map,
        })
    }

    /// Episode currently being played.
    pub fn episode(&self) -> usize {
        self.episode
    }

    fn start_episode(&mut self, agents: &[Agent]) -> Result<(), TrainError> {
        self.episode += 1;
        self.env = Env::new(
            self.map.clone(),
            self.env_cfg.clone(),
            self.trainer.episode_seed(self.episode),
        )?;
        self.fresh = true;
        self.actor_ctx = agents.iter().map(|a| a.actor.context()).collect();
        self.critic_ctx = agents.iter().map(|a| a.critic.context()).collect();
        self.prev = uniform_policies(agents.len());
        Ok(())
    }

    /// Plays up to `steps` MDP steps with sampled actions, stopping early once the
    /// episode with index `last_episode` is over.
    pub fn rollout(&mut self, agents: &[Agent], steps: usize, last_episode: usize) -> Result<Batch, TrainError> {
        let n = agents.len();
        let alpha = self.env_cfg.alpha;
        let mut batch = Batch {
            steps: Vec::with_capacity(steps),
            actor_ctx0: self.actor_ctx.clone(),
            critic_ctx0: self.critic_ctx.clone(),
            bootstrap: vec![0.0; n],
        };
        while batch.steps.len() < steps && self.episode <= last_episode {
            let mut locals = self.env.local_states();
            normalize_locals(&self.map, &mut locals);
            let obs = self.env.observations(&locals, 1.0);
            let critic_obs = self.env.observations(&locals, alpha);
            let fps = agent_fingerprints(&self.map, &self.prev, self.fingerprints);
            let mut actions = Vec::with_capacity(n);
            let mut values = Vec::with_capacity(n);
            let mut policies = Vec::with_capacity(n);
            for (i, a) in agents.iter().enumerate() {
                let (p, actx) = a.actor.policy(&obs[i], &fps[i], &self.actor_ctx[i])?;
                let (v, cctx) = a.critic.value(&critic_obs[i], &fps[i], &self.critic_ctx[i])?;
                let k = match WeightedIndex::new(&p) {
                    Ok(w) => w.sample(&mut self.rng),
                    Err(_) => crate::agents::argmax(&p),
                };
                actions.push(k);
                values.push(v);
                policies.push(p);
                self.actor_ctx[i] = actx;
                self.critic_ctx[i] = cctx;
            }
            let out = self.env.step(&actions)?;
            self.prev = policies;
            for i in 0..n {
                self.ep_adjusted[i] += out.adjusted[i];
            }
            self.ep_global += out.rewards.iter().sum::<f64>();
            batch.steps.push(StepRecord {
                obs,
                critic_obs,
                fps,
                actions,
                rewards: out.rewards,
                adjusted: out.adjusted,
                values,
                reset: self.fresh,
                terminal: out.done,
            });
            self.fresh = false;
            if out.done {
                self.logs.push(EpisodeLog {
                    episode: self.episode,
                    agent_rewards: std::mem::replace(&mut self.ep_adjusted, vec![0.0; n]),
                    global_reward: std::mem::take(&mut self.ep_global),
                });
                if self.episode < last_episode {
                    self.start_episode(agents)?;
                } else {
                    self.episode += 1;
                }
            }
        }
        if let Some(last) = batch.steps.last() {
            if !last.terminal {
                let mut locals = self.env.local_states();
                normalize_locals(&self.map, &mut locals);
                let critic_obs = self.env.observations(&locals, alpha);
                let fps = agent_fingerprints(&self.map, &self.prev, self.fingerprints);
                for (i, a) in agents.iter().enumerate() {
                    batch.bootstrap[i] = a.critic.value(&critic_obs[i], &fps[i], &self.critic_ctx[i])?.0;
                }
            }
        }
        Ok(batch)
    }
}
