use emvlab::baselines::Controller;
use emvlab::env::{Env, EnvConfig};
use emvlab::network::PHASE_SLOTS;
use emvlab::rlcore::{fingerprints, local_state_len};
use emvlab::TrafficMap;
use emvlab_nn::{Adam, Context, Net, NetConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, TrainerConfig};

/// Actor, critic and their optimizers for one intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub actor: Net<f64>,
    pub critic: Net<f64>,
    pub actor_opt: Adam<f64>,
    pub critic_opt: Adam<f64>,
}

impl Agent {
    pub fn new(obs_dim: usize, fp_dim: usize, lr: f64, total_updates: usize, rng: &mut ChaCha8Rng) -> Self {
        let actor = Net::init(NetConfig::actor(obs_dim, fp_dim, PHASE_SLOTS), rng);
        let critic = Net::init(NetConfig::critic(obs_dim, fp_dim), rng);
        Agent {
            actor_opt: Adam::new(&actor, lr, total_updates),
            critic_opt: Adam::new(&critic, lr, total_updates),
            actor,
            critic,
        }
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub trainer: TrainerConfig,
    pub env: EnvConfig,
    pub ablation: Ablation,
    pub agents: Vec<Agent>,
    pub episodes_done: usize,
    pub updates: usize,
}

impl Checkpoint {
    /// Fresh per-agent networks sized for `map`.
    pub fn init(map: &TrafficMap, trainer: &TrainerConfig, env: &EnvConfig, ablation: Ablation) -> Self {
        let obs_dim = 5 * local_state_len(map);
        let fp_dim = if ablation.fingerprints() { 4 * PHASE_SLOTS } else { 0 };
        let per_episode = env.steps_per_episode();
        let total_updates = (trainer.episodes * per_episode).div_ceil(trainer.batch_steps.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(trainer.seed);
        let agents = (0..map.intersection_count())
            .map(|_| Agent::new(obs_dim, fp_dim, trainer.lr, total_updates, &mut rng))
            .collect();
        let mut env = env.clone();
        ablation.apply(&mut env);
        Checkpoint {
            trainer: trainer.clone(),
            env,
            ablation,
            agents,
            episodes_done: 0,
            updates: 0,
        }
    }

    pub fn use_fingerprints(&self) -> bool {
        self.ablation.fingerprints()
    }

    /// Order-sensitive hash over all actor and critic parameters.
    pub fn checksum(&self) -> u64 {
        self.agents.iter().fold(0u64, |h, a| {
            h.rotate_left(7) ^ a.actor.checksum() ^ a.critic.checksum().rotate_left(1)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.agents
            .iter()
            .all(|a| a.actor.all_finite() && a.critic.all_finite())
    }
}

/// Divides the lane-count features of every local state by the largest lane capacity.
pub fn normalize_locals(map: &TrafficMap, locals: &mut [Vec<f64>]) {
    let counts = 8 * map.max_lanes();
    let cap = map
        .lanes()
        .iter()
        .map(|l| map.lane_capacity(l.id))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    for s in locals {
        s[..counts].iter_mut().for_each(|v| *v /= cap);
    }
}

pub(crate) fn uniform_policies(n: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / PHASE_SLOTS as f64; PHASE_SLOTS]; n]
}

pub(crate) fn agent_fingerprints(map: &TrafficMap, prev: &[Vec<f64>], enabled: bool) -> Vec<Vec<f64>> {
    map.intersections()
        .map(|i| {
            if enabled {
                fingerprints(map, prev, i)
            } else {
                Vec::new()
            }
        })
        .collect()
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

/// Greedy controller driven by trained actors, one recurrent context per agent.
pub struct LearnedController<'a> {
    agents: &'a [Agent],
    fingerprints: bool,
    ctx: Vec<Context<f64>>,
    prev: Vec<Vec<f64>>,
}

impl<'a> LearnedController<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Self {
        LearnedController {
            agents: &ckpt.agents,
            fingerprints: ckpt.use_fingerprints(),
            ctx: ckpt.agents.iter().map(|a| a.actor.context()).collect(),
            prev: uniform_policies(ckpt.agents.len()),
        }
    }
}

impl Controller for LearnedController<'_> {
    fn actions(&mut self, env: &Env) -> Vec<usize> {
        let map = env.map();
        let mut locals = env.local_states();
        normalize_locals(map, &mut locals);
        let obs = env.observations(&locals, 1.0);
        let fps = agent_fingerprints(map, &self.prev, self.fingerprints);
        let mut actions = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter().enumerate() {
            let (p, ctx) = agent
                .actor
                .policy(&obs[i], &fps[i], &self.ctx[i])
                .expect("checkpoint shapes match the map");
            actions.push(argmax(&p));
            self.ctx[i] = ctx;
            self.prev[i] = p;
        }
        actions
    }
}
