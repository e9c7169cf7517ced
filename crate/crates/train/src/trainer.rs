use std::sync::Arc;

use emvlab::baselines::run_episode;
use emvlab::env::Env;
use emvlab::TrafficMap;
use emvlab_nn::{clip_global_norm, Net};
use serde::{Deserialize, Serialize};

use crate::agents::{Checkpoint, LearnedController};
use crate::loss::{compute_returns, policy_loss, policy_loss_grad, value_loss, value_loss_grad};
use crate::rollout::{Batch, EpisodeLog, Runner};
use crate::TrainError;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpisodeLog>,
}

/// Trains from `ckpt.episodes_done` up to `ckpt.trainer.episodes` episodes.
pub fn train(map: Arc<TrafficMap>, mut ckpt: Checkpoint) -> Result<TrainOutput, TrainError> {
    ckpt.trainer.validate()?;
    if ckpt.agents.len() != map.intersection_count() {
        return Err(TrainError::Config(format!(
            "checkpoint has {} agents, map has {} intersections",
            ckpt.agents.len(),
            map.intersection_count()
        )));
    }
    if ckpt.episodes_done >= ckpt.trainer.episodes {
        return Ok(TrainOutput {
            checkpoint: ckpt,
            curve: Vec::new(),
        });
    }
    let last = ckpt.trainer.episodes - 1;
    let mut runner = Runner::new(map, &ckpt)?;
    while runner.episode() <= last {
        let episode = runner.episode();
        let mut batch = runner.rollout(&ckpt.agents, ckpt.trainer.batch_steps, last)?;
        if batch.is_empty() {
            break;
        }
        update(&mut ckpt, &batch, episode)?;
        batch.clear();
        ckpt.episodes_done = runner.logs.last().map_or(ckpt.episodes_done, |l| l.episode + 1);
    }
    Ok(TrainOutput {
        checkpoint: ckpt,
        curve: std::mem::take(&mut runner.logs),
    })
}

/// Gradients for every agent from the same batch, then one synchronized update.
fn update(ckpt: &mut Checkpoint, batch: &Batch, episode: usize) -> Result<(), TrainError> {
    let cfg = &ckpt.trainer;
    let returns = compute_returns(batch, cfg.gamma);
    let resets = batch.resets();
    let mut grads: Vec<(Net<f64>, Net<f64>)> = Vec::with_capacity(ckpt.agents.len());
    for (i, agent) in ckpt.agents.iter().enumerate() {
        let col = |f: &dyn Fn(&crate::rollout::StepRecord) -> Vec<f64>| -> Vec<Vec<f64>> {
            batch.steps.iter().map(f).collect()
        };
        let fps = col(&|s| s.fps[i].clone());
        let r: Vec<f64> = returns.iter().map(|row| row[i]).collect();

        let c_obs = col(&|s| s.critic_obs[i].clone());
        let c_caches = agent.critic.forward_seq(&c_obs, &fps, &resets, &batch.critic_ctx0[i])?;
        let v: Vec<f64> = c_caches.iter().map(|c| c.out[0]).collect();
        let lv = value_loss(&v, &r);
        let fail = |what| TrainError::NonFinite {
            what,
            agent: i,
            episode,
            checkpoint: Box::new(ckpt.clone()),
        };
        if !lv.is_finite() {
            return Err(fail("value loss"));
        }
        let dv: Vec<Vec<f64>> = value_loss_grad(&v, &r).into_iter().map(|d| vec![d]).collect();
        let mut gc = agent.critic.zeros_like();
        agent.critic.backward_seq(&c_caches, &resets, &dv, &mut gc);

        let a_obs = col(&|s| s.obs[i].clone());
        let a_caches = agent.actor.forward_seq(&a_obs, &fps, &resets, &batch.actor_ctx0[i])?;
        let logits: Vec<Vec<f64>> = a_caches.iter().map(|c| c.out.clone()).collect();
        let actions: Vec<usize> = batch.steps.iter().map(|s| s.actions[i]).collect();
        let adv: Vec<f64> = batch.steps.iter().zip(&r).map(|(s, r)| r - s.values[i]).collect();
        let lp = policy_loss(&logits, &actions, &adv, cfg.entropy);
        if !lp.is_finite() {
            return Err(fail("policy loss"));
        }
        let dz = policy_loss_grad(&logits, &actions, &adv, cfg.entropy);
        let mut ga = agent.actor.zeros_like();
        agent.actor.backward_seq(&a_caches, &resets, &dz, &mut ga);
        let na = clip_global_norm(&mut ga, cfg.grad_clip);
        let nc = clip_global_norm(&mut gc, cfg.grad_clip);
        if !na.is_finite() || !nc.is_finite() {
            return Err(fail("gradient"));
        }
        grads.push((ga, gc));
    }
    for (agent, (ga, gc)) in ckpt.agents.iter_mut().zip(&grads) {
        agent.actor_opt.update(&mut agent.actor, ga);
        agent.critic_opt.update(&mut agent.critic, gc);
    }
    ckpt.updates += 1;
    Ok(())
}

/// Metrics of one greedy evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub t_emv: Option<f64>,
    pub emv_finished: bool,
    pub t_avg: Option<f64>,
    pub completed: usize,
    pub unfinished: usize,
}

/// Greedy rollouts of `ckpt` on one fresh environment per seed.
pub fn evaluate(ckpt: &Checkpoint, map: &Arc<TrafficMap>, seeds: &[u64]) -> Result<Vec<EvalRow>, TrainError> {
    seeds
        .iter()
        .map(|&seed| {
            let mut env = Env::new(map.clone(), ckpt.env.clone(), seed)?;
            let mut ctrl = LearnedController::new(ckpt);
            let m = run_episode(&mut env, &mut ctrl)?;
            Ok(EvalRow {
                seed,
                t_emv: m.t_emv.map(|t| t.seconds),
                emv_finished: m.t_emv.is_some_and(|t| t.finished),
                t_avg: m.t_avg,
                completed: m.completed,
                unfinished: m.unfinished,
            })
        })
        .collect()
}
