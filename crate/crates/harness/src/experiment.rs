use std::fs;
use std::path::Path;
use std::sync::Arc;

use emvlab::baselines::{run_episode, Controller, FixedTime, GreenWave, MaxPressure};
use emvlab::env::Env;
use emvlab::TrafficMap;
use emvlab_train::{evaluate, train, Ablation, Checkpoint, EpisodeLog, EvalRow, TrainOutput};
use serde::{Deserialize, Serialize};

use crate::spec::{Arm, ExperimentSpec};
use crate::HarnessError;

/// One per-seed result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub arm: String,
    pub seed: String,
    pub t_emv: Option<f64>,
    pub t_emv_std: Option<f64>,
    pub emv_finished: Option<bool>,
    pub t_avg: Option<f64>,
    pub t_avg_std: Option<f64>,
    pub completed: Option<usize>,
    pub status: String,
}

impl ResultRow {
    pub fn from_eval(arm: &str, r: &EvalRow, has_emv: bool) -> Self {
        ResultRow {
            arm: arm.to_string(),
            seed: r.seed.to_string(),
            t_emv: if has_emv { r.t_emv } else { None },
            t_emv_std: None,
            emv_finished: has_emv.then_some(r.emv_finished),
            t_avg: r.t_avg,
            t_avg_std: None,
            completed: Some(r.completed),
            status: "ok".into(),
        }
    }

    fn failed(arm: &str, seed: u64, err: &HarnessError) -> Self {
        ResultRow {
            arm: arm.to_string(),
            seed: seed.to_string(),
            t_emv: None,
            t_emv_std: None,
            emv_finished: None,
            t_avg: None,
            t_avg_std: None,
            completed: None,
            status: format!("failed: {err}"),
        }
    }

    pub fn is_aggregate(&self) -> bool {
        self.seed == "mean"
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((m, var.sqrt()))
}

/// Mean/σ row over the successful rows of one arm.
pub fn aggregate(arm: &str, rows: &[ResultRow], has_emv: bool) -> ResultRow {
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let emv: Vec<f64> = ok.iter().filter_map(|r| r.t_emv).collect();
    let avg: Vec<f64> = ok.iter().filter_map(|r| r.t_avg).collect();
    let e = if has_emv { mean_std(&emv) } else { None };
    let a = mean_std(&avg);
    let all_finished = ok.iter().all(|r| r.emv_finished != Some(false));
    ResultRow {
        arm: arm.to_string(),
        seed: "mean".into(),
        t_emv: e.map(|x| x.0),
        t_emv_std: e.map(|x| x.1),
        emv_finished: has_emv.then_some(all_finished),
        t_avg: a.map(|x| x.0),
        t_avg_std: a.map(|x| x.1),
        completed: Some(ok.iter().filter_map(|r| r.completed).sum()),
        status: if ok.len() == rows.len() {
            "ok".into()
        } else {
            format!("partial: {}/{} seeds", ok.len(), rows.len())
        },
    }
}

/// Controller for a classical arm.
pub fn baseline_controller(spec: &ExperimentSpec, map: &TrafficMap, arm: Arm, seed: u64) -> Box<dyn Controller> {
    let ft = FixedTime::new(map.intersection_count(), spec.fixed_time_split, seed);
    match arm {
        Arm::FtNoEmv => Box::new(ft),
        Arm::WStaticFt | Arm::WDynamicFt => Box::new(GreenWave::new(ft)),
        Arm::WStaticMp | Arm::WDynamicMp => Box::new(GreenWave::new(MaxPressure)),
        Arm::EmvLight => unreachable!("learned arm has no classical controller"),
    }
}

/// Plays one classical arm for one seed.
pub fn run_baseline(
    spec: &ExperimentSpec,
    map: &Arc<TrafficMap>,
    arm: Arm,
    seed: u64,
) -> Result<EvalRow, HarnessError> {
    let mut env = Env::new(map.clone(), spec.env_config(map, arm), seed)?;
    let mut ctrl = baseline_controller(spec, map, arm, seed);
    let m = run_episode(&mut env, ctrl.as_mut())?;
    Ok(EvalRow {
        seed,
        t_emv: m.t_emv.map(|t| t.seconds),
        emv_finished: m.t_emv.is_some_and(|t| t.finished),
        t_avg: m.t_avg,
        completed: m.completed,
        unfinished: m.unfinished,
    })
}

/// Trains the learned controller under `ablation` with the spec's trainer settings.
pub fn train_variant(
    spec: &ExperimentSpec,
    map: &Arc<TrafficMap>,
    ablation: Ablation,
) -> Result<TrainOutput, HarnessError> {
    let env = spec.env_config(map, Arm::EmvLight);
    let ck = Checkpoint::init(map, &spec.trainer, &env, ablation);
    Ok(train(map.clone(), ck)?)
}

/// Greedy evaluation of a checkpoint over the spec's seeds.
pub fn evaluate_checkpoint(
    spec: &ExperimentSpec,
    map: &Arc<TrafficMap>,
    ck: &Checkpoint,
) -> Result<Vec<EvalRow>, HarnessError> {
    check_checkpoint(map, ck)?;
    Ok(evaluate(ck, map, &spec.seeds)?)
}

pub fn check_checkpoint(map: &TrafficMap, ck: &Checkpoint) -> Result<(), HarnessError> {
    let want = 5 * emvlab::rlcore::local_state_len(map);
    let n = map.intersection_count();
    if ck.agents.len() != n || ck.agents.iter().any(|a| a.actor.cfg.obs_dim != want) {
        return Err(HarnessError::Invalid(vec![format!(
            "checkpoint does not fit the map ({} agents, map has {n} intersections)",
            ck.agents.len()
        )]));
    }
    Ok(())
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub curves: Vec<(String, EpisodeLog)>,
    pub checkpoint: Option<Checkpoint>,
}

/// Runs every arm over every seed; writes results.csv, the manifest and, for the
/// learned arm, the checkpoint and its learning curve. Failures are recorded as rows.
pub fn run(spec: &ExperimentSpec, dir: &Path, ck: Option<Checkpoint>) -> Result<RunOutput, HarnessError> {
    let map = spec.validate()?;
    fs::create_dir_all(dir)?;
    write_manifest(spec, dir)?;
    let mut arms = spec.arms.clone();
    arms.sort();
    arms.dedup();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut checkpoint = None;
    for arm in arms {
        let name = arm.name();
        let per_seed: Vec<ResultRow> = if arm == Arm::EmvLight {
            let trained = match ck.clone() {
                Some(c) => Ok(c),
                None => train_variant(spec, &map, Ablation::None).map(|out| {
                    curves.extend(out.curve.into_iter().map(|l| ("full".to_string(), l)));
                    out.checkpoint
                }),
            };
            match trained.and_then(|c| {
                let r = evaluate_checkpoint(spec, &map, &c);
                checkpoint = Some(c);
                r
            }) {
                Ok(evals) => evals.iter().map(|r| ResultRow::from_eval(name, r, true)).collect(),
                Err(e) => spec.seeds.iter().map(|&s| ResultRow::failed(name, s, &e)).collect(),
            }
        } else {
            spec.seeds
                .iter()
                .map(|&s| match run_baseline(spec, &map, arm, s) {
                    Ok(r) => ResultRow::from_eval(name, &r, arm.has_emv()),
                    Err(e) => ResultRow::failed(name, s, &e),
                })
                .collect()
        };
        let agg = aggregate(name, &per_seed, arm.has_emv());
        rows.extend(per_seed);
        rows.push(agg);
        // keep what has finished so far
        write_rows(&dir.join("results.csv"), &rows)?;
    }
    if let Some(c) = &checkpoint {
        fs::write(dir.join("checkpoint.json"), emvlab_nn::to_checkpoint(c)?)?;
    }
    if !curves.is_empty() {
        write_curves(&dir.join("curves.csv"), &curves)?;
    }
    Ok(RunOutput {
        rows,
        curves,
        checkpoint,
    })
}

/// Trains and evaluates one ablation variant next to the full model. Writes
/// ablation_<name>.csv and curves_<name>.csv.
pub fn ablate(spec: &ExperimentSpec, which: Ablation, dir: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    if which == Ablation::None {
        return Err(HarnessError::Invalid(vec!["ablate needs one ablation flag".into()]));
    }
    let map = spec.validate()?;
    fs::create_dir_all(dir)?;
    write_manifest(spec, dir)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for variant in [Ablation::None, which] {
        let out = train_variant(spec, &map, variant)?;
        let evals = evaluate_checkpoint(spec, &map, &out.checkpoint)?;
        let per_seed: Vec<ResultRow> = evals
            .iter()
            .map(|r| ResultRow::from_eval(variant.name(), r, true))
            .collect();
        let agg = aggregate(variant.name(), &per_seed, true);
        rows.extend(per_seed);
        rows.push(agg);
        curves.extend(out.curve.into_iter().map(|l| (variant.name().to_string(), l)));
    }
    write_rows(&dir.join(format!("ablation_{}.csv", which.name())), &rows)?;
    write_curves(&dir.join(format!("curves_{}.csv", which.name())), &curves)?;
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    spec_hash: String,
    name: &'a str,
    crate_version: &'static str,
    checkpoint_version: u32,
    spec: &'a ExperimentSpec,
}

pub fn write_manifest(spec: &ExperimentSpec, dir: &Path) -> Result<(), HarnessError> {
    let m = Manifest {
        spec_hash: spec.hash(),
        name: &spec.name,
        crate_version: env!("CARGO_PKG_VERSION"),
        checkpoint_version: emvlab_nn::CHECKPOINT_VERSION,
        spec,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    fs::write(dir.join("spec.toml"), spec.to_toml())?;
    Ok(())
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "arm",
        "seed",
        "t_emv",
        "t_emv_std",
        "emv_finished",
        "t_avg",
        "t_avg_std",
        "completed",
        "status",
    ])?;
    let f = |x: Option<f64>| x.map_or("N/A".to_string(), |v| format!("{v:.3}"));
    for r in rows {
        w.write_record([
            r.arm.clone(),
            r.seed.clone(),
            f(r.t_emv),
            f(r.t_emv_std),
            r.emv_finished.map_or("N/A".into(), |b| b.to_string()),
            f(r.t_avg),
            f(r.t_avg_std),
            r.completed.map_or("N/A".into(), |c| c.to_string()),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rd = csv::Reader::from_path(path)?;
    let opt = |s: &str| s.parse::<f64>().ok();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let g = |k: usize| rec.get(k).unwrap_or("").to_string();
        rows.push(ResultRow {
            arm: g(0),
            seed: g(1),
            t_emv: opt(&g(2)),
            t_emv_std: opt(&g(3)),
            emv_finished: g(4).parse().ok(),
            t_avg: opt(&g(5)),
            t_avg_std: opt(&g(6)),
            completed: g(7).parse().ok(),
            status: g(8),
        });
    }
    Ok(rows)
}

/// One row per episode per variant.
pub fn write_curves(path: &Path, curves: &[(String, EpisodeLog)]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let agents = curves.first().map_or(0, |c| c.1.agent_rewards.len());
    let mut header = vec!["variant".to_string(), "episode".into(), "global_reward".into()];
    header.extend((0..agents).map(|i| format!("agent_{i}")));
    w.write_record(&header)?;
    for (v, l) in curves {
        let mut rec = vec![v.clone(), l.episode.to_string(), format!("{:.6}", l.global_reward)];
        rec.extend(l.agent_rewards.iter().map(|r| format!("{r:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
