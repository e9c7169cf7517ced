use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emvlab_harness::experiment::{
    aggregate, evaluate_checkpoint, train_variant, write_curves, write_manifest, write_rows, ResultRow,
};
use emvlab_harness::{ablate, report, run, ExperimentSpec, HarnessError, MapSpec};
use emvlab_train::{Ablation, Checkpoint};

#[derive(Parser)]
#[command(
    name = "emvlab",
    version,
    about = "Emergency-vehicle-aware signal control experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct SpecArgs {
    /// Experiment TOML file.
    #[arg(long, short)]
    config: PathBuf,
    /// Comma-separated seeds, overriding the file.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory, overriding the file.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Training episodes, overriding the file.
    #[arg(long)]
    episodes: Option<usize>,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec, HarnessError> {
        let mut spec = ExperimentSpec::from_toml(&fs::read_to_string(&self.config)?)?;
        if let Some(s) = &self.seeds {
            spec.seeds = s.clone();
        }
        if let Some(d) = &self.output_dir {
            spec.output_dir = d.clone();
        }
        if let Some(e) = self.episodes {
            spec.trainer.episodes = e;
        }
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a map as JSON.
    BuildMap {
        #[arg(long, default_value_t = 5)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        cols: usize,
        #[arg(long, default_value_t = 2)]
        lanes: usize,
        #[arg(long, default_value_t = 200.0)]
        length: f64,
        /// One-way alternating grid.
        #[arg(long)]
        one_way: bool,
        /// Manhattan-style map with `rows` streets and `cols` avenues.
        #[arg(long)]
        manhattan: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run every arm of an experiment over its seeds.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        /// Use this checkpoint for the learned arm instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the learned controller and write its checkpoint and learning curve.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "full")]
        ablation: String,
    },
    /// Greedy evaluation of a checkpoint over the experiment's seeds.
    Evaluate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate one ablation next to the full model.
    Ablate {
        #[command(flatten)]
        spec: SpecArgs,
        /// presslight-pressure | no-secondary | no-primary | no-fingerprint
        #[arg(long, num_args = 1..)]
        which: Vec<String>,
    },
    /// Print the results tables of a directory.
    Report { dir: PathBuf },
}

fn parse_ablation(s: &str) -> Result<Ablation, HarnessError> {
    Ablation::parse(s).ok_or_else(|| HarnessError::Invalid(vec![format!("unknown ablation {s}")]))
}

fn load_checkpoint(path: &PathBuf) -> Result<Checkpoint, HarnessError> {
    Ok(emvlab_nn::from_checkpoint(&fs::read_to_string(path)?)?)
}

fn exec(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::BuildMap {
            rows,
            cols,
            lanes,
            length,
            one_way,
            manhattan,
            out,
        } => {
            let spec = if manhattan {
                MapSpec::Manhattan {
                    streets: rows,
                    avenues: cols,
                }
            } else {
                MapSpec::Grid {
                    rows,
                    cols,
                    lanes,
                    length,
                    bidirectional: !one_way,
                }
            };
            let json = spec.build()?.to_json()?;
            match out {
                Some(p) => fs::write(p, json)?,
                None => println!("{json}"),
            }
        }
        Cmd::Run { spec, checkpoint } => {
            let spec = spec.load()?;
            let ck = checkpoint.as_ref().map(load_checkpoint).transpose()?;
            let out = run(&spec, &spec.output_dir, ck)?;
            print!("{}", emvlab_harness::report::table(&out.rows));
            if out.rows.iter().any(|r| r.status != "ok") {
                return Err(HarnessError::Invalid(vec!["some runs failed; see results.csv".into()]));
            }
        }
        Cmd::Train { spec, ablation } => {
            let spec = spec.load()?;
            let which = parse_ablation(&ablation)?;
            let map = spec.validate()?;
            let dir = &spec.output_dir;
            fs::create_dir_all(dir)?;
            write_manifest(&spec, dir)?;
            match train_variant(&spec, &map, which) {
                Ok(out) => {
                    fs::write(
                        dir.join(format!("checkpoint_{}.json", which.name())),
                        emvlab_nn::to_checkpoint(&out.checkpoint)?,
                    )?;
                    let curves: Vec<_> = out.curve.into_iter().map(|l| (which.name().to_string(), l)).collect();
                    write_curves(&dir.join(format!("curves_train_{}.csv", which.name())), &curves)?;
                    println!(
                        "trained {} episodes, {} updates",
                        out.checkpoint.episodes_done, out.checkpoint.updates
                    );
                }
                Err(HarnessError::Train(emvlab_train::TrainError::NonFinite {
                    what,
                    agent,
                    episode,
                    checkpoint,
                })) => {
                    let p = dir.join("checkpoint_diagnostic.json");
                    fs::write(&p, emvlab_nn::to_checkpoint(&checkpoint)?)?;
                    return Err(HarnessError::Invalid(vec![format!(
                        "non-finite {what} for agent {agent} in episode {episode}; parameters saved to {}",
                        p.display()
                    )]));
                }
                Err(e) => return Err(e),
            }
        }
        Cmd::Evaluate { spec, checkpoint } => {
            let spec = spec.load()?;
            let map = spec.validate()?;
            let ck = load_checkpoint(&checkpoint)?;
            let evals = evaluate_checkpoint(&spec, &map, &ck)?;
            let name = ck.ablation.name();
            let mut rows: Vec<ResultRow> = evals.iter().map(|r| ResultRow::from_eval(name, r, true)).collect();
            rows.push(aggregate(name, &rows, true));
            fs::create_dir_all(&spec.output_dir)?;
            write_rows(&spec.output_dir.join(format!("evaluation_{name}.csv")), &rows)?;
            print!("{}", emvlab_harness::report::table(&rows));
        }
        Cmd::Ablate { spec, which } => {
            let spec = spec.load()?;
            if which.len() != 1 {
                return Err(HarnessError::Invalid(vec![format!(
                    "exactly one ablation per run, got {}",
                    which.len()
                )]));
            }
            let which = parse_ablation(&which[0])?;
            let rows = ablate(&spec, which, &spec.output_dir)?;
            print!("{}", emvlab_harness::report::table(&rows));
        }
        Cmd::Report { dir } => print!("{}", report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match exec(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
