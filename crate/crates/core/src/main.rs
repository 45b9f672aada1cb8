use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fr3e_core::harness::checkpoint::{checkpoint_file_name, read_checkpoint, write_checkpoint};
use fr3e_core::harness::metrics::metrics_csv;
use fr3e_core::harness::report::token_report_csv;
use fr3e_core::harness::{accuracy_matrix, compare, entropy_token_report, evaluate, train, TrainConfig, TrainOptions};
use fr3e_core::record::{read_records, write_records};

#[derive(Parser)]
#[command(name = "fr3e", version, about = "Entropy-guided exploration training for token policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics.csv plus checkpoints into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write trajectories.jsonl.
        #[arg(long)]
        log_trajectories: bool,
    },
    /// Evaluate a checkpoint on the config's evaluation set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompts: Option<usize>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Train two configs and write compare.csv, compare_tokens.csv and verdict.txt.
    Compare {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        config_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Report(Report),
}

#[derive(Subcommand)]
enum Report {
    /// Rank tokens by the mean entropy at which they were emitted.
    Tokens {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
    },
    /// Evaluate every checkpoint in a directory; writes accuracy_matrix.csv.
    Accuracy {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Defaults to accuracy_matrix.csv next to the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            out,
            log_trajectories,
        } => run_train(&config, &out, log_trajectories),
        Command::Eval {
            checkpoint,
            config,
            prompts,
            rollouts,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let ckpt = read_checkpoint(&checkpoint)?;
            let res = evaluate(
                &ckpt.params,
                &cfg.env,
                prompts.unwrap_or(cfg.eval.prompts),
                rollouts.unwrap_or(cfg.eval.rollouts),
            );
            println!("step {} success_rate {}", ckpt.step, res.success_rate);
            Ok(())
        }
        Command::Compare { config_a, config_b, out } => {
            let a = TrainConfig::load(&config_a)?;
            let b = TrainConfig::load(&config_b)?;
            let report = compare(&a, &b)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("compare.csv"), report.step_csv())?;
            fs::write(out.join("compare_tokens.csv"), report.token_csv())?;
            let verdict = report.verdict();
            fs::write(out.join("verdict.txt"), &verdict)?;
            print!("{verdict}");
            Ok(())
        }
        Command::Report(Report::Tokens { log, top, min_count }) => {
            let file = fs::File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let records = read_records(BufReader::new(file))?;
            if records.is_empty() {
                bail!("{} holds no records", log.display());
            }
            print!("{}", token_report_csv(&entropy_token_report(&records, top, min_count)));
            Ok(())
        }
        Command::Report(Report::Accuracy { checkpoints, config, out }) => {
            let cfg = TrainConfig::load(&config)?;
            let loaded = load_checkpoints(&checkpoints)?;
            let matrix = accuracy_matrix(&loaded, &cfg.env, cfg.eval.prompts, cfg.eval.rollouts);
            let out = out.unwrap_or_else(|| {
                checkpoints
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join("accuracy_matrix.csv")
            });
            fs::write(&out, matrix.to_csv())?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn run_train(config: &Path, out: &Path, log_trajectories: bool) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let outcome = train(&cfg, TrainOptions { log_trajectories })?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    for (step, params) in &outcome.checkpoints {
        write_checkpoint(&ckpt_dir.join(checkpoint_file_name(*step)), *step, params)?;
    }
    if log_trajectories {
        let file = fs::File::create(out.join("trajectories.jsonl"))?;
        write_records(std::io::BufWriter::new(file), &outcome.records)?;
    }
    if let Some(last) = outcome.metrics.last() {
        println!(
            "trained {} steps; final eval success_rate {}",
            last.step,
            last.eval_success_rate.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn load_checkpoints(dir: &Path) -> Result<Vec<(u64, fr3e_core::policy::PolicyParams)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .ckpt files in {}", dir.display());
    }
    let mut loaded = paths
        .iter()
        .map(|p| read_checkpoint(p).map(|c| (c.step, c.params)))
        .collect::<fr3e_core::Result<Vec<_>>>()?;
    loaded.sort_by_key(|(s, _)| *s);
    Ok(loaded)
}
