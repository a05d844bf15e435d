use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arsq_core::case_studies::{case_study_landscape, case_study_toy};
use arsq_core::config::TrainConfig;
use arsq_core::envs::{generate_demos, make_env, DemoKind};
use arsq_core::error::ArsqError;
use arsq_core::replay::write_dataset;
use arsq_core::trainer::{evaluate_checkpoint, train};

#[derive(Parser)]
#[command(name = "arsq", about = "Auto-regressive soft Q-learning experiments")]
struct Cli {
    /// experiment config file (key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// random seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full training loop and write metrics plus a checkpoint
    Train {
        /// demonstration dataset (JSON lines); overrides the config file
        #[arg(long)]
        offline_data: Option<PathBuf>,
        /// environment name; overrides the config file
        #[arg(long)]
        env: Option<String>,
        /// total environment steps; overrides the config file
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Greedy evaluation of a stored checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// environment name; defaults to the config's env
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Tabular motivating example: auto-regressive vs independent decomposition
    CaseStudyToy,
    /// Q-prediction-error comparison of the three decomposition variants
    CaseStudyLandscape {
        /// comma-separated seeds; defaults to seed, seed+1, seed+2
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Generate a scripted demonstration dataset
    GenDemos {
        #[arg(long, default_value = "point-mass")]
        env: String,
        /// expert | medium | noisy | mode_mix
        #[arg(long, default_value = "medium")]
        kind: String,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
    },
}

fn load_config(cli: &Cli) -> Result<TrainConfig, ArsqError> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), ArsqError> {
    match &cli.command {
        Command::Train {
            offline_data,
            env,
            steps,
        } => {
            let mut cfg = load_config(&cli)?;
            if let Some(p) = offline_data {
                cfg.offline_data = Some(p.clone());
            }
            if let Some(e) = env {
                cfg.env = e.clone();
            }
            if let Some(s) = steps {
                cfg.total_env_steps = *s;
            }
            let out = train(&cfg, &cli.out)?;
            println!(
                "trained {} steps; final eval: return {:.3} +- {:.3}, success {:.2}",
                out.steps,
                out.final_eval.mean_return,
                out.final_eval.std_return,
                out.final_eval.success_rate
            );
            println!("metrics: {}", out.metrics_path.display());
            println!("checkpoint: {}", out.checkpoint_path.display());
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
        } => {
            let cfg = load_config(&cli)?;
            let seed = cli.seed.unwrap_or(cfg.seed);
            let stats = evaluate_checkpoint(&cfg, checkpoint, env.as_deref(), *episodes, seed)?;
            println!(
                "eval over {} episodes: return {:.3} +- {:.3}, success {:.2}",
                stats.episodes, stats.mean_return, stats.std_return, stats.success_rate
            );
        }
        Command::CaseStudyToy => {
            let cfg = load_config(&cli)?;
            let verdict = case_study_toy(&cli.out, cfg.seed)?;
            println!(
                "arsq greedy cell {:?} (optimal: {}), independent greedy cell {:?} (optimal: {})",
                verdict.arsq_cell,
                verdict.arsq_is_optimal,
                verdict.independent_cell,
                verdict.independent_is_optimal
            );
        }
        Command::CaseStudyLandscape { seeds } => {
            let cfg = load_config(&cli)?;
            let seeds = seeds
                .clone()
                .unwrap_or_else(|| vec![cfg.seed, cfg.seed + 1, cfg.seed + 2]);
            let summary = case_study_landscape(&cli.out, &seeds)?;
            for row in &summary.rows {
                println!("{},seed {}: mae {:.4}", row.method, row.seed, row.mae);
            }
            println!(
                "mean mae: independent {:.4}, no_cf {:.4}, arsq {:.4}",
                summary.mean_independent, summary.mean_no_cf, summary.mean_arsq
            );
        }
        Command::GenDemos {
            env,
            kind,
            episodes,
        } => {
            let cfg = load_config(&cli)?;
            let mut e = make_env(env)?;
            let spec = e.spec().action_spec(cfg.bins_per_level, cfg.levels)?;
            let ds = generate_demos(
                e.as_mut(),
                &spec,
                DemoKind::parse(kind)?,
                *episodes,
                cli.seed.unwrap_or(cfg.seed),
            )?;
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("demos.jsonl");
            write_dataset(&path, &ds)?;
            let mean_return: f64 = (0..ds.n_episodes())
                .map(|e| ds.episode_return(e))
                .sum::<f64>()
                / ds.n_episodes() as f64;
            println!(
                "wrote {} transitions over {} episodes (mean return {:.3}) to {}",
                ds.len(),
                ds.n_episodes(),
                mean_return,
                path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                ArsqError::Divergence(_)
                | ArsqError::NonFiniteGradient(_)
                | ArsqError::NonConvergence { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
