use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sadq::diagnostics::theory::DEFAULT_ALPHAS;
use sadq::diagnostics::{emit_plot, sweep, verify_theory, PlotOptions, SweepGrid};
use sadq::trainer::ConfigError;
use sadq::{train_run, TrainConfig, Trainer};

const EXIT_USAGE: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "sadq", version, about = "Train and analyse successor-aggregation DQN agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run config file (TOML with [env], [q], [model], [agent], [schedule]).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: cartpole, acrobot, bitflip or ocloud.
    #[arg(long)]
    preset: Option<String>,
    /// Override a single field, e.g. `--set agent.alpha=0.8`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<TrainConfig> {
        let text = match (&self.config, &self.preset) {
            (Some(path), _) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            (None, Some(name)) => TrainConfig::preset(name)?.to_toml(),
            (None, None) => bail!("one of --config or --preset is required"),
        };
        Ok(TrainConfig::with_overrides(&text, &self.overrides)?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run per seed.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seed; repeat for several runs. Defaults to schedule.seeds.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Continue from a checkpoint (single seed only).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides applied to the checkpoint's config (schedule.eval_episodes
        /// is the useful one).
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Grid over alpha, beta and model updates per cycle.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "alpha")]
        alphas: Vec<f64>,
        #[arg(long = "beta")]
        betas: Vec<f64>,
        /// Model updates per cycle.
        #[arg(long = "k")]
        ks: Vec<usize>,
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Exact tabular check of the mixed target's variance and bias.
    VerifyTheory {
        /// MDP seed; repeatable. Defaults to 0..10.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Mixing factor; repeatable. Defaults to 0.25, 0.5, 0.75.
        #[arg(long = "alpha")]
        alphas: Vec<f64>,
        /// Successor draws per state-action pair (at least 1000).
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1000..))]
        samples: u64,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Line chart of metrics columns against env_steps (SVG).
    Plot {
        /// Metrics files; several files are drawn as mean and min-max band.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long = "key", required = true)]
        keys: Vec<String>,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
        #[arg(long)]
        log_scale: bool,
        #[arg(long)]
        title: Option<String>,
    },
}

enum Outcome {
    Ok,
    AcceptanceFailed,
}

fn train(cfg: &ConfigArgs, seeds: &[u64], out: &Path, resume: Option<&Path>) -> anyhow::Result<Outcome> {
    let config = cfg.load()?;
    let seeds = if seeds.is_empty() { config.schedule.seeds.clone() } else { seeds.to_vec() };
    if resume.is_some() && seeds.len() != 1 {
        bail!("--resume needs exactly one seed");
    }
    for seed in seeds {
        let dir = out.join(format!("seed{seed}"));
        let art = train_run(&config, seed, &dir, resume)?;
        println!(
            "seed {seed}: final eval return {:.3}, best {:.3} ({})",
            art.final_eval_return,
            art.best_eval_return,
            art.metrics.display()
        );
    }
    Ok(Outcome::Ok)
}

fn eval(checkpoint: &Path, overrides: &[String]) -> anyhow::Result<Outcome> {
    let mut trainer = Trainer::load(checkpoint)?;
    if !overrides.is_empty() {
        let cfg = TrainConfig::with_overrides(&trainer.config.to_toml(), overrides)?;
        trainer.config.schedule.eval_episodes = cfg.schedule.eval_episodes;
    }
    let report = trainer.evaluate()?;
    println!(
        "env_steps {}: return {:.3} +- {:.3} over {} episodes, success rate {:.3}, q discrepancy {:.4}",
        trainer.counters.env_steps,
        report.mean(),
        report.std(),
        report.returns.len(),
        report.success_rate(),
        report.q_discrepancy
    );
    Ok(Outcome::Ok)
}

fn run_sweep(
    cfg: &ConfigArgs,
    alphas: &[f64],
    betas: &[f64],
    ks: &[usize],
    seeds: &[u64],
    out: &Path,
    workers: usize,
) -> anyhow::Result<Outcome> {
    let base = cfg.load()?;
    let mut grid = SweepGrid::from_base(&base);
    let pick = |given: &[f64], fallback: Vec<f64>| if given.is_empty() { fallback } else { given.to_vec() };
    grid.alphas = pick(alphas, grid.alphas);
    grid.betas = pick(betas, grid.betas);
    if !ks.is_empty() {
        grid.ks = ks.to_vec();
    }
    if !seeds.is_empty() {
        grid.seeds = seeds.to_vec();
    }
    let summary = sweep(&base, &grid, out, workers)?;
    println!("alpha\tbeta\tk\tok\tfailed\tfinal\tbest");
    for c in &summary.cells {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}",
            c.cell.alpha, c.cell.beta, c.cell.k, c.completed, c.failed, c.final_return, c.best_return
        );
    }
    if let Some(best) = summary.best_cell() {
        println!(
            "best: alpha={} beta={} k={} final {:.3}",
            best.cell.alpha, best.cell.beta, best.cell.k, best.final_return
        );
    }
    if summary.cells.iter().any(|c| c.failed > 0) {
        bail!("some sweep runs failed; see error.txt in their directories under {}", out.display());
    }
    Ok(Outcome::Ok)
}

fn run_verify(seeds: &[u64], alphas: &[f64], samples: u64, report_path: Option<&Path>) -> anyhow::Result<Outcome> {
    let seeds: Vec<u64> = if seeds.is_empty() { (0..10).collect() } else { seeds.to_vec() };
    let alphas: Vec<f64> = if alphas.is_empty() { DEFAULT_ALPHAS.to_vec() } else { alphas.to_vec() };
    let report = verify_theory(&seeds, &alphas, samples as usize);
    for (i, alpha) in alphas.iter().enumerate() {
        println!(
            "alpha {alpha}: variance bound holds in {:.4} of pairs (covariance term {:.3e}); \
             bias within 3 s.e. in {:.4} of pairs (max diff {:.4}, min z {:.2})",
            report.variance_pass_rate[i],
            report.mean_covariance_term[i],
            report.bias_within_rate[i],
            report.max_bias_difference[i],
            report.min_bias_z[i]
        );
    }
    let variance = report.variance_ok();
    let bias = report.bias_ok();
    println!("variance: {}", if variance { "PASS" } else { "FAIL" });
    println!("bias: {}", if bias { "PASS" } else { "FAIL" });
    if let Some(path) = report_path {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(if variance && bias { Outcome::Ok } else { Outcome::AcceptanceFailed })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let usage_problem = match &cli.command {
        Command::Train { cfg, .. } | Command::Sweep { cfg, .. } => cfg.config.is_none() && cfg.preset.is_none(),
        _ => false,
    };
    if usage_problem {
        eprintln!("error: one of --config or --preset is required");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match &cli.command {
        Command::Train { cfg, seeds, out, resume } => train(cfg, seeds, out, resume.as_deref()),
        Command::Eval { checkpoint, overrides } => eval(checkpoint, overrides),
        Command::Sweep {
            cfg,
            alphas,
            betas,
            ks,
            seeds,
            out,
            workers,
        } => run_sweep(cfg, alphas, betas, ks, seeds, out, *workers),
        Command::VerifyTheory {
            seeds,
            alphas,
            samples,
            report,
        } => run_verify(seeds, alphas, *samples, report.as_deref()),
        Command::Plot {
            files,
            keys,
            out,
            log_scale,
            title,
        } => emit_plot(
            files,
            keys,
            out,
            &PlotOptions {
                log_scale: *log_scale,
                title: title.clone(),
            },
        )
        .map(|_| Outcome::Ok)
        .map_err(Into::into),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::AcceptanceFailed) => ExitCode::from(EXIT_ACCEPTANCE),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUN)
            }
        }
    }
}

