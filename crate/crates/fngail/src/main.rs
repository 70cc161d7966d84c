//! Command-line front end. Four subcommands cover the whole workflow:
//! `gen-demos` writes a scripted-expert corpus, `train` runs a BC or GAIL
//! experiment across seeds, `eval` replays a saved policy, and
//! `diagnose-fn` measures the false-negative picture of a saved run.
//!
//! Exit codes: 0 when training solved the task or ran to completion,
//! 2 when any seed exhausted its wall-clock budget, 1 on error.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fngail::harness::{self, ExperimentConfig};
use fngail::Scalar;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fngail", about = "adversarial imitation learning lab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate expert demonstrations with the scripted solver
    GenDemos {
        /// task preset, e.g. gotoredball-mini
        #[arg(long)]
        task: String,
        /// how many demos to record
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// output demo file
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an experiment (one process, one or more seeds)
    Train(TrainArgs),
    /// Evaluate a saved run's policy on fresh episodes
    Eval {
        /// per-seed run directory (the one holding config.txt)
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        /// only evaluate episodes whose instruction matches exactly
        #[arg(long)]
        filter: Option<String>,
        /// use the best-eval checkpoint instead of the final one
        #[arg(long)]
        best: bool,
    },
    /// Report the false-negative picture of a trained discriminator
    DiagnoseFn {
        /// per-seed run directory (the one holding config.txt)
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        /// use the best-eval checkpoint instead of the final one
        #[arg(long)]
        best: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// flat key=value config file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// demo file from gen-demos
    #[arg(long)]
    demos: Option<PathBuf>,
    /// comma-separated head tags, e.g. agent_fc,done_detector
    #[arg(long)]
    heads: Option<String>,
    /// bc or gail
    #[arg(long)]
    algo: Option<String>,
    /// 1, 1/8, or 1/64
    #[arg(long)]
    demo_fraction: Option<String>,
    /// comma-separated seeds; each gets its own subdirectory
    #[arg(long)]
    seeds: Option<String>,
    /// single seed (shorthand for --seeds N)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget_minutes: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// model size: desk, paper, or tiny
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    eval_cadence: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    max_updates: Option<usize>,
    /// let episodes run to the step limit instead of ending on Done
    #[arg(long)]
    no_done_termination: bool,
    /// discriminator probability clamp
    #[arg(long)]
    eps: Option<Scalar>,
    #[arg(long)]
    lanes: Option<usize>,
    #[arg(long)]
    rollout_len: Option<usize>,
    #[arg(long)]
    agent_capacity: Option<usize>,
}

fn build_config(args: &TrainArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_file(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
    }
    // CLI flags share the config-file keys so overrides go through apply()
    let mut set = |key: &str, value: String| -> anyhow::Result<()> {
        cfg.apply(key, &value).with_context(|| format!("--{}", key.replace('_', "-")))?;
        Ok(())
    };
    if let Some(v) = &args.task {
        set("task", v.clone())?;
    }
    if let Some(v) = &args.demos {
        set("demos", v.display().to_string())?;
    }
    if let Some(v) = &args.heads {
        set("heads", v.clone())?;
    }
    if let Some(v) = &args.algo {
        set("algo", v.clone())?;
    }
    if let Some(v) = &args.demo_fraction {
        set("demo_fraction", v.clone())?;
    }
    if let Some(v) = &args.seeds {
        set("seeds", v.clone())?;
    }
    if let Some(v) = args.seed {
        set("seed", v.to_string())?;
    }
    if let Some(v) = args.budget_minutes {
        set("budget_minutes", v.to_string())?;
    }
    if let Some(v) = &args.out {
        set("out_dir", v.display().to_string())?;
    }
    if let Some(v) = &args.profile {
        set("profile", v.clone())?;
    }
    if let Some(v) = args.eval_cadence {
        set("eval_cadence", v.to_string())?;
    }
    if let Some(v) = args.eval_episodes {
        set("eval_episodes", v.to_string())?;
    }
    if let Some(v) = args.max_updates {
        set("max_updates", v.to_string())?;
    }
    if args.no_done_termination {
        set("done_termination", "false".to_string())?;
    }
    if let Some(v) = args.eps {
        set("eps", v.to_string())?;
    }
    if let Some(v) = args.lanes {
        set("lanes", v.to_string())?;
    }
    if let Some(v) = args.rollout_len {
        set("rollout_len", v.to_string())?;
    }
    if let Some(v) = args.agent_capacity {
        set("agent_capacity", v.to_string())?;
    }
    Ok(cfg)
}

fn run() -> anyhow::Result<ExitCode> {
    // clap's usage errors conventionally exit 2, but 2 means "budget
    // exhausted" here, so route them through exit 1 instead
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return Ok(ExitCode::from(1));
        }
        Err(help_or_version) => {
            let _ = help_or_version.print();
            return Ok(ExitCode::SUCCESS);
        }
    };
    match cli.cmd {
        Cmd::GenDemos { task, count, seed, out } => {
            harness::gen_demos(&task, count, seed, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train(args) => {
            let cfg = build_config(&args)?;
            cfg.validate()?;
            let summary = harness::run_experiment(&cfg)?;
            Ok(if summary.any_budget() { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Cmd::Eval { run, episodes, filter, best } => {
            let loaded = harness::load_run(&run, best)?;
            let rate = harness::evaluate(
                &loaded.policy,
                &loaded.task,
                episodes,
                filter.as_deref(),
                loaded.cfg.done_termination,
                loaded.cfg.seeds[0] ^ 0x5eed_0e7a_1ea5_e5e5,
            )?;
            println!("success rate: {:.1}% ({episodes} episodes)", 100.0 * rate);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::DiagnoseFn { run, episodes, best } => {
            harness::diagnose_fn(&run, episodes, best)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
