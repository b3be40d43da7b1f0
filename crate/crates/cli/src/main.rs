//! `panoabr`: run, sweep and report tile-based 360° ABR experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panoabr::experiment::{self, ExperimentConfig, PolicyKind};
use panoabr::madrl::CriticMode;
use panoabr::{verify, Error};

#[derive(Parser)]
#[command(name = "panoabr", version, about = "Multi-agent ABR for tiled 360° video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and/or evaluate one policy and write a result bundle.
    Run(RunArgs),
    /// Train over the clip_eps x lambda grid and evaluate every cell.
    Sweep(RunArgs),
    /// Build the normalised comparison table from a results directory.
    Report {
        /// Directory holding one sub-directory per policy.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset and a matching experiment.toml.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the numerical core against reference implementations.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    policy: Option<String>,
    /// QoE preset, e.g. `(1,2,1,1)` or `temporal`.
    #[arg(long)]
    objective: Option<String>,
    /// Critic mode for learned policies: mappo or ippo.
    #[arg(long)]
    mode: Option<String>,
}

impl RunArgs {
    fn load(&self) -> panoabr::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.experiment.out = out.clone();
        }
        if let Some(p) = &self.policy {
            cfg.experiment.policy = p.parse()?;
        }
        if let Some(o) = &self.objective {
            cfg.experiment.objective = o.clone();
        }
        if let Some(m) = &self.mode {
            let mode: CriticMode = m.parse()?;
            if !cfg.experiment.policy.is_learned() {
                return Err(Error::Config("--mode only applies to learned policies".into()));
            }
            cfg.experiment.policy = match mode {
                CriticMode::Mappo => PolicyKind::Mappo,
                CriticMode::Ippo => PolicyKind::Ippo,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// `Ok(false)` when the command ran but a check failed.
fn execute(cli: Cli) -> panoabr::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let summary = experiment::run(&cfg)?;
            let mean = summary.rows.iter().find(|r| r.label == "mean").expect("mean row");
            println!(
                "{}: mean QoE {:.4} over {} test traces, freeze frequency {:.4}",
                summary.policy.name(),
                mean.mean_qoe,
                summary.test_traces.len(),
                mean.freeze_frequency
            );
            println!("results in {}", display(&cfg.experiment.out.join(summary.policy.name())));
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            for cell in experiment::sweep(&cfg)? {
                println!(
                    "clip_eps {} lambda {}: mean QoE {:.4}",
                    cell.clip_eps, cell.lambda, cell.eval.mean_qoe
                );
            }
        }
        Command::Report { out } => {
            println!("policy\tmean_qoe\tnormalized");
            for row in experiment::report(&out)? {
                println!("{}\t{:.4}\t{:.4}", row.policy, row.summary.mean_qoe, row.normalized_qoe);
            }
        }
        Command::GenFixtures { out, seed } => {
            for path in experiment::generate_fixtures(&out, seed)? {
                println!("{}", display(&path));
            }
        }
        Command::Verify { seed, cases } => {
            let checks = verify::run_all(seed, cases)?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                eprintln!("{failed} verification suite(s) failed");
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
