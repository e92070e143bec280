use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use csst_core::pipeline::{self, Overrides, RunConfig, GRADCHECK_TOLERANCE};
use csst_core::{CrMode, FusionMode};

#[derive(Parser)]
#[command(name = "csst", version, about = "Counterfactual synthesis and contrastive training on a shifted toy VQA benchmark")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, initialization, sampling and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    fusion: Option<Fusion>,
    /// Train on synthesized counterfactuals.
    #[arg(long, global = true, value_enum)]
    css: Option<Switch>,
    /// Contrastive term.
    #[arg(long, global = true, value_enum)]
    cr: Option<Cr>,
    /// Probability of the word branch during synthesis.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Mass threshold for critical-object selection.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    None,
    SigmoidProduct,
    LogitSum,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cr {
    None,
    G,
    L,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark into <out>/data.
    GenData,
    /// Train on the stored benchmark.
    Train,
    /// Write one counterfactual per training sample from the checkpoint.
    SynthDump,
    /// Evaluate the checkpoint on the test split.
    Eval,
    /// Finite-difference check of every primitive and the full model.
    Gradcheck,
    /// Compare evaluated runs.
    Report {
        /// `label=dir`, repeatable; runs sharing a label are averaged.
        #[arg(long = "run", value_parser = parse_run, required = true)]
        runs: Vec<(String, PathBuf)>,
    },
}

fn parse_run(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, dir)) if !label.is_empty() && !dir.is_empty() => Ok((label.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected label=dir, got `{s}`")),
    }
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            fusion: self.fusion.map(|f| match f {
                Fusion::None => FusionMode::None,
                Fusion::SigmoidProduct => FusionMode::SigmoidProduct,
                Fusion::LogitSum => FusionMode::LogitSum,
            }),
            css: self.css.map(|s| matches!(s, Switch::On)),
            cr: self.cr.map(|c| match c {
                Cr::None => CrMode::None,
                Cr::G => CrMode::G,
                Cr::L => CrMode::L,
            }),
            delta: self.delta,
            eta: self.eta,
            threads: self.threads,
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = RunConfig::resolve(cli.global.config.as_deref(), &cli.global.overrides()).context("invalid configuration")?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    match cli.command {
        Command::GenData => {
            let b = pipeline::gen_data(&cfg)?;
            println!("{} train / {} test samples in {}", b.train.len(), b.test.len(), cfg.data_dir().display());
        }
        Command::Train => {
            let stats = pipeline::train(&cfg)?;
            if let Some(last) = stats.last() {
                println!("epoch {}: loss {:.4}, train accuracy {:.2}", last.epoch, last.total, last.train_acc);
            }
            println!("checkpoint {}", cfg.checkpoint_path().display());
        }
        Command::SynthDump => {
            let cfs = pipeline::synth_dump(&cfg)?;
            println!("{} counterfactuals in {}", cfs.len(), cfg.out.join("counterfactuals.jsonl").display());
        }
        Command::Eval => {
            let m = pipeline::eval(&cfg)?;
            println!("accuracy {:.2}, CI {:.3}, CS(1) {:.2}", m.accuracy, m.ci, m.cs.get(&1).copied().unwrap_or(f64::NAN));
            println!("metrics in {}", cfg.out.join("metrics.json").display());
        }
        Command::Gradcheck => {
            let checks = pipeline::gradcheck(&cfg)?;
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed(GRADCHECK_TOLERANCE)).collect();
            for c in &failed {
                eprintln!("FAIL {} max relative error {:.3e}", c.name, c.max_rel_error);
            }
            println!("{}/{} checks within {GRADCHECK_TOLERANCE:e}", checks.len() - failed.len(), checks.len());
            return Ok(failed.is_empty());
        }
        Command::Report { runs } => {
            for (_, dir) in &runs {
                if !dir.join("metrics.json").is_file() {
                    bail!("no metrics.json in {}; run eval first", dir.display());
                }
            }
            let rows = pipeline::report(&runs, &cfg.out)?;
            println!("{} labels compared in {}", rows.len(), cfg.out.join("comparison.csv").display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
