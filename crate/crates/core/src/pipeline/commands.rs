use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::config::RunConfig;
use crate::autodiff::{primitive_suite, GradCheck};
use crate::css::{synthesize, write_dump, CounterfactualSample};
use crate::cst::{sample_rng, write_epoch_csv, EpochStats, Trainer};
use crate::dataset::{generate_benchmark, load_benchmark, save_benchmark, Benchmark};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{checkpoint, model_suite, ModelParams};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_POINTS: usize = 10;

pub fn gen_data(cfg: &RunConfig) -> Result<Benchmark> {
    let bench = generate_benchmark(&cfg.benchmark)?;
    save_benchmark(&cfg.data_dir(), &bench)?;
    Ok(bench)
}

pub fn load_data(cfg: &RunConfig) -> Result<Benchmark> {
    let dir = cfg.data_dir();
    if !dir.join("priors.json").is_file() {
        return Err(Error::Invalid(format!("no dataset in {}; run gen-data first", dir.display())));
    }
    load_benchmark(&dir)
}

pub fn load_model(cfg: &RunConfig) -> Result<ModelParams> {
    let path = cfg.checkpoint_path();
    if !path.is_file() {
        return Err(Error::Invalid(format!("no checkpoint at {}; run train first", path.display())));
    }
    checkpoint::load(&path)
}

/// Train on an in-memory benchmark.
pub fn fit(cfg: &RunConfig, bench: &Benchmark) -> Result<(ModelParams, Vec<EpochStats>)> {
    let mut trainer = Trainer::for_samples(cfg.train.clone(), cfg.css.clone(), bench.vocab.clone(), &bench.train)?;
    let stats = trainer.fit(&bench.train)?;
    Ok((trainer.params, stats))
}

/// Train on the stored dataset and write `model.ckpt`, `train_log.csv` and
/// the resolved `config.toml`.
pub fn train(cfg: &RunConfig) -> Result<Vec<EpochStats>> {
    let bench = load_data(cfg)?;
    let (params, stats) = fit(cfg, &bench)?;
    std::fs::create_dir_all(&cfg.out)?;
    checkpoint::save(&cfg.checkpoint_path(), &params)?;
    write_epoch_csv(&cfg.out.join("train_log.csv"), &stats)?;
    std::fs::write(cfg.out.join("config.toml"), cfg.to_toml()?)?;
    Ok(stats)
}

/// One counterfactual per training sample from the stored checkpoint,
/// written to `counterfactuals.jsonl`.
pub fn synth_dump(cfg: &RunConfig) -> Result<Vec<CounterfactualSample>> {
    let bench = load_data(cfg)?;
    let params = load_model(cfg)?;
    let cfs: Vec<CounterfactualSample> = bench
        .train
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = sample_rng(cfg.train.seed, 0, i);
            synthesize(&params, s, &bench.vocab, &cfg.css, &mut rng)
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&cfg.out)?;
    write_dump(&cfg.out.join("counterfactuals.jsonl"), &cfs)?;
    Ok(cfs)
}

pub fn eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let bench = load_data(cfg)?;
    let params = load_model(cfg)?;
    let report = evaluate(&params, &bench.test, &bench.train, &bench.vocab, &cfg.eval)?;
    report.write(&cfg.out)?;
    Ok(report)
}

/// Generate, train and evaluate without touching the disk.
pub fn run_experiment(cfg: &RunConfig) -> Result<(MetricsReport, Vec<EpochStats>)> {
    cfg.validate()?;
    let bench = generate_benchmark(&cfg.benchmark)?;
    let (params, stats) = fit(cfg, &bench)?;
    let report = evaluate(&params, &bench.test, &bench.train, &bench.vocab, &cfg.eval)?;
    Ok((report, stats))
}

/// Every autodiff primitive and the full model at `points` random draws.
pub fn gradcheck_suite(seed: u64, points: usize) -> Result<Vec<GradCheck>> {
    let mut all = primitive_suite(seed, points)?;
    all.extend(model_suite(seed, points)?);
    Ok(all)
}

pub fn write_gradcheck_csv(path: &Path, checks: &[GradCheck]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "check,points,max_rel_error,status")?;
    for c in checks {
        let status = if c.passed(GRADCHECK_TOLERANCE) { "pass" } else { "fail" };
        writeln!(f, "{},{},{:e},{status}", c.name, c.points, c.max_rel_error)?;
    }
    f.flush()?;
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<Vec<GradCheck>> {
    let checks = gradcheck_suite(cfg.train.seed, GRADCHECK_POINTS)?;
    std::fs::create_dir_all(&cfg.out)?;
    write_gradcheck_csv(&cfg.out.join("gradcheck.csv"), &checks)?;
    Ok(checks)
}
