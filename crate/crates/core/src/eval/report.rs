use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::accuracy::{head_tail_from, predictions, score_predictions, tail_flags, train_answer_frequencies};
use super::diagnostics::{ai_scores, ci_score, consensus, consensus_counts};
use crate::dataset::{rephrasing_groups, Sample, VocabSpec};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Bumped whenever a field of [`MetricsReport`] changes meaning or name.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const AI_KS: [usize; 3] = [1, 2, 3];
pub const CS_KS: [usize; 4] = [1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rephrasings generated per test question for the consensus score.
    pub rephrasings: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { rephrasings: 4, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let need = *CS_KS.iter().max().expect("non-empty");
        if self.rephrasings < need {
            return Err(Error::config("rephrasings", format!("consensus up to k={need} needs at least {need}")));
        }
        Ok(())
    }
}

/// Every metric of one evaluated model. Accuracies are percentages, AI is a
/// SIM sum, CI a fraction, CS a percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub n_samples: usize,
    pub accuracy: f64,
    pub per_qtype: Vec<Option<f64>>,
    pub acc_all: f64,
    pub acc_tail: Option<f64>,
    pub acc_head: Option<f64>,
    pub delta: Option<f64>,
    pub n_tail: usize,
    pub n_head: usize,
    pub ai: BTreeMap<usize, f64>,
    pub ci: f64,
    pub cs: BTreeMap<usize, f64>,
    pub n_groups: usize,
}

pub fn evaluate(
    params: &ModelParams,
    test: &[Sample],
    train: &[Sample],
    vocab: &VocabSpec,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let preds = predictions(params, test, vocab.mask_token)?;
    let acc = score_predictions(test, &preds, vocab.n_qtypes())?;
    let tail = tail_flags(test, &train_answer_frequencies(train, vocab), vocab);
    let ht = head_tail_from(test, &preds, &tail)?;
    let ai = ai_scores(params, test, vocab, &AI_KS)?;
    let ci = ci_score(params, test, vocab)?;
    let groups = rephrasing_groups(test, vocab, cfg.rephrasings, cfg.seed)?;
    let counts = consensus_counts(params, &groups, test, vocab)?;
    let cs = CS_KS
        .iter()
        .map(|&k| consensus(&counts, k).map(|v| (k, v)))
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        n_samples: test.len(),
        accuracy: acc.overall,
        per_qtype: acc.per_qtype,
        acc_all: ht.acc_all,
        acc_tail: ht.acc_tail,
        acc_head: ht.acc_head,
        delta: ht.delta,
        n_tail: ht.n_tail,
        n_head: ht.n_head,
        ai: AI_KS.iter().copied().zip(ai).collect(),
        ci,
        cs,
        n_groups: groups.len(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricsReport {
    /// `metric,value` rows; absent metrics have an empty value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: String| writeln!(out, "{k},{v}").expect("writing to a string");
        row("schema_version", self.schema_version.to_string());
        row("n_samples", self.n_samples.to_string());
        row("accuracy", self.accuracy.to_string());
        for (q, a) in self.per_qtype.iter().enumerate() {
            row(&format!("accuracy_qtype_{q}"), opt(*a));
        }
        row("acc_all", self.acc_all.to_string());
        row("acc_tail", opt(self.acc_tail));
        row("acc_head", opt(self.acc_head));
        row("delta", opt(self.delta));
        row("n_tail", self.n_tail.to_string());
        row("n_head", self.n_head.to_string());
        for (k, v) in &self.ai {
            row(&format!("ai_k{k}"), v.to_string());
        }
        row("ci", self.ci.to_string());
        for (k, v) in &self.cs {
            row(&format!("cs_k{k}"), v.to_string());
        }
        row("n_groups", self.n_groups.to_string());
        out
    }

    /// Write `metrics.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join("metrics.json"), json)?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let report: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if report.schema_version != METRICS_SCHEMA_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "metrics schema {} but this build reads {METRICS_SCHEMA_VERSION}",
                    report.schema_version
                ),
            });
        }
        Ok(report)
    }
}
