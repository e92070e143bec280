use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, VocabSpec};
use crate::error::{Error, Result};
use crate::model::{ModelParams, VqaInput};

/// Argmax answer of the plain VQA head for every sample, in order.
pub fn predictions(params: &ModelParams, samples: &[Sample], mask_token: usize) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| params.predict(&VqaInput::from_sample(s), mask_token).map(|d| d.argmax()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    /// `None` for question types absent from the split.
    pub per_qtype: Vec<Option<f64>>,
    pub n: usize,
}

/// Soft-score accuracy of fixed predictions, in percent.
pub fn score_predictions(samples: &[Sample], preds: &[usize], n_qtypes: usize) -> Result<Accuracy> {
    if samples.is_empty() {
        return Err(Error::Invalid("accuracy of an empty split".into()));
    }
    if samples.len() != preds.len() {
        return Err(Error::Invalid(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let mut sums = vec![(0.0, 0usize); n_qtypes];
    let mut total = 0.0;
    for (s, &p) in samples.iter().zip(preds) {
        let score = s.target_score(p);
        total += score;
        let slot = sums
            .get_mut(s.qtype_id)
            .ok_or_else(|| Error::Invalid(format!("qtype {} outside {n_qtypes}", s.qtype_id)))?;
        slot.0 += score;
        slot.1 += 1;
    }
    Ok(Accuracy {
        overall: 100.0 * total / samples.len() as f64,
        per_qtype: sums
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| 100.0 * s / n as f64))
            .collect(),
        n: samples.len(),
    })
}

pub fn accuracy(params: &ModelParams, samples: &[Sample], vocab: &VocabSpec) -> Result<Accuracy> {
    let preds = predictions(params, samples, vocab.mask_token)?;
    score_predictions(samples, &preds, vocab.n_qtypes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTail {
    pub acc_all: f64,
    pub acc_tail: Option<f64>,
    pub acc_head: Option<f64>,
    /// `(acc_head - acc_tail) / acc_tail`.
    pub delta: Option<f64>,
    pub n_tail: usize,
    pub n_head: usize,
}

/// Frequency of each answer id among the top answers of each question type
/// in `train`. Row `q` has one entry per id in `vocab.qtype_answers[q]`.
pub fn train_answer_frequencies(train: &[Sample], vocab: &VocabSpec) -> Vec<Vec<f64>> {
    crate::dataset::empirical_priors(train, vocab)
}

/// Tail flag per sample: the top answer's train frequency within its
/// question type is strictly below that group's mean frequency. Answers
/// outside the group count as frequency zero.
pub fn tail_flags(samples: &[Sample], freqs: &[Vec<f64>], vocab: &VocabSpec) -> Vec<bool> {
    samples
        .iter()
        .map(|s| {
            let row = &freqs[s.qtype_id];
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let a = s.anchor_answer();
            let f = vocab.qtype_answers[s.qtype_id]
                .iter()
                .position(|x| *x == a)
                .map_or(0.0, |slot| row[slot]);
            f < mean
        })
        .collect()
}

pub fn head_tail_from(samples: &[Sample], preds: &[usize], tail: &[bool]) -> Result<HeadTail> {
    if samples.is_empty() {
        return Err(Error::Invalid("head/tail metrics of an empty split".into()));
    }
    let mut sum = [0.0; 2];
    let mut n = [0usize; 2];
    let mut all = 0.0;
    for ((s, &p), &t) in samples.iter().zip(preds).zip(tail) {
        let score = s.target_score(p);
        all += score;
        sum[t as usize] += score;
        n[t as usize] += 1;
    }
    let mean = |k: usize| (n[k] > 0).then(|| 100.0 * sum[k] / n[k] as f64);
    let (acc_head, acc_tail) = (mean(0), mean(1));
    let delta = match (acc_head, acc_tail) {
        (Some(h), Some(t)) if t > 0.0 => Some((h - t) / t),
        _ => None,
    };
    Ok(HeadTail {
        acc_all: 100.0 * all / samples.len() as f64,
        acc_tail,
        acc_head,
        delta,
        n_tail: n[1],
        n_head: n[0],
    })
}

pub fn head_tail_metrics(params: &ModelParams, samples: &[Sample], train: &[Sample], vocab: &VocabSpec) -> Result<HeadTail> {
    let preds = predictions(params, samples, vocab.mask_token)?;
    let tail = tail_flags(samples, &train_answer_frequencies(train, vocab), vocab);
    head_tail_from(samples, &preds, &tail)
}
