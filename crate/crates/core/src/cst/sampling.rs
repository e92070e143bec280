use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::css::{synthesize_pair, CfKind, CssConfig};
use crate::dataset::{Sample, VocabSpec};
use crate::error::{Error, Result};
use crate::model::{ModelParams, VqaInput};

/// Sample positions grouped by question type and by (question type,
/// ground-truth answer id set).
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    buckets: BTreeMap<(usize, Vec<usize>), Vec<usize>>,
    by_qtype: BTreeMap<usize, Vec<usize>>,
}

impl DatasetIndex {
    pub fn new(samples: &[Sample]) -> Self {
        let mut idx = Self::default();
        for (i, s) in samples.iter().enumerate() {
            idx.buckets.entry((s.qtype_id, s.answer_ids())).or_default().push(i);
            idx.by_qtype.entry(s.qtype_id).or_default().push(i);
        }
        idx
    }

    /// Positions sharing the question type and answer set of `s`.
    pub fn bucket(&self, s: &Sample) -> &[usize] {
        self.buckets
            .get(&(s.qtype_id, s.answer_ids()))
            .map_or(&[], |v| v.as_slice())
    }

    pub fn same_qtype(&self, qtype: usize) -> &[usize] {
        self.by_qtype.get(&qtype).map_or(&[], |v| v.as_slice())
    }
}

/// Uniform draw from the anchor's bucket; the anchor itself when the
/// bucket holds nothing else or the anchor is not indexed.
pub fn pos_sel(anchor: usize, samples: &[Sample], index: &DatasetIndex, rng: &mut impl Rng) -> usize {
    let bucket = index.bucket(&samples[anchor]);
    if bucket.len() <= 1 {
        return anchor;
    }
    bucket[rng.random_range(0..bucket.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegKind {
    /// Positive with its critical objects removed.
    ObjectCounterfactual,
    /// Positive with its critical words masked.
    WordCounterfactual,
    /// Same question type, different answer set.
    OtherAnswer,
    /// Positive's question on another image from the batch.
    ImageSwap,
}

#[derive(Debug, Clone)]
pub struct Negative {
    pub kind: NegKind,
    pub input: VqaInput,
    /// Dataset position the image or question was borrowed from, if any.
    pub source: Option<usize>,
}

fn image_swap(positive: usize, samples: &[Sample], batch: &[usize], rng: &mut impl Rng) -> Result<Negative> {
    let pid = samples[positive].sample_id;
    let pool: Vec<usize> = batch.iter().copied().filter(|&b| samples[b].sample_id != pid).collect();
    if pool.is_empty() {
        return Err(Error::Invalid("image swap needs another image in the batch".into()));
    }
    let other = pool[rng.random_range(0..pool.len())];
    let q = VqaInput::from_sample(&samples[positive]);
    Ok(Negative {
        kind: NegKind::ImageSwap,
        input: q.with_image(&VqaInput::from_sample(&samples[other])),
        source: Some(other),
    })
}

/// The four negatives of a positive, in [`NegKind`] order. When no sample
/// of the same question type has a different answer set, a second image
/// swap fills the third slot.
#[allow(clippy::too_many_arguments)]
pub fn neg_sel(
    positive: usize,
    batch: &[usize],
    samples: &[Sample],
    index: &DatasetIndex,
    params: &ModelParams,
    vocab: &VocabSpec,
    css: &CssConfig,
    rng: &mut impl Rng,
) -> Result<[Negative; 4]> {
    if batch.len() < 2 {
        return Err(Error::Invalid("negative selection needs a batch of at least two".into()));
    }
    let p = &samples[positive];
    let origin = VqaInput::from_sample(p);
    let (v, q) = synthesize_pair(params, p, vocab, css)?;
    let v_kind = if v.kind == CfKind::V {
        NegKind::ObjectCounterfactual
    } else {
        NegKind::WordCounterfactual
    };

    let ids = p.answer_ids();
    let others: Vec<usize> = index
        .same_qtype(p.qtype_id)
        .iter()
        .copied()
        .filter(|&i| samples[i].answer_ids() != ids)
        .collect();
    let third = if others.is_empty() {
        log::debug!("sample {}: no other answer set in its question type", p.sample_id);
        image_swap(positive, samples, batch, rng)?
    } else {
        let o = others[rng.random_range(0..others.len())];
        Negative {
            kind: NegKind::OtherAnswer,
            input: VqaInput::from_sample(&samples[o]),
            source: Some(o),
        }
    };
    let fourth = image_swap(positive, samples, batch, rng)?;
    Ok([
        Negative {
            kind: v_kind,
            input: v.input(&origin, vocab.mask_token),
            source: None,
        },
        Negative {
            kind: NegKind::WordCounterfactual,
            input: q.input(&origin, vocab.mask_token),
            source: None,
        },
        third,
        fourth,
    ])
}
