use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attribution::{contributions, ContributionScores};
use super::select::{co_sel, cw_sel, io_sel};
use crate::dataset::{sim_scores, Sample, VocabSpec};
use crate::error::{Error, Result};
use crate::model::{ModelParams, VqaInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CssConfig {
    /// Mass threshold for the critical-object prefix.
    pub eta: f64,
    pub iou_threshold: f64,
    /// Number of objects kept by the SIM-based initial selection.
    pub init_set_size: usize,
    /// Probability of the question branch is `delta`; objects otherwise.
    pub delta: f64,
    pub top_k_words: usize,
}

impl Default for CssConfig {
    fn default() -> Self {
        Self {
            eta: 0.65,
            iou_threshold: 0.6,
            init_set_size: 4,
            delta: 0.5,
            top_k_words: 1,
        }
    }
}

impl CssConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config("eta", "must lie in (0, 1)"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::config("iou_threshold", "must lie in (0, 1]"));
        }
        if self.init_set_size == 0 {
            return Err(Error::config("init_set_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config("delta", "must lie in [0, 1]"));
        }
        if self.top_k_words == 0 {
            return Err(Error::config("top_k_words", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CfKind {
    /// Critical objects removed from the image.
    V,
    /// Critical words replaced by the mask token.
    Q,
}

/// A synthesized counterfactual.
///
/// `masked` holds the units removed in the counterfactual input: critical
/// objects for [`CfKind::V`], critical word positions for [`CfKind::Q`].
/// `kept` holds the rest of the candidate set: the other objects, or the
/// non-question-type word positions that are not critical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSample {
    pub origin_id: u64,
    pub kind: CfKind,
    pub masked: Vec<usize>,
    pub kept: Vec<usize>,
    pub answers: BTreeMap<usize, f64>,
    /// Set when the object branch was drawn but every object was critical.
    #[serde(default)]
    pub fallback: bool,
    pub contributions: ContributionScores,
}

impl CounterfactualSample {
    /// The model input this counterfactual stands for.
    pub fn input(&self, origin: &VqaInput, mask_token: usize) -> VqaInput {
        let mut x = origin.clone();
        match self.kind {
            CfKind::V => self.masked.iter().for_each(|&i| x.object_mask[i] = true),
            CfKind::Q => self.masked.iter().for_each(|&i| x.tokens[i] = mask_token),
        }
        x
    }

    /// The input holding only the critical units, used to reassign answers.
    pub fn kept_input(&self, origin: &VqaInput, mask_token: usize) -> VqaInput {
        let mut x = origin.clone();
        match self.kind {
            CfKind::V => self.kept.iter().for_each(|&i| x.object_mask[i] = true),
            CfKind::Q => self.kept.iter().for_each(|&i| x.tokens[i] = mask_token),
        }
        x
    }
}

/// `t = 1 - sigmoid(logit)` under `kept` for each ground-truth answer.
pub fn dsa_ass(
    params: &ModelParams,
    kept: &VqaInput,
    answers: &BTreeMap<usize, f64>,
    mask_token: usize,
) -> Result<BTreeMap<usize, f64>> {
    let out = params.predict(kept, mask_token)?;
    Ok(assign_from_logits(&out.logits, answers))
}

pub fn assign_from_logits(logits: &[f64], answers: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    answers
        .keys()
        .map(|&a| (a, 1.0 - crate::model::sigmoid(logits[a])))
        .collect()
}

/// Draw the branch for one sample: objects when `u >= delta`.
pub fn draw_kind(rng: &mut impl Rng, delta: f64) -> CfKind {
    let u: f64 = rng.random();
    if u >= delta {
        CfKind::V
    } else {
        CfKind::Q
    }
}

/// Build a counterfactual of `kind` without reassigning answers; `answers`
/// is left empty. Falls back to the word branch when every object is
/// critical.
pub fn synthesize_kind(
    params: &ModelParams,
    sample: &Sample,
    vocab: &VocabSpec,
    cfg: &CssConfig,
    kind: CfKind,
) -> Result<CounterfactualSample> {
    let input = VqaInput::from_sample(sample);
    let (obj, word) = contributions(params, &input, sample.anchor_answer(), vocab.mask_token)?;
    from_scores(sample, vocab, cfg, kind, obj, word)
}

/// Object-branch and word-branch counterfactuals sharing one attribution
/// pass.
pub fn synthesize_pair(
    params: &ModelParams,
    sample: &Sample,
    vocab: &VocabSpec,
    cfg: &CssConfig,
) -> Result<(CounterfactualSample, CounterfactualSample)> {
    let input = VqaInput::from_sample(sample);
    let (obj, word) = contributions(params, &input, sample.anchor_answer(), vocab.mask_token)?;
    let v = from_scores(sample, vocab, cfg, CfKind::V, obj, word.clone())?;
    let q = word_branch(sample, vocab, cfg, word, false)?;
    Ok((v, q))
}

fn from_scores(
    sample: &Sample,
    vocab: &VocabSpec,
    cfg: &CssConfig,
    kind: CfKind,
    obj: ContributionScores,
    word: ContributionScores,
) -> Result<CounterfactualSample> {
    if kind == CfKind::V {
        let sim = sim_scores(sample, vocab);
        let init = io_sel(&sim.values, cfg.init_set_size);
        let init_scores: Vec<f64> = init
            .iter()
            .map(|&i| obj.score_of(i).expect("original objects are unmasked"))
            .collect();
        let bboxes: Vec<_> = sample.objects.iter().map(|o| o.bbox).collect();
        let candidates: Vec<usize> = (0..sample.objects.len()).collect();
        let sel = co_sel(&init, &init_scores, &candidates, &bboxes, cfg.eta, cfg.iou_threshold)?;
        if !sel.rest.is_empty() {
            return Ok(CounterfactualSample {
                origin_id: sample.sample_id,
                kind: CfKind::V,
                masked: sel.critical,
                kept: sel.rest,
                answers: BTreeMap::new(),
                fallback: false,
                contributions: obj,
            });
        }
        log::debug!("sample {}: every object is critical, using the word branch", sample.sample_id);
    }
    word_branch(sample, vocab, cfg, word, kind == CfKind::V)
}

fn word_branch(
    sample: &Sample,
    vocab: &VocabSpec,
    cfg: &CssConfig,
    word: ContributionScores,
    fallback: bool,
) -> Result<CounterfactualSample> {
    let sel = cw_sel(&sample.question_tokens, &word.indices, &word.scores, vocab, cfg.top_k_words)?;
    Ok(CounterfactualSample {
        origin_id: sample.sample_id,
        kind: CfKind::Q,
        masked: sel.critical,
        kept: sel.others,
        answers: BTreeMap::new(),
        fallback,
        contributions: word,
    })
}

/// Draw a branch, build the counterfactual and assign its soft answers.
pub fn synthesize(
    params: &ModelParams,
    sample: &Sample,
    vocab: &VocabSpec,
    cfg: &CssConfig,
    rng: &mut impl Rng,
) -> Result<CounterfactualSample> {
    let kind = draw_kind(rng, cfg.delta);
    let mut cf = synthesize_kind(params, sample, vocab, cfg, kind)?;
    let kept = cf.kept_input(&VqaInput::from_sample(sample), vocab.mask_token);
    cf.answers = dsa_ass(params, &kept, &sample.answers, vocab.mask_token)?;
    Ok(cf)
}

pub fn write_dump(path: &Path, samples: &[CounterfactualSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Vec<CounterfactualSample>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
