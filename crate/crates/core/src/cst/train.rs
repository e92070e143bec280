use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{cr_g_loss, cr_l_loss, xe_loss};
use super::optim::Adamax;
use super::sampling::{neg_sel, pos_sel, DatasetIndex};
use crate::autodiff::{Graph, Tensor, Var};
use crate::css::{synthesize, CounterfactualSample, CssConfig};
use crate::dataset::{Sample, VocabSpec};
use crate::error::{Error, Result};
use crate::model::{
    argmax, fuse_vars, qonly_head, vqa_forward, BoundParams, FusionMode, ModelDims, ModelParams, VqaInput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrMode {
    #[default]
    None,
    /// Cosine over full logit vectors.
    G,
    /// Ground-truth answer probability.
    L,
}

impl CrMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CrMode::None => "none",
            CrMode::G => "g",
            CrMode::L => "l",
        }
    }
}

impl std::str::FromStr for CrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(CrMode::None),
            "g" => Ok(CrMode::G),
            "l" => Ok(CrMode::L),
            other => Err(Error::config("cr", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub w_xe: f64,
    pub w_crg: f64,
    pub w_crl: f64,
    pub tau: f64,
    pub cr_mode: CrMode,
    pub css: bool,
    pub fusion: FusionMode,
    /// Send counterfactual samples through the fused head.
    pub cf_through_fusion: bool,
    /// Per-qtype switch for the contrastive term; missing entries are on.
    pub cr_qtype_mask: Vec<bool>,
    pub hidden: usize,
    pub word_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 3e-2,
            w_xe: 1.0,
            w_crg: 1.0,
            w_crl: 8.0,
            tau: 1.0,
            cr_mode: CrMode::None,
            css: false,
            fusion: FusionMode::SigmoidProduct,
            cf_through_fusion: true,
            cr_qtype_mask: Vec::new(),
            hidden: crate::model::DEFAULT_HIDDEN,
            word_dim: crate::model::DEFAULT_WORD_DIM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        for (name, w) in [("w_xe", self.w_xe), ("w_crg", self.w_crg), ("w_crl", self.w_crl)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", "must be positive"));
        }
        if self.hidden == 0 || self.word_dim == 0 {
            return Err(Error::config("hidden", "model widths must be positive"));
        }
        Ok(())
    }

    pub fn cr_weight(&self) -> f64 {
        match self.cr_mode {
            CrMode::None => 0.0,
            CrMode::G => self.w_crg,
            CrMode::L => self.w_crl,
        }
    }

    fn cr_enabled_for(&self, qtype: usize) -> bool {
        self.cr_mode != CrMode::None && self.cr_qtype_mask.get(qtype).copied().unwrap_or(true)
    }

    pub fn model_dims(&self, vocab: &VocabSpec, feat_dim: usize, max_tokens: usize) -> ModelDims {
        ModelDims {
            vocab: vocab.n_tokens(),
            word_dim: self.word_dim,
            feat_dim,
            hidden: self.hidden,
            answers: vocab.n_answers(),
            max_tokens,
        }
    }
}

/// Randomized choices for one training sample, drawn before any gradient
/// is taken.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub counterfactual: Option<(CounterfactualSample, VqaInput)>,
    pub positive: Option<VqaInput>,
    pub negatives: Vec<VqaInput>,
}

/// Loss nodes of one sample; absent terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub xe_orig: Var,
    pub xe_cf: Option<Var>,
    pub cr: Option<Var>,
    pub total: Var,
    pub logits: Var,
}

/// Draw the counterfactual, positive and negatives for `samples[i]`.
#[allow(clippy::too_many_arguments)]
pub fn plan_sample(
    i: usize,
    batch: &[usize],
    samples: &[Sample],
    index: &DatasetIndex,
    params: &ModelParams,
    vocab: &VocabSpec,
    cfg: &TrainConfig,
    css: &CssConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SamplePlan> {
    let s = &samples[i];
    let counterfactual = if cfg.css {
        let cf = synthesize(params, s, vocab, css, rng)?;
        let input = cf.input(&VqaInput::from_sample(s), vocab.mask_token);
        Some((cf, input))
    } else {
        None
    };
    let (positive, negatives) = if cfg.cr_enabled_for(s.qtype_id) {
        let p = pos_sel(i, samples, index, rng);
        let negs = neg_sel(p, batch, samples, index, params, vocab, css, rng)?;
        (
            Some(VqaInput::from_sample(&samples[p])),
            negs.into_iter().map(|n| n.input).collect(),
        )
    } else {
        (None, Vec::new())
    };
    Ok(SamplePlan {
        counterfactual,
        positive,
        negatives,
    })
}

fn fused(g: &mut Graph, p: &BoundParams, out: &crate::model::VqaOutput, mode: FusionMode) -> Result<Var> {
    if mode == FusionMode::None {
        return Ok(out.logits);
    }
    let q = qonly_head(g, p, out.question)?;
    fuse_vars(g, out.logits, q, mode)
}

/// Build the weighted training loss of one sample under a fixed plan.
pub fn sample_loss(
    g: &mut Graph,
    params: &ModelParams,
    p: &BoundParams,
    sample: &Sample,
    plan: &SamplePlan,
    cfg: &TrainConfig,
    mask_token: usize,
) -> Result<LossVars> {
    let input = VqaInput::from_sample(sample);
    let out = vqa_forward(g, params, p, &input, mask_token, false)?;
    let head = fused(g, p, &out, cfg.fusion)?;
    let xe_orig = xe_loss(g, head, &sample.answers)?;
    let mut total = g.scale(xe_orig, cfg.w_xe)?;

    let mut xe_cf = None;
    if let Some((cf, cf_input)) = &plan.counterfactual {
        let cf_out = vqa_forward(g, params, p, cf_input, mask_token, false)?;
        let mode = if cfg.cf_through_fusion { cfg.fusion } else { FusionMode::None };
        let cf_head = fused(g, p, &cf_out, mode)?;
        let l = xe_loss(g, cf_head, &cf.answers)?;
        let w = g.scale(l, cfg.w_xe)?;
        total = g.add(total, w)?;
        xe_cf = Some(l);
    }

    let mut cr = None;
    if let Some(pos) = &plan.positive {
        let pos_logits = vqa_forward(g, params, p, pos, mask_token, false)?.logits;
        let mut negs = Vec::with_capacity(plan.negatives.len());
        for n in &plan.negatives {
            negs.push(vqa_forward(g, params, p, n, mask_token, false)?.logits);
        }
        let l = match cfg.cr_mode {
            CrMode::G => cr_g_loss(g, out.logits, pos_logits, &negs, cfg.tau)?,
            CrMode::L => cr_l_loss(g, out.logits, &negs, sample.anchor_answer(), cfg.tau)?,
            CrMode::None => return Err(Error::Invalid("plan has a positive but contrastive loss is off".into())),
        };
        let w = g.scale(l, cfg.cr_weight())?;
        total = g.add(total, w)?;
        cr = Some(l);
    }
    Ok(LossVars {
        xe_orig,
        xe_cf,
        cr,
        total,
        logits: out.logits,
    })
}

/// Per-epoch training summary; losses are per-sample means and `cr` is
/// unweighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub xe_orig: f64,
    pub xe_cf: f64,
    pub cr: f64,
    pub total: f64,
    pub train_acc: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,xe_orig,xe_cf,cr,total,train_acc";

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.4}",
            self.epoch, self.xe_orig, self.xe_cf, self.cr, self.total, self.train_acc
        )
    }
}

pub fn write_epoch_csv(path: &Path, stats: &[EpochStats]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{EPOCH_CSV_HEADER}")?;
    for s in stats {
        writeln!(f, "{}", s.csv_row())?;
    }
    f.flush()?;
    Ok(())
}

struct SampleResult {
    grads: Vec<Tensor>,
    xe_orig: f64,
    xe_cf: f64,
    cr: f64,
    total: f64,
    score: f64,
}

const SHUFFLE_STREAM: u64 = 1 << 63;

/// Independent generator for one (seed, epoch, position) triple.
pub fn sample_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

pub struct Trainer {
    pub params: ModelParams,
    pub cfg: TrainConfig,
    pub css: CssConfig,
    pub vocab: VocabSpec,
    optimizer: Adamax,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, css: CssConfig, vocab: VocabSpec, feat_dim: usize, max_tokens: usize) -> Result<Self> {
        cfg.validate()?;
        css.validate()?;
        let dims = cfg.model_dims(&vocab, feat_dim, max_tokens);
        let params = ModelParams::init(dims, cfg.fusion, cfg.seed)?;
        Ok(Self::from_params(params, cfg, css, vocab))
    }

    pub fn for_samples(cfg: TrainConfig, css: CssConfig, vocab: VocabSpec, samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Invalid("training split is empty".into()))?;
        let max_tokens = samples.iter().map(|s| s.question_tokens.len()).max().unwrap_or(1);
        Self::new(cfg, css, vocab, first.feature_dim(), max_tokens)
    }

    pub fn from_params(params: ModelParams, cfg: TrainConfig, css: CssConfig, vocab: VocabSpec) -> Self {
        let optimizer = Adamax::new(&params);
        Self {
            params,
            cfg,
            css,
            vocab,
            optimizer,
            epoch: 0,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn sample_step(&self, i: usize, batch: &[usize], samples: &[Sample], index: &DatasetIndex, position: usize) -> Result<SampleResult> {
        let mut rng = sample_rng(self.cfg.seed, self.epoch, position);
        let plan = plan_sample(i, batch, samples, index, &self.params, &self.vocab, &self.cfg, &self.css, &mut rng)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let lv = sample_loss(&mut g, &self.params, &p, &samples[i], &plan, &self.cfg, self.vocab.mask_token)?;
        let value = |v: Option<Var>| v.map_or(Ok(0.0), |v| g.value(v).item());
        let total = g.value(lv.total).item()?;
        if !total.is_finite() {
            return Err(Error::NonFinite {
                epoch: self.epoch,
                batch: position,
                detail: format!("loss {total} on sample {}", samples[i].sample_id),
            });
        }
        let pred = argmax(g.value(lv.logits).data());
        let mut grads = g.backward(lv.total)?;
        Ok(SampleResult {
            grads: p.vars().iter().map(|v| grads.take(*v)).collect(),
            xe_orig: g.value(lv.xe_orig).item()?,
            xe_cf: value(lv.xe_cf)?,
            cr: value(lv.cr)?,
            total,
            score: samples[i].target_score(pred),
        })
    }

    /// One pass over `samples` in a seed-determined order.
    pub fn train_epoch(&mut self, samples: &[Sample], index: &DatasetIndex) -> Result<EpochStats> {
        if samples.len() < 2 {
            return Err(Error::Invalid("training needs at least two samples".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        shuffle.set_stream(SHUFFLE_STREAM | self.epoch as u64);
        order.shuffle(&mut shuffle);

        let mut sums = [0.0; 5];
        let mut start = 0;
        while start < order.len() {
            let mut end = (start + self.cfg.batch_size).min(order.len());
            // fold a trailing singleton into this batch so image swaps have a partner
            if order.len() - end == 1 {
                end = order.len();
            }
            let batch = &order[start..end];
            let results: Vec<Result<SampleResult>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| self.sample_step(i, batch, samples, index, start + k))
                .collect();
            let mut acc: Option<Vec<Tensor>> = None;
            for r in results {
                let r = r?;
                sums[0] += r.xe_orig;
                sums[1] += r.xe_cf;
                sums[2] += r.cr;
                sums[3] += r.total;
                sums[4] += r.score;
                match &mut acc {
                    None => acc = Some(r.grads),
                    Some(a) => a.iter_mut().zip(&r.grads).for_each(|(x, y)| x.add_assign(y.data())),
                }
            }
            let mut grads = acc.expect("batch is non-empty");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= inv));
            self.optimizer.step(&mut self.params, &grads, self.cfg.lr);
            if !self.params.is_finite() {
                return Err(Error::NonFinite {
                    epoch: self.epoch,
                    batch: start / self.cfg.batch_size,
                    detail: "parameters diverged".into(),
                });
            }
            start = end;
        }
        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch: self.epoch + 1,
            xe_orig: sums[0] / n,
            xe_cf: sums[1] / n,
            cr: sums[2] / n,
            total: sums[3] / n,
            train_acc: 100.0 * sums[4] / n,
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Run the configured number of epochs.
    pub fn fit(&mut self, samples: &[Sample]) -> Result<Vec<EpochStats>> {
        let index = DatasetIndex::new(samples);
        let mut all = Vec::with_capacity(self.cfg.epochs);
        for _ in 0..self.cfg.epochs {
            let s = self.train_epoch(samples, &index)?;
            log::info!(
                "epoch {} total {:.4} xe {:.4} cf {:.4} cr {:.4} acc {:.2}",
                s.epoch,
                s.total,
                s.xe_orig,
                s.xe_cf,
                s.cr,
                s.train_acc
            );
            all.push(s);
        }
        Ok(all)
    }
}
