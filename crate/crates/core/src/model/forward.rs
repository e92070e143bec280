use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::Sample;
use crate::error::{Error, Result};

use super::params::{BoundParams, FusionMode, ModelParams, ParamId};

/// One (possibly masked) image-question pair as the model consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct VqaInput {
    /// `[n_objects, feat_dim]`
    pub features: Tensor,
    /// `true` marks an object removed from the image.
    pub object_mask: Vec<bool>,
    pub tokens: Vec<usize>,
}

impl VqaInput {
    pub fn from_sample(sample: &Sample) -> Self {
        let n = sample.objects.len();
        let dim = sample.feature_dim();
        let data = sample.objects.iter().flat_map(|o| o.vector.iter().copied()).collect();
        Self {
            features: Tensor::new(vec![n, dim], data).expect("rows share one dimension"),
            object_mask: vec![false; n],
            tokens: sample.question_tokens.clone(),
        }
    }

    pub fn n_objects(&self) -> usize {
        self.object_mask.len()
    }

    pub fn with_question(&self, tokens: Vec<usize>) -> Self {
        Self {
            features: self.features.clone(),
            object_mask: self.object_mask.clone(),
            tokens,
        }
    }

    pub fn with_image(&self, other: &VqaInput) -> Self {
        Self {
            features: other.features.clone(),
            object_mask: other.object_mask.clone(),
            tokens: self.tokens.clone(),
        }
    }

    pub fn visible_objects(&self) -> Vec<usize> {
        (0..self.n_objects()).filter(|&i| !self.object_mask[i]).collect()
    }
}

/// Logits over the answer vocabulary. Probabilities are element-wise
/// sigmoids, not a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution {
    pub logits: Vec<f64>,
}

impl AnswerDistribution {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|z| sigmoid(*z)).collect()
    }

    pub fn probability(&self, answer: usize) -> f64 {
        sigmoid(self.logits[answer])
    }

    /// Highest-logit answer, lowest id on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Graph nodes produced by [`vqa_forward`].
#[derive(Debug, Clone, Copy)]
pub struct VqaOutput {
    /// `[answers]`
    pub logits: Var,
    /// Object features `[n_objects, feat_dim]`.
    pub objects: Var,
    /// Word features `[n_tokens, word_dim]`.
    pub words: Var,
    /// Attention weights `[n_objects]`.
    pub attention: Var,
    /// Pooled question vector `[hidden]`.
    pub question: Var,
}

/// Pooled question vector: weighted mean of per-word hidden states with
/// softmax-normalized learned positional weights.
fn encode_question(g: &mut Graph, p: &BoundParams, words: Var, n_tokens: usize) -> Result<Var> {
    let qw = g.matmul(words, p.var(ParamId::QuestionW))?;
    let qb = g.add(qw, p.var(ParamId::QuestionB))?;
    let hidden = g.tanh(qb)?;
    let positions: Vec<usize> = (0..n_tokens).collect();
    let pool = g.select(p.var(ParamId::PoolWeights), &positions)?;
    let pool = g.softmax(pool)?;
    g.matmul(pool, hidden)
}

fn check_question(params: &ModelParams, mask_token: usize, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() || tokens.iter().all(|t| *t == mask_token) {
        return Err(Error::Invalid("question has no unmasked token".into()));
    }
    if tokens.len() > params.dims.max_tokens {
        return Err(Error::Invalid(format!(
            "question of {} tokens exceeds model capacity {}",
            tokens.len(),
            params.dims.max_tokens
        )));
    }
    Ok(())
}

fn embed_words(g: &mut Graph, params: &ModelParams, p: &BoundParams, tokens: &[usize], track: bool) -> Result<Var> {
    if track {
        // a fresh leaf holding the looked-up rows, so gradients stop here
        let table = params.get(ParamId::TokenEmbedding);
        let dim = params.dims.word_dim;
        let mut rows = Vec::with_capacity(tokens.len() * dim);
        for &t in tokens {
            if t >= params.dims.vocab {
                return Err(Error::Domain {
                    op: "embedding",
                    detail: format!("id {t} >= vocab {}", params.dims.vocab),
                });
            }
            rows.extend_from_slice(&table.data()[t * dim..(t + 1) * dim]);
        }
        Ok(g.param(Tensor::new(vec![tokens.len(), dim], rows)?))
    } else {
        g.embedding(p.var(ParamId::TokenEmbedding), tokens)
    }
}

/// Attention-based VQA forward pass. With `track_inputs`, the object and
/// word features become gradient-tracked leaves of their own.
pub fn vqa_forward(
    g: &mut Graph,
    params: &ModelParams,
    p: &BoundParams,
    input: &VqaInput,
    mask_token: usize,
    track_inputs: bool,
) -> Result<VqaOutput> {
    check_question(params, mask_token, &input.tokens)?;
    let n_obj = input.n_objects();
    if input.features.shape() != [n_obj, params.dims.feat_dim] {
        return Err(Error::shape("vqa_forward", input.features.shape(), &[n_obj, params.dims.feat_dim]));
    }
    if input.object_mask.iter().all(|m| *m) {
        return Err(Error::Invalid("image has no unmasked object".into()));
    }

    let words = embed_words(g, params, p, &input.tokens, track_inputs)?;
    let question = encode_question(g, p, words, input.tokens.len())?;

    let objects = g.leaf(input.features.clone(), track_inputs);
    let ow = g.matmul(objects, p.var(ParamId::ObjectW))?;
    let ob = g.add(ow, p.var(ParamId::ObjectB))?;
    let obj_hidden = g.tanh(ob)?;

    let joint = g.mul(obj_hidden, question)?;
    let scores = g.matmul(joint, p.var(ParamId::AttentionW))?;
    let scores = g.reshape(scores, &[n_obj])?;
    let scores = g.masked_fill(scores, &input.object_mask)?;
    let attention = g.softmax(scores)?;
    let attended = g.matmul(attention, obj_hidden)?;

    let fq = g.matmul(question, p.var(ParamId::FuseQW))?;
    let fq = g.add(fq, p.var(ParamId::FuseQB))?;
    let fq = g.tanh(fq)?;
    let fv = g.matmul(attended, p.var(ParamId::FuseVW))?;
    let fv = g.add(fv, p.var(ParamId::FuseVB))?;
    let fv = g.tanh(fv)?;
    let h = g.mul(fq, fv)?;
    let logits = g.matmul(h, p.var(ParamId::ClassifierW))?;
    let logits = g.add(logits, p.var(ParamId::ClassifierB))?;

    Ok(VqaOutput {
        logits,
        objects,
        words,
        attention,
        question,
    })
}

/// Question-only logits computed from an already pooled question vector.
pub fn qonly_head(g: &mut Graph, p: &BoundParams, question: Var) -> Result<Var> {
    let h = g.matmul(question, p.var(ParamId::QOnlyHiddenW))?;
    let h = g.add(h, p.var(ParamId::QOnlyHiddenB))?;
    let h = g.tanh(h)?;
    let out = g.matmul(h, p.var(ParamId::QOnlyOutW))?;
    g.add(out, p.var(ParamId::QOnlyOutB))
}

/// Question-only branch from tokens alone.
pub fn qonly_forward(
    g: &mut Graph,
    params: &ModelParams,
    p: &BoundParams,
    tokens: &[usize],
    mask_token: usize,
) -> Result<Var> {
    check_question(params, mask_token, tokens)?;
    let words = g.embedding(p.var(ParamId::TokenEmbedding), tokens)?;
    let question = encode_question(g, p, words, tokens.len())?;
    qonly_head(g, p, question)
}

/// Combine VQA and question-only logits.
pub fn fuse_vars(g: &mut Graph, vqa: Var, qonly: Var, mode: FusionMode) -> Result<Var> {
    if g.shape(vqa) != g.shape(qonly) {
        return Err(Error::shape("fuse", g.shape(vqa), g.shape(qonly)));
    }
    match mode {
        FusionMode::None => Ok(vqa),
        FusionMode::SigmoidProduct => {
            let gate = g.sigmoid(qonly)?;
            g.mul(vqa, gate)
        }
        FusionMode::LogitSum => g.add(vqa, qonly),
    }
}

pub fn fuse(vqa: &AnswerDistribution, qonly: &AnswerDistribution, mode: FusionMode) -> Result<AnswerDistribution> {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vqa.logits.clone()));
    let b = g.constant(Tensor::vector(qonly.logits.clone()));
    let out = fuse_vars(&mut g, a, b, mode)?;
    Ok(AnswerDistribution {
        logits: g.value(out).data().to_vec(),
    })
}

impl ModelParams {
    /// Plain VQA logits for one input, no gradient tracking.
    pub fn predict(&self, input: &VqaInput, mask_token: usize) -> Result<AnswerDistribution> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = vqa_forward(&mut g, self, &p, input, mask_token, false)?;
        Ok(AnswerDistribution {
            logits: g.value(out.logits).data().to_vec(),
        })
    }

    pub fn predict_qonly(&self, tokens: &[usize], mask_token: usize) -> Result<AnswerDistribution> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = qonly_forward(&mut g, self, &p, tokens, mask_token)?;
        Ok(AnswerDistribution {
            logits: g.value(out).data().to_vec(),
        })
    }
}
