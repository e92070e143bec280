use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// How the question-only branch is combined with the VQA logits during
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    None,
    /// `logits * sigmoid(q_logits)`
    #[default]
    SigmoidProduct,
    /// `logits + q_logits`
    LogitSum,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::SigmoidProduct => "sigmoid_product",
            FusionMode::LogitSum => "logit_sum",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            FusionMode::None => 0,
            FusionMode::SigmoidProduct => 1,
            FusionMode::LogitSum => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FusionMode::None),
            1 => Some(FusionMode::SigmoidProduct),
            2 => Some(FusionMode::LogitSum),
            _ => None,
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "sigmoid_product" => Ok(FusionMode::SigmoidProduct),
            "logit_sum" => Ok(FusionMode::LogitSum),
            other => Err(Error::config("fusion", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub word_dim: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    pub answers: usize,
    /// Longest question the pooling weights cover.
    pub max_tokens: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab", self.vocab),
            ("word_dim", self.word_dim),
            ("feat_dim", self.feat_dim),
            ("hidden", self.hidden),
            ("answers", self.answers),
            ("max_tokens", self.max_tokens),
        ] {
            if v == 0 {
                return Err(Error::config(name, "model dimension must be positive"));
            }
        }
        Ok(())
    }
}

/// Index of each learnable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    TokenEmbedding,
    PoolWeights,
    QuestionW,
    QuestionB,
    ObjectW,
    ObjectB,
    AttentionW,
    FuseQW,
    FuseQB,
    FuseVW,
    FuseVB,
    ClassifierW,
    ClassifierB,
    QOnlyHiddenW,
    QOnlyHiddenB,
    QOnlyOutW,
    QOnlyOutB,
}

impl ParamId {
    pub const ALL: [ParamId; 17] = [
        ParamId::TokenEmbedding,
        ParamId::PoolWeights,
        ParamId::QuestionW,
        ParamId::QuestionB,
        ParamId::ObjectW,
        ParamId::ObjectB,
        ParamId::AttentionW,
        ParamId::FuseQW,
        ParamId::FuseQB,
        ParamId::FuseVW,
        ParamId::FuseVB,
        ParamId::ClassifierW,
        ParamId::ClassifierB,
        ParamId::QOnlyHiddenW,
        ParamId::QOnlyHiddenB,
        ParamId::QOnlyOutW,
        ParamId::QOnlyOutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::TokenEmbedding => "token_embedding",
            ParamId::PoolWeights => "pool_weights",
            ParamId::QuestionW => "question_w",
            ParamId::QuestionB => "question_b",
            ParamId::ObjectW => "object_w",
            ParamId::ObjectB => "object_b",
            ParamId::AttentionW => "attention_w",
            ParamId::FuseQW => "fuse_q_w",
            ParamId::FuseQB => "fuse_q_b",
            ParamId::FuseVW => "fuse_v_w",
            ParamId::FuseVB => "fuse_v_b",
            ParamId::ClassifierW => "classifier_w",
            ParamId::ClassifierB => "classifier_b",
            ParamId::QOnlyHiddenW => "qonly_hidden_w",
            ParamId::QOnlyHiddenB => "qonly_hidden_b",
            ParamId::QOnlyOutW => "qonly_out_w",
            ParamId::QOnlyOutB => "qonly_out_b",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn shape(self, d: &ModelDims) -> Vec<usize> {
        match self {
            ParamId::TokenEmbedding => vec![d.vocab, d.word_dim],
            ParamId::PoolWeights => vec![d.max_tokens],
            ParamId::QuestionW => vec![d.word_dim, d.hidden],
            ParamId::ObjectW => vec![d.feat_dim, d.hidden],
            ParamId::AttentionW => vec![d.hidden, 1],
            ParamId::FuseQW | ParamId::FuseVW | ParamId::QOnlyHiddenW => vec![d.hidden, d.hidden],
            ParamId::ClassifierW | ParamId::QOnlyOutW => vec![d.hidden, d.answers],
            ParamId::QuestionB | ParamId::ObjectB | ParamId::FuseQB | ParamId::FuseVB | ParamId::QOnlyHiddenB => {
                vec![d.hidden]
            }
            ParamId::ClassifierB | ParamId::QOnlyOutB => vec![d.answers],
        }
    }
}

pub const INIT_RANGE: f64 = 0.08;

/// All learnable weights of the VQA model and its question-only branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub fusion: FusionMode,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Uniform(-0.08, 0.08) initialization from `seed`.
    pub fn init(dims: ModelDims, fusion: FusionMode, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = ParamId::ALL
            .iter()
            .map(|id| {
                let shape = id.shape(&dims);
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE)).collect();
                Tensor::new(shape, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { dims, fusion, tensors })
    }

    pub fn from_tensors(dims: ModelDims, fusion: FusionMode, tensors: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter tensors, got {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != id.shape(&dims).as_slice() {
                return Err(Error::shape("params", &id.shape(&dims), t.shape()));
            }
            if !t.is_finite() {
                return Err(Error::Invalid(format!("{} holds non-finite values", id.name())));
            }
        }
        Ok(Self { dims, fusion, tensors })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Place every tensor on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect(),
        }
    }
}

/// Graph handles for a bound [`ModelParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Point `id` at another node, e.g. a probe leaf.
    pub fn set(&mut self, id: ParamId, var: Var) {
        self.vars[id.index()] = var;
    }
}
