//! Toy attention VQA model, question-only branch and logit fusion.
//!
//! The VQA path embeds the question tokens, pools their hidden states with
//! learned positional weights, attends over object features conditioned on
//! the pooled question, and maps the element-wise product of the two
//! projected views to answer logits. The question-only branch reuses the
//! pooled question. Training can fuse both; inference uses the VQA logits
//! alone.

pub mod checkpoint;
mod forward;
mod gradcheck;
mod params;

pub use forward::{
    argmax, fuse, fuse_vars, qonly_forward, qonly_head, sigmoid, vqa_forward, AnswerDistribution, VqaInput,
    VqaOutput,
};
pub use gradcheck::model_suite;
pub use params::{BoundParams, FusionMode, ModelDims, ModelParams, ParamId, INIT_RANGE};

use crate::dataset::VocabSpec;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_WORD_DIM: usize = 32;

impl ModelDims {
    pub fn for_vocab(vocab: &VocabSpec, feat_dim: usize, max_tokens: usize) -> Self {
        Self {
            vocab: vocab.n_tokens(),
            word_dim: DEFAULT_WORD_DIM,
            feat_dim,
            hidden: DEFAULT_HIDDEN,
            answers: vocab.n_answers(),
            max_tokens,
        }
    }
}
