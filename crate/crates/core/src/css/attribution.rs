use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::Result;
use crate::model::{vqa_forward, ModelParams, VqaInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Object,
    Word,
}

/// Gradient contribution of each unmasked object or word to the anchor
/// answer's probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionScores {
    pub kind: UnitKind,
    pub anchor: usize,
    /// Object or token positions, ascending.
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ContributionScores {
    pub fn score_of(&self, index: usize) -> Option<f64> {
        self.indices.iter().position(|i| *i == index).map(|k| self.scores[k])
    }
}

/// Sum of each selected row of a `[rows, dim]` gradient.
pub fn row_sums(grad: &Tensor, rows: &[usize]) -> Vec<f64> {
    let dim = grad.shape()[1];
    rows.iter().map(|r| grad.data()[r * dim..(r + 1) * dim].iter().sum()).collect()
}

/// Object and word contributions from one backward pass of
/// `sigmoid(logit[anchor])` through the plain VQA head.
pub fn contributions(
    params: &ModelParams,
    input: &VqaInput,
    anchor: usize,
    mask_token: usize,
) -> Result<(ContributionScores, ContributionScores)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let out = vqa_forward(&mut g, params, &p, input, mask_token, true)?;
    let logit = g.select(out.logits, &[anchor])?;
    let prob = g.sigmoid(logit)?;
    let root = g.sum(prob)?;
    let mut grads = g.backward(root)?;

    let objects = input.visible_objects();
    let words: Vec<usize> = (0..input.tokens.len()).filter(|&i| input.tokens[i] != mask_token).collect();
    let obj_grad = grads.take(out.objects);
    let word_grad = grads.take(out.words);
    Ok((
        ContributionScores {
            kind: UnitKind::Object,
            anchor,
            scores: row_sums(&obj_grad, &objects),
            indices: objects,
        },
        ContributionScores {
            kind: UnitKind::Word,
            anchor,
            scores: row_sums(&word_grad, &words),
            indices: words,
        },
    ))
}

pub fn object_contributions(
    params: &ModelParams,
    input: &VqaInput,
    anchor: usize,
    mask_token: usize,
) -> Result<ContributionScores> {
    contributions(params, input, anchor, mask_token).map(|c| c.0)
}

pub fn word_contributions(
    params: &ModelParams,
    input: &VqaInput,
    anchor: usize,
    mask_token: usize,
) -> Result<ContributionScores> {
    contributions(params, input, anchor, mask_token).map(|c| c.1)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{FusionMode, ModelDims};

    fn setup() -> (ModelParams, VqaInput) {
        let dims = ModelDims {
            vocab: 8,
            word_dim: 4,
            feat_dim: 3,
            hidden: 5,
            answers: 4,
            max_tokens: 5,
        };
        let mut p = ModelParams::init(dims, FusionMode::None, 2).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 12.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input = VqaInput {
            features: Tensor::new(vec![4, 3], feats).unwrap(),
            object_mask: vec![false; 4],
            tokens: vec![1, 2, 5, 6, 3],
        };
        (p, input)
    }

    #[test]
    fn linear_path_gives_closed_form() {
        // p = sigmoid(w . v_1) with v_0 unused
        let w = [0.3, -1.2, 0.7];
        let v = Tensor::matrix(2, 3, vec![0.5, 0.1, -0.4, 0.2, 0.9, 0.3]).unwrap();
        let mut g = Graph::new();
        let x = g.param(v.clone());
        let row = g.select(x, &[3, 4, 5]).unwrap();
        let row = g.reshape(row, &[1, 3]).unwrap();
        let wv = g.constant(Tensor::matrix(3, 1, w.to_vec()).unwrap());
        let logit = g.matmul(row, wv).unwrap();
        let prob = g.sigmoid(logit).unwrap();
        let root = g.sum(prob).unwrap();
        let grads = g.backward(root).unwrap();
        let s = row_sums(&grads.get(x), &[0, 1]);
        let z: f64 = w.iter().zip(&v.data()[3..]).map(|(a, b)| a * b).sum();
        let sig = 1.0 / (1.0 + (-z).exp());
        let want = sig * (1.0 - sig) * w.iter().sum::<f64>();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - want).abs() < 1e-15);
    }

    #[test]
    fn masked_units_are_absent() {
        let (p, mut x) = setup();
        x.object_mask[2] = true;
        x.tokens[3] = 0;
        let (o, w) = contributions(&p, &x, 1, 0).unwrap();
        assert_eq!(o.indices, vec![0, 1, 3]);
        assert_eq!(w.indices, vec![0, 1, 2, 4]);
        assert_eq!(o.scores.len(), 3);
        assert_eq!(o.score_of(2), None);
    }

    fn prob(p: &ModelParams, x: &VqaInput, m: usize) -> f64 {
        p.predict(x, 0).unwrap().probability(m)
    }

    #[test]
    fn object_scores_match_uniform_shift_differences() {
        let (p, x) = setup();
        let m = 2;
        let s = object_contributions(&p, &x, m, 0).unwrap();
        let eps = 1e-5;
        for (k, &i) in s.indices.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut y = x.clone();
                y.features.data_mut()[i * 3..(i + 1) * 3].iter_mut().for_each(|v| *v += delta);
                prob(&p, &y, m)
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let rel = (s.scores[k] - fd).abs() / s.scores[k].abs().max(1.0);
            assert!(rel < 1e-4, "object {i}: {} vs {fd}", s.scores[k]);
        }
    }

    #[test]
    fn word_scores_match_uniform_shift_differences() {
        let (p, x) = setup();
        let m = 0;
        let s = word_contributions(&p, &x, m, 0).unwrap();
        let eps = 1e-5;
        for (k, &i) in s.indices.iter().enumerate() {
            // shift only this occurrence: route it to an unused row holding a shifted copy
            let shifted = |delta: f64| {
                let mut q = p.clone();
                let tok = x.tokens[i];
                let fresh = q.dims.vocab - 1;
                let dim = q.dims.word_dim;
                let row: Vec<f64> = p.get(crate::model::ParamId::TokenEmbedding).data()[tok * dim..(tok + 1) * dim]
                    .iter()
                    .map(|v| v + delta)
                    .collect();
                q.get_mut(crate::model::ParamId::TokenEmbedding).data_mut()[fresh * dim..(fresh + 1) * dim]
                    .copy_from_slice(&row);
                let mut tokens = x.tokens.clone();
                tokens[i] = fresh;
                prob(&q, &x.with_question(tokens), m)
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let rel = (s.scores[k] - fd).abs() / s.scores[k].abs().max(1.0);
            assert!(rel < 1e-4, "word {i}: {} vs {fd}", s.scores[k]);
        }
    }
}
