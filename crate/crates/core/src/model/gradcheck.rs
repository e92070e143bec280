use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::{fuse_vars, qonly_head, vqa_forward, VqaInput};
use super::params::{FusionMode, ModelDims, ModelParams, ParamId};
use crate::autodiff::{finite_diff_check, GradCheck, Graph, Tensor, Var};
use crate::error::Result;

const DIMS: ModelDims = ModelDims {
    vocab: 7,
    word_dim: 4,
    feat_dim: 5,
    hidden: 6,
    answers: 4,
    max_tokens: 4,
};
const MASK: usize = 0;
const EPS: f64 = 1e-5;

struct Point {
    params: ModelParams,
    input: VqaInput,
    weights: Tensor,
}

fn random_point(rng: &mut ChaCha8Rng, fusion: FusionMode) -> Result<Point> {
    let mut params = ModelParams::init(DIMS, fusion, rng.random())?;
    let scale = rng.random_range(5.0..15.0);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    let n_obj = 3;
    let feats = (0..n_obj * DIMS.feat_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let mut object_mask: Vec<bool> = (0..n_obj).map(|_| rng.random::<f64>() < 0.3).collect();
    object_mask[rng.random_range(0..n_obj)] = false;
    let n_tok = rng.random_range(2..=DIMS.max_tokens);
    let tokens = (0..n_tok).map(|_| rng.random_range(1..DIMS.vocab)).collect();
    let weights = Tensor::vector((0..DIMS.answers).map(|_| rng.random_range(-1.0..1.0)).collect());
    Ok(Point {
        params,
        input: VqaInput {
            features: Tensor::new(vec![n_obj, DIMS.feat_dim], feats)?,
            object_mask,
            tokens,
        },
        weights,
    })
}

fn weighted(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Weighted fused logits with parameter `id` replaced by the probe `x`.
fn fused_output(g: &mut Graph, pt: &Point, id: ParamId, x: Var) -> Result<Var> {
    let mut bp = pt.params.bind(g, false);
    bp.set(id, x);
    let out = vqa_forward(g, &pt.params, &bp, &pt.input, MASK, false)?;
    let q = qonly_head(g, &bp, out.question)?;
    let y = fuse_vars(g, out.logits, q, pt.params.fusion)?;
    weighted(g, y, &pt.weights)
}

fn plain_value(pt: &Point, input: &VqaInput) -> Result<f64> {
    let d = pt.params.predict(input, MASK)?;
    Ok(d.logits.iter().zip(pt.weights.data()).map(|(a, b)| a * b).sum())
}

/// Gradient of the weighted plain logits with respect to object features.
fn feature_error(pt: &Point) -> Result<f64> {
    let mut g = Graph::new();
    let bp = pt.params.bind(&mut g, false);
    let out = vqa_forward(&mut g, &pt.params, &bp, &pt.input, MASK, true)?;
    let y = weighted(&mut g, out.logits, &pt.weights)?;
    let analytic = g.backward(y)?.get(out.objects);
    let mut worst = 0.0f64;
    let mut probe = pt.input.clone();
    for i in 0..probe.features.numel() {
        let orig = probe.features.data()[i];
        probe.features.data_mut()[i] = orig + EPS;
        let up = plain_value(pt, &probe)?;
        probe.features.data_mut()[i] = orig - EPS;
        let down = plain_value(pt, &probe)?;
        probe.features.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Finite-difference checks of the full model at `points` random draws:
/// object features through the plain head, and every parameter tensor
/// through the fused head. Draws alternate between the two fusion modes.
pub fn model_suite(seed: u64, points: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![0.0f64; ParamId::ALL.len() + 1];
    for k in 0..points {
        let fusion = if k % 2 == 0 { FusionMode::LogitSum } else { FusionMode::SigmoidProduct };
        let pt = random_point(&mut rng, fusion)?;
        worst[0] = worst[0].max(feature_error(&pt)?);
        for (j, &id) in ParamId::ALL.iter().enumerate() {
            let err = finite_diff_check(|g, x| fused_output(g, &pt, id, x), pt.params.get(id), EPS)?;
            worst[j + 1] = worst[j + 1].max(err);
        }
    }
    let names = std::iter::once("model/features".to_string()).chain(ParamId::ALL.iter().map(|id| format!("model/{}", id.name())));
    Ok(names
        .zip(worst)
        .map(|(name, max_rel_error)| GradCheck {
            name,
            points,
            max_rel_error,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_suite_passes() {
        for c in model_suite(2, 2).unwrap() {
            assert!(c.passed(1e-4), "{c:?}");
        }
    }
}
