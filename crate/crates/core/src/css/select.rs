use crate::dataset::{BBox, VocabSpec};
use crate::error::{Error, Result};

/// Positions of `values` sorted by descending value, lower index first on ties.
pub fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// The `size` objects with the highest SIM, in rank order.
pub fn io_sel(sim: &[f64], size: usize) -> Vec<usize> {
    let mut order = rank_desc(sim);
    order.truncate(size.min(sim.len()));
    order
}

/// Outcome of critical-object selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSelection {
    /// Number of top-ranked initial objects needed to pass the mass threshold.
    pub k: usize,
    /// Initial objects in descending score order.
    pub ranked: Vec<usize>,
    /// Critical objects after overlap extension, ascending.
    pub critical: Vec<usize>,
    /// Remaining candidates, ascending.
    pub rest: Vec<usize>,
}

/// Share of `exp(s)` mass held by each prefix of `ranked_scores`.
pub fn prefix_shares(ranked_scores: &[f64]) -> Vec<f64> {
    let top = ranked_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ranked_scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    w.iter()
        .map(|x| {
            acc += x;
            acc / total
        })
        .collect()
}

/// Critical-object selection.
///
/// `init` lists the initial object indices and `scores[k]` is the
/// contribution of `init[k]`. `candidates` is the full object set the
/// counterfactual image is drawn from, with `bboxes` indexed by object.
pub fn co_sel(
    init: &[usize],
    scores: &[f64],
    candidates: &[usize],
    bboxes: &[BBox],
    eta: f64,
    iou_threshold: f64,
) -> Result<ObjectSelection> {
    if init.is_empty() {
        return Err(Error::Invalid("initial object set is empty".into()));
    }
    if init.len() != scores.len() {
        return Err(Error::shape("co_sel", &[init.len()], &[scores.len()]));
    }
    let order = rank_desc(scores);
    let ranked_scores: Vec<f64> = order.iter().map(|&k| scores[k]).collect();
    let shares = prefix_shares(&ranked_scores);
    let k = shares.iter().position(|s| *s > eta).map_or(init.len(), |p| p + 1);
    let ranked: Vec<usize> = order.iter().map(|&j| init[j]).collect();

    let selected = &ranked[..k];
    let mut critical: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|c| selected.contains(c) || selected.iter().any(|s| bboxes[*c].iou(&bboxes[*s]) >= iou_threshold))
        .collect();
    for s in selected {
        if !critical.contains(s) {
            critical.push(*s);
        }
    }
    critical.sort_unstable();
    let rest = candidates.iter().copied().filter(|c| !critical.contains(c)).collect();
    Ok(ObjectSelection {
        k,
        ranked,
        critical,
        rest,
    })
}

/// Outcome of critical-word selection. Both sets hold token positions.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSelection {
    /// Critical positions, masked to build the counterfactual question.
    pub critical: Vec<usize>,
    /// Non-qtype, non-critical positions, masked to build the kept question.
    pub others: Vec<usize>,
}

/// Pick the `top_k` highest-scoring non-qtype words. `positions[k]` is the
/// token position scored by `scores[k]`.
pub fn cw_sel(
    tokens: &[usize],
    positions: &[usize],
    scores: &[f64],
    vocab: &VocabSpec,
    top_k: usize,
) -> Result<WordSelection> {
    let content: Vec<usize> = positions
        .iter()
        .copied()
        .filter(|&p| !vocab.is_qtype_token(tokens[p]))
        .collect();
    if content.is_empty() {
        return Err(Error::Invalid("question has no non-qtype word".into()));
    }
    let content_scores: Vec<f64> = content
        .iter()
        .map(|p| scores[positions.iter().position(|q| q == p).expect("position listed")])
        .collect();
    let mut critical: Vec<usize> = rank_desc(&content_scores)
        .into_iter()
        .take(top_k.max(1))
        .map(|k| content[k])
        .collect();
    critical.sort_unstable();
    let others = content.iter().copied().filter(|p| !critical.contains(p)).collect();
    Ok(WordSelection { critical, others })
}
