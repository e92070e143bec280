use rayon::prelude::*;

use crate::css::object_contributions;
use crate::dataset::{sim_scores, RephrasingGroup, Sample, VocabSpec};
use crate::error::{Error, Result};
use crate::model::{ModelParams, VqaInput};

/// Sum of `sims` over the `k` entries with the largest `|scores|`, lower
/// index first on ties. Fewer than `k` entries sum everything.
pub fn top_k_importance(scores: &[f64], sims: &[f64], k: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    order.iter().take(k).map(|&i| sims[i]).sum()
}

/// Per-sample importance terms for each `k`; zero where the prediction
/// misses the top ground-truth answer.
fn importance_terms(params: &ModelParams, samples: &[Sample], vocab: &VocabSpec, ks: &[usize]) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| {
            let input = VqaInput::from_sample(s);
            let anchor = s.anchor_answer();
            if params.predict(&input, vocab.mask_token)?.argmax() != anchor {
                return Ok(vec![0.0; ks.len()]);
            }
            let c = object_contributions(params, &input, anchor, vocab.mask_token)?;
            let all_sims = sim_scores(s, vocab).values;
            let sims: Vec<f64> = c.indices.iter().map(|&i| all_sims[i]).collect();
            Ok(ks.iter().map(|&k| top_k_importance(&c.scores, &sims, k)).collect())
        })
        .collect()
}

/// Average Importance for several `k` at once, one attribution pass per
/// correctly answered sample. The denominator counts every sample.
pub fn ai_scores(params: &ModelParams, samples: &[Sample], vocab: &VocabSpec, ks: &[usize]) -> Result<Vec<f64>> {
    if ks.contains(&0) {
        return Err(Error::Invalid("importance needs k >= 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::Invalid("importance of an empty split".into()));
    }
    let terms = importance_terms(params, samples, vocab, ks)?;
    let n = samples.len() as f64;
    Ok((0..ks.len()).map(|j| terms.iter().map(|t| t[j]).sum::<f64>() / n).collect())
}

pub fn ai_score(params: &ModelParams, samples: &[Sample], vocab: &VocabSpec, k: usize) -> Result<f64> {
    ai_scores(params, samples, vocab, &[k]).map(|v| v[0])
}

/// Question with the critical word deleted; `None` when nothing would be left.
pub fn without_critical_word(sample: &Sample) -> Result<Option<Vec<usize>>> {
    let meta = sample
        .meta
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("sample {} has no critical word annotation", sample.sample_id)))?;
    if sample.question_tokens.len() <= 1 {
        return Ok(None);
    }
    let mut q = sample.question_tokens.clone();
    if meta.critical_word >= q.len() {
        return Err(Error::Invalid(format!("sample {}: critical word outside question", sample.sample_id)));
    }
    q.remove(meta.critical_word);
    Ok(Some(q))
}

/// CI from per-sample `(answered correctly, probability dropped)` pairs.
pub fn ci_from_outcomes(outcomes: &[(bool, bool)]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Invalid("confidence improvement of an empty split".into()));
    }
    Ok(outcomes.iter().filter(|(c, d)| *c && *d).count() as f64 / outcomes.len() as f64)
}

/// Fraction of samples answered correctly whose top-answer probability drops
/// once the critical word is deleted. Single-word questions stay in the
/// denominator and never count.
pub fn ci_score(params: &ModelParams, samples: &[Sample], vocab: &VocabSpec) -> Result<f64> {
    let outcomes: Vec<(bool, bool)> = samples
        .par_iter()
        .map(|s| {
            let Some(q_star) = without_critical_word(s)? else {
                return Ok((false, false));
            };
            let input = VqaInput::from_sample(s);
            let a = s.anchor_answer();
            let d = params.predict(&input, vocab.mask_token)?;
            if d.argmax() != a {
                return Ok((false, false));
            }
            let d_star = params.predict(&input.with_question(q_star), vocab.mask_token)?;
            Ok((true, d.probability(a) > d_star.probability(a)))
        })
        .collect::<Result<_>>()?;
    ci_from_outcomes(&outcomes)
}

/// `C(c, k) / C(n, k)`: chance that a uniform k-subset of `n` rephrasings
/// holds only correctly answered ones when `c` are correct.
pub fn all_correct_fraction(c: usize, n: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("consensus needs 1 <= k <= {n}, got {k}")));
    }
    if c > n {
        return Err(Error::Invalid(format!("{c} correct out of {n}")));
    }
    if c < k {
        return Ok(0.0);
    }
    Ok((0..k).map(|i| (c - i) as f64 / (n - i) as f64).product())
}

/// Consensus score in percent from `(correct, total)` counts per group.
pub fn consensus(counts: &[(usize, usize)], k: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Invalid("consensus over no groups".into()));
    }
    let mut sum = 0.0;
    for &(c, n) in counts {
        sum += all_correct_fraction(c, n, k)?;
    }
    Ok(100.0 * sum / counts.len() as f64)
}

/// `(correct, total)` per rephrasing group; a rephrasing is correct when the
/// predicted answer carries a positive target score.
pub fn consensus_counts(
    params: &ModelParams,
    groups: &[RephrasingGroup],
    samples: &[Sample],
    vocab: &VocabSpec,
) -> Result<Vec<(usize, usize)>> {
    groups
        .par_iter()
        .map(|g| {
            let s = samples
                .get(g.sample_index)
                .ok_or_else(|| Error::Invalid(format!("group refers to missing sample {}", g.sample_index)))?;
            let input = VqaInput::from_sample(s);
            let mut c = 0;
            for q in &g.questions {
                let pred = params.predict(&input.with_question(q.clone()), vocab.mask_token)?.argmax();
                if s.target_score(pred) > 0.0 {
                    c += 1;
                }
            }
            Ok((c, g.questions.len()))
        })
        .collect()
}

pub fn cs_k(
    params: &ModelParams,
    groups: &[RephrasingGroup],
    samples: &[Sample],
    vocab: &VocabSpec,
    k: usize,
) -> Result<f64> {
    consensus(&consensus_counts(params, groups, samples, vocab)?, k)
}
