use super::types::{Sample, VocabSpec};

/// Per-object similarity between object categories and question content words.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScores {
    pub values: Vec<f64>,
    /// Set when the question has no content word; every score is then zero.
    pub no_content_words: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `SIM_i` = max over content tokens of the cosine between the object's
/// category embedding and the token embedding. Question-type words and
/// `[MASK]` never count as content. Multi-token phrases are not merged;
/// each token is scored on its own.
pub fn sim_scores(sample: &Sample, vocab: &VocabSpec) -> SimScores {
    let content: Vec<usize> = sample
        .question_tokens
        .iter()
        .copied()
        .filter(|&t| t != vocab.mask_token && !vocab.is_qtype_token(t))
        .collect();
    if content.is_empty() {
        return SimScores {
            values: vec![0.0; sample.objects.len()],
            no_content_words: true,
        };
    }
    let values = sample
        .objects
        .iter()
        .map(|o| {
            let cat = &vocab.category_embeddings[o.category_id];
            content
                .iter()
                .map(|&t| cosine(cat, &vocab.token_embeddings[t]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    SimScores {
        values,
        no_content_words: false,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::dataset::types::{BBox, ObjectFeature};

    fn vocab(cat: Vec<Vec<f64>>, tok: Vec<Vec<f64>>) -> VocabSpec {
        VocabSpec {
            tokens: (0..tok.len()).map(|i| format!("t{i}")).collect(),
            mask_token: 0,
            qtype_markers: vec![vec![1, 2]],
            critical_words: vec![vec![3]],
            distractor_words: vec![4],
            answers: vec!["a".into()],
            qtype_answers: vec![vec![0]],
            categories: (0..cat.len()).map(|i| format!("c{i}")).collect(),
            category_groups: vec![vec![vec![0]]],
            category_embeddings: cat,
            token_embeddings: tok,
        }
    }

    fn sample(cats: &[usize], tokens: Vec<usize>) -> Sample {
        Sample {
            sample_id: 0,
            objects: cats
                .iter()
                .map(|&c| ObjectFeature {
                    vector: vec![0.0],
                    category_id: c,
                    bbox: BBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
                })
                .collect(),
            question_tokens: tokens,
            qtype_id: 0,
            answers: BTreeMap::from([(0, 1.0)]),
            meta: None,
        }
    }

    #[test]
    fn identical_embedding_scores_one() {
        let e = vec![0.6, 0.8];
        let v = vocab(
            vec![e.clone(), vec![1.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], e, vec![0.0, -1.0]],
        );
        let s = sim_scores(&sample(&[0], vec![1, 2, 3]), &v);
        assert!((s.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_embeddings_score_zero() {
        let v = vocab(
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        );
        let s = sim_scores(&sample(&[0, 1], vec![1, 2, 3, 4]), &v);
        assert_eq!(s.values, vec![0.0, 0.0]);
        assert!(!s.no_content_words);
    }

    #[test]
    fn qtype_words_are_excluded() {
        // the qtype marker matches the category exactly but must not count
        let v = vocab(
            vec![vec![1.0, 0.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
        );
        let s = sim_scores(&sample(&[0], vec![1, 2, 3]), &v);
        assert_eq!(s.values, vec![0.0]);
        let empty = sim_scores(&sample(&[0], vec![1, 2, 0]), &v);
        assert!(empty.no_content_words);
        assert_eq!(empty.values, vec![0.0]);
    }

    #[test]
    fn three_objects_against_direct_dot_products() {
        let s2 = 0.5f64.sqrt();
        let cats = vec![vec![1.0, 0.0, 0.0], vec![s2, s2, 0.0], vec![0.0, 0.6, 0.8]];
        let toks = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let v = vocab(cats.clone(), toks.clone());
        let s = sim_scores(&sample(&[0, 1, 2], vec![1, 2, 3, 4]), &v);
        // oracle: unit rows, so cosine is the plain dot product
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for (i, cat) in cats.iter().enumerate() {
            let expect = dot(cat, &toks[3]).max(dot(cat, &toks[4]));
            assert!((s.values[i] - expect).abs() < 1e-12);
        }
        assert!((s.values[2] - 0.8).abs() < 1e-12);
    }
}
