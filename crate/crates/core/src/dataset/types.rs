use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Invalid(format!("degenerate bbox ({x1}, {y1}, {x2}, {y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeature {
    pub vector: Vec<f64>,
    pub category_id: usize,
    pub bbox: BBox,
}

/// Generator-side ground truth: which objects and which question position
/// determine the answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMeta {
    pub critical_objects: Vec<usize>,
    pub critical_word: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: u64,
    pub objects: Vec<ObjectFeature>,
    pub question_tokens: Vec<usize>,
    pub qtype_id: usize,
    /// answer id -> soft target score in `[0, 1]`
    pub answers: BTreeMap<usize, f64>,
    pub meta: Option<GroundTruthMeta>,
}

impl Sample {
    /// The ground-truth answer with the highest target score, lowest id on ties.
    pub fn anchor_answer(&self) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for (&id, &t) in &self.answers {
            if best.is_none_or(|(_, bt)| t > bt) {
                best = Some((id, t));
            }
        }
        best.map(|(id, _)| id).expect("samples carry at least one answer")
    }

    pub fn answer_ids(&self) -> Vec<usize> {
        self.answers.keys().copied().collect()
    }

    pub fn target_score(&self, answer: usize) -> f64 {
        self.answers.get(&answer).copied().unwrap_or(0.0)
    }

    pub fn feature_dim(&self) -> usize {
        self.objects.first().map_or(0, |o| o.vector.len())
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::Invalid(format!("sample {}: {reason}", self.sample_id)));
        if !self.answers.values().any(|t| *t > 0.0) {
            return bad("no answer with positive target".into());
        }
        if let Some(t) = self.answers.values().find(|t| !(0.0..=1.0).contains(*t)) {
            return bad(format!("target {t} outside [0, 1]"));
        }
        for o in &self.objects {
            if o.vector.len() != feature_dim {
                return bad(format!("feature length {} != {feature_dim}", o.vector.len()));
            }
            if !(o.bbox.x1 < o.bbox.x2 && o.bbox.y1 < o.bbox.y2) {
                return bad("degenerate bbox".into());
            }
        }
        if let Some(meta) = &self.meta {
            if meta.critical_objects.iter().any(|&i| i >= self.objects.len()) {
                return bad("critical object index out of range".into());
            }
            if meta.critical_word >= self.question_tokens.len() {
                return bad("critical word index out of range".into());
            }
        }
        Ok(())
    }
}

/// Vocabularies and the generator's embedding tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub tokens: Vec<String>,
    pub mask_token: usize,
    /// Two marker tokens per question type.
    pub qtype_markers: Vec<Vec<usize>>,
    /// Content words that can name the object of interest, per question type.
    pub critical_words: Vec<Vec<usize>>,
    pub distractor_words: Vec<usize>,
    pub answers: Vec<String>,
    /// Candidate answers per question type.
    pub qtype_answers: Vec<Vec<usize>>,
    pub categories: Vec<String>,
    /// `[qtype][critical word slot]` -> categories, ordered by answer slot.
    pub category_groups: Vec<Vec<Vec<usize>>>,
    /// Unit-norm rows, one per category.
    pub category_embeddings: Vec<Vec<f64>>,
    /// Unit-norm rows, one per token.
    pub token_embeddings: Vec<Vec<f64>>,
}

impl VocabSpec {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_answers(&self) -> usize {
        self.answers.len()
    }

    pub fn n_qtypes(&self) -> usize {
        self.qtype_markers.len()
    }

    pub fn is_qtype_token(&self, token: usize) -> bool {
        self.qtype_markers.iter().any(|m| m.contains(&token))
    }

    /// Positions of question-type words in `tokens`.
    pub fn qtype_positions(&self, tokens: &[usize]) -> Vec<usize> {
        tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| self.is_qtype_token(**t))
            .map(|(i, _)| i)
            .collect()
    }

    /// Answer implied by the generator for a critical object category and a
    /// critical word. `None` when the pair is not a valid combination.
    pub fn label(&self, qtype: usize, critical_word: usize, category: usize) -> Option<usize> {
        let slot = self.critical_words.get(qtype)?.iter().position(|w| *w == critical_word)?;
        let group = &self.category_groups[qtype][slot];
        let pos = group.iter().position(|c| *c == category)?;
        let answers = &self.qtype_answers[qtype];
        Some(answers[(pos + slot) % answers.len()])
    }
}
