use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::types::{BBox, GroundTruthMeta, ObjectFeature, Sample, VocabSpec};
use crate::error::{Error, Result};

/// Soft target given to a decoy answer.
pub const DECOY_SCORE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_qtypes: usize,
    pub answers_per_qtype: usize,
    /// Size of the answer vocabulary; question types draw their candidate
    /// answers from it.
    pub answer_vocab: usize,
    /// Object feature dimension.
    pub d: usize,
    /// Objects per image.
    pub n_v: usize,
    /// Tokens per question.
    pub n_q: usize,
    /// Total-variation distance between train and test answer priors of
    /// every question type.
    pub shift_strength: f64,
    /// Probability that a sample also lists a decoy answer.
    pub noise_rate: f64,
    pub seed: u64,
    pub words_per_qtype: usize,
    pub n_distractor_words: usize,
    /// Categories that only ever appear as distractor objects.
    pub n_extra_categories: usize,
    pub embed_dim: usize,
    /// Standard deviation of the Gaussian noise added to category prototypes.
    pub feature_noise: f64,
    /// Chance that the critical object gets an overlapping duplicate.
    pub duplicate_prob: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 1000,
            n_qtypes: 5,
            answers_per_qtype: 4,
            answer_vocab: 20,
            d: 32,
            n_v: 8,
            n_q: 6,
            shift_strength: 0.6,
            noise_rate: 0.1,
            seed: 0,
            words_per_qtype: 2,
            n_distractor_words: 12,
            n_extra_categories: 60,
            embed_dim: 32,
            feature_noise: 0.8,
            duplicate_prob: 0.5,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_qtypes", self.n_qtypes),
            ("answers_per_qtype", self.answers_per_qtype),
            ("answer_vocab", self.answer_vocab),
            ("d", self.d),
            ("n_v", self.n_v),
            ("words_per_qtype", self.words_per_qtype),
            ("n_distractor_words", self.n_distractor_words),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.answers_per_qtype > self.answer_vocab {
            return Err(Error::config(
                "answers_per_qtype",
                format!("{} exceeds answer vocabulary {}", self.answers_per_qtype, self.answer_vocab),
            ));
        }
        if self.n_q < 3 {
            return Err(Error::config("n_q", "needs two question-type words and a critical word"));
        }
        if !(0.0..=1.0).contains(&self.shift_strength) {
            return Err(Error::config("shift_strength", "must lie in [0, 1]"));
        }
        if self.shift_strength > 0.0 && self.answers_per_qtype < 2 {
            return Err(Error::config("shift_strength", "a prior shift needs at least two answers per qtype"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.duplicate_prob) {
            return Err(Error::config("duplicate_prob", "must lie in [0, 1]"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config("feature_noise", "must be finite and non-negative"));
        }
        Ok(())
    }

    fn n_group_categories(&self) -> usize {
        self.n_qtypes * self.words_per_qtype * self.answers_per_qtype
    }

    /// Train and test answer-slot priors for one question type whose train
    /// head slot is `train_head` and test head slot is `test_head`.
    fn priors(&self, train_head: usize, test_head: usize) -> (Vec<f64>, Vec<f64>) {
        let a = self.answers_per_qtype;
        let s = self.shift_strength;
        let base = (1.0 - s) / a as f64;
        let make = |head: usize| (0..a).map(|j| base + if j == head { s } else { 0.0 }).collect();
        (make(train_head), make(test_head))
    }
}

/// A generated benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub vocab: VocabSpec,
    /// Per-qtype answer-slot priors used for the train split.
    pub train_priors: Vec<Vec<f64>>,
    pub test_priors: Vec<Vec<f64>>,
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn build_vocab(cfg: &BenchmarkConfig, rng: &mut impl Rng) -> VocabSpec {
    let mut tokens = vec!["[MASK]".to_string()];
    let mut qtype_markers = Vec::new();
    for t in 0..cfg.n_qtypes {
        let ids = vec![tokens.len(), tokens.len() + 1];
        tokens.push(format!("qt{t}a"));
        tokens.push(format!("qt{t}b"));
        qtype_markers.push(ids);
    }
    let mut critical_words = Vec::new();
    for t in 0..cfg.n_qtypes {
        let mut ws = Vec::new();
        for w in 0..cfg.words_per_qtype {
            ws.push(tokens.len());
            tokens.push(format!("noun{t}_{w}"));
        }
        critical_words.push(ws);
    }
    let mut distractor_words = Vec::new();
    for i in 0..cfg.n_distractor_words {
        distractor_words.push(tokens.len());
        tokens.push(format!("filler{i}"));
    }

    let answers: Vec<String> = (0..cfg.answer_vocab).map(|i| format!("ans{i}")).collect();
    let qtype_answers: Vec<Vec<usize>> = (0..cfg.n_qtypes)
        .map(|t| {
            (0..cfg.answers_per_qtype)
                .map(|j| (t * cfg.answers_per_qtype + j) % cfg.answer_vocab)
                .collect()
        })
        .collect();

    let n_cat = cfg.n_group_categories() + cfg.n_extra_categories;
    let categories: Vec<String> = (0..n_cat).map(|c| format!("cat{c}")).collect();
    let mut category_groups = Vec::new();
    let mut next = 0;
    for _ in 0..cfg.n_qtypes {
        let mut per_word = Vec::new();
        for _ in 0..cfg.words_per_qtype {
            per_word.push((next..next + cfg.answers_per_qtype).collect::<Vec<_>>());
            next += cfg.answers_per_qtype;
        }
        category_groups.push(per_word);
    }
    let category_embeddings: Vec<Vec<f64>> = (0..n_cat).map(|_| unit_vector(rng, cfg.embed_dim)).collect();

    let mut token_embeddings: Vec<Vec<f64>> = (0..tokens.len()).map(|_| unit_vector(rng, cfg.embed_dim)).collect();
    // a critical word sits close to every category it can refer to
    for t in 0..cfg.n_qtypes {
        for (slot, &w) in critical_words[t].iter().enumerate() {
            let mut acc = vec![0.0; cfg.embed_dim];
            for &c in &category_groups[t][slot] {
                for (a, e) in acc.iter_mut().zip(&category_embeddings[c]) {
                    *a += e;
                }
            }
            token_embeddings[w] = normalize(acc);
        }
    }

    VocabSpec {
        tokens,
        mask_token: 0,
        qtype_markers,
        critical_words,
        distractor_words,
        answers,
        qtype_answers,
        categories,
        category_groups,
        category_embeddings,
        token_embeddings,
    }
}

fn random_box(rng: &mut impl Rng, lo: f64, hi: f64) -> BBox {
    let w = rng.random_range(lo..hi);
    let h = rng.random_range(lo..hi);
    let x1 = rng.random_range(0.0..1.0 - w);
    let y1 = rng.random_range(0.0..1.0 - h);
    BBox { x1, y1, x2: x1 + w, y2: y1 + h }
}

/// A near copy of `b` overlapping it by more than 0.6 IoU.
fn overlapping_box(rng: &mut impl Rng, b: &BBox) -> BBox {
    let w = b.x2 - b.x1;
    let h = b.y2 - b.y1;
    loop {
        let dx = rng.random_range(-0.08..0.08) * w;
        let dy = rng.random_range(-0.08..0.08) * h;
        let x1 = (b.x1 + dx).clamp(0.0, 1.0 - w);
        let y1 = (b.y1 + dy).clamp(0.0, 1.0 - h);
        let dup = BBox { x1, y1, x2: x1 + w, y2: y1 + h };
        if dup.iou(b) > 0.65 {
            return dup;
        }
    }
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

struct Generator<'a> {
    cfg: &'a BenchmarkConfig,
    vocab: &'a VocabSpec,
    prototypes: Vec<Vec<f64>>,
}

impl Generator<'_> {
    fn features(&self, rng: &mut impl Rng, category: usize) -> Vec<f64> {
        self.prototypes[category]
            .iter()
            .map(|p| round_f32(p + self.cfg.feature_noise * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    fn sample(&self, rng: &mut impl Rng, id: u64, priors: &[Vec<f64>]) -> Sample {
        let cfg = self.cfg;
        let vocab = self.vocab;
        let qtype = rng.random_range(0..cfg.n_qtypes);
        let slot = sample_index(rng, &priors[qtype]);
        let word_slot = rng.random_range(0..cfg.words_per_qtype);
        let a = cfg.answers_per_qtype;
        let group = &vocab.category_groups[qtype][word_slot];
        let category = group[(slot + a - word_slot % a) % a];
        let answer = vocab.qtype_answers[qtype][slot];

        // objects: critical first, optional duplicate, then distractors
        let mut objects = Vec::with_capacity(cfg.n_v);
        let crit_box = random_box(rng, 0.2, 0.45);
        objects.push(ObjectFeature {
            vector: self.features(rng, category),
            category_id: category,
            bbox: crit_box,
        });
        let mut n_critical = 1;
        if cfg.n_v >= 2 && rng.random::<f64>() < cfg.duplicate_prob {
            objects.push(ObjectFeature {
                vector: self.features(rng, category),
                category_id: category,
                bbox: overlapping_box(rng, &crit_box),
            });
            n_critical = 2;
        }
        let n_cat = vocab.categories.len();
        while objects.len() < cfg.n_v {
            let c = loop {
                let c = rng.random_range(0..n_cat);
                if !group.contains(&c) {
                    break c;
                }
            };
            let bbox = loop {
                let b = random_box(rng, 0.1, 0.35);
                if objects[..n_critical].iter().all(|o| o.bbox.iou(&b) < 0.4) {
                    break b;
                }
            };
            objects.push(ObjectFeature {
                vector: self.features(rng, c),
                category_id: c,
                bbox,
            });
        }
        let mut order: Vec<usize> = (0..cfg.n_v).collect();
        order.shuffle(rng);
        let mut shuffled = Vec::with_capacity(cfg.n_v);
        let mut critical_objects = Vec::new();
        for (new_pos, &old) in order.iter().enumerate() {
            if old < n_critical {
                critical_objects.push(new_pos);
            }
            shuffled.push(objects[old].clone());
        }

        // question: two qtype markers, then content slots
        let mut tokens = vocab.qtype_markers[qtype].clone();
        let critical_word = rng.random_range(2..cfg.n_q);
        for pos in 2..cfg.n_q {
            if pos == critical_word {
                tokens.push(vocab.critical_words[qtype][word_slot]);
            } else {
                tokens.push(*vocab.distractor_words.choose(rng).expect("non-empty"));
            }
        }

        let mut answers = BTreeMap::new();
        answers.insert(answer, 1.0);
        if a > 1 && rng.random::<f64>() < cfg.noise_rate {
            let decoy = loop {
                let d = vocab.qtype_answers[qtype][rng.random_range(0..a)];
                if d != answer {
                    break d;
                }
            };
            answers.insert(decoy, DECOY_SCORE);
        }

        Sample {
            sample_id: id,
            objects: shuffled,
            question_tokens: tokens,
            qtype_id: qtype,
            answers,
            meta: Some(GroundTruthMeta {
                critical_objects,
                critical_word,
            }),
        }
    }
}

fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generate train and test splits whose per-qtype answer priors differ by
/// `shift_strength` in total variation. Output is a pure function of the
/// config, seed included.
pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = build_vocab(cfg, &mut rng);
    let prototypes: Vec<Vec<f64>> = (0..vocab.categories.len())
        .map(|_| (0..cfg.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let a = cfg.answers_per_qtype;
    let mut train_priors = Vec::new();
    let mut test_priors = Vec::new();
    for _ in 0..cfg.n_qtypes {
        let train_head = rng.random_range(0..a);
        let test_head = if a > 1 {
            (train_head + 1 + rng.random_range(0..a - 1)) % a
        } else {
            train_head
        };
        let (p, q) = cfg.priors(train_head, test_head);
        train_priors.push(p);
        test_priors.push(q);
    }

    let generator = Generator {
        cfg,
        vocab: &vocab,
        prototypes,
    };
    let train = (0..cfg.n_train)
        .map(|i| generator.sample(&mut rng, i as u64, &train_priors))
        .collect();
    let test = (0..cfg.n_test)
        .map(|i| generator.sample(&mut rng, (cfg.n_train + i) as u64, &test_priors))
        .collect();
    Ok(Benchmark {
        train,
        test,
        vocab,
        train_priors,
        test_priors,
    })
}

/// Empirical distribution of top answers per question type, as answer-slot
/// frequencies aligned with `vocab.qtype_answers`.
pub fn empirical_priors(samples: &[Sample], vocab: &VocabSpec) -> Vec<Vec<f64>> {
    let mut counts: Vec<Vec<f64>> = vocab.qtype_answers.iter().map(|a| vec![0.0; a.len()]).collect();
    for s in samples {
        let top = s.anchor_answer();
        if let Some(slot) = vocab.qtype_answers[s.qtype_id].iter().position(|a| *a == top) {
            counts[s.qtype_id][slot] += 1.0;
        }
    }
    for row in &mut counts {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|c| *c /= total);
        }
    }
    counts
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// A set of paraphrases of one test question: question-type words and the
/// critical word stay in place, every other word is resampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RephrasingGroup {
    pub sample_index: usize,
    pub questions: Vec<Vec<usize>>,
}

pub fn rephrase(sample: &Sample, vocab: &VocabSpec, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let meta = sample
        .meta
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("sample {} has no ground-truth metadata", sample.sample_id)))?;
    Ok(sample
        .question_tokens
        .iter()
        .enumerate()
        .map(|(i, &tok)| {
            if i == meta.critical_word || vocab.is_qtype_token(tok) {
                tok
            } else {
                *vocab.distractor_words.choose(rng).expect("non-empty")
            }
        })
        .collect())
}

/// `per_group` rephrasings for every sample that carries metadata.
pub fn rephrasing_groups(
    samples: &[Sample],
    vocab: &VocabSpec,
    per_group: usize,
    seed: u64,
) -> Result<Vec<RephrasingGroup>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.meta.is_some())
        .map(|(i, s)| {
            let questions = (0..per_group)
                .map(|_| rephrase(s, vocab, &mut rng))
                .collect::<Result<_>>()?;
            Ok(RephrasingGroup {
                sample_index: i,
                questions,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        BenchmarkConfig {
            n_train: 300,
            n_test: 200,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn infeasible_answer_count_is_rejected() {
        let cfg = BenchmarkConfig {
            answers_per_qtype: 30,
            answer_vocab: 20,
            ..small()
        };
        assert!(matches!(generate_benchmark(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn stored_answer_follows_labeling_rule() {
        let b = generate_benchmark(&small()).unwrap();
        for s in b.train.iter().chain(&b.test) {
            let meta = s.meta.as_ref().unwrap();
            let word = s.question_tokens[meta.critical_word];
            for &o in &meta.critical_objects {
                let label = b.vocab.label(s.qtype_id, word, s.objects[o].category_id);
                assert_eq!(label, Some(s.anchor_answer()));
            }
            s.validate(32).unwrap();
        }
    }

    #[test]
    fn duplicates_overlap_and_distractors_do_not() {
        let b = generate_benchmark(&small()).unwrap();
        let mut dups = 0;
        for s in &b.train {
            let crit = &s.meta.as_ref().unwrap().critical_objects;
            if crit.len() == 2 {
                dups += 1;
                assert!(s.objects[crit[0]].bbox.iou(&s.objects[crit[1]].bbox) > 0.6);
            }
            for (i, o) in s.objects.iter().enumerate() {
                if !crit.contains(&i) {
                    for &c in crit {
                        assert!(o.bbox.iou(&s.objects[c].bbox) < 0.6);
                    }
                }
            }
        }
        assert!(dups > 100 && dups < 200, "{dups}");
    }

    #[test]
    fn question_layout() {
        let b = generate_benchmark(&small()).unwrap();
        for s in &b.train {
            assert_eq!(s.question_tokens.len(), 6);
            assert_eq!(b.vocab.qtype_positions(&s.question_tokens), vec![0, 1]);
            let cw = s.meta.as_ref().unwrap().critical_word;
            assert!(cw >= 2);
            assert!(b.vocab.critical_words[s.qtype_id].contains(&s.question_tokens[cw]));
        }
    }

    #[test]
    fn rephrasing_keeps_critical_and_qtype_words() {
        let b = generate_benchmark(&small()).unwrap();
        let groups = rephrasing_groups(&b.test[..10], &b.vocab, 4, 3).unwrap();
        assert_eq!(groups.len(), 10);
        for g in &groups {
            let s = &b.test[g.sample_index];
            let cw = s.meta.as_ref().unwrap().critical_word;
            for q in &g.questions {
                assert_eq!(q[..2], s.question_tokens[..2]);
                assert_eq!(q[cw], s.question_tokens[cw]);
            }
        }
    }

    #[test]
    fn embeddings_are_unit_rows() {
        let b = generate_benchmark(&small()).unwrap();
        for row in b.vocab.category_embeddings.iter().chain(&b.vocab.token_embeddings) {
            let n: f64 = row.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
