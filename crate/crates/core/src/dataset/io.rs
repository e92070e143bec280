//! On-disk layout of a split.
//!
//! A split is a pair of files sharing a stem:
//!
//! * `<stem>.jsonl`: one JSON object per sample, in split order, with the
//!   fields `sample_id`, `qtype`, `tokens`, `answers` (list of
//!   `[answer_id, score]` pairs), `categories`, `bboxes` (list of
//!   `[x1, y1, x2, y2]`), `n_objects`, `dim`, `blob_offset` (byte offset of
//!   the sample's features in the blob) and, for generated data,
//!   `critical_objects` and `critical_word`.
//! * `<stem>.f32`: little-endian `f32` features laid out row-major as
//!   `[sample][object][dim]`.
//!
//! Features go through `f32`, so a round trip reproduces them up to `f32`
//! rounding; the generator already emits `f32`-representable values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::Benchmark;
use super::types::{BBox, GroundTruthMeta, ObjectFeature, Sample, VocabSpec};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    sample_id: u64,
    qtype: usize,
    tokens: Vec<usize>,
    answers: Vec<(usize, f64)>,
    categories: Vec<usize>,
    bboxes: Vec<[f64; 4]>,
    n_objects: usize,
    dim: usize,
    blob_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    critical_objects: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    critical_word: Option<usize>,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

pub fn save_split(manifest: &Path, samples: &[Sample]) -> Result<()> {
    let mut lines = BufWriter::new(File::create(manifest)?);
    let mut blob = BufWriter::new(File::create(blob_path(manifest))?);
    let mut offset = 0u64;
    for s in samples {
        let dim = s.feature_dim();
        let record = ManifestRecord {
            sample_id: s.sample_id,
            qtype: s.qtype_id,
            tokens: s.question_tokens.clone(),
            answers: s.answers.iter().map(|(k, v)| (*k, *v)).collect(),
            categories: s.objects.iter().map(|o| o.category_id).collect(),
            bboxes: s.objects.iter().map(|o| [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2]).collect(),
            n_objects: s.objects.len(),
            dim,
            blob_offset: offset,
            critical_objects: s.meta.as_ref().map(|m| m.critical_objects.clone()),
            critical_word: s.meta.as_ref().map(|m| m.critical_word),
        };
        serde_json::to_writer(&mut lines, &record)?;
        lines.write_all(b"\n")?;
        for o in &s.objects {
            if o.vector.len() != dim {
                return Err(Error::Invalid(format!("sample {}: ragged feature rows", s.sample_id)));
            }
            for v in &o.vector {
                blob.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        offset += (s.objects.len() * dim * 4) as u64;
    }
    lines.flush()?;
    blob.flush()?;
    Ok(())
}

pub fn load_split(manifest: &Path) -> Result<Vec<Sample>> {
    let blob_file = blob_path(manifest);
    let mut raw = Vec::new();
    File::open(&blob_file)?.read_to_end(&mut raw)?;
    if raw.len() % 4 != 0 {
        return Err(Error::Format {
            path: blob_file,
            reason: format!("length {} is not a multiple of 4", raw.len()),
        });
    }

    let reader = BufReader::new(File::open(manifest)?);
    let mut samples = Vec::new();
    let mut expected_offset = 0u64;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: manifest.to_path_buf(),
            line: lineno,
            reason,
        };
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.categories.len() != rec.n_objects || rec.bboxes.len() != rec.n_objects {
            return Err(parse_err("object field lengths disagree with n_objects".into()));
        }
        if rec.blob_offset != expected_offset {
            return Err(parse_err(format!(
                "blob_offset {} but previous records end at {expected_offset}",
                rec.blob_offset
            )));
        }
        let n_bytes = (rec.n_objects * rec.dim * 4) as u64;
        let end = rec.blob_offset + n_bytes;
        if end > raw.len() as u64 {
            return Err(Error::Format {
                path: blob_file,
                reason: format!("record on line {lineno} needs bytes up to {end}, blob has {}", raw.len()),
            });
        }
        let mut objects = Vec::with_capacity(rec.n_objects);
        let base = rec.blob_offset as usize;
        for (k, (cat, b)) in rec.categories.iter().zip(&rec.bboxes).enumerate() {
            let start = base + k * rec.dim * 4;
            let vector = raw[start..start + rec.dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let bbox = BBox::new(b[0], b[1], b[2], b[3]).map_err(|e| parse_err(e.to_string()))?;
            objects.push(ObjectFeature {
                vector,
                category_id: *cat,
                bbox,
            });
        }
        let meta = match (rec.critical_objects, rec.critical_word) {
            (Some(critical_objects), Some(critical_word)) => Some(GroundTruthMeta {
                critical_objects,
                critical_word,
            }),
            (None, None) => None,
            _ => return Err(parse_err("critical_objects and critical_word must appear together".into())),
        };
        let sample = Sample {
            sample_id: rec.sample_id,
            objects,
            question_tokens: rec.tokens,
            qtype_id: rec.qtype,
            answers: rec.answers.into_iter().collect(),
            meta,
        };
        sample.validate(rec.dim).map_err(|e| parse_err(e.to_string()))?;
        samples.push(sample);
        expected_offset = end;
    }
    if expected_offset != raw.len() as u64 {
        return Err(Error::Format {
            path: blob_file,
            reason: format!("{} trailing bytes after the last record", raw.len() as u64 - expected_offset),
        });
    }
    Ok(samples)
}

pub fn save_vocab(path: &Path, vocab: &VocabSpec) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, vocab)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<VocabSpec> {
    let vocab: VocabSpec = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if vocab.mask_token >= vocab.tokens.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "mask token out of range".into(),
        });
    }
    Ok(vocab)
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorsFile {
    train_priors: Vec<Vec<f64>>,
    test_priors: Vec<Vec<f64>>,
}

/// Write `train.jsonl/.f32`, `test.jsonl/.f32`, `vocab.json` and
/// `priors.json` into `dir`.
pub fn save_benchmark(dir: &Path, bench: &Benchmark) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_split(&dir.join("train.jsonl"), &bench.train)?;
    save_split(&dir.join("test.jsonl"), &bench.test)?;
    save_vocab(&dir.join("vocab.json"), &bench.vocab)?;
    let priors = PriorsFile {
        train_priors: bench.train_priors.clone(),
        test_priors: bench.test_priors.clone(),
    };
    std::fs::write(dir.join("priors.json"), serde_json::to_string_pretty(&priors)? + "\n")?;
    Ok(())
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    let priors: PriorsFile = serde_json::from_reader(BufReader::new(File::open(dir.join("priors.json"))?))?;
    Ok(Benchmark {
        train: load_split(&dir.join("train.jsonl"))?,
        test: load_split(&dir.join("test.jsonl"))?,
        vocab: load_vocab(&dir.join("vocab.json"))?,
        train_priors: priors.train_priors,
        test_priors: priors.test_priors,
    })
}
