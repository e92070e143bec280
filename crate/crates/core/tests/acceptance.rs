//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so every check reports even when an earlier one fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use csst_core::autodiff::{Graph, Tensor};
use csst_core::css::{co_sel, io_sel, object_contributions, read_dump, synthesize, synthesize_kind, CfKind, CssConfig};
use csst_core::cst::{cr_g_loss, cr_l_loss, neg_sel, xe_loss, CrMode, DatasetIndex, NegKind, Trainer};
use csst_core::dataset::{generate_benchmark, sim_scores, BenchmarkConfig, Sample, VocabSpec};
use csst_core::model::{FusionMode, ModelDims, ModelParams, ParamId, VqaInput};
use csst_core::pipeline::{self, Overrides, RunConfig, GRADCHECK_TOLERANCE};
use csst_core::MetricsReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let res = match (res, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:.1?}, budget {b:?}")),
            (r, _) => r,
        };
        match res {
            Ok(detail) => println!("criterion {id} PASS  {name} ({took:.1?}): {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("criterion {id} FAIL  {name} ({took:.1?}): {detail}");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---- 1: gradients ----

fn gradients() -> Outcome {
    let checks = pipeline::gradcheck_suite(0, 10).map_err(err)?;
    let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).ok_or("no checks")?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed(GRADCHECK_TOLERANCE))
        .map(|c| format!("{}={:.2e}", c.name, c.max_rel_error))
        .collect();
    ensure(failed.is_empty(), || format!("above tolerance: {}", failed.join(", ")))?;
    Ok(format!("{} checks, worst {} at {:.2e}", checks.len(), worst.name, worst.max_rel_error))
}

// ---- 2: selection invariants ----

/// Smallest prefix of descending scores whose exp-mass share exceeds `eta`.
fn brute_force_k(scores: &[f64], eta: f64) -> usize {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().map(|s| s.exp()).sum();
    let mut acc = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        acc += s.exp();
        if acc / total > eta {
            return i + 1;
        }
    }
    sorted.len()
}

fn check_case(params: &ModelParams, s: &Sample, vocab: &VocabSpec, css: &CssConfig, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let id = s.sample_id;
    let n_obj = s.objects.len();
    let input = VqaInput::from_sample(s);

    // object branch, recomputed from scratch
    let obj = object_contributions(params, &input, s.anchor_answer(), vocab.mask_token).map_err(err)?;
    let init = io_sel(&sim_scores(s, vocab).values, css.init_set_size);
    let init_scores: Vec<f64> = init.iter().map(|&i| obj.score_of(i).expect("all objects visible")).collect();
    let k = brute_force_k(&init_scores, css.eta);
    let mut ranked = init.clone();
    ranked.sort_by(|&a, &b| obj.score_of(b).unwrap().total_cmp(&obj.score_of(a).unwrap()));
    let top = &ranked[..k];
    let v = synthesize_kind(params, s, vocab, css, CfKind::V).map_err(err)?;
    if v.kind == CfKind::V {
        let mut all: Vec<usize> = v.masked.iter().chain(&v.kept).copied().collect();
        all.sort_unstable();
        ensure(all == (0..n_obj).collect::<Vec<_>>(), || format!("sample {id}: object sets do not partition"))?;
        ensure(!v.kept.is_empty(), || format!("sample {id}: empty kept set"))?;
        for t in top {
            ensure(v.masked.contains(t), || format!("sample {id}: top-{k} object {t} not masked"))?;
        }
        for &m in &v.masked {
            let covered = top.contains(&m) || top.iter().any(|&t| s.objects[m].bbox.iou(&s.objects[t].bbox) >= css.iou_threshold);
            ensure(covered, || format!("sample {id}: masked object {m} is neither top-ranked nor overlapping"))?;
        }
        for &c in &v.kept {
            let overlaps = top.iter().any(|&t| s.objects[c].bbox.iou(&s.objects[t].bbox) >= css.iou_threshold);
            ensure(!overlaps, || format!("sample {id}: kept object {c} overlaps a critical object"))?;
        }
    } else {
        // fallback only when the extension swallowed every object
        ensure(v.fallback, || format!("sample {id}: word branch without fallback flag"))?;
        let covered = (0..n_obj)
            .all(|m| top.contains(&m) || top.iter().any(|&t| s.objects[m].bbox.iou(&s.objects[t].bbox) >= css.iou_threshold));
        ensure(covered, || format!("sample {id}: fallback while objects remain"))?;
    }

    // eta monotonicity on the same scores
    let bboxes: Vec<_> = s.objects.iter().map(|o| o.bbox).collect();
    let cands: Vec<usize> = (0..n_obj).collect();
    let mut prev = 0;
    for eta in [0.1, 0.3, 0.5, 0.65, 0.8, 0.95] {
        let sel = co_sel(&init, &init_scores, &cands, &bboxes, eta, css.iou_threshold).map_err(err)?;
        ensure(sel.k == brute_force_k(&init_scores, eta), || format!("sample {id}: K not minimal at eta {eta}"))?;
        ensure(sel.k >= prev, || format!("sample {id}: K shrank at eta {eta}"))?;
        prev = sel.k;
    }

    // word branch
    let q = synthesize_kind(params, s, vocab, css, CfKind::Q).map_err(err)?;
    let content: Vec<usize> = (0..s.question_tokens.len())
        .filter(|&p| !vocab.is_qtype_token(s.question_tokens[p]))
        .collect();
    let mut all: Vec<usize> = q.masked.iter().chain(&q.kept).copied().collect();
    all.sort_unstable();
    ensure(all == content, || format!("sample {id}: word positions do not partition"))?;
    ensure(q.masked.len() == css.top_k_words.min(content.len()), || format!("sample {id}: wrong critical word count"))?;

    // soft answers
    let cf = synthesize(params, s, vocab, css, rng).map_err(err)?;
    ensure(cf.answers.keys().eq(s.answers.keys()), || format!("sample {id}: answer keys changed"))?;
    for (a, t) in &cf.answers {
        ensure((0.0..=1.0).contains(t), || format!("sample {id}: t for answer {a} is {t}"))?;
    }
    Ok(())
}

fn selection_invariants() -> Outcome {
    let bench = generate_benchmark(&BenchmarkConfig {
        n_train: 500,
        n_test: 0,
        seed: 11,
        ..BenchmarkConfig::default()
    })
    .map_err(err)?;
    let css = CssConfig::default();
    let dims = ModelDims::for_vocab(&bench.vocab, bench.train[0].feature_dim(), bench.train[0].question_tokens.len());
    let mut random = ModelParams::init(dims, FusionMode::LogitSum, 5).map_err(err)?;
    for t in random.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
    }
    let cfg = csst_core::cst::TrainConfig {
        epochs: 3,
        fusion: FusionMode::LogitSum,
        ..Default::default()
    };
    let mut trainer = Trainer::for_samples(cfg, css.clone(), bench.vocab.clone(), &bench.train).map_err(err)?;
    trainer.fit(&bench.train).map_err(err)?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut n = 0;
    for params in [&random, &trainer.params] {
        for s in &bench.train {
            let mut case_css = css.clone();
            case_css.eta = rng.random_range(0.2..0.95);
            check_case(params, s, &bench.vocab, &case_css, &mut rng)?;
            n += 1;
        }
    }
    Ok(format!("{n} cases"))
}

// ---- 3: closed forms ----

fn closed_forms() -> Outcome {
    let ln2 = 2f64.ln();
    let scalar = |f: &dyn Fn(&mut Graph) -> csst_core::Result<csst_core::autodiff::Var>| -> Result<f64, String> {
        let mut g = Graph::new();
        let v = f(&mut g).map_err(err)?;
        g.value(v).item().map_err(err)
    };
    let v = |g: &mut Graph, x: &[f64]| g.constant(Tensor::vector(x.to_vec()));

    let sym = scalar(&|g| {
        let a = v(g, &[0.3, -1.2, 2.0]);
        let p = v(g, &[0.6, -2.4, 4.0]);
        let n = v(g, &[1.5, -6.0, 10.0]);
        cr_g_loss(g, a, p, &[n], 1.0)
    })?;
    let one_zero = scalar(&|g| {
        let a = v(g, &[1.0, 0.0]);
        let p = v(g, &[2.0, 0.0]);
        let n = v(g, &[0.0, 3.0]);
        cr_g_loss(g, a, p, &[n], 1.0)
    })?;
    let zero_weight = scalar(&|g| {
        let a = v(g, &[0.4, 1.0]);
        let n = v(g, &[0.0, -800.0]);
        cr_l_loss(g, a, &[n], 1, 1.0)
    })?;
    let xe = scalar(&|g| {
        let z = v(g, &[0.0]);
        xe_loss(g, z, &[(0, 1.0)].into_iter().collect())
    })?;
    let want_one_zero = (1.0 + (-1f64).exp()).ln();
    let rows = [
        ("cr_g symmetric", sym, ln2, 1e-9),
        ("cr_g s_p=1 s_n=0", one_zero, want_one_zero, 1e-9),
        ("cr_l zero weight", zero_weight, 0.0, 1e-12),
        ("xe t=1 z=0", xe, ln2, 1e-9),
    ];
    let mut detail = Vec::new();
    for (name, got, want, tol) in rows {
        ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want}"))?;
        detail.push(format!("{name} err {:.1e}", (got - want).abs()));
    }
    Ok(detail.join(", "))
}

// ---- 4 and 5: shifted benchmark ----

const SEEDS: [u64; 3] = [0, 1, 2];

fn experiment_config(label: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.fusion = FusionMode::LogitSum;
    match label {
        "baseline" => {}
        "css" => cfg.train.css = true,
        "csst" => {
            cfg.train.css = true;
            cfg.train.cr_mode = CrMode::G;
            cfg.train.w_crg = 0.1;
        }
        other => unreachable!("unknown configuration {other}"),
    }
    cfg
}

struct Runs {
    by_label: BTreeMap<&'static str, Vec<MetricsReport>>,
    took: BTreeMap<&'static str, Duration>,
}

fn run_all() -> Result<Runs, String> {
    let mut by_label = BTreeMap::new();
    let mut took = BTreeMap::new();
    for label in ["baseline", "css", "csst"] {
        let start = Instant::now();
        let mut reports = Vec::new();
        for seed in SEEDS {
            let mut cfg = experiment_config(label);
            cfg.apply(&Overrides {
                seed: Some(seed),
                ..Overrides::default()
            });
            let (m, _) = pipeline::run_experiment(&cfg).map_err(err)?;
            println!("    {label} seed {seed}: accuracy {:.2}", m.accuracy);
            reports.push(m);
        }
        took.insert(label, start.elapsed());
        by_label.insert(label, reports);
    }
    Ok(Runs { by_label, took })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ood_ordering(runs: &Runs) -> Outcome {
    let acc = |l: &str| mean(runs.by_label[l].iter().map(|m| m.accuracy));
    let (b, c, t) = (acc("baseline"), acc("css"), acc("csst"));
    let times: Vec<String> = runs.took.iter().map(|(l, d)| format!("{l} {d:.0?}")).collect();
    let detail = format!("baseline {b:.2}, css {c:.2}, csst {t:.2}; {}", times.join(", "));
    let budget = Duration::from_secs(300);
    ensure(runs.took.values().all(|d| *d < budget), || format!("{detail}; over 5 min"))?;
    ensure(c - b >= 3.0, || format!("{detail}; css gains {:.2} < 3", c - b))?;
    ensure(c <= t, || format!("{detail}; csst below css"))?;
    ensure(t - b >= 5.0, || format!("{detail}; csst gains {:.2} < 5", t - b))?;
    Ok(detail)
}

fn diagnostics_direction(runs: &Runs) -> Outcome {
    let get = |l: &str, f: &dyn Fn(&MetricsReport) -> f64| mean(runs.by_label[l].iter().map(f));
    let ai1 = |m: &MetricsReport| m.ai[&1];
    let ci = |m: &MetricsReport| m.ci;
    let cs1 = |m: &MetricsReport| m.cs[&1];
    let mut detail = Vec::new();
    let mut failed = Vec::new();
    for (name, f) in [("AI(1)", &ai1 as &dyn Fn(&MetricsReport) -> f64), ("CI", &ci), ("CS(1)", &cs1)] {
        let (b, t) = (get("baseline", f), get("csst", f));
        detail.push(format!("{name} {b:.2}->{t:.2}"));
        if t <= b {
            failed.push(name);
        }
    }
    for (label, reports) in &runs.by_label {
        for m in reports {
            let cs: Vec<f64> = m.cs.values().copied().collect();
            if cs.windows(2).any(|w| w[1] > w[0]) {
                failed.push("CS(k) monotone");
                detail.push(format!("{label} CS {cs:?}"));
            }
        }
    }
    let detail = detail.join(", ");
    ensure(failed.is_empty(), || format!("{detail}; not improved: {}", failed.join(", ")))?;
    Ok(detail)
}

// ---- 6 and 7: stored pipeline ----

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        out: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.benchmark.n_train = 300;
    cfg.benchmark.n_test = 150;
    cfg.train.epochs = 3;
    cfg.train.css = true;
    cfg.train.cr_mode = CrMode::G;
    cfg.apply(&Overrides {
        seed: Some(7),
        ..Overrides::default()
    });
    cfg
}

fn full_pipeline(out: &Path) -> Result<(), String> {
    let cfg = small_config(out);
    pipeline::gen_data(&cfg).map_err(err)?;
    pipeline::train(&cfg).map_err(err)?;
    pipeline::synth_dump(&cfg).map_err(err)?;
    pipeline::eval(&cfg).map_err(err)?;
    Ok(())
}

/// `x @ w + b` for a `[n_in, n_out]` row-major weight.
fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let n_out = w.shape()[1];
    (0..n_out)
        .map(|j| {
            let s: f64 = x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * n_out + j]).sum();
            s + b.map_or(0.0, |b| b.data()[j])
        })
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Straight-line plain-head logits, written independently of the graph.
fn oracle_logits(p: &ModelParams, input: &VqaInput) -> Vec<f64> {
    let wd = p.dims.word_dim;
    let emb = p.get(ParamId::TokenEmbedding);
    let hidden: Vec<Vec<f64>> = input
        .tokens
        .iter()
        .map(|&t| {
            let row = &emb.data()[t * wd..(t + 1) * wd];
            affine(row, p.get(ParamId::QuestionW), Some(p.get(ParamId::QuestionB)))
                .into_iter()
                .map(f64::tanh)
                .collect()
        })
        .collect();
    let pool = softmax(&p.get(ParamId::PoolWeights).data()[..input.tokens.len()]);
    let h = p.dims.hidden;
    let q: Vec<f64> = (0..h).map(|j| hidden.iter().zip(&pool).map(|(r, w)| w * r[j]).sum()).collect();

    let fd = p.dims.feat_dim;
    let visible: Vec<usize> = (0..input.n_objects()).filter(|&i| !input.object_mask[i]).collect();
    let obj: Vec<Vec<f64>> = visible
        .iter()
        .map(|&i| {
            let row = &input.features.data()[i * fd..(i + 1) * fd];
            affine(row, p.get(ParamId::ObjectW), Some(p.get(ParamId::ObjectB)))
                .into_iter()
                .map(f64::tanh)
                .collect()
        })
        .collect();
    let att_w = p.get(ParamId::AttentionW).data();
    let scores: Vec<f64> = obj
        .iter()
        .map(|o| o.iter().zip(&q).zip(att_w).map(|((a, b), w)| a * b * w).sum())
        .collect();
    let att = softmax(&scores);
    let attended: Vec<f64> = (0..h).map(|j| obj.iter().zip(&att).map(|(o, w)| w * o[j]).sum()).collect();

    let fq: Vec<f64> = affine(&q, p.get(ParamId::FuseQW), Some(p.get(ParamId::FuseQB))).into_iter().map(f64::tanh).collect();
    let fv: Vec<f64> = affine(&attended, p.get(ParamId::FuseVW), Some(p.get(ParamId::FuseVB)))
        .into_iter()
        .map(f64::tanh)
        .collect();
    let joint: Vec<f64> = fq.iter().zip(&fv).map(|(a, b)| a * b).collect();
    affine(&joint, p.get(ParamId::ClassifierW), Some(p.get(ParamId::ClassifierB)))
}

fn dsa_exactness(run: &Path) -> Outcome {
    let cfg = small_config(run);
    let bench = pipeline::load_data(&cfg).map_err(err)?;
    let params = pipeline::load_model(&cfg).map_err(err)?;
    let dump = read_dump(&run.join("counterfactuals.jsonl")).map_err(err)?;
    ensure(dump.len() == bench.train.len(), || "dump size differs from the training split".into())?;
    let mut worst = 0.0f64;
    let mut n = 0;
    for (cf, s) in dump.iter().zip(&bench.train) {
        ensure(cf.origin_id == s.sample_id, || format!("dump out of order at {}", s.sample_id))?;
        let mut x = VqaInput::from_sample(s);
        for &u in &cf.kept {
            match cf.kind {
                CfKind::V => x.object_mask[u] = true,
                CfKind::Q => x.tokens[u] = bench.vocab.mask_token,
            }
        }
        let z = oracle_logits(&params, &x);
        ensure(cf.answers.keys().eq(s.answers.keys()), || format!("sample {}: answer keys differ", s.sample_id))?;
        for (&a, &t) in &cf.answers {
            let want = 1.0 - 1.0 / (1.0 + (-z[a]).exp());
            worst = worst.max((t - want).abs());
            n += 1;
        }
    }
    ensure(worst <= 1e-10, || format!("worst deviation {worst:.2e}"))?;
    Ok(format!("{n} soft targets, worst deviation {worst:.1e}"))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable run dir").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn digest(root: &Path) -> Vec<(PathBuf, String)> {
    files_under(root)
        .into_iter()
        .map(|rel| {
            let bytes = std::fs::read(root.join(&rel)).expect("readable file");
            let hex = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            (rel, hex)
        })
        .collect()
}

/// Repeat the pipeline at the same path after moving the first run aside.
fn determinism(a: &Path, first: &Path) -> Outcome {
    std::fs::rename(a, first).map_err(err)?;
    full_pipeline(a)?;
    let (da, db) = (digest(first), digest(a));
    ensure(!da.is_empty(), || "no output files".into())?;
    let names: Vec<_> = da.iter().map(|(p, _)| p.clone()).collect();
    ensure(names == db.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>(), || "file sets differ".into())?;
    let differing: Vec<String> = da
        .iter()
        .zip(&db)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    ensure(differing.is_empty(), || format!("differ: {}", differing.join(", ")))?;
    Ok(format!("{} files identical", da.len()))
}

// ---- 8: negatives ----

fn negatives() -> Outcome {
    let bench = generate_benchmark(&BenchmarkConfig {
        n_train: 2000,
        n_test: 0,
        seed: 3,
        ..BenchmarkConfig::default()
    })
    .map_err(err)?;
    let samples = &bench.train;
    let index = DatasetIndex::new(samples);
    let css = CssConfig::default();
    let dims = ModelDims::for_vocab(&bench.vocab, samples[0].feature_dim(), samples[0].question_tokens.len());
    let params = ModelParams::init(dims, FusionMode::LogitSum, 9).map_err(err)?;
    let mask = bench.vocab.mask_token;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    const DRAWS: usize = 10_000;
    for draw in 0..DRAWS {
        let batch: Vec<usize> = (0..64).map(|_| rng.random_range(0..samples.len())).collect();
        let pos = batch[rng.random_range(0..batch.len())];
        let p = &samples[pos];
        let origin = VqaInput::from_sample(p);
        let negs = neg_sel(pos, &batch, samples, &index, &params, &bench.vocab, &css, &mut rng).map_err(err)?;
        ensure(negs.len() == 4, || format!("draw {draw}: {} negatives", negs.len()))?;
        for n in negs.iter() {
            *counts.entry(format!("{:?}", n.kind)).or_default() += 1;
        }

        match negs[0].kind {
            NegKind::ObjectCounterfactual => {
                ensure(negs[0].input.tokens == origin.tokens, || format!("draw {draw}: object cf changed words"))?;
                ensure(negs[0].input.object_mask.iter().any(|m| *m), || format!("draw {draw}: no object removed"))?;
                ensure(negs[0].input.object_mask.iter().any(|m| !*m), || format!("draw {draw}: every object removed"))?;
            }
            NegKind::WordCounterfactual => {}
            k => return Err(format!("draw {draw}: slot 1 holds {k:?}")),
        }
        for n in &negs[..2] {
            if n.kind == NegKind::WordCounterfactual {
                let x = &n.input;
                ensure(x.object_mask == origin.object_mask, || format!("draw {draw}: word cf changed the image"))?;
                let changed: Vec<usize> = (0..x.tokens.len()).filter(|&i| x.tokens[i] != origin.tokens[i]).collect();
                ensure(!changed.is_empty(), || format!("draw {draw}: no word masked"))?;
                ensure(changed.iter().all(|&i| x.tokens[i] == mask), || format!("draw {draw}: word replaced by non-mask"))?;
            }
        }
        ensure(negs[1].kind == NegKind::WordCounterfactual, || format!("draw {draw}: slot 2 holds {:?}", negs[1].kind))?;

        let ids = p.answer_ids();
        match negs[2].kind {
            NegKind::OtherAnswer => {
                let o = negs[2].source.ok_or("other-answer negative without source")?;
                ensure(samples[o].qtype_id == p.qtype_id, || format!("draw {draw}: other qtype"))?;
                ensure(samples[o].answer_ids() != ids, || format!("draw {draw}: same answer set"))?;
                ensure(negs[2].input == VqaInput::from_sample(&samples[o]), || format!("draw {draw}: input is not sample {o}"))?;
            }
            NegKind::ImageSwap => {
                let exists = index.same_qtype(p.qtype_id).iter().any(|&i| samples[i].answer_ids() != ids);
                ensure(!exists, || format!("draw {draw}: image swap although another answer set exists"))?;
            }
            k => return Err(format!("draw {draw}: slot 3 holds {k:?}")),
        }
        ensure(negs[3].kind == NegKind::ImageSwap, || format!("draw {draw}: slot 4 holds {:?}", negs[3].kind))?;
        for n in negs.iter().filter(|n| n.kind == NegKind::ImageSwap) {
            let o = n.source.ok_or("image swap without source")?;
            ensure(batch.contains(&o), || format!("draw {draw}: image from outside the batch"))?;
            ensure(samples[o].sample_id != p.sample_id, || format!("draw {draw}: swapped in its own image"))?;
            ensure(n.input.tokens == origin.tokens, || format!("draw {draw}: swap changed the question"))?;
            ensure(n.input.features == VqaInput::from_sample(&samples[o]).features, || format!("draw {draw}: image is not from {o}"))?;
        }
    }
    let counts: Vec<String> = counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("{DRAWS} draws; {}", counts.join(", ")))
}

fn main() {
    let mut r = Report { failures: 0 };
    r.run(1, "gradient integrity", Some(Duration::from_secs(30)), gradients);
    r.run(2, "selection invariants", Some(Duration::from_secs(60)), selection_invariants);
    r.run(3, "closed-form losses", None, closed_forms);

    let runs = run_all();
    match &runs {
        Ok(runs) => {
            r.run(4, "shifted-test ordering", None, || ood_ordering(runs));
            r.run(5, "diagnostic direction", None, || diagnostics_direction(runs));
        }
        Err(e) => {
            r.run(4, "shifted-test ordering", None, || Err(e.clone()));
            r.run(5, "diagnostic direction", None, || Err(e.clone()));
        }
    }

    let tmp = tempfile::tempdir().expect("temp dir");
    let (a, saved) = (tmp.path().join("run"), tmp.path().join("first"));
    let first = full_pipeline(&a);
    match &first {
        Ok(()) => {
            r.run(6, "soft answer exactness", None, || dsa_exactness(&a));
            r.run(7, "determinism", None, || determinism(&a, &saved));
        }
        Err(e) => {
            r.run(6, "soft answer exactness", None, || Err(e.clone()));
            r.run(7, "determinism", None, || Err(e.clone()));
        }
    }
    r.run(8, "negative selection", None, negatives);

    if r.failures > 0 {
        println!("{} criteria failed", r.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
