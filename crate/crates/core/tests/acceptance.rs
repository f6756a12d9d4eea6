//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Numeric arguments select a subset, e.g.
//! `cargo test --test acceptance -- 5 6`.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textar_core::dataset::{Dataset, DocWindow};
use textar_core::evaluation::{cavg, cavg_logits, evaluate_run, infer_records, LogitRecord};
use textar_core::geometry::{nearest_window, sequential_context_windows, DocumentLayout, GeometryConfig, NormalizedPosition, WordBox};
use textar_core::gradsuite::{gradient_suite, random_batch};
use textar_core::model::{forward, head_names, HeadLogits, Mode, Model, ModelConfig, ModelOutput};
use textar_core::nncore::{rope_mixed_rotate, Checkpoint, GradCheckConfig, RopeFrequencies, Tensor};
use textar_core::synthdoc::{AttributeLabel, AugmentPolicy, SynthConfig};
use textar_core::training::{
    evaluate_windows, multitask_loss, train_stage1, train_stage2, LossConfig, TrainConfig, TrainData,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// ---------------------------------------------------------------- 1

fn random_layout(rng: &mut ChaCha8Rng) -> DocumentLayout {
    let n = rng.random_range(1..=50);
    let (w, h) = (rng.random_range(200..2000u32), rng.random_range(200..2000u32));
    // a coarse grid on some pages forces distance ties
    let quantum = if rng.random_bool(0.3) { 20.0 } else { 0.0 };
    let boxes = (0..n)
        .map(|id| {
            let mut x = rng.random_range(0.0..w as f64 - 20.0);
            let mut y = rng.random_range(0.0..h as f64 - 10.0);
            if quantum > 0.0 {
                x = (x / quantum).floor() * quantum;
                y = (y / quantum).floor() * quantum;
            }
            WordBox::new(id, x, y, x + rng.random_range(1.0..20.0f64).min(w as f64 - x), y + rng.random_range(1.0..10.0f64).min(h as f64 - y))
        })
        .collect();
    DocumentLayout::new(w, h, boxes).unwrap()
}

/// Exhaustive oracle: sort every other box by (distance, id), keep `s - 1`.
fn oracle_window(layout: &DocumentLayout, anchor: usize, s: usize, k: f64, m: f64) -> Vec<usize> {
    let center = |b: &WordBox| ((b.x_min + b.x_max) / 2.0 / layout.width as f64, (b.y_min + b.y_max) / 2.0 / layout.height as f64);
    let a = center(&layout.boxes[anchor]);
    let mut all: Vec<(f64, usize)> = layout
        .boxes
        .iter()
        .filter(|b| b.id != anchor)
        .map(|b| {
            let c = center(b);
            ((k * (c.0 - a.0).abs()).max(m * (c.1 - a.1).abs()), b.id)
        })
        .collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    std::iter::once(anchor).chain(all.into_iter().take(s - 1).map(|p| p.1)).collect()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut windows_checked = 0;
    for layout_index in 0..200 {
        let layout = random_layout(&mut rng);
        let n = layout.len();
        let s = rng.random_range(1..=20);
        let k = rng.random_range(0.2..3.0);
        let m = rng.random_range(0.2..3.0);
        for anchor in 0..n {
            let w = nearest_window(&layout, anchor, s, k, m).unwrap();
            let got: Vec<usize> = w.real_members().collect();
            if got != oracle_window(&layout, anchor, s, k, m) {
                return verdict(false, format!("layout {layout_index} anchor {anchor}: {got:?}"));
            }
            windows_checked += 1;
        }
        let seq = sequential_context_windows(&layout, s, k, m, layout_index).unwrap();
        let mut covered = BTreeSet::new();
        for (i, w) in seq.iter().enumerate() {
            let real = w.real_members().count();
            if w.size() != s || real != s.min(n) || w.padding_mask.iter().filter(|&&b| b).count() != real {
                return verdict(false, format!("layout {layout_index}: window {i} has bad cardinality"));
            }
            if covered.contains(&w.anchor_id) {
                return verdict(false, format!("layout {layout_index}: anchor {} already covered", w.anchor_id));
            }
            covered.extend(w.real_members());
        }
        if covered.len() != n || seq.len() > n || seq.len() < n.div_ceil(s) {
            return verdict(false, format!("layout {layout_index}: coverage {} of {n} with {} windows", covered.len(), seq.len()));
        }
    }
    verdict(true, format!("{windows_checked} windows match the sort oracle; coverage and cardinality hold"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut max_shift_dev, mut max_norm_dev) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let heads = rng.random_range(1..=4);
        let head_dim = 2 * rng.random_range(1..=8);
        let s = rng.random_range(1..=10);
        let pairs = head_dim / 2;
        let freq = |rng: &mut ChaCha8Rng| {
            Tensor::from_vec(&[heads, pairs], (0..heads * pairs).map(|_| rng.random_range(-40.0..40.0)).collect()).unwrap()
        };
        let freqs = RopeFrequencies { fx: freq(&mut rng), fy: freq(&mut rng) };
        let tokens = |rng: &mut ChaCha8Rng| {
            Tensor::from_vec(&[s, heads, head_dim], (0..s * heads * head_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (q, k) = (tokens(&mut rng), tokens(&mut rng));
        let pos: Vec<NormalizedPosition> = (0..s).map(|_| NormalizedPosition::new(rng.random(), rng.random())).collect();
        let (dx, dy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let shifted: Vec<NormalizedPosition> = pos.iter().map(|p| NormalizedPosition::new(p.x + dx, p.y + dy)).collect();

        let logits = |pos: &[NormalizedPosition]| -> Vec<f64> {
            let (qr, kr) = (rope_mixed_rotate(&q, pos, &freqs).unwrap(), rope_mixed_rotate(&k, pos, &freqs).unwrap());
            let mut out = Vec::new();
            for h in 0..heads {
                for i in 0..s {
                    for j in 0..s {
                        let a = &qr.data()[(i * heads + h) * head_dim..][..head_dim];
                        let b = &kr.data()[(j * heads + h) * head_dim..][..head_dim];
                        out.push(a.iter().zip(b).map(|(x, y)| x * y).sum());
                    }
                }
            }
            out
        };
        for (a, b) in logits(&pos).iter().zip(logits(&shifted)) {
            max_shift_dev = max_shift_dev.max((a - b).abs());
        }
        let rotated = rope_mixed_rotate(&q, &pos, &freqs).unwrap();
        for (x, y) in q.data().chunks(2).zip(rotated.data().chunks(2)) {
            let (nx, ny) = (x[0].hypot(x[1]), y[0].hypot(y[1]));
            if nx > 1e-9 {
                max_norm_dev = max_norm_dev.max((nx - ny).abs() / nx);
            }
        }
    }
    verdict(
        max_shift_dev < 1e-6 && max_norm_dev < 1e-12,
        format!("shift deviation {max_shift_dev:.2e} (< 1e-6), pair-norm deviation {max_norm_dev:.2e} (< 1e-12)"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let cfg = ModelConfig::toy();
    assert_eq!((cfg.s, cfg.d_model), (4, 32));
    let check = GradCheckConfig { samples_per_param: 0, tolerance: 1e-3, ..Default::default() };
    let report = gradient_suite(&cfg, &check).unwrap();
    let failing: Vec<&str> = report.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    let checked: usize = report.entries.iter().map(|e| e.checked).sum();
    verdict(
        report.passed(),
        format!(
            "{} checks over {checked} coordinates, max rel err {:.2e} (< 1e-3){}",
            report.entries.len(),
            report.max_rel_error(),
            if failing.is_empty() { String::new() } else { format!("; failing {failing:?}") }
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 12;
    let labels: Vec<AttributeLabel> =
        (0..n).map(|_| AttributeLabel::new(rng.random_range(0..4), rng.random_range(0..4)).unwrap()).collect();
    let mask: Vec<bool> = (0..n).map(|i| i % 5 != 4).collect();
    let uniform = ModelOutput::Dual { t1: Tensor::<f64>::full(&[n, 4], 0.7), t2: Tensor::<f64>::full(&[n, 4], -1.3) };
    let (loss, _) = multitask_loss(&uniform, &labels, &mask, &LossConfig::default()).unwrap();
    let ln4_dev = (loss.total - 4f64.ln()).abs();

    let cfg = ModelConfig::desk();
    let batch = random_batch(&cfg, 2, 40).unwrap();
    let mut model = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let (out, cache) = forward(&cfg, &model.params, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let only_t1 = LossConfig { group_weight_t1: 1.0, group_weight_t2: 0.0, ..Default::default() };
    let (_, grads) = multitask_loss(&out, &batch.labels, &batch.mask, &only_t1).unwrap();
    model.params.zero_grads();
    model.backward(&cache, &grads).unwrap();
    let [t1_head, t2_head] = head_names(&cfg) else { unreachable!() };
    let mut t2_nonzero = 0;
    let mut t1_norm = 0.0;
    for e in model.params.entries() {
        if e.name.starts_with(&format!("{t2_head}.")) {
            t2_nonzero += e.grad.data().iter().filter(|&&g| g != 0.0).count();
        }
        if e.name.starts_with(&format!("{t1_head}.")) {
            t1_norm += e.grad.sum_sq();
        }
    }
    verdict(
        ln4_dev < 1e-6 && t2_nonzero == 0 && t1_norm > 0.0,
        format!("|L - ln4| = {ln4_dev:.1e}; weights (1,0): {t2_nonzero} non-zero t2-head gradients, t1-head grad norm² {t1_norm:.2e}"),
    )
}

// ---------------------------------------------------------------- 5

/// Desk model and optimizer defaults on a fixed set of 10 windows. The
/// crops are not augmented, so there is a fixed set to memorise; the loss
/// is measured with dropout off.
fn overfit_run(seed: u64) -> (f64, Vec<u8>, u64) {
    let dataset = Dataset::synthesize(&SynthConfig::default(), 2, 500 + seed).unwrap();
    let cfg = ModelConfig::desk();
    let windows: Vec<DocWindow> = dataset.windows(&GeometryConfig { s: cfg.s, ..Default::default() }, seed).unwrap().into_iter().take(10).collect();
    assert_eq!(windows.len(), 10);
    let train = TrainConfig { epochs: 10_000, max_steps: Some(300), seed, augment: AugmentPolicy::disabled(), ..Default::default() };
    let data = TrainData { dataset: &dataset, windows: &windows, validation: None };
    let (model, log) = train_stage1::<f32>(&cfg, data, &train).unwrap();
    let (loss, _) = evaluate_windows(&model, &dataset, &windows, &train.loss(cfg.temperature), train.batch_windows).unwrap();
    let mut bytes = Vec::new();
    model.to_checkpoint(Default::default()).unwrap().write_to(&mut bytes).unwrap();
    (loss, bytes, log.steps)
}

fn criterion_5() -> Verdict {
    let (loss, bytes, steps) = overfit_run(0);
    let (loss_again, bytes_again, _) = overfit_run(0);
    let deterministic = bytes == bytes_again && loss.to_bits() == loss_again.to_bits();
    verdict(
        loss < 0.05 && steps <= 300 && deterministic,
        format!("loss {loss:.4} (< 0.05) after {steps} steps; rerun bit-identical: {deterministic}"),
    )
}

// ---------------------------------------------------------------- 6 & 7

const TRAIN_DOCS: usize = 60;
const TEST_DOCS: usize = 30;

struct ContextRun {
    baseline_underline: f64,
    stage1_underline: f64,
    stage1_macro: f64,
    stage2_macro: f64,
}

fn context_run(seed: u64) -> ContextRun {
    let synth = SynthConfig { ambiguity_rate: 0.5, ..Default::default() };
    let train = Dataset::synthesize(&synth, TRAIN_DOCS, 1000 + seed).unwrap();
    let test = Dataset::synthesize(&synth, TEST_DOCS, 2000 + seed).unwrap();
    let desk = ModelConfig::desk();
    let geometry = GeometryConfig { s: desk.s, ..Default::default() };
    let windows = train.windows(&geometry, seed).unwrap();
    let data = TrainData { dataset: &train, windows: &windows, validation: None };
    let cfg = TrainConfig { seed, ..Default::default() };

    let (baseline, _) = train_stage1::<f32>(&ModelConfig::baseline(), data, &cfg).unwrap();
    let base = evaluate_run(&baseline, &test, &geometry, seed, 16).unwrap().report;
    let (stage1, _) = train_stage1::<f32>(&desk, data, &cfg).unwrap();
    let s1 = evaluate_run(&stage1, &test, &geometry, seed, 16).unwrap().report;
    let (stage2, _) = train_stage2(&stage1, &desk, data, &cfg).unwrap();
    let s2 = evaluate_run(&stage2, &test, &geometry, seed, 16).unwrap().report;
    let underline = |r: &textar_core::evaluation::MetricsReport| r.f1("underline").unwrap();
    ContextRun {
        baseline_underline: underline(&base),
        stage1_underline: underline(&s1),
        stage1_macro: s1.macro_f1,
        stage2_macro: s2.macro_f1,
    }
}

fn criteria_6_7(runs: &[ContextRun]) -> (Verdict, Verdict) {
    let gaps: Vec<f64> = runs.iter().map(|r| r.stage1_underline - r.baseline_underline).collect();
    let detail6: Vec<String> = runs.iter().map(|r| format!("{:.3} vs {:.3}", r.stage1_underline, r.baseline_underline)).collect();
    let gap = median(gaps);
    let diffs: Vec<f64> = runs.iter().map(|r| r.stage2_macro - r.stage1_macro).collect();
    let detail7: Vec<String> = runs.iter().map(|r| format!("{:.3} vs {:.3}", r.stage2_macro, r.stage1_macro)).collect();
    let diff = median(diffs);
    (
        verdict(gap >= 0.10, format!("median underline F1 gain {gap:+.3} (>= +0.10); context vs baseline per seed [{}]", detail6.join(", "))),
        verdict(diff >= 0.0, format!("median macro F1 gain {diff:+.3} (>= 0); stage 2 vs stage 1 per seed [{}]", detail7.join(", "))),
    )
}

// ---------------------------------------------------------------- 8

/// Attributes that mostly travel in fixed pairs, leaving several of the 16
/// joint classes rare.
fn skewed_mix() -> [[f64; 4]; 4] {
    let raw = [
        [0.40, 0.10, 0.05, 0.02],
        [0.12, 0.005, 0.04, 0.003],
        [0.06, 0.04, 0.005, 0.002],
        [0.02, 0.004, 0.002, 0.10],
    ];
    let total: f64 = raw.iter().flatten().sum();
    raw.map(|row| row.map(|p| p / total))
}

fn head_run(seed: u64) -> (f64, f64) {
    let synth = SynthConfig { class_mix: skewed_mix(), ..Default::default() };
    let train = Dataset::synthesize(&synth, TRAIN_DOCS, 3000 + seed).unwrap();
    let test = Dataset::synthesize(&synth, TEST_DOCS, 4000 + seed).unwrap();
    let dual_cfg = ModelConfig::desk().stage1();
    let single_cfg = ModelConfig { dual_head: false, ..dual_cfg.clone() };
    let geometry = GeometryConfig { s: dual_cfg.s, ..Default::default() };
    let windows = train.windows(&geometry, seed).unwrap();
    let data = TrainData { dataset: &train, windows: &windows, validation: None };
    let cfg = TrainConfig { seed, ..Default::default() };
    let (dual, _) = train_stage1::<f32>(&dual_cfg, data, &cfg).unwrap();
    let (single, _) = train_stage1::<f32>(&single_cfg, data, &cfg).unwrap();
    (
        evaluate_run(&dual, &test, &geometry, seed, 16).unwrap().report.macro_f1,
        evaluate_run(&single, &test, &geometry, seed, 16).unwrap().report.macro_f1,
    )
}

fn criterion_8() -> Verdict {
    let runs: Vec<(f64, f64)> = (0..3).map(head_run).collect();
    let diff = median(runs.iter().map(|(d, s)| d - s).collect());
    let detail: Vec<String> = runs.iter().map(|(d, s)| format!("{d:.3} vs {s:.3}")).collect();
    verdict(diff >= 0.0, format!("median macro F1 gain {diff:+.3} (>= 0); dual vs joint head per seed [{}]", detail.join(", ")))
}

// ---------------------------------------------------------------- 9

fn logit_bits(l: &HeadLogits) -> Vec<u64> {
    match l {
        HeadLogits::Dual { t1, t2 } => t1.iter().chain(t2).map(|v| v.to_bits()).collect(),
        HeadLogits::Joint(j) => j.iter().map(|v| v.to_bits()).collect(),
    }
}

fn criterion_9() -> Verdict {
    let dataset = Dataset::synthesize(&SynthConfig::default(), 4, 9).unwrap();
    let cfg = ModelConfig::desk();
    let model = Model::<f32>::new(cfg.clone(), 9).unwrap();
    let geometry = GeometryConfig { s: cfg.s, ..Default::default() };
    let windows = dataset.windows(&geometry, 9).unwrap();
    let records = infer_records(&model, &dataset, &windows, 8).unwrap();
    let reference = cavg_logits(&records).unwrap();
    let reference_labels = cavg(&records).unwrap();
    let same = |rs: &[LogitRecord]| {
        let got = cavg_logits(rs).unwrap();
        got.len() == reference.len() && got.iter().zip(&reference).all(|((ka, a), (kb, b))| ka == kb && logit_bits(a) == logit_bits(b))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut order_ok = true;
    for _ in 0..20 {
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rng);
        order_ok &= same(&shuffled) && cavg(&shuffled).unwrap() == reference_labels;
    }
    let mut copies_ok = true;
    for k in 2..=6 {
        let copies: Vec<LogitRecord> = (0..k).flat_map(|_| records.iter().cloned()).collect();
        copies_ok &= same(&copies) && cavg(&copies).unwrap() == reference_labels;
    }

    let a = evaluate_run(&model, &dataset, &geometry, 3, 8).unwrap();
    let b = evaluate_run(&model, &dataset, &geometry, 3, 8).unwrap();
    let bits = |o: &textar_core::evaluation::EvalOutcome| -> Vec<u64> { o.records.iter().flat_map(|r| logit_bits(&r.logits)).collect() };
    let reproducible = bits(&a) == bits(&b)
        && a.predictions == b.predictions
        && serde_json::to_string(&a.report).unwrap() == serde_json::to_string(&b.report).unwrap();
    verdict(
        order_ok && copies_ok && reproducible,
        format!(
            "{} records over {} words: order invariance {order_ok}, k-copy idempotence {copies_ok}, evaluate_run bit-reproducible {reproducible}",
            records.len(),
            reference.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn round_trip_identical<T: textar_core::real::Real>(model: &Model<T>) -> bool {
    let mut extra = serde_json::Map::new();
    extra.insert("note".into(), serde_json::json!("round trip"));
    let mut first = Vec::new();
    model.to_checkpoint(extra).unwrap().write_to(&mut first).unwrap();
    let loaded = Checkpoint::read_from(first.as_slice()).unwrap();
    let reloaded = Model::<T>::from_checkpoint(&loaded).unwrap();
    let mut second = Vec::new();
    reloaded.to_checkpoint(loaded.header.as_object().unwrap().clone()).unwrap().write_to(&mut second).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    loaded.save(&path).unwrap();
    let third = std::fs::read(&path).unwrap();
    first == second && first == third
}

fn criterion_10() -> Verdict {
    let desk = ModelConfig::desk();
    let stage1 = Model::<f32>::new(desk.stage1(), 10).unwrap();
    let stage2 = textar_core::model::stage2_from_stage1(&stage1, &desk, 11).unwrap();
    let cases = [
        ("desk stage 1 f32", round_trip_identical(&stage1)),
        ("desk stage 2 f32", round_trip_identical(&stage2)),
        ("toy joint f64", round_trip_identical(&Model::<f64>::new(ModelConfig { dual_head: false, ..ModelConfig::toy() }, 12).unwrap())),
        ("baseline f32", round_trip_identical(&Model::<f32>::new(ModelConfig::baseline(), 13).unwrap())),
    ];
    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(failed.is_empty(), if failed.is_empty() { format!("{} checkpoints byte-identical after save→load→save", cases.len()) } else { format!("differs: {failed:?}") })
}

// ----------------------------------------------------------------

fn main() {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |i: usize| selected.is_empty() || selected.contains(&i);
    let mut all_passed = true;
    let mut report = |id: usize, name: &str, limit_secs: Option<f64>, start: Instant, v: Verdict| {
        let secs = start.elapsed().as_secs_f64();
        let in_time = limit_secs.is_none_or(|l| secs < l);
        let passed = v.passed && in_time;
        all_passed &= passed;
        let limit = limit_secs.map_or(String::new(), |l| format!(", limit {l:.0}s"));
        println!("criterion {id:>2} {name:<28} {} {} ({secs:.1}s{limit})", if passed { "PASS" } else { "FAIL" }, v.detail);
    };

    let simple: [(usize, &str, Option<f64>, fn() -> Verdict); 6] = [
        (1, "geometry oracle", Some(5.0), criterion_1),
        (2, "rope properties", None, criterion_2),
        (3, "gradient suite", Some(120.0), criterion_3),
        (4, "loss closed forms", None, criterion_4),
        (9, "cavg determinism", None, criterion_9),
        (10, "checkpoint round trip", None, criterion_10),
    ];
    for (id, name, limit, f) in simple.into_iter().filter(|c| c.0 <= 4) {
        if wanted(id) {
            let t = Instant::now();
            report(id, name, limit, t, f());
        }
    }
    if wanted(5) {
        let t = Instant::now();
        report(5, "overfit sanity", Some(300.0), t, criterion_5());
    }
    if wanted(6) || wanted(7) {
        let t = Instant::now();
        let runs: Vec<ContextRun> = (0..3).map(context_run).collect();
        let (v6, v7) = criteria_6_7(&runs);
        if wanted(6) {
            report(6, "context advantage", Some(1800.0), t, v6);
        }
        if wanted(7) {
            report(7, "positional refinement", None, t, v7);
        }
    }
    if wanted(8) {
        let t = Instant::now();
        report(8, "dual vs joint head", None, t, criterion_8());
    }
    for (id, name, limit, f) in simple.into_iter().filter(|c| c.0 > 4) {
        if wanted(id) {
            let t = Instant::now();
            report(id, name, limit, t, f());
        }
    }
    if !all_passed {
        std::process::exit(1);
    }
}
