//! Finite-difference verification of every differentiable primitive and of
//! the full network plus multi-task loss, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::NormalizedPosition;
use crate::model::{forward, Mode, ModelConfig, ModelOutput, PeVariant, WindowBatch};
use crate::nncore::attention::{AttentionWeights, RopeInputs};
use crate::nncore::softmax::softmax_row_backward;
use crate::nncore::{
    conv2d, conv2d_backward, cross_entropy_from_logits, dropout, dropout_backward, finite_difference_check, gelu,
    gelu_backward, global_avg_pool, global_avg_pool_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, lpe_backward, lpe_lookup, max_pool2d, max_pool2d_backward, multi_head_attention,
    multi_head_attention_backward, relu, relu_backward, rope_mixed_rotate, rope_mixed_rotate_backward,
    softmax_with_temperature, Conv2dSpec, GradCheckConfig, GradCheckReport, ParamStore, RopeFrequencies, Tensor,
    LPE_GRID,
};
use crate::synthdoc::AttributeLabel;
use crate::training::{multitask_loss, LossConfig};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub passed: bool,
}

impl SuiteEntry {
    fn new(name: impl Into<String>, r: GradCheckReport) -> Self {
        Self {
            name: name.into(),
            checked: r.checked,
            max_rel_error: r.max_rel_error,
            worst_param: r.worst.map(|w| w.param),
            passed: r.passed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

type T = f64;
type Forward = dyn Fn(&[&Tensor<T>]) -> Result<Tensor<T>>;
type Backward = dyn Fn(&[&Tensor<T>], &Tensor<T>) -> Result<Vec<Tensor<T>>>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// Values bounded away from zero, for kinked activations.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let mut t = random(shape, rng, 1.0);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn dot(a: &Tensor<T>, b: &Tensor<T>) -> T {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks `<w, f(inputs)>` for a fixed random probe `w`.
fn check_op(name: &str, inputs: Vec<(&str, Tensor<T>)>, f: &Forward, b: &Backward, cfg: &GradCheckConfig) -> Result<SuiteEntry> {
    let mut store = ParamStore::<T>::new();
    let ids = inputs.into_iter().map(|(n, t)| store.insert(n, t)).collect::<Result<Vec<_>>>()?;
    let values = |s: &ParamStore<T>| ids.iter().map(|&i| s.value(i).clone()).collect::<Vec<_>>();
    let vals = values(&store);
    let refs: Vec<&Tensor<T>> = vals.iter().collect();
    let y = f(&refs)?;
    let probe = random(y.shape(), &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37), 1.0);
    for (&id, g) in ids.iter().zip(b(&refs, &probe)?) {
        store.accumulate(id, &g)?;
    }
    let report = finite_difference_check(
        &mut store,
        |s| {
            let vals = values(s);
            let refs: Vec<&Tensor<T>> = vals.iter().collect();
            dot(&probe, &f(&refs).expect("forward succeeded once"))
        },
        cfg,
    );
    Ok(SuiteEntry::new(name, report))
}

fn positions(n: usize, rng: &mut ChaCha8Rng) -> Vec<NormalizedPosition> {
    (0..n).map(|_| NormalizedPosition::new(rng.random(), rng.random())).collect()
}

fn primitives(check: &GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let mut out = Vec::new();

    out.push(check_op(
        "linear",
        vec![("x", random(&[3, 5], &mut rng, 1.0)), ("w", random(&[5, 4], &mut rng, 1.0)), ("b", random(&[4], &mut rng, 1.0))],
        &|v| linear(v[0], v[1], Some(v[2])),
        &|v, dy| {
            let (dx, dw, db) = linear_backward(v[0], v[1], dy)?;
            Ok(vec![dx, dw, db])
        },
        check,
    )?);

    let spec = Conv2dSpec { kernel: 3, stride: 2, padding: 1 };
    out.push(check_op(
        "conv2d",
        vec![
            ("x", random(&[2, 5, 4, 2], &mut rng, 1.0)),
            ("w", random(&[18, 3], &mut rng, 0.5)),
            ("b", random(&[3], &mut rng, 0.5)),
        ],
        &move |v| Ok(conv2d(v[0], v[1], v[2], spec)?.0),
        &move |v, dy| {
            let (_, cache) = conv2d(v[0], v[1], v[2], spec)?;
            let (dx, dw, db) = conv2d_backward(&cache, v[1], dy, spec, true)?;
            Ok(vec![dx.expect("requested"), dw, db])
        },
        check,
    )?);

    // a shuffled ladder keeps every pooling window's maximum well separated
    let mut ladder: Vec<T> = (0..32).map(|i| i as f64 * 0.1).collect();
    for i in (1..ladder.len()).rev() {
        ladder.swap(i, rng.random_range(0..=i));
    }
    out.push(check_op(
        "max_pool2d",
        vec![("x", Tensor::from_vec(&[1, 4, 4, 2], ladder)?)],
        &|v| Ok(max_pool2d(v[0], 2, 2)?.0),
        &|v, dy| {
            let (_, arg) = max_pool2d(v[0], 2, 2)?;
            Ok(vec![max_pool2d_backward(v[0].shape(), &arg, dy)?])
        },
        check,
    )?);

    out.push(check_op(
        "global_avg_pool",
        vec![("x", random(&[2, 3, 3, 4], &mut rng, 1.0))],
        &|v| global_avg_pool(v[0]),
        &|v, dy| Ok(vec![global_avg_pool_backward(v[0].shape(), dy)?]),
        check,
    )?);

    out.push(check_op(
        "layer_norm",
        vec![("x", random(&[3, 6], &mut rng, 2.0)), ("gamma", random(&[6], &mut rng, 1.5)), ("beta", random(&[6], &mut rng, 1.0))],
        &|v| Ok(layer_norm(v[0], v[1], v[2])?.0),
        &|v, dy| {
            let (_, cache) = layer_norm(v[0], v[1], v[2])?;
            let (dx, dg, db) = layer_norm_backward(&cache, v[1], dy)?;
            Ok(vec![dx, dg, db])
        },
        check,
    )?);

    out.push(check_op(
        "relu",
        vec![("x", off_zero(&[4, 5], &mut rng))],
        &|v| Ok(relu(v[0])),
        &|v, dy| Ok(vec![relu_backward(v[0], dy)?]),
        check,
    )?);

    out.push(check_op(
        "gelu",
        vec![("x", random(&[4, 5], &mut rng, 3.0))],
        &|v| Ok(gelu(v[0])),
        &|v, dy| Ok(vec![gelu_backward(v[0], dy)?]),
        check,
    )?);

    let drop_seed = rng.random::<u64>();
    out.push(check_op(
        "dropout",
        vec![("x", random(&[4, 5], &mut rng, 1.0))],
        &move |v| Ok(dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(drop_seed))?.0),
        &move |v, dy| {
            let (_, mask) = dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(drop_seed))?;
            Ok(vec![dropout_backward(dy, mask.as_deref())])
        },
        check,
    )?);

    let tau = 0.25;
    out.push(check_op(
        "softmax_with_temperature",
        vec![("x", random(&[3, 4], &mut rng, 1.0))],
        &move |v| softmax_with_temperature(v[0], tau, 1),
        &move |v, dy| {
            let p = softmax_with_temperature(v[0], tau, 1)?;
            let mut dx = Tensor::zeros(v[0].shape());
            for r in 0..p.rows() {
                softmax_row_backward(p.row(r), dy.row(r), dx.row_mut(r));
            }
            dx.data_mut().iter_mut().for_each(|g| *g /= tau);
            Ok(vec![dx])
        },
        check,
    )?);

    let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
    let mask = [true, true, false, true, true];
    let weights = [0.5, 1.0, 2.0, 1.5];
    let (l1, m1) = (labels.clone(), mask);
    out.push(check_op(
        "cross_entropy",
        vec![("logits", random(&[5, 4], &mut rng, 1.0))],
        &move |v| {
            let (loss, _) = cross_entropy_from_logits(v[0], &l1, &m1, tau, Some(&weights))?;
            Tensor::from_vec(&[1], vec![loss])
        },
        &move |v, dy| {
            let (_, mut g) = cross_entropy_from_logits(v[0], &labels, &mask, tau, Some(&weights))?;
            g.data_mut().iter_mut().for_each(|x| *x *= dy.data()[0]);
            Ok(vec![g])
        },
        check,
    )?);

    for with_rope in [false, true] {
        out.push(attention_entry(with_rope, &mut rng, check)?);
    }

    let pos = positions(3, &mut rng);
    let (p1, p2) = (pos.clone(), pos.clone());
    let axial = RopeFrequencies::<T>::axial(2, 4)?;
    out.push(check_op(
        "rope_mixed_rotate",
        vec![
            ("x", random(&[3, 2, 4], &mut rng, 1.0)),
            ("fx", axial.fx.add(&random(&[2, 2], &mut rng, 0.5))?),
            ("fy", axial.fy.add(&random(&[2, 2], &mut rng, 0.5))?),
        ],
        &move |v| rope_mixed_rotate(v[0], &p1, &RopeFrequencies { fx: v[1].clone(), fy: v[2].clone() }),
        &move |v, dy| {
            let freqs = RopeFrequencies { fx: v[1].clone(), fy: v[2].clone() };
            let y = rope_mixed_rotate(v[0], &p2, &freqs)?;
            let (dx, dfx, dfy) = rope_mixed_rotate_backward(&y, dy, &p2, &freqs)?;
            Ok(vec![dx, dfx, dfy])
        },
        check,
    )?);

    let pos = positions(6, &mut rng);
    let (p1, p2) = (pos.clone(), pos);
    out.push(check_op(
        "lpe_lookup",
        vec![("table", random(&[LPE_GRID * LPE_GRID, 3], &mut rng, 1.0))],
        &move |v| lpe_lookup(v[0], &p1),
        &move |v, dy| Ok(vec![lpe_backward(v[0].shape(), &p2, dy)?]),
        check,
    )?);

    Ok(out)
}

fn weights<'a>(v: &[&'a Tensor<T>]) -> AttentionWeights<'a, T> {
    AttentionWeights { wq: v[3], bq: v[4], wk: v[5], bk: v[6], wv: v[7], bv: v[8], wo: v[9], bo: v[10] }
}

fn attention_entry(with_rope: bool, rng: &mut ChaCha8Rng, check: &GradCheckConfig) -> Result<SuiteEntry> {
    let (heads, seq, windows, d) = (2, 3, 2, 8);
    let n = seq * windows;
    let mask = vec![true, true, false, true, true, true];
    let pos = positions(n, rng);
    let axial = RopeFrequencies::<T>::axial(heads, d / heads)?;
    let mut inputs = vec![
        ("q_in", random(&[n, d], rng, 1.0)),
        ("k_in", random(&[n, d], rng, 1.0)),
        ("v_in", random(&[n, d], rng, 1.0)),
    ];
    for name in ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"] {
        let shape: &[usize] = if name.starts_with('w') { &[d, d] } else { &[d] };
        inputs.push((name, random(shape, rng, 0.5)));
    }
    if with_rope {
        inputs.push(("fx", axial.fx.clone()));
        inputs.push(("fy", axial.fy.clone()));
    }
    let (m1, m2, p1, p2) = (mask.clone(), mask, pos.clone(), pos);
    let fwd = move |v: &[&Tensor<T>]| {
        let rope = with_rope.then(|| RopeInputs { positions: &p1, fx: v[11], fy: v[12] });
        Ok(multi_head_attention(v[0], v[1], v[2], weights(v), heads, seq, &m1, rope)?.0)
    };
    let bwd = move |v: &[&Tensor<T>], dy: &Tensor<T>| {
        let rope = with_rope.then(|| RopeInputs { positions: &p2, fx: v[11], fy: v[12] });
        let (_, cache) = multi_head_attention(v[0], v[1], v[2], weights(v), heads, seq, &m2, rope)?;
        let g = multi_head_attention_backward(&cache, weights(v), rope, dy)?;
        let mut grads = vec![g.dq_in, g.dk_in, g.dv_in, g.dwq, g.dbq, g.dwk, g.dbk, g.dwv, g.dbv, g.dwo, g.dbo];
        if with_rope {
            grads.push(g.dfx.expect("rope gradient"));
            grads.push(g.dfy.expect("rope gradient"));
        }
        Ok(grads)
    };
    let name = if with_rope { "attention_rope_mixed" } else { "attention" };
    check_op(name, inputs, &fwd, &bwd, check)
}

/// Random batch with the last slot of every window padded.
pub fn random_batch(cfg: &ModelConfig, windows: usize, seed: u64) -> Result<WindowBatch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = windows * cfg.s;
    let crops = random(&[n, cfg.crop_height, cfg.crop_width, 1], &mut rng, 1.0);
    let crops = Tensor::from_vec(crops.shape(), crops.data().iter().map(|v| 0.5 + 0.5 * v).collect())?;
    let positions = positions(n, &mut rng);
    let mask = (0..n).map(|i| cfg.s < 2 || i % cfg.s != cfg.s - 1).collect();
    let labels = (0..n)
        .map(|_| AttributeLabel::new(rng.random_range(0..4), rng.random_range(0..4)))
        .collect::<Result<_>>()?;
    Ok(WindowBatch { windows, seq: cfg.s, crops, positions, mask, labels })
}

/// Full forward pass plus multi-task loss, differentiated end to end.
pub fn model_entry(name: &str, cfg: &ModelConfig, check: &GradCheckConfig) -> Result<SuiteEntry> {
    let batch = random_batch(cfg, 2, check.seed ^ 0x51)?;
    let loss_cfg = LossConfig { temperature: cfg.temperature, ..Default::default() };
    let mut model = crate::model::Model::<T>::new(cfg.clone(), check.seed)?;
    let dropout_seed = check.seed ^ 0xd7;
    let run = |store: &ParamStore<T>| -> Result<(f64, ModelOutput<T>, crate::model::ForwardCache<T>)> {
        let (out, cache) = forward(cfg, store, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(dropout_seed))?;
        let (loss, grads) = multitask_loss(&out, &batch.labels, &batch.mask, &loss_cfg)?;
        Ok((loss.total, grads, cache))
    };
    let (_, grads, cache) = run(&model.params)?;
    model.params.zero_grads();
    model.backward(&cache, &grads)?;
    let report = finite_difference_check(&mut model.params, |s| run(s).expect("forward succeeded once").0, check);
    Ok(SuiteEntry::new(name, report))
}

/// Every primitive, then the network variants built from `cfg`.
pub fn gradient_suite(cfg: &ModelConfig, check: &GradCheckConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let mut entries = primitives(check)?;
    let variants = [
        ("model_rope_mixed_dual", cfg.clone()),
        ("model_ape_joint", ModelConfig { pe_variant: PeVariant::Ape, dual_head: false, ..cfg.clone() }),
        ("model_lpe_no_concat", ModelConfig { pe_variant: PeVariant::Lpe, concat: false, ..cfg.clone() }),
        ("model_stage1", cfg.stage1()),
        ("model_baseline", cfg.as_baseline()),
    ];
    for (name, c) in &variants {
        entries.push(model_entry(name, c, check)?);
    }
    Ok(SuiteReport { entries })
}
