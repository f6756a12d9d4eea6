use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nncore::{finite_difference_check, GradCheckConfig};

fn random_batch<T: Real>(cfg: &ModelConfig, windows: usize, seed: u64, masked: &[usize]) -> WindowBatch<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = windows * cfg.s;
    let px = n * cfg.crop_height * cfg.crop_width;
    let crops = Tensor::from_vec(
        &[n, cfg.crop_height, cfg.crop_width, 1],
        (0..px).map(|_| T::of(rng.random::<f64>())).collect(),
    )
    .unwrap();
    let positions = (0..n).map(|_| NormalizedPosition::new(rng.random(), rng.random())).collect();
    let mask = (0..n).map(|i| !masked.contains(&i)).collect();
    let labels = (0..n)
        .map(|_| AttributeLabel::new(rng.random_range(0..4), rng.random_range(0..4)).unwrap())
        .collect();
    WindowBatch { windows, seq: cfg.s, crops, positions, mask, labels }
}

/// A fixed random linear functional of the logits, so the check exercises
/// the network alone.
fn probe<T: Real>(out: &ModelOutput<T>, seed: u64) -> (T, ModelOutput<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = |t: &Tensor<T>| -> (T, Tensor<T>) {
        let w: Vec<T> = (0..t.len()).map(|_| T::of(rng.random_range(-1.0..1.0))).collect();
        let v = t.data().iter().zip(&w).map(|(&a, &b)| a * b).sum();
        (v, Tensor::from_vec(t.shape(), w).unwrap())
    };
    match out {
        ModelOutput::Dual { t1, t2 } => {
            let (a, ga) = weights(t1);
            let (b, gb) = weights(t2);
            (a + b, ModelOutput::Dual { t1: ga, t2: gb })
        }
        ModelOutput::Joint(j) => {
            let (a, g) = weights(j);
            (a, ModelOutput::Joint(g))
        }
    }
}

fn gradcheck(cfg: ModelConfig) {
    let batch = random_batch::<f64>(&cfg, 2, 5, &[3, 6]);
    let mut model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let run = |store: &ParamStore<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        forward(&cfg, store, &batch, Mode::Train, &mut rng).unwrap()
    };
    let (out, cache) = run(&model.params);
    let (_, dl) = probe(&out, 3);
    model.params.zero_grads();
    model.backward(&cache, &dl).unwrap();
    let check = GradCheckConfig { samples_per_param: 6, ..Default::default() };
    let report = finite_difference_check(&mut model.params, |s| probe(&run(s).0, 3).0, &check);
    assert!(report.passed, "{:?}: {:?}", cfg.pe_variant, report.worst);
    assert!(report.checked > 50);
}

#[test]
fn gradients_rope_concat_dual() {
    gradcheck(ModelConfig::toy());
}

#[test]
fn gradients_ape_single_head() {
    gradcheck(ModelConfig { pe_variant: PeVariant::Ape, dual_head: false, ..ModelConfig::toy() });
}

#[test]
fn gradients_lpe_no_concat() {
    gradcheck(ModelConfig { pe_variant: PeVariant::Lpe, concat: false, ..ModelConfig::toy() });
}

#[test]
fn gradients_stage1_and_baseline() {
    gradcheck(ModelConfig::toy().stage1());
    gradcheck(ModelConfig::toy().as_baseline());
}

#[test]
fn output_shapes() {
    let cfg = ModelConfig::toy();
    let batch = random_batch::<f32>(&cfg, 3, 0, &[]);
    let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
    match model.predict(&batch).unwrap() {
        ModelOutput::Dual { t1, t2 } => {
            assert_eq!(t1.shape(), &[12, 4]);
            assert_eq!(t2.shape(), &[12, 4]);
        }
        _ => panic!("expected two heads"),
    }
    let joint = Model::<f32>::new(ModelConfig { dual_head: false, ..cfg.clone() }, 0).unwrap();
    match joint.predict(&batch).unwrap() {
        ModelOutput::Joint(j) => assert_eq!(j.shape(), &[12, 16]),
        _ => panic!("expected one head"),
    }
    assert_eq!(model.fen_forward(&batch.crops).unwrap().shape(), &[12, cfg.d_model]);
}

#[test]
fn joint_index_decodes_as_divmod() {
    for i in 0..16 {
        let mut logits = vec![0.0; 16];
        logits[i] = 1.0;
        let l = HeadLogits::Joint(logits).predict();
        assert_eq!((l.t1 as usize, l.t2 as usize), (i / 4, i % 4));
    }
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
}

#[test]
fn identical_crops_identical_embeddings() {
    let cfg = ModelConfig::toy();
    let mut batch = random_batch::<f64>(&cfg, 1, 2, &[]);
    let px = cfg.crop_height * cfg.crop_width;
    let first: Vec<f64> = batch.crops.data()[..px].to_vec();
    batch.crops.data_mut()[2 * px..3 * px].copy_from_slice(&first);
    let emb = Model::<f64>::new(cfg, 0).unwrap().fen_forward(&batch.crops).unwrap();
    assert_eq!(emb.row(0), emb.row(2));
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let mut out = t.clone();
    let w = t.len() / t.shape()[0];
    for (dst, &src) in perm.iter().enumerate() {
        out.data_mut()[dst * w..(dst + 1) * w].copy_from_slice(&t.data()[src * w..(src + 1) * w]);
    }
    out
}

#[test]
fn encoder_is_permutation_equivariant() {
    let cfg = ModelConfig::toy().stage1();
    let model = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let batch = random_batch::<f64>(&cfg, 1, 8, &[1]);
    let perm = [2, 0, 3, 1];
    let mut permuted = batch.clone();
    permuted.crops = permute_rows(&batch.crops, &perm);
    permuted.mask = perm.iter().map(|&i| batch.mask[i]).collect();
    permuted.positions = perm.iter().map(|&i| batch.positions[i]).collect();
    let a = model.predict(&batch).unwrap();
    let b = model.predict(&permuted).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        let (HeadLogits::Dual { t1: x, .. }, HeadLogits::Dual { t1: y, .. }) = (a.token(src), b.token(dst)) else {
            panic!()
        };
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn padded_content_is_ignored() {
    let cfg = ModelConfig::toy();
    let model = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let batch = random_batch::<f64>(&cfg, 1, 8, &[1, 2, 3]);
    let mut other = batch.clone();
    let px = cfg.crop_height * cfg.crop_width;
    for v in &mut other.crops.data_mut()[px..] {
        *v = 1.0 - *v;
    }
    other.positions[2] = NormalizedPosition::new(0.9, 0.1);
    assert_eq!(model.predict(&batch).unwrap().token(0), model.predict(&other).unwrap().token(0));
}

#[test]
fn empty_encoder_is_identity() {
    let cfg = ModelConfig { tenc_layers: 0, ..ModelConfig::toy() };
    let model = Model::<f64>::new(cfg.clone(), 0).unwrap();
    let x = random_batch::<f64>(&cfg, 1, 1, &[]).crops.reshape(&[4, 48]).unwrap().slice_rows(0, 4);
    let x = Tensor::from_vec(&[4, 32], x.data()[..128].to_vec()).unwrap();
    assert_eq!(model.tenc_forward(&x, &[true; 4]).unwrap(), x);
}

#[test]
fn equal_positions_reduce_rope_block_to_plain_attention() {
    let cfg = ModelConfig::toy();
    let model = Model::<f64>::new(cfg.clone(), 6).unwrap();
    let batch = random_batch::<f64>(&cfg, 1, 2, &[]);
    let x = model.tenc_forward(&model.fen_forward(&batch.crops).unwrap(), &batch.mask).unwrap();
    let same = vec![NormalizedPosition::new(0.37, 0.81); 4];
    let rotated = model.rope_mixab_forward(&x, &same, &batch.mask).unwrap();
    let plain = stack_forward(&model.params, "ab", cfg.rope_layers, &cfg, &x, &batch.mask, None).unwrap().0;
    assert!(rotated.max_abs_diff(&plain) < 1e-6);
}

#[test]
fn rope_logits_translation_invariant() {
    let cfg = ModelConfig::toy();
    let model = Model::<f64>::new(cfg.clone(), 6).unwrap();
    let batch = random_batch::<f64>(&cfg, 2, 2, &[5]);
    let mut shifted = batch.clone();
    for p in &mut shifted.positions {
        *p = NormalizedPosition::new(p.x + 0.3, p.y - 0.2);
    }
    let (a, b) = (model.predict(&batch).unwrap(), model.predict(&shifted).unwrap());
    for i in 0..batch.tokens() {
        let (HeadLogits::Dual { t1: x, t2: u }, HeadLogits::Dual { t1: y, t2: v }) = (a.token(i), b.token(i)) else {
            panic!()
        };
        for (p, q) in x.iter().chain(&u).zip(y.iter().chain(&v)) {
            assert!((p - q).abs() < 1e-9);
        }
    }
}

#[test]
fn frozen_encoders_get_no_gradient() {
    let cfg = ModelConfig::toy();
    let mut model = Model::<f64>::new(cfg.clone(), 0).unwrap();
    model.params.set_frozen(FEN_PREFIX, true);
    model.params.set_frozen(TENC_PREFIX, true);
    let batch = random_batch::<f64>(&cfg, 1, 0, &[]);
    let (out, cache) = model.forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (_, dl) = probe(&out, 0);
    model.backward(&cache, &dl).unwrap();
    for e in model.params.entries() {
        let frozen = e.name.starts_with(FEN_PREFIX) || e.name.starts_with(TENC_PREFIX);
        assert_eq!(e.frozen, frozen);
        if frozen {
            assert_eq!(e.grad.sum_sq(), 0.0, "{}", e.name);
        }
    }
    assert!(model.params.get("ab.0.rope.fx").unwrap().grad.sum_sq() > 0.0);
}

#[test]
fn stage2_starts_at_stage1_function() {
    let cfg = ModelConfig::toy();
    let stage1 = Model::<f64>::new(cfg.stage1(), 3).unwrap();
    let stage2 = stage2_from_stage1(&stage1, &cfg, 3).unwrap();
    let batch = random_batch::<f64>(&cfg, 2, 4, &[7]);
    let (a, b) = (stage1.predict(&batch).unwrap(), stage2.predict(&batch).unwrap());
    for i in 0..batch.tokens() {
        let (HeadLogits::Dual { t1: x, .. }, HeadLogits::Dual { t1: y, .. }) = (a.token(i), b.token(i)) else {
            panic!()
        };
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
    }
    let fc1 = &stage2.params.get("head_t1.fc1.w").unwrap().value;
    assert_eq!(fc1.shape(), &[2 * cfg.d_model, cfg.head_hidden]);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let cfg = ModelConfig::toy();
    let model = Model::<f32>::new(cfg.clone(), 12).unwrap();
    let ckpt = model.to_checkpoint(Default::default()).unwrap();
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes).unwrap();
    let back = Model::<f32>::from_checkpoint(&Checkpoint::read_from(bytes.as_slice()).unwrap()).unwrap();
    assert_eq!(back.config, cfg);
    let batch = random_batch::<f32>(&cfg, 1, 0, &[]);
    assert_eq!(model.predict(&batch).unwrap(), back.predict(&batch).unwrap());
}

#[test]
fn assemble_pads_and_resizes() {
    use crate::geometry::{nearest_window, DocumentLayout, WordBox};
    let cfg = ModelConfig::toy();
    let layout = DocumentLayout::new(
        100,
        100,
        vec![WordBox::new(0, 0.0, 0.0, 10.0, 10.0), WordBox::new(1, 50.0, 50.0, 60.0, 60.0)],
    )
    .unwrap();
    let win = nearest_window(&layout, 0, cfg.s, 1.0, 2.0).unwrap();
    let crops = vec![WordCrop::blank(16, 12, AttributeLabel::new(1, 0).unwrap()); 2];
    let batch = WindowBatch::<f32>::assemble(&[(&win, &crops)], &cfg).unwrap();
    assert_eq!(batch.mask, vec![true, true, false, false]);
    assert_eq!(batch.labels[0], AttributeLabel::new(1, 0).unwrap());
    assert_eq!(batch.labels[3], AttributeLabel::NORMAL);
    batch.validate(&cfg).unwrap();
}
