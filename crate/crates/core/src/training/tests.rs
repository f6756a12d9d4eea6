use super::*;
use crate::geometry::GeometryConfig;
use crate::synthdoc::SynthConfig;

fn tiny() -> (Dataset, Vec<DocWindow>, ModelConfig) {
    let model = ModelConfig::toy();
    let synth = SynthConfig { crop_height: 16, crop_width: 12, words_per_doc: [6, 8], ..Default::default() };
    let ds = Dataset::synthesize(&synth, 2, 1).unwrap();
    let wins = ds.windows(&GeometryConfig { s: model.s, ..Default::default() }, 0).unwrap();
    (ds, wins, model)
}

#[test]
fn training_is_deterministic() {
    let (ds, wins, model_cfg) = tiny();
    let data = TrainData { dataset: &ds, windows: &wins[..2], validation: None };
    let cfg = TrainConfig { epochs: 1, batch_windows: 1, ..Default::default() };
    let (a, la) = train_stage1::<f32>(&model_cfg, data, &cfg).unwrap();
    let (b, lb) = train_stage1::<f32>(&model_cfg, data, &cfg).unwrap();
    assert_eq!(la, lb);
    for (x, y) in a.params.entries().iter().zip(b.params.entries()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn zero_epochs_keeps_initialisation() {
    let (ds, wins, model_cfg) = tiny();
    let data = TrainData { dataset: &ds, windows: &wins, validation: None };
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let (m, log) = train_stage1::<f32>(&model_cfg, data, &cfg).unwrap();
    let fresh = Model::<f32>::new(model_cfg.stage1(), cfg.seed).unwrap();
    for (x, y) in m.params.entries().iter().zip(fresh.params.entries()) {
        assert_eq!(x.value, y.value);
    }
    assert_eq!(log.steps, 0);
}

#[test]
fn stage2_freezes_encoders() {
    let (ds, wins, model_cfg) = tiny();
    let data = TrainData { dataset: &ds, windows: &wins, validation: Some((&ds, &wins)) };
    let cfg = TrainConfig { epochs: 2, batch_windows: 2, lr: 1e-3, ..Default::default() };
    let (s1, _) = train_stage1::<f32>(&model_cfg, data, &cfg).unwrap();
    let (s2, log) = train_stage2(&s1, &model_cfg, data, &cfg).unwrap();
    for e in s1.params.entries() {
        if e.name.starts_with(FEN_PREFIX) || e.name.starts_with(TENC_PREFIX) {
            assert_eq!(s2.params.get(&e.name).unwrap().value, e.value, "{}", e.name);
        }
    }
    assert_eq!(s2.params.get("head_t1.fc1.w").unwrap().value.shape()[0], 2 * model_cfg.d_model);
    assert_ne!(s2.params.get("ab.0.attn.wq").unwrap().value, Model::<f32>::new(model_cfg.clone(), 0).unwrap().params.get("ab.0.attn.wq").unwrap().value);
    assert_eq!(log.epochs.len(), 4);
    let mut csv = Vec::new();
    log.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epoch,split,loss,f1_t1_normal"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn max_steps_caps_training() {
    let (ds, wins, model_cfg) = tiny();
    let data = TrainData { dataset: &ds, windows: &wins, validation: None };
    let cfg = TrainConfig { epochs: 50, batch_windows: 1, max_steps: Some(3), ..Default::default() };
    let (_, log) = train_e2e::<f32>(&model_cfg, data, &cfg).unwrap();
    assert_eq!(log.steps, 3);
}

#[test]
fn stage_names_parse() {
    assert_eq!("1".parse::<Stage>().unwrap(), Stage::Stage1);
    assert_eq!("e2e".parse::<Stage>().unwrap(), Stage::E2e);
    assert!("3".parse::<Stage>().is_err());
}
