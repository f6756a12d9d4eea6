//! Multi-task loss, Adam, and the stage-1 / stage-2 / end-to-end protocols.

mod adam;
mod loss;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig};
pub use loss::{multitask_loss, LossConfig, LossValue};

use crate::dataset::{Dataset, DocWindow};
use crate::error::{Error, Result};
use crate::evaluation::{confusions, MetricsReport, CLASS_KEYS};
use crate::model::{stage2_from_stage1, Mode, Model, ModelConfig, WindowBatch, FEN_PREFIX, TENC_PREFIX};
use crate::real::Real;
use crate::synthdoc::{augment, AugmentPolicy, WordCrop};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    E2e,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "stage1" => Ok(Stage::Stage1),
            "2" | "stage2" => Ok(Stage::Stage2),
            "e2e" => Ok(Stage::E2e),
            other => Err(Error::config(format!("unknown stage `{other}` (1, 2, e2e)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_windows: usize,
    pub group_weight_t1: f64,
    pub group_weight_t2: f64,
    pub class_weights_t1: Option<[f64; 4]>,
    pub class_weights_t2: Option<[f64; 4]>,
    pub stage: Stage,
    pub seed: u64,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub augment: AugmentPolicy,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 30,
            batch_windows: 8,
            group_weight_t1: 0.25,
            group_weight_t2: 0.75,
            class_weights_t1: None,
            class_weights_t2: None,
            stage: Stage::Stage1,
            seed: 0,
            max_steps: None,
            augment: AugmentPolicy::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr must be positive"));
        }
        if self.batch_windows == 0 {
            return Err(Error::config("batch_windows must be positive"));
        }
        if !(self.group_weight_t1 > 0.0 && self.group_weight_t2 > 0.0) {
            return Err(Error::config("group weights must be positive"));
        }
        for w in [self.class_weights_t1, self.class_weights_t2].iter().flatten() {
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::config("class weights must be non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn loss(&self, temperature: f64) -> LossConfig {
        LossConfig {
            group_weight_t1: self.group_weight_t1,
            group_weight_t2: self.group_weight_t2,
            temperature,
            class_weights_t1: self.class_weights_t1,
            class_weights_t2: self.class_weights_t2,
        }
    }
}

/// Windows to train on and, optionally, a split to report each epoch.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    pub windows: &'a [DocWindow],
    pub validation: Option<(&'a Dataset, &'a [DocWindow])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// Token-level F1 of the eight per-head classes.
    pub f1: [f64; 8],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
    /// Training loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainLog {
    /// Per-epoch CSV: `epoch,split,loss` then one F1 column per class.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let cols: Vec<String> = CLASS_KEYS.iter().map(|k| format!("f1_{k}")).collect();
        writeln!(w, "epoch,split,loss,{}", cols.join(","))?;
        for e in &self.epochs {
            let f1: Vec<String> = e.f1.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(w, "{},{},{:.6},{}", e.epoch, e.split, e.loss, f1.join(","))?;
        }
        Ok(())
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a batch of windows, augmenting each real crop when the policy is
/// enabled.
fn batch_for<T: Real>(
    dataset: &Dataset,
    windows: &[&DocWindow],
    cfg: &ModelConfig,
    policy: Option<(&AugmentPolicy, &mut ChaCha8Rng)>,
) -> Result<WindowBatch<T>> {
    let items: Vec<_> = windows.iter().map(|w| (&w.window, dataset.docs[w.doc].crops.as_slice())).collect();
    let mut batch = WindowBatch::<T>::assemble(&items, cfg)?;
    if let Some((policy, rng)) = policy {
        if !policy.is_disabled() {
            let px = cfg.crop_height * cfg.crop_width;
            for t in 0..batch.tokens() {
                if !batch.mask[t] {
                    continue;
                }
                let slice = &mut batch.crops.data_mut()[t * px..(t + 1) * px];
                let crop = WordCrop::from_pixels(
                    cfg.crop_height,
                    cfg.crop_width,
                    slice.iter().map(|v| v.as_f64() as f32).collect(),
                    batch.labels[t],
                )?;
                let out = augment(&crop, policy, rng);
                for (dst, &v) in slice.iter_mut().zip(&out.pixels) {
                    *dst = T::of(v as f64);
                }
            }
        }
    }
    Ok(batch)
}

fn token_f1<T: Real>(batch: &WindowBatch<T>, out: &crate::model::ModelOutput<T>, acc: &mut (Vec<crate::synthdoc::AttributeLabel>, Vec<crate::synthdoc::AttributeLabel>)) {
    for t in 0..batch.tokens() {
        if batch.mask[t] {
            acc.0.push(batch.labels[t]);
            acc.1.push(out.token(t).predict());
        }
    }
}

fn f1_row(acc: &(Vec<crate::synthdoc::AttributeLabel>, Vec<crate::synthdoc::AttributeLabel>)) -> [f64; 8] {
    let (t1, t2) = confusions(&acc.0, &acc.1);
    MetricsReport::from_confusions(&t1, &t2).f1_row()
}

/// Token-level loss and F1 of `model` on a split, evaluation mode, no
/// augmentation.
pub fn evaluate_windows<T: Real>(
    model: &Model<T>,
    dataset: &Dataset,
    windows: &[DocWindow],
    loss_cfg: &LossConfig,
    batch_windows: usize,
) -> Result<(f64, [f64; 8])> {
    let mut total = 0.0;
    let mut batches = 0usize;
    let mut acc = (Vec::new(), Vec::new());
    for chunk in windows.chunks(batch_windows.max(1)) {
        let refs: Vec<&DocWindow> = chunk.iter().collect();
        let batch = batch_for::<T>(dataset, &refs, &model.config, None)?;
        let out = model.predict(&batch)?;
        total += multitask_loss(&out, &batch.labels, &batch.mask, loss_cfg)?.0.total;
        batches += 1;
        token_f1(&batch, &out, &mut acc);
    }
    Ok((total / batches.max(1) as f64, f1_row(&acc)))
}

/// Trains every unfrozen parameter of `model` on `data`. The window order,
/// dropout masks and augmentations come from separate ChaCha8 streams of
/// `cfg.seed`, so a run is fully determined by its inputs.
pub fn fit<T: Real>(model: &mut Model<T>, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.windows.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let loss_cfg = cfg.loss(model.config.temperature);
    let adam = cfg.adam();
    let (mut order_rng, mut dropout_rng, mut aug_rng) = (stream(cfg.seed, 10), stream(cfg.seed, 11), stream(cfg.seed, 12));
    let mut log = TrainLog::default();
    let max_steps = cfg.max_steps.map(|s| s as u64);
    let mut order: Vec<usize> = (0..data.windows.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut epoch_loss, mut epoch_batches) = (0.0, 0usize);
        let mut acc = (Vec::new(), Vec::new());
        for chunk in order.chunks(cfg.batch_windows) {
            if max_steps.is_some_and(|m| log.steps >= m) {
                break;
            }
            let refs: Vec<&DocWindow> = chunk.iter().map(|&i| &data.windows[i]).collect();
            let batch = batch_for::<T>(data.dataset, &refs, &model.config, Some((&cfg.augment, &mut aug_rng)))?;
            let (out, cache) = model.forward(&batch, Mode::Train, &mut dropout_rng)?;
            let (loss, dlogits) = multitask_loss(&out, &batch.labels, &batch.mask, &loss_cfg)?;
            model.params.zero_grads();
            model.backward(&cache, &dlogits)?;
            log.steps += 1;
            adam_step(&mut model.params, &adam, log.steps)?;
            log.step_losses.push(loss.total);
            epoch_loss += loss.total;
            epoch_batches += 1;
            token_f1(&batch, &out, &mut acc);
        }
        if epoch_batches == 0 {
            break 'epochs;
        }
        let mean = epoch_loss / epoch_batches as f64;
        log::info!("epoch {epoch}: train loss {mean:.4} over {epoch_batches} steps");
        log.epochs.push(EpochMetrics { epoch, split: "train".into(), loss: mean, f1: f1_row(&acc) });
        if let Some((ds, wins)) = data.validation {
            let (loss, f1) = evaluate_windows(model, ds, wins, &loss_cfg, cfg.batch_windows)?;
            log::info!("epoch {epoch}: validation loss {loss:.4}");
            log.epochs.push(EpochMetrics { epoch, split: "val".into(), loss, f1 });
        }
    }
    Ok(log)
}

/// Stage 1: feature extractor, context encoder and heads from scratch; the
/// positional block of `model_cfg` is left out.
pub fn train_stage1<T: Real>(model_cfg: &ModelConfig, data: TrainData<'_>, cfg: &TrainConfig) -> Result<(Model<T>, TrainLog)> {
    let mut model = Model::new(model_cfg.stage1(), cfg.seed)?;
    let log = fit(&mut model, data, cfg)?;
    Ok((model, log))
}

/// Stage 2: copies and freezes the stage-1 extractor and encoder, adds a
/// fresh positional block and trains it with the heads.
pub fn train_stage2<T: Real>(
    stage1: &Model<T>,
    model_cfg: &ModelConfig,
    data: TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainLog)> {
    if !model_cfg.has_positional_block() {
        return Err(Error::config("stage 2 needs a positional block (pe_variant other than none)"));
    }
    let mut model = stage2_from_stage1(stage1, model_cfg, cfg.seed)?;
    model.params.set_frozen(FEN_PREFIX, true);
    model.params.set_frozen(TENC_PREFIX, true);
    let log = fit(&mut model, data, cfg)?;
    Ok((model, log))
}

/// Whole model, every component trained jointly from scratch.
pub fn train_e2e<T: Real>(model_cfg: &ModelConfig, data: TrainData<'_>, cfg: &TrainConfig) -> Result<(Model<T>, TrainLog)> {
    let mut model = Model::new(model_cfg.clone(), cfg.seed)?;
    let log = fit(&mut model, data, cfg)?;
    Ok((model, log))
}

#[cfg(test)]
mod tests;
