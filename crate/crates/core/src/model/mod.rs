//! The attribute recognition network: a per-word CNN feature extractor, a
//! position-free context encoder, an optional positional attention block and
//! classification heads.

mod config;
mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, PeVariant};
use layers::{
    fen_backward, fen_forward, head_backward, head_forward, param, stack_backward, stack_forward, FenCache,
    GradSink, HeadCache, StackCache,
};

use crate::error::{Error, Result};
use crate::geometry::{ContextWindow, NormalizedPosition};
use crate::nncore::{ape_sinusoidal, lpe_backward, lpe_lookup, Checkpoint, ParamStore, RopeFrequencies, Tensor, LPE_GRID};
use crate::real::Real;
use crate::synthdoc::{AttributeLabel, WordCrop};

/// Parameter name prefixes of the two stage-1 encoders.
pub const FEN_PREFIX: &str = "fen.";
pub const TENC_PREFIX: &str = "tenc.";
pub const AB_PREFIX: &str = "ab.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `B` windows of `S` words, flattened to `B·S` token rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch<T> {
    pub windows: usize,
    pub seq: usize,
    /// `[B·S, H, W, 1]`, zeros in padded slots.
    pub crops: Tensor<T>,
    pub positions: Vec<NormalizedPosition>,
    pub mask: Vec<bool>,
    /// Labels per token; padded slots hold `NORMAL` and are ignored.
    pub labels: Vec<AttributeLabel>,
}

impl<T: Real> WindowBatch<T> {
    /// Gathers the crops of each window's members. `crops[i]` is the crop of
    /// word id `i` in that window's document; crops of another size are
    /// resized to the model's crop size.
    pub fn assemble(windows: &[(&ContextWindow, &[WordCrop])], cfg: &ModelConfig) -> Result<Self> {
        let (h, w) = (cfg.crop_height, cfg.crop_width);
        let n = windows.len() * cfg.s;
        let mut pixels = Vec::with_capacity(n * h * w);
        let mut positions = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (win, crops) in windows {
            if win.size() != cfg.s {
                return Err(Error::shape(format!("window of {} words for S = {}", win.size(), cfg.s)));
            }
            for slot in 0..cfg.s {
                match win.members[slot] {
                    Some(id) => {
                        let crop = crops
                            .get(id)
                            .ok_or_else(|| Error::invalid(format!("window references word {id} without a crop")))?;
                        let crop = if crop.height == h && crop.width == w { crop.clone() } else { crop.resized(h, w) };
                        pixels.extend(crop.pixels.iter().map(|&v| T::of(v as f64)));
                        labels.push(crop.label);
                    }
                    None => {
                        pixels.extend(std::iter::repeat_n(T::zero(), h * w));
                        labels.push(AttributeLabel::NORMAL);
                    }
                }
                positions.push(win.positions[slot]);
                mask.push(win.padding_mask[slot]);
            }
        }
        Ok(Self {
            windows: windows.len(),
            seq: cfg.s,
            crops: Tensor::from_vec(&[n, h, w, 1], pixels)?,
            positions,
            mask,
            labels,
        })
    }

    pub fn tokens(&self) -> usize {
        self.windows * self.seq
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let n = self.tokens();
        if self.seq != cfg.s {
            return Err(Error::shape(format!("batch window size {} but model S = {}", self.seq, cfg.s)));
        }
        self.crops.expect_shape(&[n, cfg.crop_height, cfg.crop_width, 1])?;
        if self.positions.len() != n || self.mask.len() != n || self.labels.len() != n {
            return Err(Error::shape("batch positions, mask and labels must have one entry per token"));
        }
        Ok(())
    }
}

/// Logits of one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLogits {
    Dual { t1: [f64; 4], t2: [f64; 4] },
    /// One logit per combination, index `4·t1 + t2`.
    Joint(Vec<f64>),
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl HeadLogits {
    pub fn predict(&self) -> AttributeLabel {
        match self {
            HeadLogits::Dual { t1, t2 } => AttributeLabel { t1: argmax(t1) as u8, t2: argmax(t2) as u8 },
            HeadLogits::Joint(all) => {
                let i = argmax(all);
                AttributeLabel { t1: (i / 4) as u8, t2: (i % 4) as u8 }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            HeadLogits::Dual { t1, t2 } => t1.iter().chain(t2).all(|v| v.is_finite()),
            HeadLogits::Joint(all) => all.iter().all(|v| v.is_finite()),
        }
    }
}

/// Raw (untempered) logits for every token of a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelOutput<T> {
    /// `[B·S, 4]` each.
    Dual { t1: Tensor<T>, t2: Tensor<T> },
    /// `[B·S, 16]`.
    Joint(Tensor<T>),
}

impl<T: Real> ModelOutput<T> {
    pub fn tokens(&self) -> usize {
        match self {
            ModelOutput::Dual { t1, .. } => t1.rows(),
            ModelOutput::Joint(j) => j.rows(),
        }
    }

    pub fn token(&self, i: usize) -> HeadLogits {
        let f = |row: &[T]| -> [f64; 4] { std::array::from_fn(|c| row[c].as_f64()) };
        match self {
            ModelOutput::Dual { t1, t2 } => HeadLogits::Dual { t1: f(t1.row(i)), t2: f(t2.row(i)) },
            ModelOutput::Joint(j) => HeadLogits::Joint(j.row(i).iter().map(|v| v.as_f64()).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            ModelOutput::Dual { t1, t2 } => t1.all_finite() && t2.all_finite(),
            ModelOutput::Joint(j) => j.all_finite(),
        }
    }
}

/// Activations kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    fen: FenCache<T>,
    tenc: StackCache<T>,
    ab: Option<StackCache<T>>,
    heads: Vec<HeadCache<T>>,
    positions: Vec<NormalizedPosition>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn xavier<T: Real, R: Rng>(din: usize, dout: usize, rng: &mut R) -> Result<Tensor<T>> {
    let limit = (6.0 / (din + dout) as f64).sqrt();
    Tensor::from_vec(&[din, dout], (0..din * dout).map(|_| T::of(rng.random_range(-limit..=limit))).collect())
}

fn insert_linear<T: Real, R: Rng>(store: &mut ParamStore<T>, p: &str, din: usize, dout: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{p}.w"), xavier(din, dout, rng)?)?;
    store.insert(format!("{p}.b"), Tensor::zeros(&[dout]))?;
    Ok(())
}

fn insert_norm<T: Real>(store: &mut ParamStore<T>, p: &str, d: usize) -> Result<()> {
    store.insert(format!("{p}.g"), Tensor::full(&[d], T::one()))?;
    store.insert(format!("{p}.b"), Tensor::zeros(&[d]))?;
    Ok(())
}

fn insert_layer<T: Real, R: Rng>(store: &mut ParamStore<T>, p: &str, cfg: &ModelConfig, rope: bool, rng: &mut R) -> Result<()> {
    let d = cfg.d_model;
    insert_norm(store, &format!("{p}.ln1"), d)?;
    for n in ["q", "k", "v", "o"] {
        store.insert(format!("{p}.attn.w{n}"), xavier(d, d, rng)?)?;
        store.insert(format!("{p}.attn.b{n}"), Tensor::zeros(&[d]))?;
    }
    if rope {
        let freqs = RopeFrequencies::<T>::axial(cfg.heads, cfg.head_dim())?;
        store.insert(format!("{p}.rope.fx"), freqs.fx)?;
        store.insert(format!("{p}.rope.fy"), freqs.fy)?;
    }
    insert_norm(store, &format!("{p}.ln2"), d)?;
    store.insert(format!("{p}.ffn.w1"), xavier(d, cfg.ffn_dim, rng)?)?;
    store.insert(format!("{p}.ffn.b1"), Tensor::zeros(&[cfg.ffn_dim]))?;
    store.insert(format!("{p}.ffn.w2"), xavier(cfg.ffn_dim, d, rng)?)?;
    store.insert(format!("{p}.ffn.b2"), Tensor::zeros(&[d]))?;
    Ok(())
}

fn insert_stack<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    p: &str,
    layers: usize,
    cfg: &ModelConfig,
    rope: bool,
    rng: &mut R,
) -> Result<()> {
    for i in 0..layers {
        insert_layer(store, &format!("{p}.{i}"), cfg, rope, rng)?;
    }
    if layers > 0 {
        insert_norm(store, &format!("{p}.norm"), cfg.d_model)?;
    }
    Ok(())
}

/// Names of the classification heads for a configuration.
pub fn head_names(cfg: &ModelConfig) -> &'static [&'static str] {
    if cfg.dual_head {
        &["head_t1", "head_t2"]
    } else {
        &["head_joint"]
    }
}

/// Inserts freshly initialised heads reading `cfg.head_input_dim()` features.
fn insert_heads<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    let outputs = if cfg.dual_head { 4 } else { 16 };
    for name in head_names(cfg) {
        insert_linear(store, &format!("{name}.fc1"), cfg.head_input_dim(), cfg.head_hidden, rng)?;
        insert_linear(store, &format!("{name}.fc2"), cfg.head_hidden, outputs, rng)?;
    }
    Ok(())
}

/// Fresh parameters. Each component draws from its own ChaCha8 stream of
/// `seed`, so two configurations that share a component (for example the
/// two training stages) initialise it identically.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();

    let mut rng = rng_for(seed, 0);
    let mut cin = 1;
    for (i, &c) in cfg.fen_channels.iter().enumerate() {
        let fan_in = 9 * cin;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        let w = (0..fan_in * c).map(|_| T::of(normal.sample(&mut rng))).collect();
        store.insert(format!("fen.conv{i}.w"), Tensor::from_vec(&[fan_in, c], w)?)?;
        store.insert(format!("fen.conv{i}.b"), Tensor::zeros(&[c]))?;
        insert_norm(&mut store, &format!("fen.ln{i}"), c)?;
        cin = c;
    }
    insert_linear(&mut store, "fen.proj", cin, cfg.d_model, &mut rng)?;

    insert_stack(&mut store, "tenc", cfg.tenc_layers, cfg, false, &mut rng_for(seed, 1))?;

    let mut rng = rng_for(seed, 2);
    match cfg.pe_variant {
        PeVariant::None => {}
        PeVariant::RopeMixed => insert_stack(&mut store, "ab", cfg.rope_layers, cfg, true, &mut rng)?,
        PeVariant::Ape => insert_stack(&mut store, "ab", cfg.rope_layers, cfg, false, &mut rng)?,
        PeVariant::Lpe => {
            let w = (0..LPE_GRID * LPE_GRID * cfg.d_model).map(|_| T::of(rng.random_range(-0.02..=0.02))).collect();
            store.insert("ab.lpe", Tensor::from_vec(&[LPE_GRID * LPE_GRID, cfg.d_model], w)?)?;
            insert_stack(&mut store, "ab", cfg.rope_layers, cfg, false, &mut rng)?;
        }
    }

    insert_heads(&mut store, cfg, &mut rng_for(seed, 3))?;
    Ok(store)
}

/// Runs the network. Dropout only acts in [`Mode::Train`] and draws from
/// `rng`, head t1 before head t2.
pub fn forward<T: Real, R: Rng>(
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    batch: &WindowBatch<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(ModelOutput<T>, ForwardCache<T>)> {
    batch.validate(cfg)?;
    let (emb, fen) = fen_forward(store, cfg, &batch.crops)?;
    let (t_emb, tenc) = stack_forward(store, "tenc", cfg.tenc_layers, cfg, &emb, &batch.mask, None)?;

    let (head_in, ab) = match cfg.pe_variant {
        PeVariant::None => (t_emb, None),
        variant => {
            let (x, rope) = match variant {
                PeVariant::RopeMixed => (t_emb.clone(), Some(batch.positions.as_slice())),
                PeVariant::Ape => (t_emb.add(&ape_sinusoidal(&batch.positions, cfg.d_model)?)?, None),
                _ => (t_emb.add(&lpe_lookup(param(store, "ab.lpe")?, &batch.positions)?)?, None),
            };
            let (t_rope, c) = stack_forward(store, "ab", cfg.rope_layers, cfg, &x, &batch.mask, rope)?;
            let head_in = if cfg.concat { Tensor::concat_last(&[&t_emb, &t_rope])? } else { t_rope };
            (head_in, Some(c))
        }
    };

    let train = mode == Mode::Train;
    let mut heads = Vec::new();
    let mut logits = Vec::new();
    for name in head_names(cfg) {
        let (l, c) = head_forward(store, name, &head_in, cfg.dropout, train, rng)?;
        logits.push(l);
        heads.push(c);
    }
    let out = if cfg.dual_head {
        let t2 = logits.pop().expect("two heads");
        ModelOutput::Dual { t1: logits.pop().expect("two heads"), t2 }
    } else {
        ModelOutput::Joint(logits.pop().expect("one head"))
    };
    Ok((out, ForwardCache { fen, tenc, ab, heads, positions: batch.positions.clone() }))
}

/// Accumulates `d loss / d params` into `store` given the loss gradient with
/// respect to the logits. Frozen parameters receive nothing, and the
/// extractor and context encoder are skipped entirely when all of their
/// parameters are frozen.
pub fn backward<T: Real>(
    cfg: &ModelConfig,
    store: &mut ParamStore<T>,
    cache: &ForwardCache<T>,
    dlogits: &ModelOutput<T>,
) -> Result<()> {
    let mut sink: GradSink<T> = Vec::new();
    {
        let store = &*store;
        let dl: Vec<&Tensor<T>> = match (dlogits, cfg.dual_head) {
            (ModelOutput::Dual { t1, t2 }, true) => vec![t1, t2],
            (ModelOutput::Joint(j), false) => vec![j],
            _ => return Err(Error::shape("logit gradient does not match the head layout")),
        };
        let mut dhead_in: Option<Tensor<T>> = None;
        for ((name, c), g) in head_names(cfg).iter().zip(&cache.heads).zip(dl) {
            let d = head_backward(store, name, c, g, &mut sink)?;
            match &mut dhead_in {
                Some(acc) => acc.add_assign(&d)?,
                None => dhead_in = Some(d),
            }
        }
        let dhead_in = dhead_in.expect("at least one head");

        let dt_emb = match (&cache.ab, cfg.pe_variant) {
            (Some(ab), variant) => {
                let (direct, drope) = if cfg.concat {
                    let mut parts = dhead_in.split_last(&[cfg.d_model, cfg.d_model])?;
                    let drope = parts.pop().expect("two parts");
                    (parts.pop(), drope)
                } else {
                    (None, dhead_in)
                };
                let rope = (variant == PeVariant::RopeMixed).then_some(cache.positions.as_slice());
                let dx = stack_backward(store, "ab", ab, rope, &drope, &mut sink)?;
                if variant == PeVariant::Lpe {
                    let shape = param(store, "ab.lpe")?.shape().to_vec();
                    sink.push(("ab.lpe".into(), lpe_backward(&shape, &cache.positions, &dx)?));
                }
                match direct {
                    Some(mut d) => {
                        d.add_assign(&dx)?;
                        d
                    }
                    None => dx,
                }
            }
            (None, _) => dhead_in,
        };

        let fen_trainable = !store.all_frozen(FEN_PREFIX);
        if fen_trainable || !store.all_frozen(TENC_PREFIX) {
            let demb = stack_backward(store, "tenc", &cache.tenc, None, &dt_emb, &mut sink)?;
            if fen_trainable {
                fen_backward(store, cfg, &cache.fen, &demb, &mut sink)?;
            }
        }
    }
    for (name, g) in sink {
        let id = store.id(&name).ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
        store.accumulate(id, &g)?;
    }
    Ok(())
}

/// A configuration together with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn forward<R: Rng>(&self, batch: &WindowBatch<T>, mode: Mode, rng: &mut R) -> Result<(ModelOutput<T>, ForwardCache<T>)> {
        forward(&self.config, &self.params, batch, mode, rng)
    }

    /// Forward pass in evaluation mode, logits only.
    pub fn predict(&self, batch: &WindowBatch<T>) -> Result<ModelOutput<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(batch, Mode::Eval, &mut rng)?.0)
    }

    pub fn backward(&mut self, cache: &ForwardCache<T>, dlogits: &ModelOutput<T>) -> Result<()> {
        backward(&self.config, &mut self.params, cache, dlogits)
    }

    /// Per-word embeddings `[B·S, d_model]` for crops `[B·S, H, W, 1]`.
    pub fn fen_forward(&self, crops: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(fen_forward(&self.params, &self.config, crops)?.0)
    }

    /// The position-free context encoder over `[B·S, d_model]` embeddings.
    pub fn tenc_forward(&self, emb: &Tensor<T>, mask: &[bool]) -> Result<Tensor<T>> {
        Ok(stack_forward(&self.params, "tenc", self.config.tenc_layers, &self.config, emb, mask, None)?.0)
    }

    /// The RoPE-Mixed attention block applied to encoder output.
    pub fn rope_mixab_forward(&self, t_emb: &Tensor<T>, positions: &[NormalizedPosition], mask: &[bool]) -> Result<Tensor<T>> {
        if self.config.pe_variant != PeVariant::RopeMixed {
            return Err(Error::config("model has no RoPE-Mixed attention block"));
        }
        Ok(stack_forward(&self.params, "ab", self.config.rope_layers, &self.config, t_emb, mask, Some(positions))?.0)
    }

    /// Context-free prediction from crops alone: feature extractor and heads.
    pub fn baseline_forward(&self, crops: &Tensor<T>) -> Result<ModelOutput<T>> {
        let c = &self.config;
        if c.tenc_layers != 0 || c.has_positional_block() {
            return Err(Error::config("baseline_forward needs a model without encoder or positional block"));
        }
        let emb = self.fen_forward(crops)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut logits = Vec::new();
        for name in head_names(c) {
            logits.push(head_forward(&self.params, name, &emb, c.dropout, false, &mut rng)?.0);
        }
        Ok(if c.dual_head {
            let t2 = logits.pop().expect("two heads");
            ModelOutput::Dual { t1: logits.pop().expect("two heads"), t2 }
        } else {
            ModelOutput::Joint(logits.pop().expect("one head"))
        })
    }

    /// Checkpoint whose header embeds the model configuration plus `extra`
    /// fields.
    pub fn to_checkpoint(&self, extra: serde_json::Map<String, serde_json::Value>) -> Result<Checkpoint> {
        let mut header = extra;
        header.insert("model".into(), serde_json::to_value(&self.config)?);
        Ok(Checkpoint::from_store(serde_json::Value::Object(header), &self.params))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = checkpoint_config(ckpt)?;
        let mut model = Self::new(config, 0)?;
        model.params.set_frozen("", false);
        ckpt.load_into(&mut model.params, "")?;
        if ckpt.entries.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                ckpt.entries.len(),
                model.params.len()
            )));
        }
        Ok(model)
    }
}

/// The model configuration stored in a checkpoint header.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<ModelConfig> {
    let v = ckpt.header.get("model").ok_or_else(|| Error::Checkpoint("header has no model configuration".into()))?;
    let config: ModelConfig = serde_json::from_value(v.clone())?;
    config.validate()?;
    Ok(config)
}

/// Builds stage-2 parameters from a stage-1 store: extractor and encoder
/// are copied, the positional block is fresh, and each head's first layer
/// keeps the stage-1 weights on the encoder half of its widened input with
/// zeros on the positional half, so the stage-2 model starts out computing
/// the stage-1 function.
pub fn stage2_from_stage1<T: Real>(stage1: &Model<T>, cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let expected = cfg.stage1();
    let have = &stage1.config;
    if have.fen_channels != expected.fen_channels
        || have.d_model != expected.d_model
        || have.tenc_layers != expected.tenc_layers
        || have.heads != expected.heads
        || have.ffn_dim != expected.ffn_dim
        || have.crop_height != expected.crop_height
        || have.crop_width != expected.crop_width
    {
        return Err(Error::config("stage-1 model is incompatible with the stage-2 configuration"));
    }
    let mut model = Model::<T>::new(cfg.clone(), seed)?;
    model.params.copy_matching(&stage1.params, FEN_PREFIX)?;
    model.params.copy_matching(&stage1.params, TENC_PREFIX)?;
    if have.dual_head == cfg.dual_head && have.head_hidden == cfg.head_hidden {
        let d = cfg.d_model;
        for name in head_names(cfg) {
            for part in ["fc1.b", "fc2.w", "fc2.b"] {
                let key = format!("{name}.{part}");
                let src = param(&stage1.params, &key)?.clone();
                let id = model.params.id(&key).expect("head parameter");
                *model.params.value_mut(id) = src;
            }
            let key = format!("{name}.fc1.w");
            let src = param(&stage1.params, &key)?;
            let id = model.params.id(&key).expect("head parameter");
            let dst = model.params.value_mut(id);
            dst.fill(T::zero());
            let rows = src.shape()[0].min(d);
            dst.data_mut()[..rows * cfg.head_hidden].copy_from_slice(&src.data()[..rows * cfg.head_hidden]);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests;
