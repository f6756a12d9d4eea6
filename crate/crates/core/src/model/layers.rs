//! Building blocks of the network with their backward passes. Backward
//! functions read weights from an immutable store and push named gradients
//! into a [`GradSink`]; the caller accumulates them afterwards.

use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::geometry::NormalizedPosition;
use crate::nncore::conv::Conv2dCache;
use crate::nncore::{
    conv2d, conv2d_backward, dropout, dropout_backward, gelu, gelu_backward, global_avg_pool,
    global_avg_pool_backward, layer_norm, layer_norm_backward, linear, linear_backward, multi_head_attention,
    multi_head_attention_backward, relu, relu_backward, AttentionCache, AttentionWeights, Conv2dSpec,
    LayerNormCache, ParamStore, RopeInputs, Tensor,
};
use crate::real::Real;

pub(crate) type GradSink<T> = Vec<(String, Tensor<T>)>;

pub(crate) const CONV: Conv2dSpec = Conv2dSpec { kernel: 3, stride: 2, padding: 1 };

pub(crate) fn param<'a, T: Real>(store: &'a ParamStore<T>, name: &str) -> Result<&'a Tensor<T>> {
    store
        .get(name)
        .map(|e| &e.value)
        .ok_or_else(|| Error::invalid(format!("model has no parameter `{name}`")))
}

#[derive(Debug, Clone)]
pub(crate) struct FenCache<T> {
    convs: Vec<Conv2dCache<T>>,
    norms: Vec<LayerNormCache<T>>,
    pre_relu: Vec<Tensor<T>>,
    last_shape: Vec<usize>,
    pooled: Tensor<T>,
}

/// `[N, H, W, 1]` crops to `[N, d_model]` embeddings.
pub(crate) fn fen_forward<T: Real>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    crops: &Tensor<T>,
) -> Result<(Tensor<T>, FenCache<T>)> {
    let mut x = crops.clone();
    let mut cache = FenCache {
        convs: Vec::new(),
        norms: Vec::new(),
        pre_relu: Vec::new(),
        last_shape: Vec::new(),
        pooled: Tensor::zeros(&[0]),
    };
    for i in 0..cfg.fen_channels.len() {
        let (z, cc) = conv2d(
            &x,
            param(store, &format!("fen.conv{i}.w"))?,
            param(store, &format!("fen.conv{i}.b"))?,
            CONV,
        )?;
        let (n, nc) =
            layer_norm(&z, param(store, &format!("fen.ln{i}.g"))?, param(store, &format!("fen.ln{i}.b"))?)?;
        x = relu(&n);
        cache.convs.push(cc);
        cache.norms.push(nc);
        cache.pre_relu.push(n);
    }
    cache.last_shape = x.shape().to_vec();
    let pooled = global_avg_pool(&x)?;
    let out = linear(&pooled, param(store, "fen.proj.w")?, Some(param(store, "fen.proj.b")?))?;
    cache.pooled = pooled;
    Ok((out, cache))
}

pub(crate) fn fen_backward<T: Real>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    cache: &FenCache<T>,
    dout: &Tensor<T>,
    sink: &mut GradSink<T>,
) -> Result<()> {
    let (dpooled, dw, db) = linear_backward(&cache.pooled, param(store, "fen.proj.w")?, dout)?;
    sink.push(("fen.proj.w".into(), dw));
    sink.push(("fen.proj.b".into(), db));
    let mut dx = global_avg_pool_backward(&cache.last_shape, &dpooled)?;
    for i in (0..cfg.fen_channels.len()).rev() {
        let dn = relu_backward(&cache.pre_relu[i], &dx)?;
        let (dz, dg, dbeta) = layer_norm_backward(&cache.norms[i], param(store, &format!("fen.ln{i}.g"))?, &dn)?;
        sink.push((format!("fen.ln{i}.g"), dg));
        sink.push((format!("fen.ln{i}.b"), dbeta));
        let (dprev, dw, db) = conv2d_backward(&cache.convs[i], param(store, &format!("fen.conv{i}.w"))?, &dz, CONV, i > 0)?;
        sink.push((format!("fen.conv{i}.w"), dw));
        sink.push((format!("fen.conv{i}.b"), db));
        if let Some(d) = dprev {
            dx = d;
        }
    }
    Ok(())
}

fn attention_weights<'a, T: Real>(store: &'a ParamStore<T>, p: &str) -> Result<AttentionWeights<'a, T>> {
    Ok(AttentionWeights {
        wq: param(store, &format!("{p}.attn.wq"))?,
        bq: param(store, &format!("{p}.attn.bq"))?,
        wk: param(store, &format!("{p}.attn.wk"))?,
        bk: param(store, &format!("{p}.attn.bk"))?,
        wv: param(store, &format!("{p}.attn.wv"))?,
        bv: param(store, &format!("{p}.attn.bv"))?,
        wo: param(store, &format!("{p}.attn.wo"))?,
        bo: param(store, &format!("{p}.attn.bo"))?,
    })
}

fn rope_inputs<'a, T: Real>(
    store: &'a ParamStore<T>,
    p: &str,
    positions: Option<&'a [NormalizedPosition]>,
) -> Result<Option<RopeInputs<'a, T>>> {
    positions
        .map(|positions| {
            Ok(RopeInputs {
                positions,
                fx: param(store, &format!("{p}.rope.fx"))?,
                fy: param(store, &format!("{p}.rope.fy"))?,
            })
        })
        .transpose()
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    ffn_in: Tensor<T>,
    ffn_pre: Tensor<T>,
    ffn_act: Tensor<T>,
}

/// Pre-norm transformer layer: `h = x + MHA(LN(x))`, `y = h + FFN(LN(h))`.
/// With `positions` the attention rotates q and k by the layer's RoPE-Mixed
/// frequencies.
pub(crate) fn layer_forward<T: Real>(
    store: &ParamStore<T>,
    p: &str,
    cfg: &ModelConfig,
    x: &Tensor<T>,
    mask: &[bool],
    positions: Option<&[NormalizedPosition]>,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (a_in, ln1) = layer_norm(x, param(store, &format!("{p}.ln1.g"))?, param(store, &format!("{p}.ln1.b"))?)?;
    let (a, attn) = multi_head_attention(
        &a_in,
        &a_in,
        &a_in,
        attention_weights(store, p)?,
        cfg.heads,
        cfg.s,
        mask,
        rope_inputs(store, p, positions)?,
    )?;
    let h = x.add(&a)?;
    let (ffn_in, ln2) = layer_norm(&h, param(store, &format!("{p}.ln2.g"))?, param(store, &format!("{p}.ln2.b"))?)?;
    let ffn_pre = linear(&ffn_in, param(store, &format!("{p}.ffn.w1"))?, Some(param(store, &format!("{p}.ffn.b1"))?))?;
    let ffn_act = gelu(&ffn_pre);
    let f = linear(&ffn_act, param(store, &format!("{p}.ffn.w2"))?, Some(param(store, &format!("{p}.ffn.b2"))?))?;
    let y = h.add(&f)?;
    Ok((y, LayerCache { ln1, attn, ln2, ffn_in, ffn_pre, ffn_act }))
}

pub(crate) fn layer_backward<T: Real>(
    store: &ParamStore<T>,
    p: &str,
    cache: &LayerCache<T>,
    positions: Option<&[NormalizedPosition]>,
    dy: &Tensor<T>,
    sink: &mut GradSink<T>,
) -> Result<Tensor<T>> {
    let (dact, dw2, db2) = linear_backward(&cache.ffn_act, param(store, &format!("{p}.ffn.w2"))?, dy)?;
    let dpre = gelu_backward(&cache.ffn_pre, &dact)?;
    let (dffn_in, dw1, db1) = linear_backward(&cache.ffn_in, param(store, &format!("{p}.ffn.w1"))?, &dpre)?;
    let (dh2, dg2, dbeta2) = layer_norm_backward(&cache.ln2, param(store, &format!("{p}.ln2.g"))?, &dffn_in)?;
    let dh = dy.add(&dh2)?;
    let g = multi_head_attention_backward(&cache.attn, attention_weights(store, p)?, rope_inputs(store, p, positions)?, &dh)?;
    let mut da_in = g.dq_in;
    da_in.add_assign(&g.dk_in)?;
    da_in.add_assign(&g.dv_in)?;
    let (dx1, dg1, dbeta1) = layer_norm_backward(&cache.ln1, param(store, &format!("{p}.ln1.g"))?, &da_in)?;
    let dx = dh.add(&dx1)?;

    let names = ["ffn.w2", "ffn.b2", "ffn.w1", "ffn.b1", "ln2.g", "ln2.b", "ln1.g", "ln1.b"];
    for (n, t) in names.into_iter().zip([dw2, db2, dw1, db1, dg2, dbeta2, dg1, dbeta1]) {
        sink.push((format!("{p}.{n}"), t));
    }
    let attn = [
        ("wq", g.dwq),
        ("bq", g.dbq),
        ("wk", g.dwk),
        ("bk", g.dbk),
        ("wv", g.dwv),
        ("bv", g.dbv),
        ("wo", g.dwo),
        ("bo", g.dbo),
    ];
    for (n, t) in attn {
        sink.push((format!("{p}.attn.{n}"), t));
    }
    if let (Some(fx), Some(fy)) = (g.dfx, g.dfy) {
        sink.push((format!("{p}.rope.fx"), fx));
        sink.push((format!("{p}.rope.fy"), fy));
    }
    Ok(dx)
}

#[derive(Debug, Clone)]
pub(crate) struct StackCache<T> {
    layers: Vec<LayerCache<T>>,
    norm: Option<LayerNormCache<T>>,
}

/// `layers` encoder layers named `{p}.{i}` followed by a final layer norm
/// `{p}.norm` (none for an empty stack, which is the identity).
#[allow(clippy::too_many_arguments)]
pub(crate) fn stack_forward<T: Real>(
    store: &ParamStore<T>,
    p: &str,
    layers: usize,
    cfg: &ModelConfig,
    x: &Tensor<T>,
    mask: &[bool],
    positions: Option<&[NormalizedPosition]>,
) -> Result<(Tensor<T>, StackCache<T>)> {
    let mut h = x.clone();
    let mut cache = StackCache { layers: Vec::with_capacity(layers), norm: None };
    for i in 0..layers {
        let (y, c) = layer_forward(store, &format!("{p}.{i}"), cfg, &h, mask, positions)?;
        h = y;
        cache.layers.push(c);
    }
    if layers > 0 {
        let (y, c) = layer_norm(&h, param(store, &format!("{p}.norm.g"))?, param(store, &format!("{p}.norm.b"))?)?;
        h = y;
        cache.norm = Some(c);
    }
    Ok((h, cache))
}

pub(crate) fn stack_backward<T: Real>(
    store: &ParamStore<T>,
    p: &str,
    cache: &StackCache<T>,
    positions: Option<&[NormalizedPosition]>,
    dy: &Tensor<T>,
    sink: &mut GradSink<T>,
) -> Result<Tensor<T>> {
    let mut d = dy.clone();
    if let Some(norm) = &cache.norm {
        let (dx, dg, db) = layer_norm_backward(norm, param(store, &format!("{p}.norm.g"))?, &d)?;
        sink.push((format!("{p}.norm.g"), dg));
        sink.push((format!("{p}.norm.b"), db));
        d = dx;
    }
    for (i, c) in cache.layers.iter().enumerate().rev() {
        d = layer_backward(store, &format!("{p}.{i}"), c, positions, &d, sink)?;
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    keep: Option<Vec<T>>,
}

/// `Linear → ReLU → Dropout → Linear`.
pub(crate) fn head_forward<T: Real, R: Rng>(
    store: &ParamStore<T>,
    p: &str,
    x: &Tensor<T>,
    dropout_rate: f64,
    train: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, HeadCache<T>)> {
    let pre = linear(x, param(store, &format!("{p}.fc1.w"))?, Some(param(store, &format!("{p}.fc1.b"))?))?;
    let (act, keep) = dropout(&relu(&pre), dropout_rate, train, rng)?;
    let out = linear(&act, param(store, &format!("{p}.fc2.w"))?, Some(param(store, &format!("{p}.fc2.b"))?))?;
    Ok((out, HeadCache { x: x.clone(), pre, act, keep }))
}

pub(crate) fn head_backward<T: Real>(
    store: &ParamStore<T>,
    p: &str,
    cache: &HeadCache<T>,
    dlogits: &Tensor<T>,
    sink: &mut GradSink<T>,
) -> Result<Tensor<T>> {
    let (dact, dw2, db2) = linear_backward(&cache.act, param(store, &format!("{p}.fc2.w"))?, dlogits)?;
    let drelu = dropout_backward(&dact, cache.keep.as_deref());
    let dpre = relu_backward(&cache.pre, &drelu)?;
    let (dx, dw1, db1) = linear_backward(&cache.x, param(store, &format!("{p}.fc1.w"))?, &dpre)?;
    sink.push((format!("{p}.fc2.w"), dw2));
    sink.push((format!("{p}.fc2.b"), db2));
    sink.push((format!("{p}.fc1.w"), dw1));
    sink.push((format!("{p}.fc1.b"), db1));
    Ok(dx)
}
