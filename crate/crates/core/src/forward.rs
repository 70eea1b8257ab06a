//! Scale-by-scale generation: two guidance streams, block-causal attention
//! over the KV cache, and optional compression passes (windowed attention,
//! shared attention across the guidance streams, quantization plans).
//!
//! Stream layout per scale: both streams consume the same previous token
//! map (upsampled through the embedding table); they differ in the scale-1
//! start token and in the class vector driving the adaptive-norm
//! modulation. Under attention sharing the whole attention sub-block (QKV
//! projection, attention, output projection) runs once on the conditional
//! stream and the identical tensor is added to both residuals; feed-forward
//! and norms stay per-stream and no unconditional KV cache exists at all.

use std::collections::BTreeMap;

use crate::attention::{attend, pair_flops, pattern_to_mask};
use crate::cache::KVCache;
use crate::config::{layout_fingerprint, SamplerConfig};
use crate::error::{Error, Result};
use crate::linalg::{argmax_row, gelu, layer_norm, silu, Mat};
use crate::model::{Block, LayerKind, Linear, Model};
use crate::pattern::WindowPattern;
use crate::precision::PrecisionPlan;

/// Attention execution strategy for a run.
#[derive(Debug, Clone, Copy)]
pub enum AttnExecKind<'a> {
    Dense,
    Windowed(&'a WindowPattern),
}

/// Optional compression passes applied to a generation run.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompressionOpts<'a> {
    pub pattern: Option<&'a WindowPattern>,
    pub asc: bool,
    pub plan: Option<&'a PrecisionPlan>,
}

/// Instrumentation hooks. `attn_probs` fires for every attention call of
/// the conditional stream (the calibration recorder lives on it);
/// `asc_shared` fires once per shared block with the tensor added to each
/// residual stream.
pub trait RunObserver {
    /// Return true to have the executor materialize post-softmax matrices.
    fn wants_probs(&self) -> bool {
        false
    }
    fn attn_probs(&mut self, _k: usize, _block: usize, _head: usize, _probs: &Mat) {}
    fn asc_shared(&mut self, _k: usize, _block: usize, _added_cond: &Mat, _added_uncond: &Mat) {}
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// Analytical telemetry of one run (both streams together). FLOPs count
/// matmuls only; softmax and pointwise ops are excluded by convention.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub attn_flops: u64,
    pub linear_flops: u64,
    pub linear_flops_by_layer: BTreeMap<LayerKind, u64>,
    /// Visible attention-map elements actually computed.
    pub attn_map_elems: u64,
    /// Guidance-combined logits per scale, row-major `[s_k^2 * vocab]`.
    pub combined_logits: Vec<Vec<f32>>,
}

impl RunStats {
    fn add_linear(&mut self, kind: LayerKind, flops: u64) {
        self.linear_flops += flops;
        *self.linear_flops_by_layer.entry(kind).or_insert(0) += flops;
    }

    /// Bytes of attention-map activations at f32.
    pub fn attn_map_bytes(&self) -> u64 {
        self.attn_map_elems * 4
    }
}

/// Generated token grids, one row-major id array per scale.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TokenMapSet {
    maps: Vec<Vec<u32>>,
}

impl TokenMapSet {
    pub fn new(maps: Vec<Vec<u32>>) -> Self {
        Self { maps }
    }

    pub fn scales(&self) -> usize {
        self.maps.len()
    }

    /// Token ids of scale `k` (1-based), row-major.
    pub fn map(&self, k: usize) -> Result<&[u32]> {
        self.maps
            .get(k.wrapping_sub(1))
            .map(|m| m.as_slice())
            .ok_or_else(|| Error::Range(format!("scale {k} outside 1..={}", self.maps.len())))
    }

    pub fn maps(&self) -> &[Vec<u32>] {
        &self.maps
    }
}

/// Guidance combination: `uncond + cfg_scale * (cond - uncond)`.
pub fn cfg_combine(cond: &Mat, uncond: &Mat, cfg_scale: f32) -> Result<Mat> {
    if (cond.rows(), cond.cols()) != (uncond.rows(), uncond.cols()) {
        return Err(Error::Shape(format!(
            "guidance streams disagree: {}x{} vs {}x{}",
            cond.rows(),
            cond.cols(),
            uncond.rows(),
            uncond.cols()
        )));
    }
    let mut out = uncond.clone();
    for (o, &c) in out.data.iter_mut().zip(cond.data()) {
        *o += cfg_scale * (c - *o);
    }
    Ok(out)
}

// ── Sublayers ────────────────────────────────────────────────────────────

fn linear_fwd(
    model: &Model,
    layer: &Linear,
    kind: LayerKind,
    x: &Mat,
    stats: &mut RunStats,
) -> Result<Mat> {
    let w = layer.weight();
    stats.add_linear(kind, 2 * x.rows() as u64 * w.rows() as u64 * w.cols() as u64);
    let act_bits = model.act_quant().and_then(|c| c.act_bits.get(&kind).copied());
    match act_bits {
        Some(bits) => layer.apply(&crate::quant::fake_quant(x, bits)?),
        None => layer.apply(x),
    }
}

/// Scale-and-shift modulation vectors for one (block, stream) pair,
/// derived from the class vector: `ada_lin(silu(class_vec))` split into
/// (gamma1, beta1, gamma2, beta2).
struct Modulation {
    m: Mat, // [1, 4 * dim]
    dim: usize,
}

impl Modulation {
    fn gamma1(&self) -> &[f32] {
        &self.m.row(0)[0..self.dim]
    }
    fn beta1(&self) -> &[f32] {
        &self.m.row(0)[self.dim..2 * self.dim]
    }
    fn gamma2(&self) -> &[f32] {
        &self.m.row(0)[2 * self.dim..3 * self.dim]
    }
    fn beta2(&self) -> &[f32] {
        &self.m.row(0)[3 * self.dim..4 * self.dim]
    }
}

fn modulation(
    model: &Model,
    block: &Block,
    class_vec: &[f32],
    stats: &mut RunStats,
) -> Result<Modulation> {
    let dim = model.config().dim;
    debug_assert_eq!(class_vec.len(), dim);
    let mut x = Mat::zeros(1, dim);
    for (o, &v) in x.row_mut(0).iter_mut().zip(class_vec) {
        *o = silu(v);
    }
    let m = linear_fwd(model, &block.ada_lin, LayerKind::AdaLin1, &x, stats)?;
    Ok(Modulation { m, dim })
}

fn modulate(x: &Mat, gamma: &[f32], beta: &[f32]) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = *v * (1.0 + gamma[c]) + beta[c];
        }
    }
    out
}

/// Attention sub-block: modulated norm, fused QKV projection, per-head
/// masked attention over the cache, output projection. Appends this
/// scale's keys/values to `cache` as a side effect.
#[allow(clippy::too_many_arguments)]
fn attn_sublayer<O: RunObserver>(
    model: &Model,
    block_idx: usize,
    h: &Mat,
    m: &Modulation,
    k: usize,
    cache: &mut KVCache,
    exec: &AttnExecKind,
    stats: &mut RunStats,
    obs: &mut O,
) -> Result<Mat> {
    let block = &model.blocks[block_idx];
    let dim = model.config().dim;
    let hd = model.head_dim();
    let n = h.rows();
    let x = modulate(&layer_norm(h), m.gamma1(), m.beta1());
    let qkv = linear_fwd(model, &block.mat_qkv, LayerKind::AttnMatQkv, &x, stats)?;
    let qkv_bits = model.act_quant().and_then(|c| c.qkv_bits);
    let scale_factor = 1.0 / (hd as f32).sqrt();
    let mut concat = Mat::zeros(n, dim);
    for head in 0..model.config().heads {
        let q = qkv.col_slice(head * hd, head * hd + hd);
        let kk = qkv.col_slice(dim + head * hd, dim + head * hd + hd);
        let vv = qkv.col_slice(2 * dim + head * hd, 2 * dim + head * hd + hd);
        cache.append(block_idx, head, kk.data(), vv.data());
        let total = cache.keys(block_idx, head).len() / hd;
        let keys = Mat::from_vec(cache.keys(block_idx, head).to_vec(), total, hd)?;
        let vals = Mat::from_vec(cache.values(block_idx, head).to_vec(), total, hd)?;
        let (q, keys, vals) = crate::quant::quantize_qkv(&q, &keys, &vals, qkv_bits)?;
        let mask = match exec {
            AttnExecKind::Dense => None,
            AttnExecKind::Windowed(p) => Some(pattern_to_mask(p, k, block_idx, head)?),
        };
        let pairs = match &mask {
            None => (n * total) as u64,
            Some(mk) => mk.visible_pairs(),
        };
        stats.attn_flops += pair_flops(pairs, hd);
        stats.attn_map_elems += pairs;
        let out_h = if obs.wants_probs() {
            let mut probs = Mat::zeros(n, total);
            let out = attend(&q, &keys, &vals, mask.as_ref(), scale_factor, Some(&mut probs))?;
            obs.attn_probs(k, block_idx, head, &probs);
            out
        } else {
            attend(&q, &keys, &vals, mask.as_ref(), scale_factor, None)?
        };
        for r in 0..n {
            concat.row_mut(r)[head * hd..(head + 1) * hd].copy_from_slice(out_h.row(r));
        }
    }
    linear_fwd(model, &block.proj, LayerKind::AttnProj, &concat, stats)
}

fn ffn_sublayer(
    model: &Model,
    block: &Block,
    h: &Mat,
    m: &Modulation,
    stats: &mut RunStats,
) -> Result<Mat> {
    let x = modulate(&layer_norm(h), m.gamma2(), m.beta2());
    let mut a = linear_fwd(model, &block.fc1, LayerKind::FfnFc1, &x, stats)?;
    for v in a.data.iter_mut() {
        *v = gelu(*v);
    }
    linear_fwd(model, &block.fc2, LayerKind::FfnFc2, &a, stats)
}

#[allow(clippy::too_many_arguments)]
fn run_block<O: RunObserver>(
    model: &Model,
    block_idx: usize,
    h: &Mat,
    class_vec: &[f32],
    k: usize,
    cache: &mut KVCache,
    exec: &AttnExecKind,
    stats: &mut RunStats,
    obs: &mut O,
) -> Result<Mat> {
    let block = &model.blocks[block_idx];
    let m = modulation(model, block, class_vec, stats)?;
    let attn = attn_sublayer(model, block_idx, h, &m, k, cache, exec, stats, obs)?;
    let mut h1 = h.clone();
    h1.add_assign(&attn)?;
    let ffn = ffn_sublayer(model, block, &h1, &m, stats)?;
    h1.add_assign(&ffn)?;
    Ok(h1)
}

#[allow(clippy::too_many_arguments)]
fn run_block_asc_inner<O: RunObserver>(
    model: &Model,
    block_idx: usize,
    cond_h: &Mat,
    uncond_h: &Mat,
    cond_vec: &[f32],
    uncond_vec: &[f32],
    k: usize,
    cond_cache: &mut KVCache,
    exec: &AttnExecKind,
    stats: &mut RunStats,
    obs: &mut O,
) -> Result<(Mat, Mat)> {
    let block = &model.blocks[block_idx];
    let cm = modulation(model, block, cond_vec, stats)?;
    let um = modulation(model, block, uncond_vec, stats)?;
    let attn = attn_sublayer(model, block_idx, cond_h, &cm, k, cond_cache, exec, stats, obs)?;
    obs.asc_shared(k, block_idx, &attn, &attn);
    let mut c1 = cond_h.clone();
    c1.add_assign(&attn)?;
    let mut u1 = uncond_h.clone();
    u1.add_assign(&attn)?;
    let cf = ffn_sublayer(model, block, &c1, &cm, stats)?;
    let uf = ffn_sublayer(model, block, &u1, &um, stats)?;
    c1.add_assign(&cf)?;
    u1.add_assign(&uf)?;
    Ok((c1, u1))
}

/// One shared-attention block step: attention runs once on the conditional
/// stream (through `cond_cache`), the identical sub-output lands on both
/// residuals, feed-forward stays per-stream.
#[allow(clippy::too_many_arguments)]
pub fn run_block_asc(
    model: &Model,
    block_idx: usize,
    cond_h: &Mat,
    uncond_h: &Mat,
    cond_vec: &[f32],
    uncond_vec: &[f32],
    k: usize,
    cond_cache: &mut KVCache,
    exec: &AttnExecKind,
    stats: &mut RunStats,
) -> Result<(Mat, Mat)> {
    if block_idx >= model.config().depth {
        return Err(Error::Range(format!(
            "block {block_idx} outside depth {}",
            model.config().depth
        )));
    }
    run_block_asc_inner(
        model,
        block_idx,
        cond_h,
        uncond_h,
        cond_vec,
        uncond_vec,
        k,
        cond_cache,
        exec,
        stats,
        &mut NoopObserver,
    )
}

fn validate_exec(model: &Model, exec: &AttnExecKind) -> Result<()> {
    if let AttnExecKind::Windowed(p) = exec {
        let cfg = model.config();
        let expected = layout_fingerprint(&cfg.schedule, cfg.depth, cfg.heads);
        if p.fingerprint() != expected {
            return Err(Error::FingerprintMismatch(format!(
                "pattern {} vs model layout {expected}",
                p.fingerprint()
            )));
        }
    }
    Ok(())
}

fn check_scale_entry(model: &Model, hidden: &Mat, k: usize, cache: &KVCache) -> Result<()> {
    let cfg = model.config();
    let expect_rows = cfg.schedule.tokens_at(k)?;
    if hidden.rows() != expect_rows || hidden.cols() != cfg.dim {
        return Err(Error::Shape(format!(
            "scale {k} expects hidden [{expect_rows}, {}], got [{}, {}]",
            cfg.dim,
            hidden.rows(),
            hidden.cols()
        )));
    }
    let have = cache.rows()?;
    let want = cfg.schedule.cum_before(k)?;
    if have != want {
        return Err(Error::State(format!(
            "cache holds {have} rows entering scale {k}, expected {want}"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn forward_scale_inner<O: RunObserver>(
    model: &Model,
    hidden: &Mat,
    class_vec: &[f32],
    k: usize,
    cache: &mut KVCache,
    exec: &AttnExecKind,
    stats: &mut RunStats,
    obs: &mut O,
) -> Result<Mat> {
    check_scale_entry(model, hidden, k, cache)?;
    let mut h = hidden.clone();
    for bi in 0..model.config().depth {
        h = run_block(model, bi, &h, class_vec, k, cache, exec, stats, obs)?;
    }
    linear_fwd(model, &model.head, LayerKind::Head, &layer_norm(&h), stats)
}

/// Process one stream's scale-`k` tokens: all blocks, final norm, logit
/// head. The cache must hold exactly the context of scales `1..k` on
/// entry and gains this scale's keys/values.
pub fn forward_scale(
    model: &Model,
    hidden: &Mat,
    class_vec: &[f32],
    k: usize,
    cache: &mut KVCache,
    exec: &AttnExecKind,
    stats: &mut RunStats,
) -> Result<Mat> {
    validate_exec(model, exec)?;
    forward_scale_inner(model, hidden, class_vec, k, cache, exec, stats, &mut NoopObserver)
}

#[allow(clippy::too_many_arguments)]
fn forward_scale_shared<O: RunObserver>(
    model: &Model,
    cond_h: &Mat,
    uncond_h: &Mat,
    cond_vec: &[f32],
    uncond_vec: &[f32],
    k: usize,
    cond_cache: &mut KVCache,
    exec: &AttnExecKind,
    stats: &mut RunStats,
    obs: &mut O,
) -> Result<(Mat, Mat)> {
    check_scale_entry(model, cond_h, k, cond_cache)?;
    let mut ch = cond_h.clone();
    let mut uh = uncond_h.clone();
    for bi in 0..model.config().depth {
        let (c, u) = run_block_asc_inner(
            model, bi, &ch, &uh, cond_vec, uncond_vec, k, cond_cache, exec, stats, obs,
        )?;
        ch = c;
        uh = u;
    }
    let cl = linear_fwd(model, &model.head, LayerKind::Head, &layer_norm(&ch), stats)?;
    let ul = linear_fwd(model, &model.head, LayerKind::Head, &layer_norm(&uh), stats)?;
    Ok((cl, ul))
}

/// Nearest-neighbor upsample of a token-embedding grid.
fn upsample_nn(e: &Mat, s_prev: u32, s_k: u32) -> Mat {
    let (s_prev, s_k) = (s_prev as usize, s_k as usize);
    let mut out = Mat::zeros(s_k * s_k, e.cols());
    for y in 0..s_k {
        for x in 0..s_k {
            let src = (y * s_prev / s_k) * s_prev + (x * s_prev / s_k);
            out.row_mut(y * s_k + x).copy_from_slice(e.row(src));
        }
    }
    out
}

/// Input embeddings for scale `k` of one stream. Scale 1 is the class
/// start token; later scales upsample the previous scale's token
/// embeddings. Positional rows are added in both cases.
pub fn scale_input(
    model: &Model,
    k: usize,
    prev_ids: Option<&[u32]>,
    label: u32,
) -> Result<Mat> {
    let cfg = model.config();
    let mut x = match (k, prev_ids) {
        (1, None) => {
            let mut m = Mat::zeros(1, cfg.dim);
            m.row_mut(0).copy_from_slice(model.class_vector(label)?);
            m
        }
        (1, Some(_)) => {
            return Err(Error::Input("scale 1 takes no previous token map".into()));
        }
        (_, None) => {
            return Err(Error::Input(format!("scale {k} needs the scale-{} map", k - 1)));
        }
        (_, Some(ids)) => {
            let expect = cfg.schedule.tokens_at(k - 1)?;
            if ids.len() != expect {
                return Err(Error::Shape(format!(
                    "scale-{} map has {} ids, expected {expect}",
                    k - 1,
                    ids.len()
                )));
            }
            let e = model.word_embed.lookup(ids)?;
            upsample_nn(&e, cfg.schedule.side(k - 1)?, cfg.schedule.side(k)?)
        }
    };
    let base = cfg.schedule.cum_before(k)?;
    for r in 0..x.rows() {
        let pos = model.pos_embed.row(base + r);
        for (v, &p) in x.row_mut(r).iter_mut().zip(pos) {
            *v += p;
        }
    }
    Ok(x)
}

/// Full generation with explicit labels for both guidance streams; the
/// standard entry point fixes the unconditional stream to the null label.
/// Exposed so equal-stream behavior is testable.
pub fn generate_with_streams(
    model: &Model,
    cond_label: u32,
    uncond_label: u32,
    sampler: &SamplerConfig,
    opts: &CompressionOpts,
) -> Result<(TokenMapSet, RunStats)> {
    generate_observed(model, cond_label, uncond_label, sampler, opts, &mut NoopObserver)
}

/// Generate the token pyramid for `label`. Returns every scale's map plus
/// run telemetry covering both guidance streams.
pub fn generate(
    model: &Model,
    label: u32,
    sampler: &SamplerConfig,
    opts: &CompressionOpts,
) -> Result<(TokenMapSet, RunStats)> {
    if label as usize >= model.config().class_count {
        return Err(Error::Range(format!(
            "label {label} outside 0..{}",
            model.config().class_count
        )));
    }
    generate_with_streams(model, label, model.null_label(), sampler, opts)
}

/// [`generate_with_streams`] with instrumentation hooks attached.
pub fn generate_observed<O: RunObserver>(
    model: &Model,
    cond_label: u32,
    uncond_label: u32,
    sampler: &SamplerConfig,
    opts: &CompressionOpts,
    obs: &mut O,
) -> Result<(TokenMapSet, RunStats)> {
    sampler.validate()?;
    let plan_model = match opts.plan {
        Some(plan) => Some(model.with_plan(plan)?),
        None => None,
    };
    let m = plan_model.as_ref().unwrap_or(model);
    let exec = match opts.pattern {
        Some(p) => AttnExecKind::Windowed(p),
        None => AttnExecKind::Dense,
    };
    validate_exec(m, &exec)?;
    let cfg = m.config();
    let cond_vec = m.class_vector(cond_label)?.to_vec();
    let uncond_vec = m.class_vector(uncond_label)?.to_vec();

    let mut cond_cache = KVCache::new(cfg.depth, cfg.heads, m.head_dim());
    let mut uncond_cache = if opts.asc {
        None
    } else {
        Some(KVCache::new(cfg.depth, cfg.heads, m.head_dim()))
    };
    let mut stats = RunStats::default();
    let mut maps: Vec<Vec<u32>> = Vec::with_capacity(cfg.schedule.len());
    let mut prev: Option<Vec<u32>> = None;

    for k in 1..=cfg.schedule.len() {
        let cond_in = scale_input(m, k, prev.as_deref(), cond_label)?;
        let uncond_in = if k == 1 {
            scale_input(m, k, None, uncond_label)?
        } else {
            cond_in.clone()
        };
        let (cond_logits, uncond_logits) = if opts.asc {
            forward_scale_shared(
                m, &cond_in, &uncond_in, &cond_vec, &uncond_vec, k, &mut cond_cache, &exec,
                &mut stats, obs,
            )?
        } else {
            let cl = forward_scale_inner(
                m, &cond_in, &cond_vec, k, &mut cond_cache, &exec, &mut stats, obs,
            )?;
            let ul = forward_scale_inner(
                m,
                &uncond_in,
                &uncond_vec,
                k,
                uncond_cache.as_mut().expect("uncond cache exists without sharing"),
                &exec,
                &mut stats,
                &mut NoopObserver,
            )?;
            (cl, ul)
        };
        let combined = cfg_combine(&cond_logits, &uncond_logits, sampler.cfg_scale)?;
        let ids: Vec<u32> = (0..combined.rows())
            .map(|r| argmax_row(combined.row(r)) as u32)
            .collect();
        stats.combined_logits.push(combined.data().to_vec());
        maps.push(ids.clone());
        prev = Some(ids);
    }
    debug_assert_eq!(cond_cache.rows()?, cfg.schedule.total_tokens());
    Ok((TokenMapSet::new(maps), stats))
}
