//! Masked attention executor and its analytical cost model.
//!
//! Sparsity is simulated by logit masking: hidden keys get no logit at all
//! and the softmax renormalizes over the visible set, which is numerically
//! identical to additive negative-infinity masking before a dense softmax.
//! Cost counts 4 FLOPs per visible (query, key) pair per head-dim unit:
//! two matmuls (scores and the value mix), multiply plus add each.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::pattern::{diagonal_center, partition, WindowEntry, WindowPattern};
use crate::schedule::ScaleSchedule;

/// Boolean visibility matrix for one (scale, block, head): `rows` queries
/// over `cols` cached keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    visible: Vec<bool>,
    rows: usize,
    cols: usize,
}

impl AttnMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { visible: vec![false; rows * cols], rows, cols }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self { visible: vec![true; rows * cols], rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_visible(&self, r: usize, c: usize) -> bool {
        self.visible[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.visible[r * self.cols + c] = v;
    }

    pub fn row_visible(&self, r: usize) -> u64 {
        self.visible[r * self.cols..(r + 1) * self.cols]
            .iter()
            .filter(|&&v| v)
            .count() as u64
    }

    pub fn visible_pairs(&self) -> u64 {
        self.visible.iter().filter(|&&v| v).count() as u64
    }
}

/// Materialize the visibility mask a pattern implies for one
/// (scale, block, head). FULL parts expose their whole key span; width
/// entries expose a band of half-width `w` around each query's diagonal
/// center, clipped to the part.
pub fn pattern_to_mask(
    pattern: &WindowPattern,
    k: usize,
    block: usize,
    head: usize,
) -> Result<AttnMask> {
    let schedule = pattern.schedule();
    let rows = schedule.tokens_at(k)?;
    let cols = schedule.cum_tokens(k)?;
    let s_k = schedule.side(k)?;
    let layout = partition(schedule, k)?;
    let entries = pattern.entries_at(k, block, head)?;
    let mut mask = AttnMask::new(rows, cols);
    for (part, entry) in layout.parts.iter().zip(entries) {
        match entry {
            WindowEntry::Full => {
                for r in 0..rows {
                    for c in part.key_start..part.key_end {
                        mask.set(r, c, true);
                    }
                }
            }
            WindowEntry::Width(0) => {}
            WindowEntry::Width(w) => {
                let s_m = part.source_side(schedule)?;
                let reach = (*w - 1) as usize;
                for q in 0..rows {
                    let center = diagonal_center(q, s_k, s_m);
                    let lo = center.saturating_sub(reach);
                    let hi = (center + reach).min(part.width() - 1);
                    for c in lo..=hi {
                        mask.set(q, part.key_start + c, true);
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Visible (query, key) pairs the pattern leaves at one (scale, block,
/// head), computed arithmetically; always equals
/// `pattern_to_mask(..).visible_pairs()`.
pub fn pattern_visible_pairs(
    pattern: &WindowPattern,
    k: usize,
    block: usize,
    head: usize,
) -> Result<u64> {
    let schedule = pattern.schedule();
    let rows = schedule.tokens_at(k)? as u64;
    let s_k = schedule.side(k)?;
    let layout = partition(schedule, k)?;
    let entries = pattern.entries_at(k, block, head)?;
    let mut pairs = 0u64;
    for (part, entry) in layout.parts.iter().zip(entries) {
        match entry {
            WindowEntry::Full => pairs += rows * part.width() as u64,
            WindowEntry::Width(0) => {}
            WindowEntry::Width(w) => {
                let s_m = part.source_side(schedule)?;
                let reach = (*w - 1) as usize;
                for q in 0..rows as usize {
                    let center = diagonal_center(q, s_k, s_m);
                    let lo = center.saturating_sub(reach);
                    let hi = (center + reach).min(part.width() - 1);
                    pairs += (hi - lo + 1) as u64;
                }
            }
        }
    }
    Ok(pairs)
}

/// Core attention kernel. `mask: None` is the dense path and follows the
/// exact same arithmetic order as an all-true mask, so a FULL pattern is
/// bit-identical to dense. `probs_out`, when given, receives the full
/// post-softmax matrix with zeros at hidden keys.
pub(crate) fn attend(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    mask: Option<&AttnMask>,
    scale_factor: f32,
    mut probs_out: Option<&mut Mat>,
) -> Result<Mat> {
    let (n, d) = (q.rows(), q.cols());
    let m = k.rows();
    if k.cols() != d || v.cols() != d || v.rows() != m {
        return Err(Error::Shape(format!(
            "attention q {n}x{d}, k {}x{}, v {}x{}",
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if let Some(mk) = mask {
        if mk.rows() != n || mk.cols() != m {
            return Err(Error::Mask(format!(
                "mask {}x{} against {n} queries and {m} keys",
                mk.rows(),
                mk.cols()
            )));
        }
    }
    if let Some(p) = probs_out.as_deref_mut() {
        debug_assert_eq!((p.rows(), p.cols()), (n, m));
    }
    let mut out = Mat::zeros(n, d);
    let mut scratch = vec![0.0f32; m];
    for r in 0..n {
        let q_row = q.row(r);
        let mut max = f32::NEG_INFINITY;
        let mut any = false;
        for (j, slot) in scratch.iter_mut().enumerate() {
            if mask.is_none_or(|mk| mk.is_visible(r, j)) {
                let k_row = k.row(j);
                let mut dot = 0.0f32;
                for (a, b) in q_row.iter().zip(k_row) {
                    dot += a * b;
                }
                let logit = dot * scale_factor;
                *slot = logit;
                if logit > max {
                    max = logit;
                }
                any = true;
            }
        }
        if !any {
            return Err(Error::Mask(format!("query {r} has no visible keys")));
        }
        let mut sum = 0.0f32;
        for (j, slot) in scratch.iter_mut().enumerate() {
            if mask.is_none_or(|mk| mk.is_visible(r, j)) {
                let e = (*slot - max).exp();
                *slot = e;
                sum += e;
            }
        }
        let out_row = out.row_mut(r);
        for (j, &slot) in scratch.iter().enumerate() {
            if mask.is_none_or(|mk| mk.is_visible(r, j)) {
                let p = slot / sum;
                if let Some(pm) = probs_out.as_deref_mut() {
                    pm.row_mut(r)[j] = p;
                }
                let v_row = v.row(j);
                for (o, &vv) in out_row.iter_mut().zip(v_row) {
                    *o += p * vv;
                }
            }
        }
    }
    Ok(out)
}

/// Masked attention over one head: softmax over the visible keys only.
/// Errors if any query row is left with no visible key.
pub fn masked_attention(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    mask: &AttnMask,
    scale_factor: f32,
) -> Result<Mat> {
    attend(q, k, v, Some(mask), scale_factor, None)
}

/// Dense attention; the baseline the masked path degrades from.
pub fn dense_attention(q: &Mat, k: &Mat, v: &Mat, scale_factor: f32) -> Result<Mat> {
    attend(q, k, v, None, scale_factor, None)
}

/// 4 FLOPs per (query, key) pair per head-dim unit.
pub fn pair_flops(pairs: u64, head_dim: usize) -> u64 {
    4 * pairs * head_dim as u64
}

/// Analytical attention cost of one full forward pass (one stream, all
/// scales, every block and head).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnCost {
    pub flops: u64,
    /// Fraction saved versus the dense baseline; 0 for the baseline itself.
    pub saving: f64,
}

/// Dense attention FLOPs for one stream across all scales.
pub fn full_attn_flops(
    schedule: &ScaleSchedule,
    depth: usize,
    heads: usize,
    head_dim: usize,
) -> u64 {
    let mut total = 0u64;
    for k in 1..=schedule.len() {
        let pairs =
            schedule.tokens_at(k).unwrap() as u64 * schedule.cum_tokens(k).unwrap() as u64;
        total += pair_flops(pairs, head_dim) * (depth * heads) as u64;
    }
    total
}

/// Attention cost under a pattern (or the dense baseline when `None`).
/// The pattern must have been designed for the given layout.
pub fn attn_flops(
    pattern: Option<&WindowPattern>,
    schedule: &ScaleSchedule,
    depth: usize,
    heads: usize,
    head_dim: usize,
) -> Result<AttnCost> {
    let full = full_attn_flops(schedule, depth, heads, head_dim);
    let Some(p) = pattern else {
        return Ok(AttnCost { flops: full, saving: 0.0 });
    };
    if p.schedule() != schedule || p.depth() != depth || p.heads() != heads {
        return Err(Error::Input(format!(
            "pattern designed for a different layout ({} scales, depth {}, heads {})",
            p.schedule().len(),
            p.depth(),
            p.heads()
        )));
    }
    let mut masked = 0u64;
    for k in 1..=schedule.len() {
        for b in 0..depth {
            for h in 0..heads {
                masked += pair_flops(pattern_visible_pairs(p, k, b, h)?, head_dim);
            }
        }
    }
    let saving = if full == 0 { 0.0 } else { 1.0 - masked as f64 / full as f64 };
    Ok(AttnCost { flops: masked, saving })
}

/// Attention-map element count for one stream: visible (query, key) pairs
/// summed over scales, blocks, and heads.
pub fn attn_map_elems(
    pattern: Option<&WindowPattern>,
    schedule: &ScaleSchedule,
    depth: usize,
    heads: usize,
) -> Result<u64> {
    match pattern {
        None => {
            let mut total = 0u64;
            for k in 1..=schedule.len() {
                total += schedule.tokens_at(k)? as u64
                    * schedule.cum_tokens(k)? as u64
                    * (depth * heads) as u64;
            }
            Ok(total)
        }
        Some(p) => {
            if p.schedule() != schedule || p.depth() != depth || p.heads() != heads {
                return Err(Error::Input("pattern designed for a different layout".into()));
            }
            let mut total = 0u64;
            for k in 1..=schedule.len() {
                for b in 0..depth {
                    for h in 0..heads {
                        total += pattern_visible_pairs(p, k, b, h)?;
                    }
                }
            }
            Ok(total)
        }
    }
}
