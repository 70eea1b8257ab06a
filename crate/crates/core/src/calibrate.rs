//! Calibration: record post-softmax attention maps from dense runs, then
//! design a windowed pattern offline by fitting, per (scale, block, head,
//! part), the smallest diagonal band that keeps a target share of the
//! attention mass.
//!
//! All mass sums run in f64. Ratios aggregate across calibration samples
//! by an element-wise mean of the per-sample ratio curves, so one sample's
//! empty part (ratio 1 by convention) cannot zero out the aggregate.

use crate::config::layout_fingerprint;
use crate::error::{Error, Result};
use crate::forward::{generate_observed, CompressionOpts, RunObserver};
use crate::linalg::Mat;
use crate::model::Model;
use crate::pattern::{diagonal_center, partition, Part, WindowEntry, WindowPattern};
use crate::config::SamplerConfig;
use crate::schedule::ScaleSchedule;

/// Share of a part's attention mass inside the width-`w` diagonal band,
/// summed over all queries of the scale. A part with zero total mass
/// counts as fully covered. `w = 0` is the empty band.
pub fn window_mass_ratio(
    probs: &Mat,
    schedule: &ScaleSchedule,
    k: usize,
    part: &Part,
    w: u32,
) -> Result<f64> {
    let s_k = schedule.side(k)?;
    let n = (s_k * s_k) as usize;
    if probs.rows() != n {
        return Err(Error::Shape(format!(
            "scale {k} has {n} queries, probs matrix has {} rows",
            probs.rows()
        )));
    }
    if part.key_end > probs.cols() {
        return Err(Error::Shape(format!(
            "part ends at key {} but probs matrix has {} columns",
            part.key_end,
            probs.cols()
        )));
    }
    let s_m = part.source_side(schedule)?;
    let mut band = 0.0f64;
    let mut total = 0.0f64;
    for q in 0..n {
        let row = probs.row(q);
        let center = part.key_start + diagonal_center(q, s_k, s_m);
        let (lo, hi) = if w == 0 {
            (1, 0) // empty
        } else {
            let half = (w - 1) as usize;
            (
                center.saturating_sub(half).max(part.key_start),
                (center + half).min(part.key_end - 1),
            )
        };
        for (j, &p) in row.iter().enumerate().take(part.key_end).skip(part.key_start) {
            let v = p as f64;
            total += v;
            if j >= lo && j <= hi {
                band += v;
            }
        }
    }
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(band / total)
}

/// Smallest width `w` in `1..=max_width` whose coverage ratio reaches
/// `r0`, by ascending linear scan of `ratio`. The full-width band always
/// covers everything, so the scan terminates for any `r0 <= 1`.
pub fn fit_window<F>(max_width: u32, r0: f64, mut ratio: F) -> Result<u32>
where
    F: FnMut(u32) -> Result<f64>,
{
    if !(r0 > 0.0 && r0 <= 1.0) {
        return Err(Error::Config(format!("threshold {r0} outside (0, 1]")));
    }
    if max_width == 0 {
        return Err(Error::Config("part width must be positive".into()));
    }
    for w in 1..=max_width {
        if ratio(w)? >= r0 {
            return Ok(w);
        }
    }
    Err(Error::Numeric(format!(
        "no width up to {max_width} reached coverage {r0}"
    )))
}

/// Recorded dense attention maps: one post-softmax matrix per
/// (sample, block, head, scale), conditional stream only.
#[derive(Debug, Clone)]
pub struct AttentionDump {
    schedule: ScaleSchedule,
    depth: usize,
    heads: usize,
    mats: Vec<Vec<Vec<Vec<Mat>>>>, // [sample][block][head][k - 1]
}

impl AttentionDump {
    pub fn new(
        schedule: ScaleSchedule,
        depth: usize,
        heads: usize,
        mats: Vec<Vec<Vec<Vec<Mat>>>>,
    ) -> Result<Self> {
        let dump = Self { schedule, depth, heads, mats };
        dump.validate()?;
        Ok(dump)
    }

    fn validate(&self) -> Result<()> {
        if self.mats.is_empty() {
            return Err(Error::Input("dump holds no samples".into()));
        }
        for sample in &self.mats {
            if sample.len() != self.depth {
                return Err(Error::Shape("dump sample missing blocks".into()));
            }
            for block in sample {
                if block.len() != self.heads {
                    return Err(Error::Shape("dump block missing heads".into()));
                }
                for head in block {
                    if head.len() != self.schedule.len() {
                        return Err(Error::Shape("dump head missing scales".into()));
                    }
                    for (i, mat) in head.iter().enumerate() {
                        let k = i + 1;
                        let rows = self.schedule.tokens_at(k)?;
                        let cols = self.schedule.cum_tokens(k)?;
                        if mat.rows() != rows || mat.cols() != cols {
                            return Err(Error::Shape(format!(
                                "scale-{k} matrix is {}x{}, expected {rows}x{cols}",
                                mat.rows(),
                                mat.cols()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn sample_count(&self) -> usize {
        self.mats.len()
    }

    pub fn fingerprint(&self) -> String {
        layout_fingerprint(&self.schedule, self.depth, self.heads)
    }

    /// Post-softmax matrix of one (sample, block, head, scale).
    pub fn probs(&self, sample: usize, block: usize, head: usize, k: usize) -> Result<&Mat> {
        self.mats
            .get(sample)
            .and_then(|s| s.get(block))
            .and_then(|b| b.get(head))
            .and_then(|h| h.get(k.wrapping_sub(1)))
            .ok_or_else(|| {
                Error::Range(format!(
                    "dump has no entry (sample {sample}, block {block}, head {head}, scale {k})"
                ))
            })
    }

    pub(crate) fn samples(&self) -> &[Vec<Vec<Vec<Mat>>>] {
        &self.mats
    }
}

struct DumpRecorder {
    current: Vec<Vec<Vec<Mat>>>, // [block][head][k - 1]
}

impl DumpRecorder {
    fn new(depth: usize, heads: usize, scales: usize) -> Self {
        Self {
            current: vec![vec![vec![Mat::zeros(0, 0); scales]; heads]; depth],
        }
    }
}

impl RunObserver for DumpRecorder {
    fn wants_probs(&self) -> bool {
        true
    }

    fn attn_probs(&mut self, k: usize, block: usize, head: usize, probs: &Mat) {
        self.current[block][head][k - 1] = probs.clone();
    }
}

/// Run dense, full-precision generation for every calibration label and
/// record the conditional stream's attention maps.
pub fn record_dump(
    model: &Model,
    labels: &[u32],
    sampler: &SamplerConfig,
) -> Result<AttentionDump> {
    if labels.is_empty() {
        return Err(Error::Input("calibration needs at least one label".into()));
    }
    let cfg = model.config();
    let scales = cfg.schedule.len();
    let mut mats = Vec::with_capacity(labels.len());
    for &label in labels {
        if label as usize >= cfg.class_count {
            return Err(Error::Range(format!(
                "label {label} outside 0..{}",
                cfg.class_count
            )));
        }
        let mut rec = DumpRecorder::new(cfg.depth, cfg.heads, scales);
        generate_observed(
            model,
            label,
            model.null_label(),
            sampler,
            &CompressionOpts::default(),
            &mut rec,
        )?;
        mats.push(rec.current);
    }
    AttentionDump::new(cfg.schedule.clone(), cfg.depth, cfg.heads, mats)
}

/// Design a windowed pattern from a dump. Per (scale, block, head, part):
/// the merged head part and parts up to `sink_parts` stay full; for the
/// rest the smallest band reaching `r0` mean coverage is kept, and a band
/// as wide as its part collapses to full.
pub fn design_pattern(dump: &AttentionDump, r0: f64, sink_parts: usize) -> Result<WindowPattern> {
    if !(r0 > 0.0 && r0 <= 1.0) {
        return Err(Error::Config(format!("threshold {r0} outside (0, 1]")));
    }
    let schedule = dump.schedule().clone();
    let scales = schedule.len();
    let mut entries = Vec::with_capacity(scales);
    for k in 1..=scales {
        let parts = partition(&schedule, k)?.parts;
        let mut per_block = Vec::with_capacity(dump.depth());
        for block in 0..dump.depth() {
            let mut per_head = Vec::with_capacity(dump.heads());
            for head in 0..dump.heads() {
                let mut per_part = Vec::with_capacity(parts.len());
                for part in &parts {
                    per_part.push(design_entry(dump, &schedule, k, block, head, part, r0, sink_parts)?);
                }
                per_head.push(per_part);
            }
            per_block.push(per_head);
        }
        entries.push(per_block);
    }
    WindowPattern::from_entries(schedule, dump.depth(), dump.heads(), r0, sink_parts, entries)
}

#[allow(clippy::too_many_arguments)]
fn design_entry(
    dump: &AttentionDump,
    schedule: &ScaleSchedule,
    k: usize,
    block: usize,
    head: usize,
    part: &Part,
    r0: f64,
    sink_parts: usize,
) -> Result<WindowEntry> {
    if part.is_merged_head() || part.index <= sink_parts {
        return Ok(WindowEntry::Full);
    }
    let width = part.width() as u32;
    let samples = dump.sample_count();
    let w = fit_window(width, r0, |w| {
        let mut acc = 0.0f64;
        for s in 0..samples {
            let probs = dump.probs(s, block, head, k)?;
            acc += window_mass_ratio(probs, schedule, k, part, w)?;
        }
        Ok(acc / samples as f64)
    })?;
    if w == width {
        Ok(WindowEntry::Full)
    } else {
        Ok(WindowEntry::Width(w))
    }
}

/// Convenience wrapper: calibrate and design in one pass.
pub fn calibrate_pattern(
    model: &Model,
    labels: &[u32],
    sampler: &SamplerConfig,
    r0: f64,
    sink_parts: usize,
) -> Result<WindowPattern> {
    let dump = record_dump(model, labels, sampler)?;
    design_pattern(&dump, r0, sink_parts)
}
