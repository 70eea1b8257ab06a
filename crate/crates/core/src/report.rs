//! Run records and savings reports: every generation can be captured as a
//! self-describing JSON record (config, enabled techniques, analytical
//! costs, logits, token maps), and two records over the same config
//! compare into a savings report with proxy quality metrics.
//!
//! Byte accounting conventions: attention maps are f32 activations;
//! weights are FP16 when unquantized, so an 8-bit plan halves weight
//! bytes exactly. Weight bytes cover the seven quantizable layer types.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::attn_map_elems;
use crate::config::{ModelConfig, SamplerConfig};
use crate::error::{Error, Result};
use crate::forward::{CompressionOpts, RunStats, TokenMapSet};
use crate::linalg::relative_l2;
use crate::model::{LayerKind, Model};
use crate::pattern::WindowPattern;
use crate::precision::{PrecisionPlan, QuantTarget};

pub const RUN_FILE_VERSION: u32 = 1;
pub const REPORT_FILE_VERSION: u32 = 1;

/// Fraction of attention compute removed by sharing the attention
/// sub-block across the two guidance streams: one stream instead of two.
pub fn asc_attention_saving() -> f64 {
    0.5
}

/// Attention saving of windowing and stream sharing together: sharing
/// halves whatever the windowed single stream still costs.
pub fn combined_attention_saving(windowed_saving: f64) -> f64 {
    1.0 - (1.0 - windowed_saving) / 2.0
}

/// Attention-map bytes (f32) of one stream's full forward pass.
pub fn attn_map_bytes(
    pattern: Option<&WindowPattern>,
    config: &ModelConfig,
) -> Result<u64> {
    Ok(attn_map_elems(pattern, &config.schedule, config.depth, config.heads)? * 4)
}

/// Weight storage in bytes over the quantizable layer types, honoring a
/// plan's per-layer widths; unquantized layers count as FP16.
pub fn weight_bytes(model: &Model, plan: Option<&PrecisionPlan>) -> f64 {
    LayerKind::ALL
        .iter()
        .map(|&kind| {
            let bits = match plan {
                Some(p) => p.entry(kind).weight.bits_per_param(),
                None => 16.0,
            };
            model.param_count(kind) as f64 * bits / 8.0
        })
        .sum()
}

/// Plan identity as stored in a record: enough to reproduce the byte
/// accounting and to describe the run, without the score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub target: QuantTarget,
    pub protected: Vec<LayerKind>,
    pub fingerprint: String,
}

/// Which compression techniques a run had enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Techniques {
    pub pattern_r0: Option<f64>,
    pub pattern_fingerprint: Option<String>,
    pub asc: bool,
    pub plan: Option<PlanSummary>,
}

impl Techniques {
    fn describe(&self) -> String {
        let mut parts = Vec::new();
        match self.pattern_r0 {
            Some(r0) => parts.push(format!("windowed attention at coverage {r0}")),
            None => parts.push("dense attention".into()),
        }
        parts.push(if self.asc {
            "shared attention across guidance streams".into()
        } else {
            "separate guidance streams".into()
        });
        match &self.plan {
            Some(p) => parts.push(format!(
                "quantized with {} protected layer(s)",
                p.protected.len()
            )),
            None => parts.push("full precision".into()),
        }
        parts.join(", ")
    }
}

/// Analytical cost counters of one run (both guidance streams).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStats {
    pub attn_flops: u64,
    pub linear_flops: u64,
    pub attn_map_bytes: u64,
    pub weight_bytes: f64,
}

/// Everything needed to replay or audit one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub config: ModelConfig,
    pub label: u32,
    pub sampler: SamplerConfig,
    pub techniques: Techniques,
    pub stats: RecordStats,
    /// Guidance-combined logits per scale, row-major.
    pub logits: Vec<Vec<f32>>,
    pub token_maps: TokenMapSet,
}

impl RunRecord {
    /// Capture a finished run. `model` must be the unmodified build the
    /// run used (plans are summarized from `opts`, not from the model).
    pub fn from_run(
        model: &Model,
        label: u32,
        sampler: &SamplerConfig,
        opts: &CompressionOpts,
        maps: &TokenMapSet,
        stats: &RunStats,
    ) -> Result<Self> {
        let techniques = Techniques {
            pattern_r0: opts.pattern.map(|p| p.threshold()),
            pattern_fingerprint: opts.pattern.map(|p| p.fingerprint().to_string()),
            asc: opts.asc,
            plan: opts.plan.map(|p| PlanSummary {
                target: *p.target(),
                protected: p.protected().to_vec(),
                fingerprint: p.fingerprint().to_string(),
            }),
        };
        Ok(Self {
            version: RUN_FILE_VERSION,
            config: model.config().clone(),
            label,
            sampler: sampler.clone(),
            techniques,
            stats: RecordStats {
                attn_flops: stats.attn_flops,
                linear_flops: stats.linear_flops,
                attn_map_bytes: stats.attn_map_bytes(),
                weight_bytes: weight_bytes(model, opts.plan),
            },
            logits: stats.combined_logits.clone(),
            token_maps: maps.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let rec: RunRecord =
            serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        if rec.version != RUN_FILE_VERSION {
            return Err(Error::Format(format!(
                "run record version {} unsupported, expected {RUN_FILE_VERSION}",
                rec.version
            )));
        }
        rec.config.validate()?;
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsSection {
    pub baseline_attn: u64,
    pub compressed_attn: u64,
    pub attn_saving: f64,
    pub baseline_linear: u64,
    pub compressed_linear: u64,
    pub linear_saving: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BytesSection {
    pub baseline_attn_map: u64,
    pub compressed_attn_map: u64,
    pub attn_map_saving: f64,
    pub baseline_weight: f64,
    pub compressed_weight: f64,
    pub weight_saving: f64,
}

/// Cheap fidelity proxies between two runs of the same config and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyErrors {
    /// Mean over scales of the relative L2 drift of combined logits.
    pub logits_rel_l2: f64,
    /// Fraction of token ids that differ, over all scales.
    pub token_disagreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub version: u32,
    pub flops: FlopsSection,
    pub bytes: BytesSection,
    pub proxy_errors: ProxyErrors,
    pub notes: String,
}

fn saving(baseline: f64, compressed: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        1.0 - compressed / baseline
    }
}

/// Compare a compressed run against its baseline. Both records must come
/// from the same config, label, and sampler settings.
pub fn make_report(baseline: &RunRecord, compressed: &RunRecord) -> Result<SavingsReport> {
    if baseline.config != compressed.config {
        return Err(Error::Input("records come from different model configs".into()));
    }
    if baseline.label != compressed.label {
        return Err(Error::Input("records come from different labels".into()));
    }
    if baseline.sampler != compressed.sampler {
        return Err(Error::Input("records come from different sampler settings".into()));
    }
    if baseline.logits.len() != compressed.logits.len() {
        return Err(Error::Shape("records cover different scale counts".into()));
    }

    let mut l2 = 0.0f64;
    for (c, b) in compressed.logits.iter().zip(&baseline.logits) {
        if c.len() != b.len() {
            return Err(Error::Shape("logit shapes differ between records".into()));
        }
        l2 += relative_l2(c, b);
    }
    l2 /= baseline.logits.len() as f64;

    let mut differing = 0u64;
    let mut total = 0u64;
    for (c, b) in compressed.token_maps.maps().iter().zip(baseline.token_maps.maps()) {
        if c.len() != b.len() {
            return Err(Error::Shape("token map shapes differ between records".into()));
        }
        total += c.len() as u64;
        differing += c.iter().zip(b).filter(|(x, y)| x != y).count() as u64;
    }
    let disagreement = if total == 0 { 0.0 } else { differing as f64 / total as f64 };

    let notes = format!(
        "baseline: {}; compressed: {}",
        baseline.techniques.describe(),
        compressed.techniques.describe()
    );
    Ok(SavingsReport {
        version: REPORT_FILE_VERSION,
        flops: FlopsSection {
            baseline_attn: baseline.stats.attn_flops,
            compressed_attn: compressed.stats.attn_flops,
            attn_saving: saving(baseline.stats.attn_flops as f64, compressed.stats.attn_flops as f64),
            baseline_linear: baseline.stats.linear_flops,
            compressed_linear: compressed.stats.linear_flops,
            linear_saving: saving(
                baseline.stats.linear_flops as f64,
                compressed.stats.linear_flops as f64,
            ),
        },
        bytes: BytesSection {
            baseline_attn_map: baseline.stats.attn_map_bytes,
            compressed_attn_map: compressed.stats.attn_map_bytes,
            attn_map_saving: saving(
                baseline.stats.attn_map_bytes as f64,
                compressed.stats.attn_map_bytes as f64,
            ),
            baseline_weight: baseline.stats.weight_bytes,
            compressed_weight: compressed.stats.weight_bytes,
            weight_saving: saving(baseline.stats.weight_bytes, compressed.stats.weight_bytes),
        },
        proxy_errors: ProxyErrors { logits_rel_l2: l2, token_disagreement: disagreement },
        notes,
    })
}

impl SavingsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let rep: SavingsReport =
            serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        if rep.version != REPORT_FILE_VERSION {
            return Err(Error::Format(format!(
                "report version {} unsupported, expected {REPORT_FILE_VERSION}",
                rep.version
            )));
        }
        Ok(rep)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
