//! Model and sampler configuration, the versioned `model.json` document,
//! and the fingerprints that tie derived artifacts back to a configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::LayerKind;
use crate::schedule::ScaleSchedule;

pub const MODEL_FILE_VERSION: u32 = 1;

/// Multiplies every `stride`-th weight of one layer type by `factor` after
/// seeded init. A synthetic stress knob: it plants outliers so quantization
/// sensitivity harnesses have a known bottleneck to find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub layer: LayerKind,
    pub factor: f32,
    pub stride: usize,
}

/// Static description of a toy generator. Identical configs (seed included)
/// build bit-identical models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub schedule: ScaleSchedule,
    pub depth: usize,
    pub heads: usize,
    pub dim: usize,
    pub vocab: usize,
    pub seed: u64,
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weight_outliers: Vec<OutlierSpec>,
}

impl ModelConfig {
    /// Fast desk configuration: six scales, 4 blocks, 4 heads, dim 64.
    pub fn desk(seed: u64) -> Self {
        Self {
            schedule: ScaleSchedule::desk(),
            depth: 4,
            heads: 4,
            dim: 64,
            vocab: 256,
            seed,
            class_count: 1000,
            weight_outliers: Vec::new(),
        }
    }

    /// Same block stack as [`ModelConfig::desk`] on the ten-scale schedule.
    pub fn ten_scale(seed: u64) -> Self {
        Self { schedule: ScaleSchedule::ten_scale(), ..Self::desk(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.heads == 0 || self.dim == 0 {
            return Err(Error::Config("depth, heads, and dim must be >= 1".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.vocab == 0 {
            return Err(Error::Config("vocab must be >= 1".into()));
        }
        if self.class_count == 0 {
            return Err(Error::Config("class_count must be >= 1".into()));
        }
        for o in &self.weight_outliers {
            if o.stride == 0 {
                return Err(Error::Config("outlier stride must be >= 1".into()));
            }
            if !o.factor.is_finite() {
                return Err(Error::Config("outlier factor must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Hidden width of the feed-forward sublayer (fixed 4x multiplier).
    pub fn ffn_dim(&self) -> usize {
        4 * self.dim
    }
}

/// Sampling settings for one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Guidance strength: combined = uncond + cfg_scale * (cond - uncond).
    pub cfg_scale: f32,
    /// Deterministic argmax decoding; the only supported mode.
    #[serde(default = "default_true")]
    pub argmax: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { cfg_scale: 4.0, argmax: true }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.cfg_scale.is_finite() {
            return Err(Error::Config("cfg_scale must be finite".into()));
        }
        if !self.argmax {
            return Err(Error::Config(
                "stochastic sampling is not supported; argmax must stay enabled".into(),
            ));
        }
        Ok(())
    }
}

// ── Fingerprints ─────────────────────────────────────────────────────────

fn hex_digest(payload: &str) -> String {
    let mut h = Sha256::new();
    h.update(payload.as_bytes());
    let out = h.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Identifies the attention layout an artifact was built for: schedule
/// plus block/head counts. Patterns and dumps carry this.
pub fn layout_fingerprint(schedule: &ScaleSchedule, depth: usize, heads: usize) -> String {
    let sides: Vec<String> = schedule.sides().iter().map(|s| s.to_string()).collect();
    hex_digest(&format!("layout|{}|d{depth}|h{heads}", sides.join(",")))
}

/// Identifies a concrete model down to its seeded weights. Precision plans
/// carry this because sensitivity scores depend on the exact weights.
pub fn model_fingerprint(config: &ModelConfig) -> String {
    let sides: Vec<String> = config.schedule.sides().iter().map(|s| s.to_string()).collect();
    let outliers: Vec<String> = config
        .weight_outliers
        .iter()
        .map(|o| format!("{}x{}@{}", o.layer.name(), o.factor, o.stride))
        .collect();
    hex_digest(&format!(
        "model|{}|d{}|h{}|dim{}|v{}|s{}|c{}|{}",
        sides.join(","),
        config.depth,
        config.heads,
        config.dim,
        config.vocab,
        config.seed,
        config.class_count,
        outliers.join(";")
    ))
}

// ── model.json ───────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    schedule: ScheduleField,
    depth: usize,
    heads: usize,
    dim: usize,
    vocab: usize,
    seed: u64,
    class_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    weight_outliers: Vec<OutlierSpec>,
}

/// `schedule` accepts an explicit side array or a named preset.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScheduleField {
    Named(String),
    Sides(Vec<u32>),
}

impl ScheduleField {
    fn resolve(self) -> Result<ScaleSchedule> {
        match self {
            ScheduleField::Named(name) => match name.as_str() {
                "desk" => Ok(ScaleSchedule::desk()),
                "ten-scale" => Ok(ScaleSchedule::ten_scale()),
                other => Err(Error::Format(format!(
                    "unknown schedule preset {other:?} (expected \"desk\" or \"ten-scale\")"
                ))),
            },
            ScheduleField::Sides(sides) => ScaleSchedule::new(sides),
        }
    }
}

pub fn model_config_from_json(text: &str) -> Result<ModelConfig> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("model.json: {e}")))?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::Format(format!(
            "model.json version {} unsupported (expected {MODEL_FILE_VERSION})",
            file.version
        )));
    }
    let config = ModelConfig {
        schedule: file.schedule.resolve()?,
        depth: file.depth,
        heads: file.heads,
        dim: file.dim,
        vocab: file.vocab,
        seed: file.seed,
        class_count: file.class_count,
        weight_outliers: file.weight_outliers,
    };
    config.validate()?;
    Ok(config)
}

pub fn model_config_to_json(config: &ModelConfig) -> Result<String> {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        schedule: ScheduleField::Sides(config.schedule.sides().to_vec()),
        depth: config.depth,
        heads: config.heads,
        dim: config.dim,
        vocab: config.vocab,
        seed: config.seed,
        class_count: config.class_count,
        weight_outliers: config.weight_outliers.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path)?;
    model_config_from_json(&text)
}

pub fn save_model_config(config: &ModelConfig, path: &Path) -> Result<()> {
    fs::write(path, model_config_to_json(config)?)?;
    Ok(())
}
