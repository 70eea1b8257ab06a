//! Mixed-precision planning: score each layer type's quantization damage
//! in isolation, protect the most sensitive ones at full precision, and
//! bake the resulting plan into a model copy.
//!
//! Weight quantization is static per-tensor and applied once at plan
//! installation; activation quantization is dynamic per-tensor and
//! happens inside the forward pass. The embedding table is weight-only:
//! a row lookup has no activation to quantize.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{model_fingerprint, SamplerConfig};
use crate::error::{Error, Result};
use crate::forward::{generate, CompressionOpts};
use crate::linalg::relative_l2;
use crate::model::{ActQuantCfg, LayerKind, Model};
use crate::quant::{check_bits, fake_quant};

pub const PLAN_FILE_VERSION: u32 = 1;

/// Precision of one tensor role: full precision (stored as FP16 in the
/// byte accounting) or a supported integer width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bits {
    Fp,
    Int(u8),
}

impl Bits {
    pub fn int_bits(self) -> Option<u8> {
        match self {
            Bits::Fp => None,
            Bits::Int(b) => Some(b),
        }
    }

    /// Storage cost per parameter, in bits.
    pub fn bits_per_param(self) -> f64 {
        match self {
            Bits::Fp => 16.0,
            Bits::Int(b) => b as f64,
        }
    }

    fn validate(self) -> Result<()> {
        if let Bits::Int(b) = self {
            check_bits(b)?;
        }
        Ok(())
    }
}

impl Serialize for Bits {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bits::Fp => s.serialize_u8(16),
            Bits::Int(b) => s.serialize_u8(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        match v {
            16 => Ok(Bits::Fp),
            b if check_bits(b).is_ok() => Ok(Bits::Int(b)),
            other => Err(serde::de::Error::custom(format!(
                "unsupported precision {other}, expected 16, 8, 6, or 4"
            ))),
        }
    }
}

/// Uniform precision target a plan starts from, before protection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantTarget {
    pub weight: Bits,
    pub act: Bits,
    pub qkv: Bits,
}

impl QuantTarget {
    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        self.act.validate()?;
        self.qkv.validate()
    }
}

/// Resolved precision of one layer type under a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanEntry {
    pub weight: Bits,
    pub act: Bits,
}

/// A sensitivity-ranked mixed-precision plan, bound to one exact model
/// build by fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionPlan {
    target: QuantTarget,
    protected: Vec<LayerKind>,
    scores: BTreeMap<LayerKind, f64>,
    fingerprint: String,
}

impl PrecisionPlan {
    pub fn new(
        target: QuantTarget,
        protected: Vec<LayerKind>,
        scores: BTreeMap<LayerKind, f64>,
        fingerprint: String,
    ) -> Result<Self> {
        target.validate()?;
        let unique: BTreeSet<_> = protected.iter().collect();
        if unique.len() != protected.len() {
            return Err(Error::Config("protected list repeats a layer type".into()));
        }
        for (kind, score) in &scores {
            if !score.is_finite() {
                return Err(Error::Numeric(format!(
                    "sensitivity score of {} is not finite",
                    kind.name()
                )));
            }
        }
        Ok(Self { target, protected, scores, fingerprint })
    }

    pub fn target(&self) -> &QuantTarget {
        &self.target
    }

    pub fn protected(&self) -> &[LayerKind] {
        &self.protected
    }

    pub fn scores(&self) -> &BTreeMap<LayerKind, f64> {
        &self.scores
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Effective precision of one layer type.
    pub fn entry(&self, kind: LayerKind) -> PlanEntry {
        if self.protected.contains(&kind) {
            PlanEntry { weight: Bits::Fp, act: Bits::Fp }
        } else {
            PlanEntry { weight: self.target.weight, act: self.target.act }
        }
    }

    /// Integer width for Q/K/V entering attention, if any.
    pub fn qkv_bits(&self) -> Option<u8> {
        self.target.qkv.int_bits()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PlanFile {
            version: PLAN_FILE_VERSION,
            fingerprint: self.fingerprint.clone(),
            target: self.target,
            protected: self.protected.clone(),
            scores: self.scores.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: PlanFile =
            serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        if file.version != PLAN_FILE_VERSION {
            return Err(Error::Format(format!(
                "plan version {} unsupported, expected {PLAN_FILE_VERSION}",
                file.version
            )));
        }
        Self::new(file.target, file.protected, file.scores, file.fingerprint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    version: u32,
    fingerprint: String,
    target: QuantTarget,
    protected: Vec<LayerKind>,
    scores: BTreeMap<LayerKind, f64>,
}

impl Model {
    /// Copy of the model with the plan installed: protected layers stay
    /// untouched, everything else gets its weights fake-quantized in place
    /// and its activation width registered for the forward pass. Rejects a
    /// plan fingerprinted against a different model build.
    pub fn with_plan(&self, plan: &PrecisionPlan) -> Result<Model> {
        let expected = model_fingerprint(self.config());
        if plan.fingerprint() != expected {
            return Err(Error::FingerprintMismatch(format!(
                "plan {} vs model {expected}",
                plan.fingerprint()
            )));
        }
        let mut m = self.clone();
        for kind in LayerKind::ALL {
            if let Bits::Int(b) = plan.entry(kind).weight {
                quantize_weights(&mut m, kind, b)?;
            }
        }
        let mut act_bits = BTreeMap::new();
        for kind in LayerKind::ALL {
            if kind == LayerKind::WordEmbed {
                continue;
            }
            if let Bits::Int(b) = plan.entry(kind).act {
                act_bits.insert(kind, b);
            }
        }
        m.act_quant = Some(ActQuantCfg { act_bits, qkv_bits: plan.qkv_bits() });
        Ok(m)
    }
}

fn quantize_weights(m: &mut Model, kind: LayerKind, bits: u8) -> Result<()> {
    let mut first_err = None;
    m.for_each_weight_of(kind, |w| {
        if first_err.is_none() {
            match fake_quant(w, bits) {
                Ok(q) => *w = q,
                Err(e) => first_err = Some(e),
            }
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Guidance-combined logits per scale for one label, full pipeline.
fn run_logits(model: &Model, label: u32, sampler: &SamplerConfig) -> Result<Vec<Vec<f32>>> {
    let (_, stats) = generate(model, label, sampler, &CompressionOpts::default())?;
    Ok(stats.combined_logits)
}

/// Single-layer variant: only `kind` runs at the reduced precision, Q/K/V
/// stay full precision.
fn isolated_variant(model: &Model, kind: LayerKind, weight: Bits, act: Bits) -> Result<Model> {
    let mut m = model.clone();
    if let Bits::Int(b) = weight {
        quantize_weights(&mut m, kind, b)?;
    }
    let mut act_bits = BTreeMap::new();
    if kind != LayerKind::WordEmbed {
        if let Bits::Int(b) = act {
            act_bits.insert(kind, b);
        }
    }
    m.act_quant = Some(ActQuantCfg { act_bits, qkv_bits: None });
    Ok(m)
}

/// Quantization damage per layer type: each type is reduced in isolation
/// and scored by the mean relative L2 drift of the guidance-combined
/// logits over every (scale, label) pair.
pub fn sensitivity_scan(
    model: &Model,
    labels: &[u32],
    sampler: &SamplerConfig,
    weight: Bits,
    act: Bits,
) -> Result<BTreeMap<LayerKind, f64>> {
    if labels.is_empty() {
        return Err(Error::Input("sensitivity scan needs at least one label".into()));
    }
    weight.validate()?;
    act.validate()?;
    let mut baselines = Vec::with_capacity(labels.len());
    for &label in labels {
        baselines.push(run_logits(model, label, sampler)?);
    }
    let mut scores = BTreeMap::new();
    for kind in LayerKind::ALL {
        let variant = isolated_variant(model, kind, weight, act)?;
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for (label, baseline) in labels.iter().zip(&baselines) {
            let drifted = run_logits(&variant, *label, sampler)?;
            for (a, b) in drifted.iter().zip(baseline) {
                acc += relative_l2(a, b);
                count += 1;
            }
        }
        scores.insert(kind, acc / count as f64);
    }
    Ok(scores)
}

/// Scan, then protect the `protect_count` most damaged layer types at
/// full precision. Score ties resolve in declaration order of the layer
/// types, keeping plans deterministic.
pub fn plan_precision(
    model: &Model,
    labels: &[u32],
    sampler: &SamplerConfig,
    target: QuantTarget,
    protect_count: usize,
) -> Result<PrecisionPlan> {
    target.validate()?;
    if protect_count > LayerKind::ALL.len() {
        return Err(Error::Range(format!(
            "cannot protect {protect_count} of {} layer types",
            LayerKind::ALL.len()
        )));
    }
    let scores = sensitivity_scan(model, labels, sampler, target.weight, target.act)?;
    let mut ranked: Vec<(LayerKind, f64)> = scores.iter().map(|(k, v)| (*k, *v)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let protected: Vec<LayerKind> = ranked.iter().take(protect_count).map(|(k, _)| *k).collect();
    PrecisionPlan::new(target, protected, scores, model_fingerprint(model.config()))
}
