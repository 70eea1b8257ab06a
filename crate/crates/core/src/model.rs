//! The toy generator substrate: seeded synthetic weights arranged exactly
//! like the full-size model's quantizable surface, so compression passes
//! exercise the real layer inventory at desk scale.
//!
//! Weight layout per block: fused QKV projection, attention output
//! projection, two feed-forward matrices, and the adaptive-norm modulation
//! projection driven by the class embedding. The token embedding table and
//! the logit head sit outside the blocks. All linears are bias-free.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// The seven quantizable layer types. Declaration order is the canonical
/// enumeration order used for deterministic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerKind {
    WordEmbed,
    AttnMatQkv,
    AttnProj,
    FfnFc1,
    FfnFc2,
    AdaLin1,
    Head,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::WordEmbed,
        LayerKind::AttnMatQkv,
        LayerKind::AttnProj,
        LayerKind::FfnFc1,
        LayerKind::FfnFc2,
        LayerKind::AdaLin1,
        LayerKind::Head,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::WordEmbed => "word_embed",
            LayerKind::AttnMatQkv => "attn.mat_qkv",
            LayerKind::AttnProj => "attn.proj",
            LayerKind::FfnFc1 => "ffn.fc1",
            LayerKind::FfnFc2 => "ffn.fc2",
            LayerKind::AdaLin1 => "ada_lin.1",
            LayerKind::Head => "head",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Format(format!("unknown layer type {name:?}")))
    }
}

impl Serialize for LayerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LayerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        LayerKind::from_name(&name).map_err(serde::de::Error::custom)
    }
}

/// Bias-free linear layer; weight is `[in, out]` row-major, applied as
/// `y = x @ w`. For the embedding table the "input" axis is the vocabulary.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Mat,
}

impl Linear {
    fn seeded(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Self {
        let mut data = vec![0.0f32; rows * cols];
        for v in data.iter_mut() {
            *v = (rng.gen::<f32>() * 2.0 - 1.0) * scale;
        }
        Self { weight: Mat::from_vec(data, rows, cols).expect("seeded weight shape") }
    }

    pub fn weight(&self) -> &Mat {
        &self.weight
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Mat {
        &mut self.weight
    }

    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        x.matmul(&self.weight)
    }

    /// Embedding-style row lookup.
    pub fn lookup(&self, ids: &[u32]) -> Result<Mat> {
        let mut out = Mat::zeros(ids.len(), self.weight.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id as usize >= self.weight.rows() {
                return Err(Error::Range(format!(
                    "token id {id} outside vocabulary of {}",
                    self.weight.rows()
                )));
            }
            out.row_mut(r).copy_from_slice(self.weight.row(id as usize));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub(crate) mat_qkv: Linear,
    pub(crate) proj: Linear,
    pub(crate) fc1: Linear,
    pub(crate) fc2: Linear,
    pub(crate) ada_lin: Linear,
}

/// Activation-side quantization settings installed by plan application.
/// Weight fake-quantization has already been baked into the matrices by
/// the time this exists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActQuantCfg {
    /// Dynamic per-tensor activation bits per layer type (absent = FP).
    pub act_bits: BTreeMap<LayerKind, u8>,
    /// Dynamic per-tensor bits for Q/K/V entering attention (None = FP).
    pub qkv_bits: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    /// `[class_count + 1, dim]`; the extra final row is the null-label
    /// embedding that drives the unconditional guidance stream.
    pub(crate) class_embed: Mat,
    /// `[total_tokens, dim]`, rows addressed by absolute token position.
    pub(crate) pos_embed: Mat,
    pub(crate) word_embed: Linear,
    pub(crate) blocks: Vec<Block>,
    pub(crate) head: Linear,
    pub(crate) act_quant: Option<ActQuantCfg>,
}

fn xavier(rows: usize, cols: usize) -> f32 {
    (2.0 / (rows + cols) as f32).sqrt()
}

/// Build a model from its config. Same config (seed included) twice gives
/// bit-identical weights; tensors are drawn in a fixed order.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let embed_scale = (1.0 / dim as f32).sqrt();

    let class_embed =
        Linear::seeded(&mut rng, config.class_count + 1, dim, embed_scale).weight;
    let pos_embed =
        Linear::seeded(&mut rng, config.schedule.total_tokens(), dim, embed_scale).weight;
    let word_embed = Linear::seeded(&mut rng, config.vocab, dim, embed_scale);

    let mut blocks = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        blocks.push(Block {
            mat_qkv: Linear::seeded(&mut rng, dim, 3 * dim, xavier(dim, 3 * dim)),
            proj: Linear::seeded(&mut rng, dim, dim, xavier(dim, dim)),
            fc1: Linear::seeded(&mut rng, dim, config.ffn_dim(), xavier(dim, config.ffn_dim())),
            fc2: Linear::seeded(&mut rng, config.ffn_dim(), dim, xavier(config.ffn_dim(), dim)),
            // Modulation starts near identity: small weights keep 1+gamma
            // close to 1 while still conditioning on the class vector.
            ada_lin: Linear::seeded(&mut rng, dim, 4 * dim, 0.1 * xavier(dim, 4 * dim)),
        });
    }
    let head = Linear::seeded(&mut rng, dim, config.vocab, xavier(dim, config.vocab));

    let mut model = Model {
        config: config.clone(),
        class_embed,
        pos_embed,
        word_embed,
        blocks,
        head,
        act_quant: None,
    };
    for spec in &config.weight_outliers {
        model.for_each_weight_of(spec.layer, |w| {
            for i in (0..w.data.len()).step_by(spec.stride) {
                w.data[i] *= spec.factor;
            }
        });
    }
    Ok(model)
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head_dim(&self) -> usize {
        self.config.head_dim()
    }

    /// Reserved label id of the unconditional stream.
    pub fn null_label(&self) -> u32 {
        self.config.class_count as u32
    }

    /// Class embedding row for a label; `null_label()` selects the
    /// unconditional row. Anything past it is out of range.
    pub fn class_vector(&self, label: u32) -> Result<&[f32]> {
        if label as usize > self.config.class_count {
            return Err(Error::Range(format!(
                "label {label} outside 0..={}",
                self.config.class_count
            )));
        }
        Ok(self.class_embed.row(label as usize))
    }

    pub fn act_quant(&self) -> Option<&ActQuantCfg> {
        self.act_quant.as_ref()
    }

    pub(crate) fn for_each_weight_of(&mut self, kind: LayerKind, mut f: impl FnMut(&mut Mat)) {
        match kind {
            LayerKind::WordEmbed => f(self.word_embed.weight_mut()),
            LayerKind::Head => f(self.head.weight_mut()),
            _ => {
                for b in &mut self.blocks {
                    match kind {
                        LayerKind::AttnMatQkv => f(b.mat_qkv.weight_mut()),
                        LayerKind::AttnProj => f(b.proj.weight_mut()),
                        LayerKind::FfnFc1 => f(b.fc1.weight_mut()),
                        LayerKind::FfnFc2 => f(b.fc2.weight_mut()),
                        LayerKind::AdaLin1 => f(b.ada_lin.weight_mut()),
                        LayerKind::WordEmbed | LayerKind::Head => unreachable!(),
                    }
                }
            }
        }
    }

    /// Weight matrices of one layer type, in block order for per-block types.
    pub fn weights_of(&self, kind: LayerKind) -> Vec<&Mat> {
        match kind {
            LayerKind::WordEmbed => vec![self.word_embed.weight()],
            LayerKind::Head => vec![self.head.weight()],
            LayerKind::AttnMatQkv => self.blocks.iter().map(|b| b.mat_qkv.weight()).collect(),
            LayerKind::AttnProj => self.blocks.iter().map(|b| b.proj.weight()).collect(),
            LayerKind::FfnFc1 => self.blocks.iter().map(|b| b.fc1.weight()).collect(),
            LayerKind::FfnFc2 => self.blocks.iter().map(|b| b.fc2.weight()).collect(),
            LayerKind::AdaLin1 => self.blocks.iter().map(|b| b.ada_lin.weight()).collect(),
        }
    }

    /// Parameter count of one layer type across the whole model.
    pub fn param_count(&self, kind: LayerKind) -> u64 {
        self.weights_of(kind).iter().map(|w| w.data().len() as u64).sum()
    }

    /// sha256 (truncated hex) over every weight tensor in a fixed order.
    pub fn weight_checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut eat = |m: &Mat| {
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        };
        eat(&self.class_embed);
        eat(&self.pos_embed);
        for kind in LayerKind::ALL {
            for w in self.weights_of(kind) {
                eat(w);
            }
        }
        let out = h.finalize();
        out.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}
