//! Desk-scale inference engine for a multi-scale autoregressive token-map
//! generator plus a training-free compression toolchain: calibrated
//! multi-diagonal window attention, attention sharing across the two
//! classifier-free-guidance streams, and mixed-precision post-training
//! quantization. All costs are reported analytically (FLOPs and bytes);
//! nothing here claims wall-clock speedups.
//!
//! The crate is organized bottom-up:
//!
//! * [`schedule`], [`config`], [`linalg`]: scale schedules, model/sampler
//!   configuration, and the small dense-math kernel set.
//! * [`model`], [`cache`], [`forward`]: seeded toy transformer, KV cache,
//!   and the scale-by-scale generation pipeline (including the shared-
//!   attention guidance path).
//! * [`pattern`], [`calibrate`], [`dump`]: key-axis partitioning, window
//!   fitting against recorded attention mass, and the binary dump format.
//! * [`attention`]: the masked executor and its analytical cost model.
//! * [`quant`], [`precision`]: fake-quantization primitives, sensitivity
//!   scanning, and mixed-precision planning.
//! * [`report`]: byte/FLOP accounting and run-vs-run comparison reports.

pub mod attention;
pub mod cache;
pub mod calibrate;
pub mod config;
pub mod dump;
pub mod error;
pub mod forward;
pub mod linalg;
pub mod model;
pub mod pattern;
pub mod precision;
pub mod quant;
pub mod report;
pub mod schedule;

pub use attention::{
    attn_flops, attn_map_elems, dense_attention, full_attn_flops, masked_attention,
    pattern_to_mask, pattern_visible_pairs, AttnCost, AttnMask,
};
pub use cache::KVCache;
pub use calibrate::{
    calibrate_pattern, design_pattern, fit_window, record_dump, window_mass_ratio, AttentionDump,
};
pub use config::{
    layout_fingerprint, load_model_config, model_config_from_json, model_config_to_json,
    model_fingerprint, save_model_config, ModelConfig, OutlierSpec, SamplerConfig,
};
pub use dump::{load_dump, read_dump, save_dump, write_dump};
pub use error::{Error, Result};
pub use forward::{
    cfg_combine, forward_scale, generate, generate_observed, generate_with_streams, run_block_asc,
    scale_input, AttnExecKind, CompressionOpts, NoopObserver, RunObserver, RunStats, TokenMapSet,
};
pub use linalg::{relative_l2, Mat};
pub use model::{build_model, LayerKind, Model};
pub use pattern::{diagonal_center, partition, Part, PartLayout, WindowEntry, WindowPattern};
pub use precision::{plan_precision, sensitivity_scan, Bits, PlanEntry, PrecisionPlan, QuantTarget};
pub use quant::{
    calc_params, dequantize, fake_quant, quantize, quantize_qkv, QuantParams, QuantTensor,
};
pub use report::{
    asc_attention_saving, attn_map_bytes, combined_attention_saving, make_report, weight_bytes,
    RunRecord, SavingsReport,
};
pub use schedule::ScaleSchedule;
