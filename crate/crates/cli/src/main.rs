//! `varkit`: drive the compression toolchain end to end from the shell.
//!
//! Subcommands mirror the pipeline: `calibrate` records dense attention
//! maps, `design` fits a windowed pattern from a dump, `plan` builds a
//! mixed-precision plan, `generate` runs the model with any mix of
//! techniques, and `report` compares two run records.
//!
//! Exit codes: 0 success, 1 usage or validation failure, 2 file I/O
//! failure, 3 artifact/model fingerprint mismatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use varkit_core::{
    build_model, design_pattern, generate, load_dump, load_model_config, make_report,
    plan_precision, record_dump, save_dump, Bits, CompressionOpts, Error, PrecisionPlan,
    QuantTarget, Result, RunRecord, SamplerConfig, WindowPattern,
};

#[derive(Parser)]
#[command(
    name = "varkit",
    version,
    about = "Training-free compression toolchain for a multi-scale token-map generator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record dense attention maps for calibration
    Calibrate(CalibrateArgs),
    /// Fit a windowed attention pattern from a recorded dump
    Design(DesignArgs),
    /// Build a sensitivity-ranked mixed-precision plan
    Plan(PlanArgs),
    /// Generate a token pyramid, optionally compressed
    Generate(GenerateArgs),
    /// Compare two run records into a savings report
    Report(ReportArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Model config (model.json)
    #[arg(long)]
    model: PathBuf,
    /// Number of calibration labels to draw
    #[arg(long)]
    labels: usize,
    /// Seed for drawing calibration labels
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dump path (.lvad)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    /// Recorded dump (.lvad)
    #[arg(long)]
    dump: PathBuf,
    /// Attention-mass coverage threshold in (0, 1]
    #[arg(long)]
    r0: f64,
    /// Leading key-axis parts kept fully visible
    #[arg(long, default_value_t = 3)]
    sink_parts: usize,
    /// Output pattern path (.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    /// Model config (model.json)
    #[arg(long)]
    model: PathBuf,
    /// Number of scan labels to draw
    #[arg(long)]
    labels: usize,
    /// Seed for drawing scan labels
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight width in bits (16 = full precision, else 8/6/4)
    #[arg(long)]
    wbits: u8,
    /// Activation width in bits (16 = full precision, else 8/6/4)
    #[arg(long)]
    abits: u8,
    /// Q/K/V width in bits (16 = full precision, else 8/6/4)
    #[arg(long, default_value_t = 16)]
    qkv_bits: u8,
    /// How many of the most sensitive layer types stay full precision
    #[arg(long, default_value_t = 0)]
    protect: usize,
    /// Output plan path (.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Model config (model.json)
    #[arg(long)]
    model: PathBuf,
    /// Class label to condition on
    #[arg(long)]
    label: u32,
    /// Guidance strength
    #[arg(long, default_value_t = 4.0)]
    cfg: f32,
    /// Windowed attention pattern (.json) to apply
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Share the attention sub-block across the two guidance streams
    #[arg(long)]
    asc: bool,
    /// Mixed-precision plan (.json) to apply
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Output run record path (.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Baseline run record (.json)
    #[arg(long)]
    baseline: PathBuf,
    /// Compressed run record (.json)
    #[arg(long)]
    compressed: PathBuf,
    /// Output report path (.json)
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 2,
        Error::FingerprintMismatch(_) => 3,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Design(a) => cmd_design(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Seeded uniform label draw shared by `calibrate` and `plan`.
fn draw_labels(count: usize, seed: u64, class_count: usize) -> Result<Vec<u32>> {
    if count == 0 {
        return Err(Error::Input("label count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| rng.gen_range(0..class_count as u32)).collect())
}

fn bits_arg(value: u8) -> Result<Bits> {
    match value {
        16 => Ok(Bits::Fp),
        4 | 6 | 8 => Ok(Bits::Int(value)),
        other => Err(Error::Input(format!(
            "unsupported bit width {other} (expected 16, 8, 6, or 4)"
        ))),
    }
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let config = load_model_config(&a.model)?;
    let model = build_model(&config)?;
    let labels = draw_labels(a.labels, a.seed, config.class_count)?;
    let dump = record_dump(&model, &labels, &SamplerConfig::default())?;
    save_dump(&a.out, &dump)?;
    println!(
        "wrote dump: {} samples, layout {}, {}",
        dump.sample_count(),
        dump.fingerprint(),
        a.out.display()
    );
    Ok(())
}

fn cmd_design(a: DesignArgs) -> Result<()> {
    let dump = load_dump(&a.dump)?;
    let pattern = design_pattern(&dump, a.r0, a.sink_parts)?;
    pattern.save(&a.out)?;
    println!(
        "wrote pattern: coverage {}, layout {}, {}",
        a.r0,
        pattern.fingerprint(),
        a.out.display()
    );
    Ok(())
}

fn cmd_plan(a: PlanArgs) -> Result<()> {
    let config = load_model_config(&a.model)?;
    let model = build_model(&config)?;
    let labels = draw_labels(a.labels, a.seed, config.class_count)?;
    let target = QuantTarget {
        weight: bits_arg(a.wbits)?,
        act: bits_arg(a.abits)?,
        qkv: bits_arg(a.qkv_bits)?,
    };
    let plan = plan_precision(&model, &labels, &SamplerConfig::default(), target, a.protect)?;
    plan.save(&a.out)?;
    let protected: Vec<&str> = plan.protected().iter().map(|k| k.name()).collect();
    println!(
        "wrote plan: protected [{}], model {}, {}",
        protected.join(", "),
        plan.fingerprint(),
        a.out.display()
    );
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let config = load_model_config(&a.model)?;
    let model = build_model(&config)?;
    let pattern = match &a.pattern {
        Some(p) => Some(WindowPattern::load(p)?),
        None => None,
    };
    let plan = match &a.plan {
        Some(p) => Some(PrecisionPlan::load(p)?),
        None => None,
    };
    let sampler = SamplerConfig { cfg_scale: a.cfg, argmax: true };
    let opts = CompressionOpts {
        pattern: pattern.as_ref(),
        asc: a.asc,
        plan: plan.as_ref(),
    };
    let (maps, stats) = generate(&model, a.label, &sampler, &opts)?;
    let record = RunRecord::from_run(&model, a.label, &sampler, &opts, &maps, &stats)?;
    record.save(&a.out)?;
    println!(
        "wrote run: label {}, attention {} FLOPs, linear {} FLOPs, {}",
        a.label,
        stats.attn_flops,
        stats.linear_flops,
        a.out.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let baseline = RunRecord::load(&a.baseline)?;
    let compressed = RunRecord::load(&a.compressed)?;
    let report = make_report(&baseline, &compressed)?;
    report.save(&a.out)?;
    println!(
        "wrote report: attention saving {:.4}, weight saving {:.4}, logits drift {:.6}, {}",
        report.flops.attn_saving,
        report.bytes.weight_saving,
        report.proxy_errors.logits_rel_l2,
        a.out.display()
    );
    Ok(())
}
