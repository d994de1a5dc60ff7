//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation or usage, 2 numerical failure
//! (non-finite loss, failed gradient check), 3 I/O or file format.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_synthetic, GenParams, Split};
use crate::error::{Error, Result};
use crate::gradcheck::gradcheck_suite;
use crate::nn::{param_count, ModelConfig, Variant};
use crate::rf::{self, Layer, Mode};
use crate::train::{cmd_eval, cmd_predict, cmd_train, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "overseg",
    version,
    about = "Overcomplete/undercomplete segmentation networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic dataset and its manifest.
    GenData(GenDataArgs),
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Write per-sample metrics for a split.
    Eval(EvalArgs),
    /// Write predicted label maps.
    Predict(EvalArgs),
    /// Print receptive-field tables for a variant's encoders.
    AnalyzeRf(RfArgs),
    /// Print parameter totals and the per-group breakdown.
    ParamCount(CountArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub n_test: usize,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Depth of 3D volumes (defaults to --size).
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub large_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub small_min: usize,
    #[arg(long, default_value_t = 4)]
    pub small_max: usize,
    #[arg(long, default_value_t = 1.0)]
    pub blur: f64,
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long)]
    pub multiclass: bool,
    #[arg(long)]
    pub allow_empty: bool,
    /// Model depth the sizes must be divisible for.
    #[arg(long, default_value_t = 3)]
    pub levels: u32,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model and training keys, `key=value` per line.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// train or test; `predict` covers every entry when omitted.
    #[arg(long)]
    pub split: Option<String>,
    /// Accepted for symmetry with other commands; evaluation is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct RfArgs {
    #[arg(long, default_value = "KIUNET")]
    pub variant: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
    /// Conv kernel extent.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Also measure each prefix of the stack with the gradient probe.
    #[arg(long)]
    pub empirical: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[arg(long, default_value = "KIUNET")]
    pub variant: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
}

#[derive(Args, Debug)]
pub struct GradArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    print!("{text}");
    let _ = std::io::stdout().flush();
    if let Some(path) = out {
        std::fs::write(path, text).map_err(|source| Error::Io { offset: 0, source }.in_file(path))?;
    }
    Ok(())
}

fn model_config(variant: &str, config: Option<&PathBuf>, dims: usize) -> Result<ModelConfig> {
    match config {
        Some(path) => Ok(TrainConfig::load(path)?.model),
        None => Ok(ModelConfig::new(dims, variant.parse::<Variant>()?)),
    }
}

fn split_arg(s: Option<&str>) -> Result<Option<Split>> {
    s.map(str::parse).transpose()
}

/// Layer stacks analysed for a variant: one per encoder branch it has.
pub fn rf_stacks(variant: Variant, levels: usize, k: usize) -> Vec<(Mode, Vec<Layer>)> {
    let mut out = Vec::new();
    if variant.has_under() {
        out.push((Mode::Under, rf::encoder_layers(Mode::Under, levels, k)));
    }
    if variant.has_over() {
        out.push((Mode::Over, rf::encoder_layers(Mode::Over, levels, k)));
    }
    out
}

/// Empirical extent of every prefix of `layers`, on a planar input sized so
/// the probe clears the borders.
pub fn empirical_prefixes(layers: &[Layer], seed: u64) -> Result<Vec<Option<Vec<usize>>>> {
    let mut out = Vec::new();
    for end in 1..=layers.len() {
        let prefix = &layers[..end];
        let rec = rf::rf_exact(prefix);
        let pools = prefix.iter().filter(|l| **l == Layer::MaxPool).count() as u32;
        let ups = prefix.iter().filter(|l| **l == Layer::Upsample).count() as u32;
        let n = (4 * rf::ceil(rec.rf()) as usize + 8).next_multiple_of(1 << pools);
        let out_n = (n << ups) >> pools;
        let b = rf::rf_empirical(prefix, &[n, n], &[out_n / 2, out_n / 2], seed)?;
        out.push(Some(b.extent()));
    }
    Ok(out)
}

fn cmd_rf(a: &RfArgs) -> Result<String> {
    let cfg = model_config(&a.variant, a.config.as_ref(), 2)?;
    let levels = a.levels.unwrap_or(cfg.levels);
    if levels == 0 || levels > 8 {
        return Err(Error::validation(format!("levels must lie in 1..=8, got {levels}")));
    }
    let mut s = String::new();
    for (mode, layers) in rf_stacks(cfg.variant, levels, a.k) {
        let rec = rf::rf_exact(&layers);
        let emp = if a.empirical {
            Some(empirical_prefixes(&layers, a.seed)?)
        } else {
            None
        };
        s.push_str(&format!("{} encoder, {} levels, k={}\n", mode.name(), levels, a.k));
        s.push_str(&rf::format_table(&rec, emp.as_deref()));
        s.push('\n');
    }
    Ok(s)
}

/// Reference totals from the literature, for context in `param-count`.
pub const REFERENCE_TOTALS: [(&str, &str); 4] = [
    ("SegNet", "12.5M"),
    ("U-Net", "3.1M"),
    ("U-Net++", "9.0M"),
    ("KiU-Net", "0.29M"),
];

fn cmd_count(a: &CountArgs) -> Result<String> {
    let cfg = model_config(&a.variant, a.config.as_ref(), a.dims)?;
    let count = param_count(&cfg)?;
    let kiunet = param_count(&ModelConfig {
        variant: Variant::Kiunet,
        ..cfg.clone()
    })?
    .total;
    let baseline =
        param_count(&ModelConfig::new(cfg.dims, Variant::UcSk).with_channels(&[64, 128, 256, 512, 1024]))?.total;
    let mut s = format!("{} total {}\n", cfg.variant, count.total);
    for (g, n) in &count.groups {
        s.push_str(&format!("  {g:<14} {n:>10}\n"));
    }
    s.push_str(&format!("KIUNET (same widths) total {kiunet}\n"));
    s.push_str(&format!("UC_SK 5 levels 64..1024 total {baseline}\n"));
    s.push_str("reference:");
    for (name, v) in REFERENCE_TOTALS {
        s.push_str(&format!(" {name} {v}"));
    }
    s.push('\n');
    Ok(s)
}

/// Runs one parsed command; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData(a) => {
            let p = GenParams {
                n: a.n,
                n_test: a.n_test,
                dims: a.dims,
                size: a.size,
                depth: a.depth.unwrap_or(a.size),
                seed: a.seed,
                large_prob: a.large_prob,
                small_min: a.small_min,
                small_max: a.small_max,
                blur_sigma: a.blur,
                noise: a.noise,
                multiclass: a.multiclass,
                allow_empty: a.allow_empty,
                divisor: 1 << a.levels,
            };
            let m = generate_synthetic(&p, &a.out)?;
            println!(
                "wrote {} samples to {}",
                m.entries.len(),
                a.out.join("manifest.tsv").display()
            );
        }
        Command::Train(a) => {
            let mut cfg = TrainConfig::load(&a.config)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = a.lr {
                cfg.lr = lr;
            }
            if let Some(c) = a.checkpoint_every {
                cfg.checkpoint_every = c;
            }
            let o = cmd_train(&cfg, &a.manifest, &a.out, &mut |r| {
                let val = r.val_dice.map(|v| format!(" val dice {v:.4}")).unwrap_or_default();
                eprintln!(
                    "epoch {:>4} loss {:.6} train dice {:.4}{val} ({:.1}s)",
                    r.epoch, r.train_loss, r.train_dice, r.seconds
                );
                std::ops::ControlFlow::Continue(())
            })?;
            if let Some(r) = o.log.rows.last() {
                let val = r.val_dice.map(|v| format!(" val dice {v:.4}")).unwrap_or_default();
                println!(
                    "epoch {} train loss {:.6} train dice {:.4}{val}",
                    r.epoch, r.train_loss, r.train_dice
                );
            }
        }
        Command::Eval(a) => {
            let cfg = TrainConfig::load(&a.config)?.model;
            let split = split_arg(a.split.as_deref())?.unwrap_or(Split::Test);
            let o = cmd_eval(&cfg, &a.checkpoint, &a.manifest, split, &a.out)?;
            let agg = crate::metrics::aggregate(&o.rows);
            println!(
                "{} rows, mean dice {:.6}; wrote {}",
                o.rows.len(),
                agg.dice,
                o.metrics_csv.display()
            );
            if !o.small.is_empty() {
                let s = crate::metrics::aggregate(&o.small);
                println!(
                    "small-structure subset: {} rows, mean dice {:.6}",
                    o.small.len(),
                    s.dice
                );
            }
        }
        Command::Predict(a) => {
            let cfg = TrainConfig::load(&a.config)?.model;
            let written = cmd_predict(&cfg, &a.checkpoint, &a.manifest, split_arg(a.split.as_deref())?, &a.out)?;
            println!("wrote {} predictions to {}", written.len(), a.out.display());
        }
        Command::AnalyzeRf(a) => emit(&cmd_rf(&a)?, a.out.as_ref())?,
        Command::ParamCount(a) => emit(&cmd_count(&a)?, None)?,
        Command::Gradcheck(a) => {
            let reports = gradcheck_suite(a.seed)?;
            let mut s = String::new();
            for r in &reports {
                s.push_str(&format!(
                    "{:<20} coords {:>4}  max_rel_err {:.3e}  {}\n",
                    r.name,
                    r.coords,
                    r.max_rel_err,
                    if r.pass { "ok" } else { "FAIL" }
                ));
            }
            emit(&s, a.out.as_ref())?;
            if reports.iter().any(|r| !r.pass) {
                return Ok(2);
            }
        }
    }
    Ok(0)
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    crate::heap::retain_freed_memory();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
