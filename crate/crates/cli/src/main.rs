use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use evanet_core::autodiff::{read_checkpoint, GradCheckConfig};
use evanet_core::gradsuite::run_suite;
use evanet_core::loss::{case_histogram, BorderPairs, LossScheme};
use evanet_core::pipeline::{
    audit, evaluate, load_regions, predict_region, train, DatasetConfig, KeyValueConfig, Model, TrainConfig, CONFIG_FILE,
};
use evanet_core::raster::{read_grid, write_flood_ppm, write_grid, ElevationMap, Grid, LabelMap, DRY, FLOOD, UNLABELED};
use evanet_core::terrain::{gen_dataset, propagate_dry, propagate_flood, PitfillThreshold, Region, Role};
use evanet_core::Error;
use serde_json::json;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "evanet", version, about = "Elevation-guided flood segmentation toolkit")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Ce,
    CeEva,
    Eva,
}

impl From<Scheme> for LossScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Ce => LossScheme::Ce,
            Scheme::CeEva => LossScheme::CeEva,
            Scheme::Eva => LossScheme::Eva,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Border {
    Include,
    Exclude,
}

impl From<Border> for BorderPairs {
    fn from(b: Border) -> Self {
        match b {
            Border::Include => BorderPairs::Include,
            Border::Exclude => BorderPairs::Exclude,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Label {
    Flood,
    Dry,
}

#[derive(Clone, Copy, ValueEnum)]
enum Threshold {
    Seed,
    PathMonotone,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (regions plus manifest.json).
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the dataset's train regions.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        loss: Option<Scheme>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint; epoch numbering carries on.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict a region and write prob.fgrd, pred.fgrd and floodmap.ppm.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        region: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training config; defaults to config.txt beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Accuracy, precision, recall and F1 over labeled pixels, as JSON.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Adds the violation rate to the report.
        #[arg(long)]
        elev: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "include")]
        border_pairs: Border,
    },
    /// Pair-case histogram and violation rate of a prediction, as JSON.
    Audit {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        elev: PathBuf,
        #[arg(long, value_enum, default_value = "include")]
        border_pairs: Border,
    },
    /// Grow a flood or dry set from one pixel and write it as an int8 mask.
    Propagate {
        #[arg(long)]
        elev: PathBuf,
        /// Seed pixel as `row,col`.
        #[arg(long)]
        seed: String,
        #[arg(long, value_enum)]
        label: Label,
        #[arg(long, value_enum, default_value = "seed")]
        threshold: Threshold,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every operator, the ERC layer, a small network and the losses.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-case counts of labeled pixel pairs, as JSON.
    Histogram {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        elev: PathBuf,
        #[arg(long, value_enum, default_value = "include")]
        border_pairs: Border,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The context chain joined by `: `, skipping causes a message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain().map(|c| c.to_string()) {
        if out.is_empty() {
            out = cause;
        } else if !out.ends_with(&cause) {
            out = format!("{out}: {cause}");
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Numeric(_) | Error::NonFinite(_)) => EXIT_NUMERIC,
        Some(Error::Config(_) | Error::UnknownKey(_) | Error::BadValue { .. }) => EXIT_USAGE,
        Some(_) => EXIT_DATA,
        None if e.downcast_ref::<Usage>().is_some() => EXIT_USAGE,
        None => EXIT_DATA,
    }
}

/// A flag combination clap cannot reject on its own.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn labels(path: &Path) -> Result<LabelMap> {
    let g = read_grid(path)?.into_typed::<i8>()?;
    LabelMap::new(g).with_context(|| format!("reading labels from {}", path.display()))
}

fn elevation(path: &Path) -> Result<ElevationMap> {
    let g = read_grid(path)?.into_typed::<f32>()?;
    ElevationMap::new(g).with_context(|| format!("reading elevation from {}", path.display()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_pixel(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(',')
        .and_then(|(r, c)| Some((r.trim().parse().ok()?, c.trim().parse().ok()?)));
    parsed.ok_or_else(|| Usage(format!("--seed expects `row,col`, got `{s}`")).into())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut cfg = match config {
                Some(p) => DatasetConfig::load(&p).with_context(|| format!("config {}", p.display()))?,
                None => DatasetConfig::default(),
            };
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            let manifest = gen_dataset(&cfg.synth, cfg.n_train, cfg.n_test, &out)?;
            print_json(&json!({
                "out": out,
                "regions": manifest.regions,
            }))
        }
        Command::Train {
            data,
            config,
            out,
            loss,
            epochs,
            lr,
            seed,
            resume,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p).with_context(|| format!("config {}", p.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = loss {
                cfg.loss.scheme = s.into();
            }
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate()?;
            let regions = load_regions(&data, Role::Train)?;
            let outcome = train(&cfg, &regions, &out, resume.as_deref())?;
            for s in &outcome.history {
                println!("epoch {} mean_loss {}", s.epoch, s.mean_loss);
            }
            println!("checkpoint {}", outcome.final_checkpoint.display());
            Ok(())
        }
        Command::Predict {
            ckpt,
            region,
            out,
            config,
        } => {
            let config = config.unwrap_or_else(|| ckpt.with_file_name(CONFIG_FILE));
            let cfg = TrainConfig::load(&config).with_context(|| format!("config {}", config.display()))?;
            let weights = read_checkpoint(&ckpt).with_context(|| format!("checkpoint {}", ckpt.display()))?;
            let model = Model::from_checkpoint(&cfg, &weights)?;
            let region = Region::load(&region)?;
            let pred = predict_region(&model, &region)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_grid(&pred.prob, out.join("prob.fgrd"))?;
            write_grid(pred.hard.grid(), out.join("pred.fgrd"))?;
            write_flood_ppm(&pred.flood_prob(), out.join("floodmap.ppm"))?;
            let flooded = pred.hard.values().iter().filter(|&&v| v == FLOOD).count();
            print_json(&json!({
                "width": region.width(),
                "height": region.height(),
                "flood_fraction": flooded as f64 / pred.hard.values().len() as f64,
            }))
        }
        Command::Eval {
            pred,
            gt,
            elev,
            border_pairs,
        } => {
            let (pred, gt) = (labels(&pred)?, labels(&gt)?);
            let report = match elev {
                Some(e) => audit(&pred, &gt, &elevation(&e)?, border_pairs.into())?
                    .metrics
                    .ok_or(Error::NoLabeledPixels)?,
                None => evaluate(&pred, &gt)?,
            };
            print_json(&report)
        }
        Command::Audit {
            pred,
            gt,
            elev,
            border_pairs,
        } => print_json(&audit(&labels(&pred)?, &labels(&gt)?, &elevation(&elev)?, border_pairs.into())?),
        Command::Propagate {
            elev,
            seed,
            label,
            threshold,
            out,
        } => {
            let h = elevation(&elev)?;
            let (row, col) = parse_pixel(&seed)?;
            let (set, value) = match label {
                Label::Flood => {
                    let thr = match threshold {
                        Threshold::Seed => PitfillThreshold::Seed,
                        Threshold::PathMonotone => PitfillThreshold::PathMonotone,
                    };
                    (propagate_flood(&h, (row, col), thr)?, FLOOD)
                }
                Label::Dry => (propagate_dry(&h, (row, col))?, DRY),
            };
            let mask = set.iter().map(|&s| if s { value } else { UNLABELED }).collect();
            write_grid(&Grid::new(h.width(), h.height(), 1, mask)?, &out)?;
            print_json(&json!({
                "seed": [row, col],
                "label": if value == FLOOD { "flood" } else { "dry" },
                "pixels": set.iter().filter(|&&s| s).count(),
            }))
        }
        Command::Gradcheck { eps, tol, seed } => {
            let cfg = GradCheckConfig {
                eps,
                tol,
                seed,
                ..GradCheckConfig::default()
            };
            let results = run_suite(&cfg)?;
            println!("{:<26} {:>8} {:>6} {:>11}  result", "check", "checked", "kinks", "max_rel");
            for r in &results {
                println!(
                    "{:<26} {:>8} {:>6} {:>11.3e}  {}",
                    r.name,
                    r.report.checked(),
                    r.report.kinks(),
                    r.report.max_rel_err(),
                    if r.report.passed() { "PASS" } else { "FAIL" }
                );
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.report.passed()).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                bail!(Error::Numeric(format!("gradient check failed: {}", failed.join(", "))));
            }
            Ok(())
        }
        Command::Histogram { gt, elev, border_pairs } => {
            print_json(&case_histogram(&labels(&gt)?, &elevation(&elev)?, border_pairs.into())?)
        }
    }
}
