//! Command-line interface: train, infer, eval, crosstest.

use clap::{Parser, Subcommand};
use densematch::error::{Error, Result};
use densematch::eval::{pooled_errors, threshold_sweep, CrossEvalMatrix, DEFAULT_THRESHOLDS};
use densematch::gray::GrayImage;
use densematch::io;
use densematch::matcher::DisparityMap;
use densematch::network::{NetworkConfig, NetworkWeights};
use densematch::pipeline::{run_pipeline, PipelineConfig};
use densematch::refine::Region;
use densematch::trainer::{save_checkpoint, train, TrainConfig, TrainingPair, TrainingSet};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "densematch",
    version,
    about = "Stereo disparity estimation with a learned matching cost"
)]
struct Cli {
    /// key=value settings file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train feature-network weights on a directory of stereo pairs.
    Train(TrainArgs),
    /// Estimate a disparity map for one stereo pair.
    Infer(InferArgs),
    /// Score predicted disparity maps against ground truth.
    Eval(EvalArgs),
    /// Evaluate several weights files across several datasets.
    Crosstest(CrossArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Directory of left images (.png or .pgm).
    #[arg(long, value_name = "DIR")]
    left_dir: Option<PathBuf>,
    /// Directory of right images, matched to left by file stem.
    #[arg(long, value_name = "DIR")]
    right_dir: Option<PathBuf>,
    /// Directory of ground-truth disparities (.pfm or 16-bit .png).
    #[arg(long, value_name = "DIR")]
    gt_dir: Option<PathBuf>,
    /// Where to write the trained weights.
    #[arg(long, value_name = "FILE")]
    out_weights: Option<PathBuf>,
    /// Training iterations (one batch each).
    #[arg(long)]
    iters: Option<usize>,
    /// Patch triples per batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f32>,
    /// Seed for initialization and sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Patch side length (odd).
    #[arg(long)]
    patch: Option<usize>,
    /// Convolution layers in the feature network.
    #[arg(long)]
    layers: Option<usize>,
    /// Feature maps per layer.
    #[arg(long)]
    features: Option<usize>,
    /// Hinge margin.
    #[arg(long)]
    margin: Option<f32>,
    /// Write checkpoints every N iterations (0 disables).
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<usize>,
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct InferArgs {
    /// Trained weights file.
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// Left image.
    #[arg(long, value_name = "FILE")]
    left: Option<PathBuf>,
    /// Right image.
    #[arg(long, value_name = "FILE")]
    right: Option<PathBuf>,
    /// Number of disparity hypotheses.
    #[arg(long)]
    max_disp: Option<usize>,
    /// Output disparity map (.pfm or 16-bit .png).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Directory for intermediate outputs (volumes, per-view winners, mask).
    #[arg(long, value_name = "DIR")]
    dump_intermediates: Option<PathBuf>,
    /// Skip the median and guided filters.
    #[arg(long)]
    no_filter: bool,
    /// Largest left/right disagreement treated as consistent.
    #[arg(long)]
    lr_threshold: Option<f32>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Directory of predicted disparity maps.
    #[arg(long, value_name = "DIR")]
    pred_dir: Option<PathBuf>,
    /// Directory of ground-truth maps, matched by file stem.
    #[arg(long, value_name = "DIR")]
    gt_dir: Option<PathBuf>,
    /// Comma-separated error thresholds in pixels.
    #[arg(long)]
    thresholds: Option<String>,
    /// Write the results as CSV to this file.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CrossArgs {
    /// Comma-separated list of weights files.
    #[arg(long, value_name = "FILES")]
    weights: Option<String>,
    /// Comma-separated list of dataset directories.
    #[arg(long, value_name = "DIRS")]
    datasets: Option<String>,
    /// Error threshold for the matrix cells, in pixels.
    #[arg(long)]
    threshold: Option<f32>,
    /// Disparity hypotheses when a dataset.cfg does not set max_disp.
    #[arg(long)]
    max_disp: Option<usize>,
    /// Write the matrix as CSV to this file.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Largest left/right disagreement treated as consistent.
    #[arg(long)]
    lr_threshold: Option<f32>,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; everything else is
            // a configuration problem.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Format { .. } => 2,
        Error::Config(_) => 3,
        Error::Degenerate(_)
        | Error::SamplingExhausted { .. }
        | Error::TrainingAborted { .. } => 4,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(path) => io::read_config_file(path)?,
        None => BTreeMap::new(),
    };
    match cli.command {
        Command::Train(args) => run_train(args, &settings),
        Command::Infer(args) => run_infer(args, &settings),
        Command::Eval(args) => run_eval(args, &settings),
        Command::Crosstest(args) => run_crosstest(args, &settings),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Prefixes bare I/O errors with the file they came from, keeping the kind.
fn annotate<T>(result: Result<T>, path: &Path) -> Result<T> {
    result.map_err(|e| match e {
        Error::Io(io) => {
            let kind = io.kind();
            Error::Io(std::io::Error::new(
                kind,
                format!("{}: {io}", path.display()),
            ))
        }
        other => other,
    })
}

/// Flag value if given, else the config-file value under the flag's name,
/// else the default; no default means the setting is required.
fn resolve<T: FromStr>(
    cli: Option<T>,
    settings: &BTreeMap<String, String>,
    key: &str,
    default: Option<T>,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = cli {
        return Ok(v);
    }
    if let Some(text) = settings.get(key) {
        return text.parse().map_err(|e| {
            Error::Config(format!("config key {key}: cannot parse {text:?}: {e}"))
        });
    }
    default.ok_or_else(|| {
        Error::Config(format!("missing required setting: --{key} or config key {key}"))
    })
}

fn parse_thresholds(text: &str) -> Result<Vec<f32>> {
    let values: Vec<f32> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f32>()
                .map_err(|_| Error::Config(format!("bad threshold {t:?}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config(format!(
            "thresholds must be non-negative and finite: {text:?}"
        )));
    }
    Ok(values)
}

fn split_list(text: &str, what: &str) -> Result<Vec<PathBuf>> {
    let items: Vec<PathBuf> = text
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(PathBuf::from)
        .collect();
    if items.is_empty() {
        return Err(Error::Config(format!("empty {what} list")));
    }
    Ok(items)
}

fn run_train(args: TrainArgs, settings: &BTreeMap<String, String>) -> Result<()> {
    let left_dir: PathBuf = resolve(args.left_dir, settings, "left-dir", None)?;
    let right_dir: PathBuf = resolve(args.right_dir, settings, "right-dir", None)?;
    let gt_dir: PathBuf = resolve(args.gt_dir, settings, "gt-dir", None)?;
    let out_weights: PathBuf = resolve(args.out_weights, settings, "out-weights", None)?;

    let defaults = TrainConfig::default();
    let config = TrainConfig {
        iterations: resolve(args.iters, settings, "iters", Some(defaults.iterations))?,
        batch_size: resolve(args.batch, settings, "batch", Some(defaults.batch_size))?,
        learning_rate: resolve(args.lr, settings, "lr", Some(defaults.learning_rate))?,
        seed: resolve(args.seed, settings, "seed", Some(defaults.seed))?,
        patch_size: resolve(args.patch, settings, "patch", Some(defaults.patch_size))?,
        margin: resolve(args.margin, settings, "margin", Some(defaults.margin))?,
        checkpoint_interval: resolve(
            args.checkpoint_every,
            settings,
            "checkpoint-every",
            Some(0),
        )?,
        checkpoint_dir: match args.checkpoint_dir {
            Some(dir) => Some(dir),
            None => settings.get("checkpoint-dir").map(PathBuf::from),
        },
        ..defaults
    };
    let network = NetworkConfig {
        num_layers: resolve(args.layers, settings, "layers", Some(5))?,
        feature_maps: resolve(args.features, settings, "features", Some(64))?,
    };

    let lefts = io::files_by_stem(&left_dir, &["png", "pgm"])?;
    if lefts.is_empty() {
        return Err(Error::Config(format!(
            "no images under {}",
            left_dir.display()
        )));
    }
    let rights = io::files_by_stem(&right_dir, &["png", "pgm"])?;
    let gts = io::files_by_stem(&gt_dir, &["pfm", "png"])?;
    let mut pairs = Vec::with_capacity(lefts.len());
    for (stem, left_path) in &lefts {
        let right_path = rights
            .get(stem)
            .ok_or_else(|| Error::Config(format!("no right image for stem {stem:?}")))?;
        let gt_path = gts
            .get(stem)
            .ok_or_else(|| Error::Config(format!("no ground truth for stem {stem:?}")))?;
        pairs.push(TrainingPair::new(
            annotate(io::load_gray_image(left_path), left_path)?,
            annotate(io::load_gray_image(right_path), right_path)?,
            annotate(io::load_disparity(gt_path), gt_path)?,
        )?);
    }
    println!(
        "training on {} pairs, {} iterations, batch {}",
        pairs.len(),
        config.iterations,
        config.batch_size
    );
    let set = TrainingSet::new(pairs)?;
    let outcome = train(&set, network, &config)?;
    let final_loss = *outcome.losses.last().expect("at least one iteration");
    ensure_parent(&out_weights)?;
    save_checkpoint(
        &outcome.weights,
        &out_weights,
        &config,
        config.iterations,
        final_loss,
    )?;
    println!(
        "final loss {final_loss:.6}; weights written to {}",
        out_weights.display()
    );
    Ok(())
}

fn mask_to_image(mask: &densematch::refine::RegionMask) -> GrayImage {
    let values = mask
        .data()
        .iter()
        .map(|r| if *r == Region::Foreground { 255.0 } else { 0.0 })
        .collect();
    GrayImage::new(mask.width(), mask.height(), values).expect("mask dimensions are valid")
}

fn run_infer(args: InferArgs, settings: &BTreeMap<String, String>) -> Result<()> {
    let weights_path: PathBuf = resolve(args.weights, settings, "weights", None)?;
    let left_path: PathBuf = resolve(args.left, settings, "left", None)?;
    let right_path: PathBuf = resolve(args.right, settings, "right", None)?;
    let out_path: PathBuf = resolve(args.out, settings, "out", None)?;
    let max_disp: usize = resolve(args.max_disp, settings, "max-disp", Some(64))?;
    let lr_threshold: f32 = resolve(
        args.lr_threshold,
        settings,
        "lr-threshold",
        Some(densematch::refine::DEFAULT_LR_THRESHOLD),
    )?;

    let weights = annotate(NetworkWeights::load(&weights_path), &weights_path)?;
    let left = annotate(io::load_gray_image(&left_path), &left_path)?;
    let right = annotate(io::load_gray_image(&right_path), &right_path)?;
    let mut config = PipelineConfig::new(max_disp);
    config.matching.filter = !args.no_filter;
    config.lr_threshold = lr_threshold;

    let out = run_pipeline(&left, &right, &weights, &config)?;
    ensure_parent(&out_path)?;
    io::save_disparity(&out_path, &out.refined)?;
    println!(
        "disparity map ({}×{}, {} hypotheses) written to {}",
        out.refined.width(),
        out.refined.height(),
        max_disp,
        out_path.display()
    );

    if let Some(dir) = args.dump_intermediates {
        std::fs::create_dir_all(&dir)?;
        io::write_pfm(&dir.join("wta_left.pfm"), &out.wta_left)?;
        io::write_pfm(&dir.join("wta_right.pfm"), &out.wta_right)?;
        io::write_pfm(
            &dir.join("consistency_checked.pfm"),
            &out.consistency_checked,
        )?;
        let valid = GrayImage::new(
            out.consistency_checked.width(),
            out.consistency_checked.height(),
            out.consistency_checked
                .data()
                .iter()
                .map(|d| if d.is_finite() && *d >= 0.0 { 255.0 } else { 0.0 })
                .collect(),
        )
        .expect("map dimensions are valid");
        io::write_pgm(&dir.join("consistency_valid.pgm"), &valid)?;
        io::write_pgm(&dir.join("region_mask.pgm"), &mask_to_image(&out.mask))?;
        io::write_cost_volume(&dir.join("cost_left.fccv"), &out.left_volume)?;
        io::write_cost_volume(&dir.join("cost_right.fccv"), &out.right_volume)?;
        println!("intermediates written to {}", dir.display());
    }
    Ok(())
}

fn load_eval_pairs(
    pred_dir: &Path,
    gt_dir: &Path,
) -> Result<Vec<(String, DisparityMap, DisparityMap)>> {
    let preds = io::files_by_stem(pred_dir, &["pfm", "png"])?;
    if preds.is_empty() {
        return Err(Error::Config(format!(
            "no disparity maps under {}",
            pred_dir.display()
        )));
    }
    let gts = io::files_by_stem(gt_dir, &["pfm", "png"])?;
    let mut out = Vec::with_capacity(preds.len());
    for (stem, pred_path) in &preds {
        let gt_path = gts
            .get(stem)
            .ok_or_else(|| Error::Config(format!("no ground truth for stem {stem:?}")))?;
        out.push((
            stem.clone(),
            annotate(io::load_disparity(pred_path), pred_path)?,
            annotate(io::load_disparity(gt_path), gt_path)?,
        ));
    }
    Ok(out)
}

fn run_eval(args: EvalArgs, settings: &BTreeMap<String, String>) -> Result<()> {
    let pred_dir: PathBuf = resolve(args.pred_dir, settings, "pred-dir", None)?;
    let gt_dir: PathBuf = resolve(args.gt_dir, settings, "gt-dir", None)?;
    let thresholds = match resolve::<String>(args.thresholds, settings, "thresholds", Some(String::new()))? {
        s if s.is_empty() => DEFAULT_THRESHOLDS.to_vec(),
        s => parse_thresholds(&s)?,
    };

    let pairs = load_eval_pairs(&pred_dir, &gt_dir)?;
    let mut csv = String::from("file,threshold,bad_count,valid_count,bad_percent\n");
    let mut text = format!("{:20}", "file");
    for t in &thresholds {
        let _ = write!(text, " {t:>6}px");
    }
    text.push('\n');

    for (stem, pred, gt) in &pairs {
        let sweep = threshold_sweep(pred, gt, &thresholds)?;
        let _ = write!(text, "{stem:20}");
        for r in &sweep {
            let _ = write!(text, " {:>7.3}%", r.bad_percent);
            let _ = writeln!(
                csv,
                "{stem},{},{},{},{:.4}",
                r.threshold, r.bad_count, r.valid_count, r.bad_percent
            );
        }
        text.push('\n');
    }
    let refs: Vec<(&DisparityMap, &DisparityMap)> =
        pairs.iter().map(|(_, p, g)| (p, g)).collect();
    let pooled = pooled_errors(&refs, &thresholds)?;
    let _ = write!(text, "{:20}", "ALL");
    for r in &pooled {
        let _ = write!(text, " {:>7.3}%", r.bad_percent);
        let _ = writeln!(
            csv,
            "ALL,{},{},{},{:.4}",
            r.threshold, r.bad_count, r.valid_count, r.bad_percent
        );
    }
    text.push('\n');

    print!("{text}");
    if let Some(report) = args.report.or_else(|| settings.get("report").map(PathBuf::from)) {
        ensure_parent(&report)?;
        std::fs::write(&report, &csv)?;
        println!("report written to {}", report.display());
    }
    Ok(())
}

fn run_crosstest(args: CrossArgs, settings: &BTreeMap<String, String>) -> Result<()> {
    let weights_list: String = resolve(args.weights, settings, "weights", None)?;
    let datasets_list: String = resolve(args.datasets, settings, "datasets", None)?;
    let threshold: f32 = resolve(args.threshold, settings, "threshold", Some(2.0))?;
    let default_max_disp: usize = resolve(args.max_disp, settings, "max-disp", Some(64))?;
    let lr_threshold: f32 = resolve(
        args.lr_threshold,
        settings,
        "lr-threshold",
        Some(densematch::refine::DEFAULT_LR_THRESHOLD),
    )?;

    let weight_paths = split_list(&weights_list, "weights")?;
    let dataset_paths = split_list(&datasets_list, "datasets")?;
    let display_name = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };

    let layouts: Vec<io::DatasetLayout> = dataset_paths
        .iter()
        .map(|p| io::scan_dataset(p))
        .collect::<Result<_>>()?;
    let all_weights: Vec<NetworkWeights> = weight_paths
        .iter()
        .map(|p| annotate(NetworkWeights::load(p), p))
        .collect::<Result<_>>()?;

    let mut matrix = CrossEvalMatrix::new(
        weight_paths.iter().map(|p| display_name(p)).collect(),
        layouts.iter().map(|l| l.name.clone()).collect(),
    );
    for (wi, weights) in all_weights.iter().enumerate() {
        for (di, layout) in layouts.iter().enumerate() {
            let max_disp = match layout.config.get("max_disp") {
                Some(text) => text.parse().map_err(|_| {
                    Error::Config(format!(
                        "dataset {}: bad max_disp {text:?}",
                        layout.name
                    ))
                })?,
                None => default_max_disp,
            };
            let mut config = PipelineConfig::new(max_disp);
            config.lr_threshold = lr_threshold;
            let mut results = Vec::new();
            for entry in &layout.entries {
                let Some(gt_path) = &entry.ground_truth else {
                    continue;
                };
                let left = annotate(io::load_gray_image(&entry.left), &entry.left)?;
                let right = annotate(io::load_gray_image(&entry.right), &entry.right)?;
                let gt = annotate(io::load_disparity(gt_path), gt_path)?;
                let out = run_pipeline(&left, &right, weights, &config)?;
                results.push((out.refined, gt));
            }
            if results.is_empty() {
                return Err(Error::Degenerate(format!(
                    "dataset {} has no pairs with ground truth",
                    layout.name
                )));
            }
            let refs: Vec<(&DisparityMap, &DisparityMap)> =
                results.iter().map(|(p, g)| (p, g)).collect();
            let pooled = pooled_errors(&refs, &[threshold])?;
            matrix.set(wi, di, pooled[0].bad_percent);
            log::info!(
                "{} on {}: {:.4}% over {} pairs",
                display_name(&weight_paths[wi]),
                layout.name,
                pooled[0].bad_percent,
                results.len()
            );
        }
    }
    print!("{}", matrix.to_text());
    if let Some(report) = args.report.or_else(|| settings.get("report").map(PathBuf::from)) {
        ensure_parent(&report)?;
        std::fs::write(&report, matrix.to_csv())?;
        println!("report written to {}", report.display());
    }
    Ok(())
}
