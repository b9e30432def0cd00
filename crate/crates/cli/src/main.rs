//! Command-line interface for the cross-spectral stereo toolkit.
//!
//! Subcommands: `prepare`, `synth`, `train`, `eval`, `infer`, `report`.
//! Every run resolves one flat TOML config (flags win over file values)
//! and writes the resolved copy next to its outputs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use xstereo_core::config::{Overrides, RunConfig};
use xstereo_core::data::{
    extract_patch, load_dataset, load_fold_spec, DatasetManifest, FoldCache, FoldEntry,
    ManifestCache,
};
use xstereo_core::error::{Error, Result};
use xstereo_core::eval::{
    cross_validate, estimate, evaluate_manifest, predictions_csv, sweep, EvalSettings, FoldReport,
};
use xstereo_core::model::{load_checkpoint, save_checkpoint};
use xstereo_core::synth::generate_dataset;
use xstereo_core::train::{train, TrainOptions};
use xstereo_core::viz::{render_overlay, render_recall_plot, report_table};

#[derive(Parser)]
#[command(
    name = "xstereo",
    version,
    about = "Visible/thermal patch-based sparse stereo toolkit"
)]
struct Cli {
    /// Run configuration file (TOML, flat keys).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (1 = fully deterministic).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Allow writing into a non-empty target directory.
    #[arg(long, global = true, action = ArgAction::SetTrue)]
    force: bool,

    /// Override the config fold id.
    #[arg(long, global = true, value_name = "ID")]
    fold: Option<String>,

    /// Override the fusion mode: both|correlation_only|concatenation_only.
    #[arg(long, global = true, value_name = "MODE")]
    fusion_mode: Option<String>,

    /// Override the extractor variant: scales|stages|x1|x2|x3.
    #[arg(long, global = true, value_name = "VARIANT")]
    variant: Option<String>,

    /// Override the sweep mode: windowed|wide.
    #[arg(long, global = true, value_name = "MODE")]
    sweep_mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset layout, compute statistics and fold counts.
    Prepare,
    /// Generate a synthetic dataset at the configured dataset root.
    Synth,
    /// Train a model on the configured fold.
    Train,
    /// Evaluate a checkpoint on the fold's test split.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Estimate the disparity of a single point.
    Infer {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        frame: String,
        #[arg(long)]
        x: usize,
        #[arg(long)]
        y: usize,
    },
    /// Aggregate fold reports into one table and plot.
    Report {
        /// fold_report.json files, one per fold.
        #[arg(value_name = "REPORT", required = true)]
        reports: Vec<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            if e.kind() == clap::error::ErrorKind::DisplayHelp
                || e.kind() == clap::error::ErrorKind::DisplayVersion
            {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| Error::Usage("--config is required".into()))?;
    let mut config = RunConfig::load(&config_path)?;
    config.apply(&Overrides {
        seed: cli.seed,
        workers: cli.workers,
        fold_id: cli.fold.clone(),
        fusion_mode: cli.fusion_mode.clone(),
        variant: cli.variant.clone(),
        sweep_mode: cli.sweep_mode.clone(),
    });
    if config.workers == 0 {
        return Err(Error::Usage("--workers must be at least 1".into()));
    }
    // fail fast on typo'd enum values, whatever the subcommand
    config.variant()?;
    config.fusion_mode()?;
    config.sweep_mode()?;

    match &cli.command {
        Command::Prepare => prepare(&config),
        Command::Synth => synth(&config, cli.force),
        Command::Train => train_cmd(&config),
        Command::Eval { checkpoint } => eval_cmd(&config, checkpoint),
        Command::Infer {
            checkpoint,
            frame,
            x,
            y,
        } => infer_cmd(&config, checkpoint, frame, *x, *y),
        Command::Report { reports } => report_cmd(&config, reports),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_resolved_config(config: &RunConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join("resolved_config.toml"), &config.to_toml())
}

fn find_fold<'a>(folds: &'a [FoldEntry], id: &str) -> Result<&'a FoldEntry> {
    folds
        .iter()
        .find(|f| f.id == id)
        .ok_or_else(|| Error::FoldSpec(format!("fold '{id}' not found in fold file")))
}

fn load_and_split(
    config: &RunConfig,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    let manifest = load_dataset(
        Path::new(&config.dataset_root),
        config.patch_size,
        config.d_max,
    )?;
    let folds = load_fold_spec(Path::new(&config.fold_file))?;
    let fold = find_fold(&folds, &config.fold_id)?;
    manifest.split_folds(fold, config.augment, config.patch_size)
}

fn prepare(config: &RunConfig) -> Result<()> {
    let manifest = load_dataset(
        Path::new(&config.dataset_root),
        config.patch_size,
        config.d_max,
    )?;
    let folds = load_fold_spec(Path::new(&config.fold_file))?;
    let mut cache = ManifestCache {
        root: config.dataset_root.clone(),
        n_frames: manifest.frames.len(),
        n_points: manifest.points.len(),
        rejected_points: manifest.rejected_points,
        folds: Vec::new(),
    };
    println!(
        "dataset {}: {} frames, {} points ({} rejected for |d| > {})",
        config.dataset_root,
        cache.n_frames,
        cache.n_points,
        cache.rejected_points,
        config.d_max / 2
    );
    for fold in &folds {
        let original_train_points = manifest
            .points
            .iter()
            .filter(|p| fold.train.contains(&p.frame_id))
            .count();
        let (train_m, val_m, test_m) =
            manifest.split_folds(fold, config.augment, config.patch_size)?;
        println!(
            "fold {}: train {} frames, {} points -> {} augmented ({} neighbors dropped); val {} frames, {} points; test {} frames, {} points",
            fold.id,
            train_m.frames.len(),
            original_train_points,
            train_m.points.len(),
            train_m.dropped_neighbors,
            val_m.frames.len(),
            val_m.points.len(),
            test_m.frames.len(),
            test_m.points.len(),
        );
        cache.folds.push(FoldCache {
            fold_id: fold.id.clone(),
            train_frames: train_m.frames.len(),
            val_frames: val_m.frames.len(),
            test_frames: test_m.frames.len(),
            train_points: original_train_points,
            val_points: val_m.points.len(),
            test_points: test_m.points.len(),
            augmented_train_points: train_m.points.len(),
            dropped_neighbors: train_m.dropped_neighbors,
            stats: train_m.stats.clone(),
        });
    }
    let out_dir = PathBuf::from(&config.out_dir);
    ensure_dir(&out_dir)?;
    write_text(&out_dir.join("manifest_cache.toml"), &cache.to_toml())?;
    write_resolved_config(config, &out_dir)?;
    println!(
        "manifest cache written to {}",
        out_dir.join("manifest_cache.toml").display()
    );
    Ok(())
}

fn synth(config: &RunConfig, force: bool) -> Result<()> {
    let synth_cfg = config.synth_config()?;
    let root = PathBuf::from(&config.dataset_root);
    if root.exists() {
        let non_empty = std::fs::read_dir(&root)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if non_empty && !force {
            return Err(Error::Usage(format!(
                "target {} is not empty; pass --force to overwrite",
                root.display()
            )));
        }
    }
    ensure_dir(&root)?;
    generate_dataset(&synth_cfg, config.synth_frames, &root)?;
    write_resolved_config(config, &root)?;
    println!(
        "wrote {} synthetic frames ({}x{}, {} shapes/frame, |d| <= {}) to {}",
        config.synth_frames,
        synth_cfg.height,
        synth_cfg.width,
        synth_cfg.shapes_per_frame,
        synth_cfg.max_disparity,
        root.display()
    );
    Ok(())
}

fn train_cmd(config: &RunConfig) -> Result<()> {
    let (train_m, val_m, _test_m) = load_and_split(config)?;
    let extractor_cfg = config.extractor_config()?;
    let head_cfg = config.head_config()?;
    let hyper = config.hyperparams()?;
    let options = TrainOptions {
        fold_id: config.fold_id.clone(),
        workers: config.workers,
        verbose: true,
        ..TrainOptions::default()
    };
    let (ckpt, history) = train(
        &train_m,
        &val_m,
        &extractor_cfg,
        &head_cfg,
        &hyper,
        &options,
    )?;
    let out_dir = PathBuf::from(&config.out_dir);
    ensure_dir(&out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &ckpt)?;
    write_text(&out_dir.join("history.csv"), &history.to_csv())?;
    write_resolved_config(config, &out_dir)?;
    println!(
        "best epoch {} (val recall@3 = {:.4}); checkpoint written to {}",
        history.best_epoch,
        history.best_val_recall3,
        ckpt_path.display()
    );
    Ok(())
}

fn eval_cmd(config: &RunConfig, checkpoint: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.fold_id != config.fold_id {
        return Err(Error::Dataset(format!(
            "checkpoint was trained on fold '{}' but the run requests fold '{}'; pass --fold {}",
            ckpt.fold_id, config.fold_id, ckpt.fold_id
        )));
    }
    let (_train_m, _val_m, test_m) = load_and_split(config)?;
    let settings = EvalSettings {
        d_max: ckpt.d_max,
        fusion_mode: ckpt.fusion_mode,
        sweep_mode: config.sweep_mode()?,
        workers: config.workers,
    };
    let (report, rows) =
        evaluate_manifest(&ckpt.model, &ckpt.stats, &test_m, &ckpt.fold_id, settings)?;
    let out_dir = PathBuf::from(&config.out_dir);
    ensure_dir(&out_dir)?;
    write_text(&out_dir.join("predictions.csv"), &predictions_csv(&rows))?;
    write_text(&out_dir.join("fold_report.json"), &json_string(&report)?)?;
    let aggregate = cross_validate(std::slice::from_ref(&report))?;
    write_text(&out_dir.join("report.txt"), &report_table(&aggregate))?;
    write_resolved_config(config, &out_dir)?;
    if config.eval_overlays {
        let overlay_dir = out_dir.join("overlays");
        ensure_dir(&overlay_dir)?;
        for frame in &test_m.frames {
            let frame_rows: Vec<_> = rows
                .iter()
                .filter(|r| r.frame_id == frame.frame_id)
                .collect();
            if !frame_rows.is_empty() {
                render_overlay(
                    &frame.rgb,
                    &frame_rows,
                    &overlay_dir.join(format!("{}.png", frame.frame_id)),
                )?;
            }
        }
    }
    for (t, r) in report.thresholds.iter().zip(&report.recalls) {
        println!("recall@{t:.0} = {r:.4}");
    }
    println!(
        "predictions written to {}",
        out_dir.join("predictions.csv").display()
    );
    Ok(())
}

fn infer_cmd(config: &RunConfig, checkpoint: &Path, frame: &str, x: usize, y: usize) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let manifest = load_dataset(
        Path::new(&config.dataset_root),
        ckpt.model.extractor_cfg.patch_size,
        ckpt.d_max,
    )?;
    let pair = manifest.frame(frame)?;
    if x >= pair.rgb.width || y >= pair.rgb.height {
        return Err(Error::Dataset(format!(
            "point ({x}, {y}) outside frame '{frame}' ({}x{})",
            pair.rgb.height, pair.rgb.width
        )));
    }
    let p = ckpt.model.extractor_cfg.patch_size;
    let rgb_patch = extract_patch(&pair.rgb, x as i64, y as i64, p, p, &ckpt.stats.rgb);
    let wide = extract_patch(
        &pair.lwir,
        x as i64,
        y as i64,
        p,
        p + ckpt.d_max,
        &ckpt.stats.lwir,
    );
    let sw = sweep(
        &ckpt.model,
        &rgb_patch,
        &wide,
        ckpt.d_max,
        ckpt.fusion_mode,
        config.sweep_mode()?,
    )?;
    let est = estimate(&sw);
    let opt = |v: Option<i32>| v.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
    println!(
        "frame={frame} x={x} y={y} d_corr={} d_concat={} d_hat={}",
        opt(est.d_corr),
        opt(est.d_concat),
        est.d_hat
    );
    Ok(())
}

fn report_cmd(config: &RunConfig, reports: &[PathBuf]) -> Result<()> {
    let mut fold_reports = Vec::with_capacity(reports.len());
    for path in reports {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: FoldReport = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        fold_reports.push(report);
    }
    let aggregate = cross_validate(&fold_reports)?;
    let out_dir = PathBuf::from(&config.out_dir);
    ensure_dir(&out_dir)?;
    write_text(
        &out_dir.join("aggregate_report.json"),
        &json_string(&aggregate)?,
    )?;
    let table = report_table(&aggregate);
    write_text(&out_dir.join("report.txt"), &table)?;
    render_recall_plot(&aggregate, &out_dir.join("recall_plot.png"))?;
    write_resolved_config(config, &out_dir)?;
    print!("{table}");
    println!("aggregate report written to {}", out_dir.display());
    Ok(())
}

fn json_string<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Dataset(format!("serialize: {e}")))
}
