//! Subcommand bodies. Each returns the library error so `main` can map it
//! to an exit status.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gaitfrail::config::{ExperimentConfig, EFFECTIVE_CONFIG_FILE, SEED_ENV};
use gaitfrail::data::{load_manifest, DatasetManifest, FrailtyLabel};
use gaitfrail::error::{Error, Result};
use gaitfrail::interpret::{centroids_csv, default_layer, grad_cam, render_overlay};
use gaitfrail::metrics::{aggregate_folds, write_predictions, EvalReport};
use gaitfrail::model::GaitModel;
use gaitfrail::pipeline::sample_eval_clip;
use gaitfrail::splits::{make_folds, verify_no_leakage, Fold, FoldPlan};
use gaitfrail::synth::{generate_cohort, CohortConfig, MANIFEST_FILE};
use gaitfrail::trainer::{
    evaluate as evaluate_model, fold_report, load_sequences, report_table, train_fold, GridEntry, CHECKPOINT_FILE,
};
use walkdir::WalkDir;

use crate::{EvaluateArgs, GradcamArgs, ReportArgs, RunArgs, SplitArgs, SynthArgs};

pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SYNTH_CONFIG_FILE: &str = "synth_config.txt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = CohortConfig {
        n_per_class: args.n_per_class,
        frames: args.frames,
        height: args.height,
        width: args.width,
        seed: args.seed,
        noise: args.noise,
    };
    if cfg.n_per_class == 0 || cfg.frames == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::Config("synth sizes must all be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Config(format!("noise {} is outside [0, 1]", cfg.noise)));
    }
    let manifest = generate_cohort(&cfg, &args.out)?;
    let text = format!(
        "n_per_class = {}\nframes = {}\nheight = {}\nwidth = {}\nseed = {}\nnoise = {}\n",
        cfg.n_per_class, cfg.frames, cfg.height, cfg.width, cfg.seed, cfg.noise
    );
    write_text(&args.out.join(SYNTH_CONFIG_FILE), &text)?;
    println!(
        "wrote {} participants to {}",
        manifest.entries.len(),
        args.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

/// Path of the effective configuration written next to a fold file.
pub fn split_config_path(fold_file: &Path) -> PathBuf {
    let mut name = fold_file.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    fold_file.with_file_name(name)
}

pub fn split(args: &SplitArgs) -> Result<()> {
    if args.k < 2 {
        return Err(Error::Config(format!("k must be at least 2 (got {})", args.k)));
    }
    let manifest = load_manifest(&args.manifest)?;
    let plan = make_folds(&manifest, args.k, args.seed)?;
    let leakage = verify_no_leakage(&plan, &manifest);
    if !leakage.passed() {
        let issues: Vec<String> = leakage.issues.iter().map(ToString::to_string).collect();
        return Err(Error::Validation(format!("fold plan leaks: {}", issues.join("; "))));
    }
    plan.write(&args.out)?;
    let text = format!(
        "manifest = {}\nk = {}\nseed = {}\n",
        args.manifest.display(),
        args.k,
        args.seed
    );
    write_text(&split_config_path(&args.out), &text)?;
    for (i, counts) in plan.class_counts.iter().enumerate() {
        println!("fold {i}: train {:?} test {:?}", counts.train, counts.test);
    }
    Ok(())
}

fn overrides(args: &RunArgs) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut flag = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            out.push((key.to_string(), v));
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    flag("dataset", path(&args.dataset));
    flag("fold_plan", path(&args.fold_plan));
    flag("output", path(&args.output));
    flag("k", args.k.map(|v| v.to_string()));
    flag("split_seed", args.split_seed.map(|v| v.to_string()));
    flag("fold", args.fold.map(|v| v.to_string()));
    flag("backbone", args.backbone.clone());
    flag("scale", args.scale.clone());
    flag("freeze", args.freeze.clone());
    flag("class_weighting", args.class_weighting.map(|v| v.to_string()));
    flag("seed", args.seed.map(|v| v.to_string()));
    flag("total_iterations", args.iterations.map(|v| v.to_string()));
    flag("eval_interval", args.eval_interval.map(|v| v.to_string()));
    Ok(out)
}

/// Resolves and validates the layered experiment configuration.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = ExperimentConfig::layered(args.config.as_deref(), env_seed.as_deref(), &overrides(args)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

/// Loads the manifest and the configured fold of the plan.
fn load_fold(cfg: &ExperimentConfig) -> Result<(DatasetManifest, Fold)> {
    let manifest = load_manifest(required(&cfg.dataset, "dataset")?)?;
    let plan = match &cfg.fold_plan {
        Some(path) => FoldPlan::read(path, &manifest)?,
        None => make_folds(&manifest, cfg.k, cfg.split_seed)?,
    };
    let fold = plan
        .folds
        .get(cfg.fold)
        .cloned()
        .ok_or_else(|| Error::Config(format!("fold {} is outside 0..{}", cfg.fold, plan.folds.len())))?;
    Ok((manifest, fold))
}

fn experiment_name(cfg: &ExperimentConfig) -> Result<String> {
    Ok(GridEntry {
        model: cfg.model_config()?,
        freeze: cfg.freeze_config()?,
        class_weighting: cfg.train.class_weighting,
    }
    .name())
}

fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<GaitModel<f32>> {
    let mut model = GaitModel::<f32>::new(cfg.model_config()?, cfg.train.seed)?;
    model.load(checkpoint)?;
    Ok(model)
}

pub fn train(args: &RunArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let out = required(&cfg.output, "output")?.to_path_buf();
    let (manifest, fold) = load_fold(&cfg)?;
    write_text(&out.join(EFFECTIVE_CONFIG_FILE), &cfg.to_text())?;
    let name = experiment_name(&cfg)?;
    let mut progress = |p: &gaitfrail::trainer::EvalPoint| {
        eprintln!(
            "iteration={} micro_auc={:.4} weighted_kappa={:.4} ce={:.4} triplet={:.4} total={:.4}",
            p.iteration, p.micro_auc, p.weighted_kappa, p.loss.ce, p.loss.triplet, p.loss.total
        );
    };
    let outcome = train_fold(
        &fold,
        &manifest,
        &cfg.train,
        &cfg.model_config()?,
        &cfg.freeze_config()?,
        Some(&out),
        &mut progress,
    )?;
    write_predictions(&out.join(PREDICTIONS_FILE), &outcome.predictions)?;
    let report = fold_report(&name, cfg.fold, &outcome)?;
    report.write(&out.join(REPORT_FILE))?;
    println!(
        "{name} fold {}: micro_auc={:.4} weighted_kappa={:.4}",
        cfg.fold, report.micro_auc, report.weighted_kappa
    );
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = resolve_config(&args.run)?;
    let base = cfg.output.clone();
    let checkpoint = match (&args.checkpoint, &base) {
        (Some(c), _) => c.clone(),
        (None, Some(b)) => b.join(CHECKPOINT_FILE),
        (None, None) => return Err(Error::Config("set --checkpoint or `output`".into())),
    };
    let out = match (&args.out, &base) {
        (Some(o), _) => o.clone(),
        (None, Some(b)) => b.join("eval"),
        (None, None) => return Err(Error::Config("set --out or `output`".into())),
    };
    let (manifest, fold) = load_fold(&cfg)?;
    let model = load_model(&cfg, &checkpoint)?;
    let test = load_sequences(&manifest, &fold.test)?;
    let preds = evaluate_model(&model, &test, cfg.train.eval_clip_length, cfg.train.batch_size)?;
    write_text(&out.join(EFFECTIVE_CONFIG_FILE), &cfg.to_text())?;
    write_predictions(&out.join(PREDICTIONS_FILE), &preds)?;
    let report = EvalReport::from_predictions(&experiment_name(&cfg)?, cfg.fold, &preds)?;
    report.write(&out.join(REPORT_FILE))?;
    println!(
        "fold {}: micro_auc={:.4} weighted_kappa={:.4}",
        cfg.fold, report.micro_auc, report.weighted_kappa
    );
    Ok(())
}

/// Collects sealed reports under `dirs`. Files that are missing their
/// checksum or fail to parse are skipped, so in-progress folds are ignored.
pub fn collect_reports(dirs: &[PathBuf]) -> (Vec<EvalReport>, Vec<(PathBuf, String)>) {
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        let mut paths: Vec<PathBuf> = WalkDir::new(dir)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file() && e.file_name() == REPORT_FILE)
            .map(|e| e.into_path())
            .collect();
        paths.sort();
        for path in paths {
            match EvalReport::read(&path) {
                Ok(r) => reports.push(r),
                Err(e) => skipped.push((path, e.to_string())),
            }
        }
    }
    (reports, skipped)
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let (reports, skipped) = collect_reports(&args.dirs);
    for (path, why) in &skipped {
        eprintln!("skipping {}: {why}", path.display());
    }
    let mut by_experiment: BTreeMap<String, BTreeMap<usize, EvalReport>> = BTreeMap::new();
    for r in reports {
        by_experiment.entry(r.experiment.clone()).or_default().insert(r.fold, r);
    }
    if by_experiment.is_empty() {
        return Err(Error::Validation("no completed reports found".into()));
    }
    let mut rows = Vec::new();
    for (name, folds) in by_experiment {
        let reports: Vec<EvalReport> = folds.into_values().collect();
        match aggregate_folds(&reports) {
            Ok(summary) => rows.push((name, summary)),
            Err(e) => eprintln!("skipping {name}: {e}"),
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation("no experiment has at least two completed folds".into()));
    }
    let table = report_table(&rows);
    print!("{table}");
    if let Some(path) = &args.out {
        write_text(path, &table)?;
    }
    Ok(())
}

pub fn gradcam(args: &GradcamArgs) -> Result<()> {
    let cfg = resolve_config(&args.run)?;
    let base = cfg.output.clone();
    let checkpoint = match (&args.checkpoint, &base) {
        (Some(c), _) => c.clone(),
        (None, Some(b)) => b.join(CHECKPOINT_FILE),
        (None, None) => return Err(Error::Config("set --checkpoint or `output`".into())),
    };
    let out = match (&args.out, &base) {
        (Some(o), _) => o.clone(),
        (None, Some(b)) => b.join("gradcam").join(&args.participant),
        (None, None) => return Err(Error::Config("set --out or `output`".into())),
    };
    let manifest = load_manifest(required(&cfg.dataset, "dataset")?)?;
    let entry = manifest
        .entry(&args.participant)
        .ok_or_else(|| Error::Validation(format!("participant `{}` is not in the manifest", args.participant)))?;
    let target = match &args.target {
        Some(t) => t.parse::<FrailtyLabel>().map_err(|e| Error::Config(e.to_string()))?,
        None => entry.label,
    };
    let model = load_model(&cfg, &checkpoint)?;
    let layer = match &args.layer {
        Some(l) => l.clone(),
        None => default_layer(&model).to_string(),
    };
    let seq = manifest.load_sequence(entry)?;
    let clip = sample_eval_clip(&seq, cfg.train.eval_clip_length)?;
    let cam = grad_cam(&model, &clip, target, &layer)?;
    let written = render_overlay(&clip, &cam, &out)?;
    write_text(&out.join("centroids.csv"), &centroids_csv(&cam))?;
    write_text(&out.join(EFFECTIVE_CONFIG_FILE), &cfg.to_text())?;
    println!(
        "wrote {} overlays for {} (target {target}, layer {layer}) to {}",
        written.len(),
        args.participant,
        out.display()
    );
    Ok(())
}
