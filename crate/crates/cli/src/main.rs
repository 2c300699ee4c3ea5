//! `segqual` command-line pipeline: generate, extract, train, score and
//! correct, evaluate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use segqual::classifier::{cross_validate_logistic, Dataset, GbdtParams, LogisticConfig};
use segqual::correction::{best_tau, default_taus, SweepRow};
use segqual::pipeline::{self, EvaluateOptions, ModelKind, TrainOptions};
use segqual::synth::generate_corpus;
use segqual::{DatasetManifest, Error, EvalReport, FeatureSetKind, FeatureTable, MetaModel, SynthConfig, UncertaintyHeatmaps};

#[derive(Parser)]
#[command(name = "segqual", version, about = "Segment-level quality estimation and mask correction")]
struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, env = "SEGQUAL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with manifest.
    Generate(GenerateArgs),
    /// Write the pixel uncertainty heatmaps of each image as NPY.
    Heatmap(HeatmapArgs),
    /// Extract one feature row per predicted segment.
    Extract(ExtractArgs),
    /// Train a meta-classifier on an extracted table.
    Train(TrainArgs),
    /// Score segments and write corrected masks.
    ScoreCorrect(ScoreCorrectArgs),
    /// Mean mIoU change per correction threshold.
    Sweep(SweepArgs),
    /// Evaluate scores and corrections against ground truth.
    Evaluate(EvaluateArgs),
    /// Render SVG plots from a saved evaluation report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, env = "SEGQUAL_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON generator configuration; its seed is replaced by --seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long, env = "SEGQUAL_MANIFEST")]
    manifest: PathBuf,
    /// Only this image.
    #[arg(long)]
    image_id: Option<String>,
    /// Output directory.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, env = "SEGQUAL_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "SEGQUAL_FEATURE_SET", default_value = "all")]
    feature_set: FeatureSetKind,
    /// Precision threshold separating low-quality segments.
    #[arg(long, default_value_t = 0.5)]
    tau_p: f64,
    /// Table path, `.csv` or `.jsonl`.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Extracted feature table with quality columns.
    #[arg(long)]
    table: PathBuf,
    #[arg(long, env = "SEGQUAL_FEATURE_SET", default_value = "reduced")]
    feature_set: FeatureSetKind,
    #[arg(long, default_value = "gbdt")]
    model_kind: ModelKind,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, env = "SEGQUAL_SEED", default_value_t = 0)]
    seed: u64,
    /// L2 penalty of logistic regression.
    #[arg(long)]
    lambda: Option<f64>,
    /// JSON array of boosted-tree hyperparameters; overrides the list flags.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 4])]
    max_depth: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 300])]
    num_trees: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3])]
    learning_rate: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 5.0])]
    min_child_weight: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 1.0])]
    subsample: Vec<f64>,
    /// Model JSON path; the training report goes next to it.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreCorrectArgs {
    #[arg(long, env = "SEGQUAL_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "SEGQUAL_MODEL")]
    model: PathBuf,
    #[arg(long, env = "SEGQUAL_TAU", default_value_t = 0.5)]
    tau: f64,
    /// Output directory.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, env = "SEGQUAL_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "SEGQUAL_MODEL")]
    model: PathBuf,
    /// Thresholds; defaults to 0, 0.05, ..., 1.
    #[arg(long, value_delimiter = ',')]
    taus: Vec<f64>,
    /// Optional JSON output.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, env = "SEGQUAL_MANIFEST")]
    manifest: PathBuf,
    /// Directory of corrected masks written by score-correct.
    #[arg(long)]
    corrected: Option<PathBuf>,
    /// Scored table written by score-correct.
    #[arg(long)]
    scored: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, env = "SEGQUAL_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.json` written by evaluate.
    #[arg(long)]
    report: PathBuf,
    /// Output directory.
    #[arg(long, env = "SEGQUAL_OUT")]
    out: PathBuf,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn check_tau(name: &str, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(config_error(format!("{name} must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(s) = a.image_size {
        cfg.image_size = s;
    }
    if let Some(n) = a.num_classes {
        cfg.num_classes = n;
    }
    let manifest = generate_corpus(&cfg, a.count, &a.out)?;
    println!(
        "wrote {} images to {}",
        manifest.entries.len(),
        a.out.join("manifest.json").display()
    );
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| a.image_id.as_ref().is_none_or(|id| &e.image_id == id))
        .collect();
    if let (Some(id), true) = (&a.image_id, entries.is_empty()) {
        return Err(Error::Validation(format!("image {id:?} is not in the manifest")).into());
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for e in entries {
        let data = manifest.load_entry(e)?;
        let h = UncertaintyHeatmaps::compute(&data.probs, data.features.as_ref())?;
        let path = |name: &str| a.out.join(format!("{}_{name}.npy", e.image_id));
        h.one_minus_max.write_npy(path("one_minus_max_prob"))?;
        h.entropy.write_npy(path("entropy"))?;
        h.margin.write_npy(path("margin"))?;
        if let Some(g) = &h.gradient_norm {
            g.write_npy(path("gradient_norm"))?;
        }
    }
    println!("heatmaps written to {}", a.out.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    check_tau("--tau-p", a.tau_p)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    if manifest.entries.is_empty() {
        eprintln!("warning: manifest {} has no entries; writing an empty table", a.manifest.display());
    }
    let table = pipeline::extract_table(&manifest, a.feature_set, a.tau_p)?;
    table.save(&a.out)?;
    println!("{} segments from {} images -> {}", table.records.len(), manifest.entries.len(), a.out.display());
    Ok(())
}

fn train_grid(a: &TrainArgs) -> Result<Vec<GbdtParams>> {
    if let Some(path) = &a.grid {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())));
    }
    let mut grid = Vec::new();
    for &max_depth in &a.max_depth {
        for &num_trees in &a.num_trees {
            for &learning_rate in &a.learning_rate {
                for &min_child_weight in &a.min_child_weight {
                    for &subsample in &a.subsample {
                        grid.push(GbdtParams {
                            max_depth,
                            num_trees,
                            learning_rate,
                            min_child_weight,
                            subsample,
                        });
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn report_path(model_path: &Path) -> PathBuf {
    let stem = model_path.file_stem().unwrap_or_default().to_string_lossy();
    model_path.with_file_name(format!("{stem}_train_report.json"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let table = FeatureTable::load(&a.table)?;
    if !table.has_quality() {
        return Err(Error::Validation(format!("{} has no quality columns", a.table.display())).into());
    }
    let spec = pipeline::table_feature_spec(&table, a.feature_set)?;
    let mut logistic = LogisticConfig::default();
    if let Some(l) = a.lambda {
        logistic.lambda = l;
    }
    let options = TrainOptions {
        model: a.model_kind,
        grid: train_grid(&a)?,
        folds: a.folds,
        seed: a.seed,
        logistic,
        ..TrainOptions::default()
    };
    let (model, report) = pipeline::train_model(&table.records, &spec, &options)?;
    let report_file = report_path(&a.out);
    match report {
        Some(r) => {
            let best = &r.cv_grid[r.chosen_index];
            println!("chosen hyperparameters: {}", serde_json::to_string(&r.chosen)?);
            println!(
                "CV AUROC: {:.4} +- {:.4} ({} folds, {} grid points)",
                best.mean_auroc,
                best.std_auroc,
                r.folds,
                r.cv_grid.len()
            );
            write_json(&report_file, &r)?;
        }
        None => {
            let data = Dataset::from_records(&table.records, &spec)?;
            let cv = cross_validate_logistic(&data, a.folds, &logistic, a.seed)?;
            println!("chosen hyperparameters: {{\"lambda\":{}}}", logistic.lambda);
            println!("CV AUROC: {:.4} +- {:.4} ({} folds)", cv.mean_auroc, cv.std_auroc, a.folds);
            write_json(&report_file, &cv)?;
        }
    }
    model.save(&a.out)?;
    println!("model -> {}, report -> {}", a.out.display(), report_file.display());
    Ok(())
}

fn score_correct(a: ScoreCorrectArgs) -> Result<()> {
    check_tau("--tau", a.tau)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let model = MetaModel::load(&a.model)?;
    let table = pipeline::score_and_correct(&manifest, &model, a.tau, &a.out)?;
    let scored = a.out.join("scored.csv");
    table.save(&scored)?;
    let corrected = table
        .records
        .iter()
        .filter(|r| r.uncertainty_score.is_some_and(|s| s > a.tau))
        .count();
    println!(
        "{} of {} segments above tau {} -> {}",
        corrected,
        table.records.len(),
        a.tau,
        a.out.display()
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let taus = if a.taus.is_empty() { default_taus() } else { a.taus.clone() };
    for &t in &taus {
        check_tau("--taus", t)?;
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let model = MetaModel::load(&a.model)?;
    let rows: Vec<SweepRow> = pipeline::sweep(&manifest, &model, &taus)?;
    println!("tau\tmean_delta_miou\tfraction_degraded\tmean_wrong_classes");
    for r in &rows {
        println!(
            "{:.3}\t{:+.4}\t{:.3}\t{:.3}",
            r.tau, r.mean_delta_miou, r.fraction_degraded, r.mean_wrong_classes
        );
    }
    let best = best_tau(&rows);
    if let Some(t) = best {
        println!("best tau: {t}");
    }
    if let Some(out) = &a.out {
        write_json(out, &serde_json::json!({ "rows": rows, "best_tau": best }))?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.corrected.is_none() && a.scored.is_none() {
        return Err(config_error("evaluate needs --corrected, --scored or both"));
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let scored = a.scored.as_deref().map(FeatureTable::load).transpose()?;
    let report = pipeline::evaluate(
        &manifest,
        &EvaluateOptions {
            corrected_dir: a.corrected.as_deref(),
            scored: scored.as_ref(),
            bootstrap_resamples: a.bootstrap,
            seed: a.seed,
        },
    )?;
    let mut written = report.write_dir(&a.out)?;
    written.extend(segqual::plot::write_report_plots(&report, &a.out)?);
    if let Some(s) = &report.segments {
        println!("AUROC {:.4} +- {:.4}", s.auroc.value, s.auroc.std);
    }
    if let Some(c) = &report.correction {
        println!(
            "mIoU change {:+.4} (std {:.4}), degraded {:.1}%",
            c.delta_miou.mean,
            c.delta_miou.std,
            100.0 * c.delta_miou.fraction_negative
        );
    }
    println!("{} files -> {}", written.len(), a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", a.report.display())))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let written = segqual::plot::write_report_plots(&report, &a.out)?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    pipeline::with_threads(threads, || match cli.command {
        Command::Generate(a) => generate(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::ScoreCorrect(a) => score_correct(a),
        Command::Sweep(a) => sweep(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    })?
}

/// 0 success, 1 invalid input, 2 I/O failure, 3 bad configuration.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => 2,
                Error::Config(_) => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if cause.is::<serde_json::Error>() {
            return 1;
        }
    }
    1
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
