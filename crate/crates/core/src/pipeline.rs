//! Manifest-level stages: extraction, training, scoring with correction,
//! threshold sweeps and evaluation.
//!
//! Per-image work runs on the current rayon pool and is collected in
//! manifest order, so outputs do not depend on the number of threads. Use
//! [`with_threads`] to run a stage on a pool of a given size.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    train_gbdt, train_logistic, Classifier, Dataset, GbdtConfig, GbdtParams, LogisticConfig, MetaModel,
    TrainReport,
};
use crate::correction::{correct_mask, sweep_threshold, CorrectionAction, SweepImage, SweepRow};
use crate::error::{Error, Result};
use crate::eval::{delta_miou_report, evaluate_segments, EvalReport};
use crate::features::{aggregate_segment_features, uncertainty_grids, FeatureSetKind, FeatureSetSpec};
use crate::geometry::{decompose, SegmentDecomposition, SegmentId};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::maps::{read_mask, write_mask, Grid, SegmentationMask};
use crate::quality::{image_miou, segment_qualities, ImageQuality};
use crate::records::{FeatureTable, SegmentRecord};
use crate::uncertainty::UncertaintyHeatmaps;

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(Error::Config("thread count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Feature set of a manifest: gradient columns are included when every
/// entry has a feature tensor.
pub fn manifest_feature_spec(manifest: &DatasetManifest, kind: FeatureSetKind) -> Result<FeatureSetSpec> {
    let with = manifest.entries.iter().filter(|e| e.features_path.is_some()).count();
    if with != 0 && with != manifest.entries.len() {
        return Err(Error::Validation(format!(
            "{with} of {} entries have feature tensors; gradient features need all or none",
            manifest.entries.len()
        )));
    }
    Ok(FeatureSetSpec::new(kind, manifest.num_classes, with > 0))
}

/// Everything derived from one image before scoring.
#[derive(Debug, Clone)]
pub struct ImageAnalysis {
    pub image_id: String,
    pub pred: SegmentationMask,
    pub gt: Option<SegmentationMask>,
    pub decomp: SegmentDecomposition,
    /// One per predicted segment, in segment id order.
    pub records: Vec<SegmentRecord>,
}

/// Heatmaps, decomposition, segment features and, with ground truth,
/// segment quality of one manifest entry.
pub fn analyze_image(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    spec: &FeatureSetSpec,
    tau_p: f64,
) -> Result<ImageAnalysis> {
    let data = manifest.load_entry(entry)?;
    if data.features.is_some() != spec.has_gradient {
        return Err(Error::Validation(format!(
            "{}: feature set {} gradient features but the entry {} a feature tensor",
            entry.image_id,
            if spec.has_gradient { "needs" } else { "excludes" },
            if data.features.is_some() { "has" } else { "lacks" }
        )));
    }
    let heatmaps = UncertaintyHeatmaps::compute(&data.probs, data.features.as_ref())?;
    let grids = uncertainty_grids(&heatmaps);
    let decomp = decompose(&data.pred, manifest.background_class);
    let image_pixels = data.pred.num_pixels();
    let mut records = decomp
        .segments
        .iter()
        .map(|seg| {
            Ok(SegmentRecord {
                image_id: entry.image_id.clone(),
                segment_id: seg.id,
                predicted_class: seg.class,
                pixel_count: seg.len(),
                image_pixels,
                features: aggregate_segment_features(&grids, seg, spec)?,
                precision_p: None,
                iou: None,
                iou_adj: None,
                target_low_quality: None,
                uncertainty_score: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(gt) = &data.gt {
        let gt_decomp = decompose(gt, manifest.background_class);
        for (r, q) in records
            .iter_mut()
            .zip(segment_qualities(&data.pred, &decomp, gt, &gt_decomp))
        {
            r.set_quality(q, tau_p);
        }
    }
    Ok(ImageAnalysis {
        image_id: entry.image_id.clone(),
        pred: data.pred,
        gt: data.gt,
        decomp,
        records,
    })
}

/// One feature row per predicted segment of every image, in manifest order.
/// Quality columns are filled when the manifest has ground truth.
pub fn extract_table(manifest: &DatasetManifest, kind: FeatureSetKind, tau_p: f64) -> Result<FeatureTable> {
    let spec = manifest_feature_spec(manifest, kind)?;
    let per_image: Vec<Vec<SegmentRecord>> = manifest
        .entries
        .par_iter()
        .map(|e| analyze_image(manifest, e, &spec, tau_p).map(|a| a.records))
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::new(spec.columns);
    table.records = per_image.into_iter().flatten().collect();
    Ok(table)
}

/// Feature set `kind` as laid out in an extracted table; the table may hold
/// a superset of its columns.
pub fn table_feature_spec(table: &FeatureTable, kind: FeatureSetKind) -> Result<FeatureSetSpec> {
    let has_gradient = table.columns.iter().any(|c| c == "mean_gradient_norm");
    let num_classes = table
        .columns
        .iter()
        .filter(|c| c.strip_prefix("class_").is_some_and(|k| k.parse::<usize>().is_ok()))
        .count();
    let spec = FeatureSetSpec::new(kind, num_classes, has_gradient);
    if let Some(missing) = spec.columns.iter().find(|c| !table.columns.contains(c)) {
        return Err(Error::Validation(format!(
            "feature table lacks column {missing:?} of the {kind} feature set"
        )));
    }
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Gbdt,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "gbdt" => Ok(ModelKind::Gbdt),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected logistic or gbdt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub model: ModelKind,
    pub grid: Vec<GbdtParams>,
    pub folds: usize,
    pub seed: u64,
    pub logistic: LogisticConfig,
    pub gbdt: GbdtConfig,
    pub tau_p: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            model: ModelKind::Gbdt,
            grid: crate::classifier::default_grid(),
            folds: 5,
            seed: 0,
            logistic: LogisticConfig::default(),
            gbdt: GbdtConfig::default(),
            tau_p: crate::quality::DEFAULT_PRECISION_THRESHOLD,
        }
    }
}

/// Trains a meta-model on the labelled records. The report is only
/// produced by the grid search of boosted trees.
pub fn train_model(
    records: &[SegmentRecord],
    spec: &FeatureSetSpec,
    options: &TrainOptions,
) -> Result<(MetaModel, Option<TrainReport>)> {
    let data = Dataset::from_records(records, spec)?;
    let (classifier, report) = match options.model {
        ModelKind::Logistic => (Classifier::Logistic(train_logistic(&data, &options.logistic)?.0), None),
        ModelKind::Gbdt => {
            let (m, r) = train_gbdt(&data, &options.grid, options.folds, &options.gbdt, options.seed)?;
            (Classifier::Gbdt(m), Some(r))
        }
    };
    Ok((MetaModel::new(spec.clone(), options.tau_p, classifier)?, report))
}

/// A scored and corrected image.
#[derive(Debug, Clone)]
pub struct CorrectedImage {
    pub analysis: ImageAnalysis,
    /// Segment score on each segment's pixels, 0 on background.
    pub segment_uncertainty: Grid<f64>,
    pub corrected: SegmentationMask,
    pub actions: Vec<CorrectionAction>,
}

fn check_model_fits(manifest: &DatasetManifest, model: &MetaModel) -> Result<()> {
    let expected = manifest_feature_spec(manifest, model.feature_set.name)?;
    if expected.columns != model.feature_set.columns {
        return Err(Error::Validation(format!(
            "model expects {} feature columns ({} classes, gradient {}), manifest yields {} ({} classes, gradient {})",
            model.feature_set.len(),
            model.feature_set.num_classes,
            model.feature_set.has_gradient,
            expected.len(),
            expected.num_classes,
            expected.has_gradient
        )));
    }
    Ok(())
}

fn score_image(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    model: &MetaModel,
) -> Result<(ImageAnalysis, BTreeMap<SegmentId, f64>)> {
    let mut analysis = analyze_image(manifest, entry, &model.feature_set, model.tau_p)?;
    model.score_records(&mut analysis.records)?;
    let scores = analysis
        .records
        .iter()
        .map(|r| (r.segment_id, r.uncertainty_score.unwrap_or_default()))
        .collect();
    Ok((analysis, scores))
}

pub fn score_and_correct_image(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    model: &MetaModel,
    tau: f64,
) -> Result<CorrectedImage> {
    let (analysis, scores) = score_image(manifest, entry, model)?;
    let mut heat = Grid::filled(analysis.pred.height(), analysis.pred.width(), 0.0);
    for seg in &analysis.decomp.segments {
        for &i in &seg.pixels {
            heat.data[i] = scores[&seg.id];
        }
    }
    let outcome = correct_mask(&analysis.pred, &analysis.decomp, &scores, tau, manifest.background_class)?;
    Ok(CorrectedImage {
        analysis,
        segment_uncertainty: heat,
        corrected: outcome.corrected_mask,
        actions: outcome.actions,
    })
}

pub fn segment_uncertainty_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}_segment_uncertainty.npy"))
}

pub fn corrected_mask_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}_corrected.png"))
}

pub fn actions_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}_actions.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLog {
    pub image_id: String,
    pub tau: f64,
    pub actions: Vec<CorrectionAction>,
}

/// Scores and corrects every image, writing per image the segment
/// uncertainty map, the corrected mask and the action log into `out_dir`.
/// Returns the scored feature table.
pub fn score_and_correct(
    manifest: &DatasetManifest,
    model: &MetaModel,
    tau: f64,
    out_dir: &Path,
) -> Result<FeatureTable> {
    check_model_fits(manifest, model)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let per_image: Vec<Vec<SegmentRecord>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let img = score_and_correct_image(manifest, e, model, tau)?;
            img.segment_uncertainty
                .write_npy(segment_uncertainty_path(out_dir, &e.image_id))?;
            write_mask(corrected_mask_path(out_dir, &e.image_id), &img.corrected)?;
            let log = ActionLog {
                image_id: e.image_id.clone(),
                tau,
                actions: img.actions,
            };
            let path = actions_path(out_dir, &e.image_id);
            let text = serde_json::to_string_pretty(&log)
                .map_err(|err| Error::Format(format!("action log: {err}")))?;
            std::fs::write(&path, text + "\n").map_err(|err| Error::io(&path, err))?;
            Ok(img.analysis.records)
        })
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::new(model.feature_set.columns.clone());
    table.records = per_image.into_iter().flatten().collect();
    Ok(table)
}

fn require_ground_truth(manifest: &DatasetManifest) -> Result<()> {
    if !manifest.has_ground_truth() {
        let missing: Vec<&str> = manifest
            .entries
            .iter()
            .filter(|e| e.gt_mask_path.is_none())
            .map(|e| e.image_id.as_str())
            .collect();
        return Err(Error::Validation(if manifest.entries.is_empty() {
            "manifest has no entries".to_string()
        } else {
            format!("ground truth missing for: {}", missing.join(", "))
        }));
    }
    Ok(())
}

/// Mean mIoU change per threshold on a manifest with ground truth.
pub fn sweep(manifest: &DatasetManifest, model: &MetaModel, taus: &[f64]) -> Result<Vec<SweepRow>> {
    check_model_fits(manifest, model)?;
    require_ground_truth(manifest)?;
    let images: Vec<SweepImage> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let (a, scores) = score_image(manifest, e, model)?;
            Ok(SweepImage {
                gt: a.gt.expect("ground truth checked"),
                mask: a.pred,
                decomp: a.decomp,
                scores,
            })
        })
        .collect::<Result<_>>()?;
    sweep_threshold(&images, taus, manifest.background_class)
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions<'a> {
    /// Directory with `{id}_corrected.png` masks.
    pub corrected_dir: Option<&'a Path>,
    /// Table with scores and quality columns.
    pub scored: Option<&'a FeatureTable>,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

/// Before/after mIoU of every image, in manifest order.
pub fn image_qualities(
    manifest: &DatasetManifest,
    corrected_dir: &Path,
) -> Result<Vec<(ImageQuality, ImageQuality)>> {
    require_ground_truth(manifest)?;
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let data = manifest.load_entry(e)?;
            let gt = data.gt.expect("ground truth checked");
            let after = read_mask(corrected_mask_path(corrected_dir, &e.image_id), manifest.num_classes)?;
            Ok((image_miou(&data.pred, &gt)?, image_miou(&after, &gt)?))
        })
        .collect()
}

pub fn evaluate(manifest: &DatasetManifest, options: &EvaluateOptions) -> Result<EvalReport> {
    require_ground_truth(manifest)?;
    let segments = match options.scored {
        Some(table) => {
            if !table.has_scores() || !table.has_quality() {
                return Err(Error::Validation(
                    "evaluation table needs uncertainty scores and quality columns on every row".into(),
                ));
            }
            let scores: Vec<f64> = table.records.iter().filter_map(|r| r.uncertainty_score).collect();
            let qualities: Vec<_> = table.records.iter().filter_map(|r| r.quality()).collect();
            let labels = table.labels()?;
            Some(evaluate_segments(
                &scores,
                &qualities,
                &labels,
                options.bootstrap_resamples,
                options.seed,
            )?)
        }
        None => None,
    };
    let correction = match options.corrected_dir {
        Some(dir) => {
            let pairs = image_qualities(manifest, dir)?;
            let (before, after): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cats: Vec<BTreeMap<String, String>> =
                manifest.entries.iter().map(|e| e.categories.clone()).collect();
            Some(delta_miou_report(
                &before,
                &after,
                manifest.has_categories().then_some(cats.as_slice()),
            )?)
        }
        None => None,
    };
    Ok(EvalReport { segments, correction })
}
