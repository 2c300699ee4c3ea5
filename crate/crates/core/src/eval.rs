//! Evaluation of segment scores and of mask correction.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{ImageQuality, SegmentQuality};
use crate::seeds::derive_seed;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
pub const DEFAULT_QUALITY_BINS: usize = 10;
pub const DELTA_HISTOGRAM_BINS: usize = 40;

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!("score {i} is not finite")));
    }
    Ok(())
}

/// Indices sorted by descending score, ties in input order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half (Mann-Whitney U over mid-ranks).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(format!(
            "AUROC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of positives, doubled to stay in integers.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i + j + 2) / 2
        let mid2 = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += mid2 * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, by descending threshold; a segment is
    /// selected when its score is `>= threshold`.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

/// Step-wise precision/recall for selecting positives by score, with
/// `AP = sum_k (R_k - R_{k-1}) P_k`.
pub fn precision_recall(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    check_inputs(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::Evaluation("precision/recall needs at least one positive".into()));
    }
    let order = descending(scores);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    // sum of (new positives * precision), divided once so a perfect ranking gives exactly 1
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (tp - prev_tp) as f64 * precision;
        prev_tp = tp;
        points.push(PrPoint {
            threshold: t,
            recall,
            precision,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap / total_pos as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Standard deviation over bootstrap resamples.
    pub std: f64,
}

/// Bootstrap standard deviations of AUROC and AP over `resamples` draws with
/// replacement. Resample `b` uses its own seed derived from `seed`, so the
/// result is independent of thread count. Draws lacking a class are skipped.
pub fn bootstrap_std(
    scores: &[f64],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    let n = scores.len();
    let draws: Vec<(Option<f64>, Option<f64>)> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            (
                auroc(&s, &l).ok(),
                precision_recall(&s, &l).ok().map(|c| c.average_precision),
            )
        })
        .collect();
    let std_of = |vals: Vec<f64>| -> f64 {
        if vals.is_empty() {
            return 0.0;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
    };
    Ok((
        std_of(draws.iter().filter_map(|d| d.0).collect()),
        std_of(draws.iter().filter_map(|d| d.1).collect()),
    ))
}

/// Pearson correlation by a single-pass co-moment update. `None` when either
/// side has zero variance or fewer than two points are given.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBin {
    pub center: f64,
    pub mean_precision_p: f64,
    pub mean_iou: f64,
    pub mean_iou_adj: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityCorrelation {
    pub precision_p: Option<f64>,
    pub iou: Option<f64>,
    pub iou_adj: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedQuality {
    /// Equal-width bins on [0, 1]; empty bins are left out.
    pub bins: Vec<QualityBin>,
    pub pearson_rho: QualityCorrelation,
}

/// Mean segment quality per score bin, and the score/quality correlations.
pub fn binned_quality(scores: &[f64], qualities: &[SegmentQuality], bins: usize) -> Result<BinnedQuality> {
    if scores.len() != qualities.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} quality entries",
            scores.len(),
            qualities.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("bin count must be positive".into()));
    }
    let mut acc = vec![(0.0, 0.0, 0.0, 0usize); bins];
    for (&s, q) in scores.iter().zip(qualities) {
        let b = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        acc[b].0 += q.precision_p;
        acc[b].1 += q.iou;
        acc[b].2 += q.iou_adj;
        acc[b].3 += 1;
    }
    let out = acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.3 > 0)
        .map(|(b, &(p, iou, adj, n))| QualityBin {
            center: (b as f64 + 0.5) / bins as f64,
            mean_precision_p: p / n as f64,
            mean_iou: iou / n as f64,
            mean_iou_adj: adj / n as f64,
            count: n,
        })
        .collect();
    let col = |f: fn(&SegmentQuality) -> f64| qualities.iter().map(f).collect::<Vec<f64>>();
    Ok(BinnedQuality {
        bins: out,
        pearson_rho: QualityCorrelation {
            precision_p: pearson(scores, &col(|q| q.precision_p)),
            iou: pearson(scores, &col(|q| q.iou)),
            iou_adj: pearson(scores, &col(|q| q.iou_adj)),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width histogram; values outside the range go to the end bins.
    pub fn new(values: &[f64], lower: f64, upper: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let width = (upper - lower) / bins as f64;
        for &v in values {
            let b = ((v - lower) / width).floor();
            let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Histogram { lower, upper, counts }
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let width = (self.upper - self.lower) / self.counts.len() as f64;
        (self.lower + b as f64 * width, self.lower + (b + 1) as f64 * width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMiou {
    pub mean_before: f64,
    pub mean_after: f64,
    /// Equals `mean_after - mean_before`.
    pub mean: f64,
    pub std: f64,
    pub fraction_negative: f64,
    pub histogram: Histogram,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Per-image counts of predicted classes absent from (wrong) or present in
/// (correct) the ground truth, before and after correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCountStats {
    pub wrong_before: MeanStd,
    pub wrong_after: MeanStd,
    pub correct_before: MeanStd,
    pub correct_after: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub count: usize,
    pub mean_delta_miou: f64,
    pub std_delta_miou: f64,
    pub mean_miou_before: f64,
    pub mean_miou_after: f64,
}

/// Category key, then category value.
pub type CategoryTables = BTreeMap<String, BTreeMap<String, CategoryStat>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMiouReport {
    pub delta_miou: DeltaMiou,
    pub class_counts: ClassCountStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_tables: Option<CategoryTables>,
}

/// Compares per-image quality before and after correction. `categories`,
/// when given, holds each image's category tags.
pub fn delta_miou_report(
    before: &[ImageQuality],
    after: &[ImageQuality],
    categories: Option<&[BTreeMap<String, String>]>,
) -> Result<DeltaMiouReport> {
    if before.len() != after.len() {
        return Err(Error::Validation(format!(
            "{} images before correction but {} after",
            before.len(),
            after.len()
        )));
    }
    if let Some(c) = categories {
        if c.len() != before.len() {
            return Err(Error::Validation(format!(
                "{} category entries for {} images",
                c.len(),
                before.len()
            )));
        }
    }
    let n = before.len();
    let mb: Vec<f64> = before.iter().map(|q| q.miou).collect();
    let ma: Vec<f64> = after.iter().map(|q| q.miou).collect();
    let deltas: Vec<f64> = ma.iter().zip(&mb).map(|(a, b)| a - b).collect();
    let mean_before = MeanStd::of(&mb).mean;
    let mean_after = MeanStd::of(&ma).mean;
    let spread = MeanStd::of(&deltas);
    let negative = deltas.iter().filter(|&&d| d < 0.0).count();
    let delta_miou = DeltaMiou {
        mean_before,
        mean_after,
        mean: mean_after - mean_before,
        std: spread.std,
        fraction_negative: if n == 0 { 0.0 } else { negative as f64 / n as f64 },
        histogram: Histogram::new(&deltas, -1.0, 1.0, DELTA_HISTOGRAM_BINS),
        deltas: deltas.clone(),
    };

    let counts = |qs: &[ImageQuality], f: fn(&ImageQuality) -> usize| {
        MeanStd::of(&qs.iter().map(|q| f(q) as f64).collect::<Vec<_>>())
    };
    let class_counts = ClassCountStats {
        wrong_before: counts(before, |q| q.num_wrong_classes),
        wrong_after: counts(after, |q| q.num_wrong_classes),
        correct_before: counts(before, |q| q.num_correct_classes),
        correct_after: counts(after, |q| q.num_correct_classes),
    };

    let category_tables = categories.filter(|c| c.iter().any(|m| !m.is_empty())).map(|cats| {
        let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
        for (i, tags) in cats.iter().enumerate() {
            for (k, v) in tags {
                groups.entry(k).or_default().entry(v).or_default().push(i);
            }
        }
        groups
            .into_iter()
            .map(|(k, values)| {
                let table = values
                    .into_iter()
                    .map(|(v, idx)| {
                        let pick = |xs: &[f64]| idx.iter().map(|&i| xs[i]).collect::<Vec<f64>>();
                        let d = MeanStd::of(&pick(&deltas));
                        let stat = CategoryStat {
                            count: idx.len(),
                            mean_delta_miou: d.mean,
                            std_delta_miou: d.std,
                            mean_miou_before: MeanStd::of(&pick(&mb)).mean,
                            mean_miou_after: MeanStd::of(&pick(&ma)).mean,
                        };
                        (v.to_string(), stat)
                    })
                    .collect();
                (k.to_string(), table)
            })
            .collect()
    });

    Ok(DeltaMiouReport {
        delta_miou,
        class_counts,
        category_tables,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEvaluation {
    pub num_segments: usize,
    pub num_low_quality: usize,
    pub auroc: Estimate,
    pub average_precision: Estimate,
    pub pr_curve: Vec<PrPoint>,
    pub score_quality_bins: Vec<QualityBin>,
    pub pearson_rho: QualityCorrelation,
}

/// Scores against segment targets: AUROC, AP with bootstrap spreads, the PR
/// curve and the binned score/quality relation.
pub fn evaluate_segments(
    scores: &[f64],
    qualities: &[SegmentQuality],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<SegmentEvaluation> {
    let auc = auroc(scores, labels)?;
    let pr = precision_recall(scores, labels)?;
    let (auc_std, ap_std) = bootstrap_std(scores, labels, resamples, seed)?;
    let binned = binned_quality(scores, qualities, DEFAULT_QUALITY_BINS)?;
    Ok(SegmentEvaluation {
        num_segments: scores.len(),
        num_low_quality: labels.iter().filter(|&&l| l).count(),
        auroc: Estimate {
            value: auc,
            std: auc_std,
        },
        average_precision: Estimate {
            value: pr.average_precision,
            std: ap_std,
        },
        pr_curve: pr.points,
        score_quality_bins: binned.bins,
        pearson_rho: binned.pearson_rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<SegmentEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<DeltaMiouReport>,
}

pub const PR_CURVE_CSV: &str = "pr_curve.csv";
pub const QUALITY_BINS_CSV: &str = "score_quality_bins.csv";
pub const DELTA_HISTOGRAM_CSV: &str = "delta_miou_histogram.csv";

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("report serialization: {e}")))
    }

    /// Writes `report.json` plus the curve and histogram CSVs that apply.
    /// Returns the paths written.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let json = dir.join("report.json");
        write_file(&json, |b| writeln!(b, "{}", self.to_json().map_err(std::io::Error::other)?))?;
        written.push(json);
        if let Some(s) = &self.segments {
            let p = dir.join(PR_CURVE_CSV);
            write_file(&p, |b| {
                writeln!(b, "threshold,recall,precision")?;
                for pt in &s.pr_curve {
                    writeln!(b, "{},{},{}", pt.threshold, pt.recall, pt.precision)?;
                }
                Ok(())
            })?;
            written.push(p);
            let p = dir.join(QUALITY_BINS_CSV);
            write_file(&p, |b| {
                writeln!(b, "center,mean_precision_p,mean_iou,mean_iou_adj,count")?;
                for q in &s.score_quality_bins {
                    writeln!(
                        b,
                        "{},{},{},{},{}",
                        q.center, q.mean_precision_p, q.mean_iou, q.mean_iou_adj, q.count
                    )?;
                }
                Ok(())
            })?;
            written.push(p);
        }
        if let Some(c) = &self.correction {
            let p = dir.join(DELTA_HISTOGRAM_CSV);
            let h = &c.delta_miou.histogram;
            write_file(&p, |b| {
                writeln!(b, "lower,upper,count")?;
                for (i, n) in h.counts.iter().enumerate() {
                    let (lo, hi) = h.bin_edges(i);
                    writeln!(b, "{lo},{hi},{n}")?;
                }
                Ok(())
            })?;
            written.push(p);
        }
        Ok(written)
    }
}
