//! Mask correction driven by segment uncertainty scores.
//!
//! A segment scoring above `tau` is relabeled to the class of its single
//! neighbouring segment when it touches exactly one segment and no
//! background, and set to background otherwise. Neighbourhoods come from the
//! original decomposition and edits go to a copy, so the result does not
//! depend on the order segments are visited.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Neighbor, SegmentDecomposition, SegmentId};
use crate::maps::{ClassId, SegmentationMask};
use crate::quality::image_miou;

/// Threshold used when none has been chosen by a sweep.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    RemovedToBackground,
    ReplacedByClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionAction {
    pub segment_id: SegmentId,
    pub score: f64,
    pub old_class: ClassId,
    pub action: ActionKind,
    pub new_class: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub corrected_mask: SegmentationMask,
    /// In ascending segment id order.
    pub actions: Vec<CorrectionAction>,
}

/// Corrects `mask` in ascending segment id order.
pub fn correct_mask(
    mask: &SegmentationMask,
    decomp: &SegmentDecomposition,
    scores: &BTreeMap<SegmentId, f64>,
    tau: f64,
    background: ClassId,
) -> Result<CorrectionOutcome> {
    let order: Vec<SegmentId> = decomp.segments.iter().map(|s| s.id).collect();
    correct_mask_in_order(mask, decomp, scores, tau, background, &order)
}

/// As [`correct_mask`], visiting segments in the given order. `order` must be
/// a permutation of the decomposition's segment ids.
pub fn correct_mask_in_order(
    mask: &SegmentationMask,
    decomp: &SegmentDecomposition,
    scores: &BTreeMap<SegmentId, f64>,
    tau: f64,
    background: ClassId,
    order: &[SegmentId],
) -> Result<CorrectionOutcome> {
    if decomp.height() != mask.height() || decomp.width() != mask.width() {
        return Err(Error::Contract(format!(
            "decomposition is {}x{} but mask is {}x{}",
            decomp.height(),
            decomp.width(),
            mask.height(),
            mask.width()
        )));
    }
    if tau.is_nan() {
        return Err(Error::Config("threshold is NaN".into()));
    }
    if order.len() != decomp.segments.len() {
        return Err(Error::Contract(format!(
            "visit order lists {} segments, decomposition has {}",
            order.len(),
            decomp.segments.len()
        )));
    }
    let mut out = mask.clone();
    let mut actions = Vec::new();
    for &id in order {
        let seg = decomp
            .get(id)
            .ok_or_else(|| Error::Contract(format!("segment {id} is not in the decomposition")))?;
        let score = *scores
            .get(&id)
            .ok_or_else(|| Error::Contract(format!("segment {id} has no uncertainty score")))?;
        if score.is_nan() {
            return Err(Error::Contract(format!("segment {id} has a NaN score")));
        }
        if score <= tau {
            continue;
        }
        let enclosing = match seg.neighbors.iter().collect::<Vec<_>>()[..] {
            [Neighbor::Segment(n)] => decomp.get(*n).map(|s| s.class),
            _ => None,
        };
        let (action, new_class) = match enclosing {
            Some(c) => (ActionKind::ReplacedByClass, c),
            None => (ActionKind::RemovedToBackground, background),
        };
        let labels = out.labels_mut();
        for &i in &seg.pixels {
            labels[i] = new_class;
        }
        actions.push(CorrectionAction {
            segment_id: id,
            score,
            old_class: seg.class,
            action,
            new_class,
        });
    }
    actions.sort_by_key(|a| a.segment_id);
    Ok(CorrectionOutcome {
        corrected_mask: out,
        actions,
    })
}

/// One image prepared for a threshold sweep.
#[derive(Debug, Clone)]
pub struct SweepImage {
    pub mask: SegmentationMask,
    pub decomp: SegmentDecomposition,
    pub scores: BTreeMap<SegmentId, f64>,
    pub gt: SegmentationMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub mean_delta_miou: f64,
    pub fraction_degraded: f64,
    pub mean_wrong_classes: f64,
}

/// `0, 0.05, ..., 1`.
pub fn default_taus() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Mean per-image mIoU change from correcting at each threshold, sorted by
/// threshold.
pub fn sweep_threshold(images: &[SweepImage], taus: &[f64], background: ClassId) -> Result<Vec<SweepRow>> {
    let mut taus = taus.to_vec();
    if taus.iter().any(|t| t.is_nan()) {
        return Err(Error::Config("threshold list contains NaN".into()));
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let before: Vec<f64> = images
        .par_iter()
        .map(|im| image_miou(&im.mask, &im.gt).map(|q| q.miou))
        .collect::<Result<_>>()?;
    taus.iter()
        .map(|&tau| {
            let after: Vec<(f64, usize)> = images
                .par_iter()
                .map(|im| {
                    let out = correct_mask(&im.mask, &im.decomp, &im.scores, tau, background)?;
                    let q = image_miou(&out.corrected_mask, &im.gt)?;
                    Ok((q.miou, q.num_wrong_classes))
                })
                .collect::<Result<_>>()?;
            let n = images.len().max(1) as f64;
            let deltas: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a.0 - b).collect();
            Ok(SweepRow {
                tau,
                mean_delta_miou: deltas.iter().sum::<f64>() / n,
                fraction_degraded: deltas.iter().filter(|&&d| d < 0.0).count() as f64 / n,
                mean_wrong_classes: after.iter().map(|a| a.1 as f64).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Threshold with the largest mean mIoU change; ties go to the lowest
/// threshold.
pub fn best_tau(rows: &[SweepRow]) -> Option<f64> {
    let mut best: Option<&SweepRow> = None;
    for r in rows {
        if best.is_none_or(|b| r.mean_delta_miou > b.mean_delta_miou) {
            best = Some(r);
        }
    }
    best.map(|r| r.tau)
}
