//! Segment-wise quality against ground truth, and per-image mIoU.
//!
//! For a predicted segment `s` of class `c`, `K` is the union of ground-truth
//! segments of class `c` sharing at least one pixel with `s`. Then
//!
//! * precision `p = |s ∩ K| / |s|`
//! * `IoU = |s ∩ K| / |s ∪ K|`
//! * `IoU_adj = |s ∩ K| / |s ∪ (K \ O)|`, where `O` is the part of `K` covered
//!   by other predicted segments of class `c`.
//!
//! All three are 0 when `K` is empty, and `p >= IoU_adj >= IoU` otherwise.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Segment, SegmentDecomposition};
use crate::maps::{ClassId, SegmentationMask};

/// Precision threshold separating low-quality from correct segments.
pub const DEFAULT_PRECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentQuality {
    pub precision_p: f64,
    pub iou: f64,
    pub iou_adj: f64,
}

/// Low quality means `p <= tau_p`; only `p > tau_p` counts as correct.
pub fn is_low_quality(precision_p: f64, tau_p: f64) -> bool {
    precision_p <= tau_p
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Union of same-class ground-truth segments intersecting `pred_seg`, as a
/// sorted list of pixel indices.
pub fn matched_gt_union(pred_seg: &Segment, gt: &SegmentDecomposition) -> Vec<usize> {
    let matched: BTreeSet<u32> = pred_seg
        .pixels
        .iter()
        .map(|&i| gt.id_map.data[i])
        .filter(|&id| id != 0)
        .filter(|&id| gt.get(id).is_some_and(|g| g.class == pred_seg.class))
        .collect();
    let mut k: Vec<usize> = matched
        .iter()
        .flat_map(|&id| gt.get(id).map(|g| g.pixels.iter().copied()).into_iter().flatten())
        .collect();
    k.sort_unstable();
    k
}

pub fn segment_iou(pred_seg: &Segment, k: &[usize]) -> f64 {
    let inter = sorted_intersection_len(&pred_seg.pixels, k);
    ratio(inter, pred_seg.len() + k.len() - inter)
}

/// `other_cover` must be the subset of `k` covered by other predicted
/// segments of the same class (so it is disjoint from `pred_seg`).
pub fn segment_iou_adj(pred_seg: &Segment, k: &[usize], other_cover: &[usize]) -> f64 {
    let inter = sorted_intersection_len(&pred_seg.pixels, k);
    let reduced = k.len() - sorted_intersection_len(k, other_cover);
    // |s ∪ (K \ O)| with s ∩ O = ∅
    ratio(inter, pred_seg.len() + reduced - inter)
}

pub fn segment_precision(pred_seg: &Segment, k: &[usize]) -> f64 {
    ratio(sorted_intersection_len(&pred_seg.pixels, k), pred_seg.len())
}

/// Pixels of `k` that belong to predicted segments of `pred_seg`'s class
/// other than `pred_seg` itself.
pub fn other_same_class_cover(
    pred_seg: &Segment,
    k: &[usize],
    pred: &SegmentDecomposition,
) -> Vec<usize> {
    k.iter()
        .copied()
        .filter(|&i| {
            let id = pred.id_map.data[i];
            id != 0 && id != pred_seg.id && pred.get(id).is_some_and(|o| o.class == pred_seg.class)
        })
        .collect()
}

/// Quality of every predicted segment, in segment order. Equivalent to
/// combining the per-segment functions above, but linear in image size.
pub fn segment_qualities(
    pred_mask: &SegmentationMask,
    pred: &SegmentDecomposition,
    gt_mask: &SegmentationMask,
    gt: &SegmentDecomposition,
) -> Vec<SegmentQuality> {
    let pl = pred_mask.labels();
    let gl = gt_mask.labels();
    // Ground-truth pixels whose predicted label agrees, per GT segment.
    let mut correct = vec![0usize; gt.segments.len() + 1];
    for (i, (&p, &g)) in pl.iter().zip(gl).enumerate() {
        if p == g {
            correct[gt.id_map.data[i] as usize] += 1;
        }
    }

    let mut touched: Vec<u32> = Vec::new();
    pred.segments
        .iter()
        .map(|s| {
            touched.clear();
            let mut inter = 0usize;
            for &i in &s.pixels {
                if gl[i] == s.class {
                    inter += 1;
                    touched.push(gt.id_map.data[i]);
                }
            }
            touched.sort_unstable();
            touched.dedup();
            let k_len: usize = touched
                .iter()
                .map(|&g| gt.segments[g as usize - 1].len())
                .sum();
            let covered: usize = touched.iter().map(|&g| correct[g as usize]).sum();
            let others = covered - inter;
            SegmentQuality {
                precision_p: ratio(inter, s.len()),
                iou: ratio(inter, s.len() + k_len - inter),
                iou_adj: ratio(inter, s.len() + k_len - others - inter),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            self.tp as f64 / den as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageQuality {
    pub miou: f64,
    /// Only classes present in the prediction or the ground truth.
    pub per_class: BTreeMap<ClassId, ClassCounts>,
    /// Classes predicted somewhere but absent from the ground truth.
    pub num_wrong_classes: usize,
    /// Classes present in both.
    pub num_correct_classes: usize,
}

/// Mean IoU over the classes appearing in either mask. Classes absent from
/// both do not contribute; background is an ordinary class here.
pub fn image_miou(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<ImageQuality> {
    if !pred.same_shape(gt) {
        return Err(Error::Validation(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if pred.num_pixels() == 0 {
        return Err(Error::Validation("mIoU of an empty mask is undefined".into()));
    }
    let mut per_class: BTreeMap<ClassId, ClassCounts> = BTreeMap::new();
    let mut in_pred = BTreeSet::new();
    let mut in_gt = BTreeSet::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        in_pred.insert(p);
        in_gt.insert(g);
        if p == g {
            per_class.entry(p).or_default().tp += 1;
        } else {
            per_class.entry(p).or_default().fp += 1;
            per_class.entry(g).or_default().fn_ += 1;
        }
    }
    let miou = per_class.values().map(ClassCounts::iou).sum::<f64>() / per_class.len() as f64;
    Ok(ImageQuality {
        miou,
        per_class,
        num_wrong_classes: in_pred.difference(&in_gt).count(),
        num_correct_classes: in_pred.intersection(&in_gt).count(),
    })
}
