//! Pixel-wise uncertainty heatmaps derived from softmax output.

use crate::error::{Error, Result};
use crate::maps::{FeatureTensor, Grid, ProbabilityMap};

/// Floor applied to probabilities before taking logarithms.
const LOG_FLOOR: f64 = 1e-12;

/// The four per-pixel measures. `margin` stores `D` itself (1 for one-hot);
/// feature extraction flips it to `1 - D`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyHeatmaps {
    pub one_minus_max: Grid<f64>,
    pub entropy: Grid<f64>,
    pub margin: Grid<f64>,
    pub gradient_norm: Option<Grid<f64>>,
}

impl UncertaintyHeatmaps {
    pub fn compute(probs: &ProbabilityMap, features: Option<&FeatureTensor>) -> Result<Self> {
        Ok(UncertaintyHeatmaps {
            one_minus_max: one_minus_max_prob(probs),
            entropy: normalized_entropy(probs),
            margin: top2_margin(probs),
            gradient_norm: features.map(|f| gradient_norm(probs, f)).transpose()?,
        })
    }
}

fn per_pixel(probs: &ProbabilityMap, f: impl Fn(&[f32]) -> f64) -> Grid<f64> {
    Grid {
        height: probs.height(),
        width: probs.width(),
        data: probs.pixels().map(f).collect(),
    }
}

fn max_prob(px: &[f32]) -> f64 {
    px.iter().fold(f64::NEG_INFINITY, |m, &p| m.max(p as f64))
}

/// `1 - max_k p_k` per pixel.
pub fn one_minus_max_prob(probs: &ProbabilityMap) -> Grid<f64> {
    per_pixel(probs, |px| 1.0 - max_prob(px))
}

/// Shannon entropy normalized by `log N`, so uniform pixels score 1 and
/// one-hot pixels score 0. Clamped to 1, since pixels summing to just over 1
/// within the normalization tolerance can overshoot.
pub fn normalized_entropy(probs: &ProbabilityMap) -> Grid<f64> {
    let norm = (probs.num_classes() as f64).ln();
    per_pixel(probs, |px| (entropy_of(px) / norm).min(1.0))
}

pub(crate) fn entropy_of(px: &[f32]) -> f64 {
    -px.iter()
        .map(|&p| p as f64)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// Difference between the largest and second-largest probability.
pub fn top2_margin(probs: &ProbabilityMap) -> Grid<f64> {
    per_pixel(probs, |px| {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &p in px {
            let p = p as f64;
            if p > first {
                second = first;
                first = p;
            } else if p > second {
                second = p;
            }
        }
        first - second
    })
}

/// Norm of the cross-entropy gradient w.r.t. the last 1x1 convolution, with
/// the argmax class taken as label and its component zeroed:
/// `||psi|| * sqrt(sum_{k != argmax} p_k^2)`.
pub fn gradient_norm(probs: &ProbabilityMap, features: &FeatureTensor) -> Result<Grid<f64>> {
    if features.height() != probs.height() || features.width() != probs.width() {
        return Err(Error::Validation(format!(
            "feature tensor is {}x{} but probability map is {}x{}",
            features.height(),
            features.width(),
            probs.height(),
            probs.width()
        )));
    }
    let data = (0..probs.num_pixels())
        .map(|idx| {
            let px = probs.pixel_at(idx);
            let mut argmax = 0;
            for k in 1..px.len() {
                if px[k] > px[argmax] {
                    argmax = k;
                }
            }
            let class_sq: f64 = px
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != argmax)
                .map(|(_, &p)| (p as f64) * (p as f64))
                .sum();
            let psi_sq: f64 = features
                .pixel_at(idx)
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum();
            (class_sq * psi_sq).sqrt()
        })
        .collect();
    Ok(Grid {
        height: probs.height(),
        width: probs.width(),
        data,
    })
}
