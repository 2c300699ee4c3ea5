//! Binary meta-classifiers predicting whether a segment is low quality.
//!
//! Two model families share one scoring contract: the model produces a margin
//! (log-odds of "low quality") and the uncertainty score is its sigmoid, so
//! higher scores mean a segment is more likely to have precision `<= tau_p`.

mod cv;
mod gbdt;
mod logistic;
mod model;

pub use cv::{cross_validate_logistic, default_grid, stratified_folds, train_gbdt, CvSummary, GridResult, TrainReport};
pub use gbdt::{fit_gbdt, GbdtConfig, GbdtModel, GbdtParams, Node, Tree};
pub use logistic::{train_logistic, LogisticConfig, LogisticModel, LogisticObjective};
pub use model::{Classifier, MetaModel, MODEL_FORMAT, MODEL_VERSION};

use crate::error::{Error, Result};
use crate::features::FeatureSetSpec;
use crate::records::SegmentRecord;

/// Row-major design matrix with binary targets (`true` = low quality).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_features: usize,
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(num_features: usize, values: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if values.len() != num_features * labels.len() {
            return Err(Error::Contract(format!(
                "{} values do not form {} rows of {num_features} features",
                values.len(),
                labels.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature value in row {}, column {}",
                i / num_features.max(1),
                i % num_features.max(1)
            )));
        }
        Ok(Dataset {
            num_features,
            values,
            labels,
        })
    }

    /// Extracts the feature set's columns and the quality targets.
    pub fn from_records(records: &[SegmentRecord], spec: &FeatureSetSpec) -> Result<Self> {
        let mut values = Vec::with_capacity(records.len() * spec.len());
        let mut labels = Vec::with_capacity(records.len());
        for r in records {
            values.extend(spec.vector_from(&r.features)?);
            labels.push(r.target_low_quality.ok_or_else(|| {
                Error::Validation(format!(
                    "segment {}/{} has no quality target; training needs ground truth",
                    r.image_id, r.segment_id
                ))
            })?);
        }
        Dataset::new(spec.len(), values, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            num_features: self.num_features,
            values: rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }

    pub(crate) fn require_both_classes(&self, min_each: usize) -> Result<()> {
        let (pos, neg) = self.class_counts();
        if pos < min_each || neg < min_each {
            return Err(Error::Training(format!(
                "need at least {min_each} segments of each class, got {pos} low-quality and {neg} correct"
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted binary logistic loss of margin `m` for label `y`.
#[inline]
pub(crate) fn logistic_loss(m: f64, y: bool) -> f64 {
    if y {
        softplus(-m)
    } else {
        softplus(m)
    }
}
