use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::GbdtModel;
use super::logistic::LogisticModel;
use super::sigmoid;
use crate::error::{Error, Result};
use crate::features::FeatureSetSpec;
use crate::records::SegmentRecord;

pub const MODEL_FORMAT: &str = "segqual-meta-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Logistic(LogisticModel),
    Gbdt(GbdtModel),
}

impl Classifier {
    pub fn margin(&self, x: &[f64]) -> f64 {
        match self {
            Classifier::Logistic(m) => m.margin(x),
            Classifier::Gbdt(m) => m.margin(x),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Classifier::Logistic(_) => "logistic",
            Classifier::Gbdt(_) => "gbdt",
        }
    }

    fn num_features(&self) -> usize {
        match self {
            Classifier::Logistic(m) => m.num_features(),
            Classifier::Gbdt(m) => m.num_features,
        }
    }
}

/// A trained classifier bound to the feature columns it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub format: String,
    pub version: u32,
    pub feature_set: FeatureSetSpec,
    /// Precision threshold that defined the training target.
    pub tau_p: f64,
    pub classifier: Classifier,
}

impl MetaModel {
    pub fn new(feature_set: FeatureSetSpec, tau_p: f64, classifier: Classifier) -> Result<Self> {
        let m = MetaModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            feature_set,
            tau_p,
            classifier,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.classifier.num_features() != self.feature_set.len() {
            return Err(Error::Format(format!(
                "model has {} inputs but its feature set lists {} columns",
                self.classifier.num_features(),
                self.feature_set.len()
            )));
        }
        match &self.classifier {
            Classifier::Gbdt(g) => g.check(),
            Classifier::Logistic(l) => {
                let finite = l.bias.is_finite()
                    && l.weights.iter().chain(&l.means).all(|v| v.is_finite())
                    && l.scales.iter().all(|s| s.is_finite() && *s > 0.0);
                if finite && l.means.len() == l.weights.len() && l.scales.len() == l.weights.len() {
                    Ok(())
                } else {
                    Err(Error::Format("malformed logistic model parameters".into()))
                }
            }
        }
    }

    /// Uncertainty score of a feature vector in the model's column order.
    pub fn score_vector(&self, x: &[f64]) -> f64 {
        sigmoid(self.classifier.margin(x))
    }

    pub fn score(&self, record: &SegmentRecord) -> Result<f64> {
        let x = self.feature_set.vector_from(&record.features)?;
        Ok(self.score_vector(&x))
    }

    pub fn score_batch(&self, records: &[SegmentRecord]) -> Result<Vec<f64>> {
        records.par_iter().map(|r| self.score(r)).collect()
    }

    /// Scores every record in place.
    pub fn score_records(&self, records: &mut [SegmentRecord]) -> Result<()> {
        records.par_iter_mut().try_for_each(|r| {
            r.uncertainty_score = Some(self.score(r)?);
            Ok(())
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("model serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(MODEL_FORMAT) {
            return Err(Error::Format(format!(
                "not a {MODEL_FORMAT} file (format field {format:?})"
            )));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(MODEL_VERSION as u64) {
            return Err(Error::Format(format!(
                "model version {} is not supported (supported versions: [{MODEL_VERSION}])",
                version.map_or("missing".to_string(), |v| v.to_string())
            )));
        }
        let model: MetaModel =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("model file: {e}")))?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
