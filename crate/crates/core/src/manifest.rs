//! Dataset manifests: the JSON index of per-image files.
//!
//! Relative paths are resolved against the directory containing the manifest.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{self, ClassId, FeatureTensor, ProbabilityMap, SegmentationMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub prob_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categories: BTreeMap<String, String>,
}

fn default_background() -> ClassId {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    #[serde(default = "default_background")]
    pub background_class: ClassId,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against. Not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Everything loaded for one manifest entry.
#[derive(Debug, Clone)]
pub struct ImageData {
    pub probs: ProbabilityMap,
    pub pred: SegmentationMask,
    pub gt: Option<SegmentationMask>,
    pub features: Option<FeatureTensor>,
}

impl DatasetManifest {
    pub fn new(num_classes: usize, background_class: ClassId, base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            num_classes,
            background_class,
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    /// Loads and validates a manifest. Entry order is preserved; duplicate ids
    /// and missing files are rejected, listing every missing file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation(format!(
                "manifest num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.background_class as usize >= self.num_classes {
            return Err(Error::Validation(format!(
                "background class {} is not below num_classes {}",
                self.background_class, self.num_classes
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate image_id {:?} in manifest",
                    e.image_id
                )));
            }
        }
        let missing: Vec<(&str, PathBuf)> = self
            .entries
            .iter()
            .flat_map(|e| {
                std::iter::once(Some(&e.prob_path))
                    .chain([
                        e.pred_mask_path.as_ref(),
                        e.gt_mask_path.as_ref(),
                        e.features_path.as_ref(),
                    ])
                    .flatten()
                    .map(|p| (e.image_id.as_str(), self.resolve(p)))
            })
            .filter(|(_, p)| !p.is_file())
            .collect();
        if let Some((_, first)) = missing.first() {
            let listing: Vec<String> = missing
                .iter()
                .map(|(id, p)| format!("{id}: {}", p.display()))
                .collect();
            return Err(Error::io(
                first.clone(),
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("missing files:\n  {}", listing.join("\n  ")),
                ),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.gt_mask_path.is_some())
    }

    pub fn has_categories(&self) -> bool {
        self.entries.iter().any(|e| !e.categories.is_empty())
    }

    /// Loads the files of one entry. Without a stored prediction mask the
    /// argmax of the probability map is used.
    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<ImageData> {
        let probs = maps::read_probability_map(self.resolve(&entry.prob_path))?;
        if probs.num_classes() != self.num_classes {
            return Err(Error::Validation(format!(
                "{}: probability map has {} classes, manifest declares {}",
                entry.image_id,
                probs.num_classes(),
                self.num_classes
            )));
        }
        let pred = match &entry.pred_mask_path {
            Some(p) => maps::read_mask(self.resolve(p), self.num_classes)?,
            None => maps::argmax_mask(&probs),
        };
        let gt = entry
            .gt_mask_path
            .as_ref()
            .map(|p| maps::read_mask(self.resolve(p), self.num_classes))
            .transpose()?;
        let features = entry
            .features_path
            .as_ref()
            .map(|p| maps::read_feature_tensor(self.resolve(p)))
            .transpose()?;

        let dims = (probs.height(), probs.width());
        let check = |what: &str, h: usize, w: usize| {
            if (h, w) != dims {
                Err(Error::Validation(format!(
                    "{}: {what} is {h}x{w} but probability map is {}x{}",
                    entry.image_id, dims.0, dims.1
                )))
            } else {
                Ok(())
            }
        };
        check("prediction mask", pred.height(), pred.width())?;
        if let Some(gt) = &gt {
            check("ground-truth mask", gt.height(), gt.width())?;
        }
        if let Some(f) = &features {
            check("feature tensor", f.height(), f.width())?;
        }
        Ok(ImageData {
            probs,
            pred,
            gt,
            features,
        })
    }
}
