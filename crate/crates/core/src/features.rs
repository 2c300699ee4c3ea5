//! Segment-wise feature vectors aggregated from the pixel heatmaps.
//!
//! Column order is fixed; models refer to columns by name and the order below
//! is what the feature table writer emits. Each set extends the previous one,
//! so `uncertainty_only` is a prefix of `reduced`, which is a prefix of `all`.
//!
//! | set              | columns                                                       |
//! |------------------|---------------------------------------------------------------|
//! | uncertainty_only | `mean_<m>` for each measure                                    |
//! | reduced          | + `relative_size`, `class_0` .. `class_<N-1>` (one-hot)        |
//! | all              | + `std_<m>`, `mean_bnd_<m>`, `std_bnd_<m>`, `mean_inn_<m>`, `std_inn_<m>`, `inner_empty` |
//!
//! Measures `<m>` are `one_minus_max`, `entropy`, `one_minus_margin` and, when a
//! feature tensor was supplied, `gradient_norm`.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::maps::Grid;
use crate::uncertainty::UncertaintyHeatmaps;

pub const MEASURES: [&str; 4] = ["one_minus_max", "entropy", "one_minus_margin", "gradient_norm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSetKind {
    All,
    Reduced,
    UncertaintyOnly,
}

impl FeatureSetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSetKind::All => "all",
            FeatureSetKind::Reduced => "reduced",
            FeatureSetKind::UncertaintyOnly => "uncertainty_only",
        }
    }
}

impl fmt::Display for FeatureSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FeatureSetKind::All),
            "reduced" => Ok(FeatureSetKind::Reduced),
            "uncertainty_only" | "uncertainty-only" => Ok(FeatureSetKind::UncertaintyOnly),
            other => Err(Error::Config(format!(
                "unknown feature set {other:?} (expected all, reduced or uncertainty_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub name: FeatureSetKind,
    pub num_classes: usize,
    pub has_gradient: bool,
    pub columns: Vec<String>,
}

impl FeatureSetSpec {
    pub fn new(name: FeatureSetKind, num_classes: usize, has_gradient: bool) -> Self {
        let measures: Vec<&str> = MEASURES
            .iter()
            .copied()
            .filter(|&m| has_gradient || m != "gradient_norm")
            .collect();
        let mut columns: Vec<String> = measures.iter().map(|m| format!("mean_{m}")).collect();
        if name != FeatureSetKind::UncertaintyOnly {
            columns.push("relative_size".into());
            columns.extend((0..num_classes).map(|k| format!("class_{k}")));
        }
        if name == FeatureSetKind::All {
            columns.extend(measures.iter().map(|m| format!("std_{m}")));
            for region in ["bnd", "inn"] {
                for m in &measures {
                    columns.push(format!("mean_{region}_{m}"));
                    columns.push(format!("std_{region}_{m}"));
                }
            }
            columns.push("inner_empty".into());
        }
        FeatureSetSpec {
            name,
            num_classes,
            has_gradient,
            columns,
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Pulls this spec's columns, in order, out of a named feature map.
    pub fn vector_from(&self, features: &IndexMap<String, f64>) -> Result<Vec<f64>> {
        self.columns
            .iter()
            .map(|c| {
                features.get(c).copied().ok_or_else(|| {
                    Error::Validation(format!(
                        "record lacks feature column {c:?} required by the {} feature set",
                        self.name
                    ))
                })
            })
            .collect()
    }
}

/// Population mean and standard deviation; `None` for an empty set.
pub(crate) fn mean_std(grid: &Grid<f64>, pixels: &[usize]) -> Option<(f64, f64)> {
    if pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&i| grid.data[i]).sum::<f64>() / n;
    let var = pixels
        .iter()
        .map(|&i| {
            let d = grid.data[i] - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Some((mean, var.sqrt()))
}

fn flipped(g: &Grid<f64>) -> Grid<f64> {
    Grid {
        height: g.height,
        width: g.width,
        data: g.data.iter().map(|d| 1.0 - d).collect(),
    }
}

/// Heatmaps oriented as uncertainties (margin flipped), in `MEASURES` order.
pub fn uncertainty_grids(heatmaps: &UncertaintyHeatmaps) -> Vec<(&'static str, Grid<f64>)> {
    let mut out = vec![
        (MEASURES[0], heatmaps.one_minus_max.clone()),
        (MEASURES[1], heatmaps.entropy.clone()),
        (MEASURES[2], flipped(&heatmaps.margin)),
    ];
    if let Some(g) = &heatmaps.gradient_norm {
        out.push((MEASURES[3], g.clone()));
    }
    out
}

/// Named feature values of one segment, in the column order of `spec`.
///
/// `grids` comes from [`uncertainty_grids`]; it is passed in so the flipped
/// margin grid is built once per image rather than once per segment.
pub fn aggregate_segment_features(
    grids: &[(&'static str, Grid<f64>)],
    seg: &Segment,
    spec: &FeatureSetSpec,
) -> Result<IndexMap<String, f64>> {
    if seg.is_empty() {
        return Err(Error::Contract(format!("segment {} has no pixels", seg.id)));
    }
    if grids.iter().any(|(m, _)| *m == "gradient_norm") != spec.has_gradient {
        return Err(Error::Validation(format!(
            "feature set expects gradient heatmap: {}, but heatmaps {} one",
            spec.has_gradient,
            if spec.has_gradient { "lack" } else { "include" }
        )));
    }
    if spec.name != FeatureSetKind::UncertaintyOnly && seg.class as usize >= spec.num_classes {
        return Err(Error::Validation(format!(
            "segment class {} is outside the {} classes of the feature set",
            seg.class, spec.num_classes
        )));
    }
    let image_pixels = grids[0].1.len();

    let mut values: IndexMap<String, f64> = IndexMap::with_capacity(spec.len());
    let mut stats = Vec::with_capacity(grids.len());
    for (m, grid) in grids {
        // pixels is nonempty, so mean_std always yields a value
        let full = mean_std(grid, &seg.pixels).unwrap_or_default();
        let bnd = mean_std(grid, &seg.boundary).unwrap_or(full);
        let inn = mean_std(grid, &seg.inner).unwrap_or(full);
        values.insert(format!("mean_{m}"), full.0);
        stats.push((*m, full, bnd, inn));
    }
    if spec.name != FeatureSetKind::UncertaintyOnly {
        values.insert("relative_size".into(), seg.len() as f64 / image_pixels as f64);
        for k in 0..spec.num_classes {
            values.insert(format!("class_{k}"), if k == seg.class as usize { 1.0 } else { 0.0 });
        }
    }
    if spec.name == FeatureSetKind::All {
        for (m, full, _, _) in &stats {
            values.insert(format!("std_{m}"), full.1);
        }
        for (m, _, bnd, _) in &stats {
            values.insert(format!("mean_bnd_{m}"), bnd.0);
            values.insert(format!("std_bnd_{m}"), bnd.1);
        }
        for (m, _, _, inn) in &stats {
            values.insert(format!("mean_inn_{m}"), inn.0);
            values.insert(format!("std_inn_{m}"), inn.1);
        }
        values.insert("inner_empty".into(), if seg.inner.is_empty() { 1.0 } else { 0.0 });
    }
    debug_assert!(values.keys().eq(spec.columns.iter()));
    Ok(values)
}
