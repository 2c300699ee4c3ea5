//! Segment records and the feature table file formats.
//!
//! CSV column order:
//!
//! 1. `image_id`, `segment_id`, `predicted_class`, `pixel_count`, `image_pixels`
//! 2. the feature columns, in feature-set order
//! 3. `precision_p`, `iou`, `iou_adj`, `target_low_quality` (only with ground truth)
//! 4. `uncertainty_score` (only once scored)
//!
//! Floats are written in shortest round-trip form, so reading a table back
//! reproduces every value bit-for-bit. `target_low_quality` is `1` or `0`.
//! The JSON-lines form carries the same record per line.

use std::io::{BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SegmentId;
use crate::maps::ClassId;
use crate::quality::{is_low_quality, SegmentQuality};

const IDENTITY_COLUMNS: [&str; 5] = [
    "image_id",
    "segment_id",
    "predicted_class",
    "pixel_count",
    "image_pixels",
];
const QUALITY_COLUMNS: [&str; 4] = ["precision_p", "iou", "iou_adj", "target_low_quality"];
const SCORE_COLUMN: &str = "uncertainty_score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub image_id: String,
    pub segment_id: SegmentId,
    pub predicted_class: ClassId,
    pub pixel_count: usize,
    pub image_pixels: usize,
    pub features: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_adj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_low_quality: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_score: Option<f64>,
}

impl SegmentRecord {
    pub fn relative_size(&self) -> f64 {
        self.pixel_count as f64 / self.image_pixels as f64
    }

    /// Attaches quality metrics and the binary target derived from `tau_p`.
    pub fn set_quality(&mut self, q: SegmentQuality, tau_p: f64) {
        self.precision_p = Some(q.precision_p);
        self.iou = Some(q.iou);
        self.iou_adj = Some(q.iou_adj);
        self.target_low_quality = Some(is_low_quality(q.precision_p, tau_p));
    }

    pub fn quality(&self) -> Option<SegmentQuality> {
        Some(SegmentQuality {
            precision_p: self.precision_p?,
            iou: self.iou?,
            iou_adj: self.iou_adj?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    /// Feature column names, in file order.
    pub columns: Vec<String>,
    pub records: Vec<SegmentRecord>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>) -> Self {
        FeatureTable {
            columns,
            records: Vec::new(),
        }
    }

    pub fn has_quality(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.quality().is_some())
    }

    pub fn has_scores(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.uncertainty_score.is_some())
    }

    pub fn labels(&self) -> Result<Vec<bool>> {
        self.records
            .iter()
            .map(|r| {
                r.target_low_quality.ok_or_else(|| {
                    Error::Validation(format!(
                        "segment {}/{} has no quality label",
                        r.image_id, r.segment_id
                    ))
                })
            })
            .collect()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let quality = self.has_quality();
        let scored = self.has_scores();
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(format!("CSV write: {e}"));

        let mut header: Vec<&str> = IDENTITY_COLUMNS.to_vec();
        header.extend(self.columns.iter().map(String::as_str));
        if quality {
            header.extend(QUALITY_COLUMNS);
        }
        if scored {
            header.push(SCORE_COLUMN);
        }
        w.write_record(&header).map_err(csv_err)?;

        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for r in &self.records {
            row.clear();
            row.push(r.image_id.clone());
            row.push(r.segment_id.to_string());
            row.push(r.predicted_class.to_string());
            row.push(r.pixel_count.to_string());
            row.push(r.image_pixels.to_string());
            for c in &self.columns {
                let v = r.features.get(c).ok_or_else(|| {
                    Error::Contract(format!(
                        "record {}/{} lacks column {c:?}",
                        r.image_id, r.segment_id
                    ))
                })?;
                row.push(v.to_string());
            }
            if quality {
                // has_quality() guarantees these are present
                row.push(r.precision_p.unwrap_or_default().to_string());
                row.push(r.iou.unwrap_or_default().to_string());
                row.push(r.iou_adj.unwrap_or_default().to_string());
                row.push(if r.target_low_quality.unwrap_or_default() { "1" } else { "0" }.into());
            }
            if scored {
                row.push(r.uncertainty_score.unwrap_or_default().to_string());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(format!("CSV write: {e}")))?;
        Ok(())
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let csv_err = |e: csv::Error| Error::Format(format!("CSV read: {e}"));
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header.len() < IDENTITY_COLUMNS.len() || header[..IDENTITY_COLUMNS.len()] != IDENTITY_COLUMNS {
            return Err(Error::Format(format!(
                "feature table must start with columns {IDENTITY_COLUMNS:?}"
            )));
        }
        let mut rest = &header[IDENTITY_COLUMNS.len()..];
        let scored = rest.last().is_some_and(|c| c == SCORE_COLUMN);
        if scored {
            rest = &rest[..rest.len() - 1];
        }
        let quality = rest.len() >= 4 && rest[rest.len() - 4..] == QUALITY_COLUMNS;
        if quality {
            rest = &rest[..rest.len() - 4];
        }
        let columns = rest.to_vec();
        if let Some(c) = columns
            .iter()
            .find(|c| IDENTITY_COLUMNS.contains(&c.as_str()) || QUALITY_COLUMNS.contains(&c.as_str()) || *c == SCORE_COLUMN)
        {
            return Err(Error::Format(format!("column {c:?} is out of place")));
        }

        let mut records = Vec::new();
        for (line, row) in rd.records().enumerate() {
            let row = row.map_err(csv_err)?;
            let field = |i: usize| row.get(i).unwrap_or_default();
            let bad = |i: usize| {
                Error::Format(format!(
                    "row {}: bad value {:?} in column {:?}",
                    line + 2,
                    field(i),
                    header[i]
                ))
            };
            let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(i));
            let float = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));

            let mut features = IndexMap::with_capacity(columns.len());
            let f0 = IDENTITY_COLUMNS.len();
            for (j, c) in columns.iter().enumerate() {
                features.insert(c.clone(), float(f0 + j)?);
            }
            let mut rec = SegmentRecord {
                image_id: field(0).to_string(),
                segment_id: int(1)? as SegmentId,
                predicted_class: int(2)? as ClassId,
                pixel_count: int(3)? as usize,
                image_pixels: int(4)? as usize,
                features,
                precision_p: None,
                iou: None,
                iou_adj: None,
                target_low_quality: None,
                uncertainty_score: None,
            };
            let mut i = f0 + columns.len();
            if quality {
                rec.precision_p = Some(float(i)?);
                rec.iou = Some(float(i + 1)?);
                rec.iou_adj = Some(float(i + 2)?);
                rec.target_low_quality = Some(match field(i + 3) {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => return Err(bad(i + 3)),
                });
                i += 4;
            }
            if scored {
                rec.uncertainty_score = Some(float(i)?);
            }
            records.push(rec);
        }
        Ok(FeatureTable { columns, records })
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::Format(format!("JSON-lines write: {e}")))?;
            writeln!(out, "{line}").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    /// Reads JSON-lines. Feature columns are taken from the first record.
    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SegmentRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("JSON-lines line {}: {e}", n + 1)))?;
            records.push(rec);
        }
        let columns = records
            .first()
            .map(|r| r.features.keys().cloned().collect())
            .unwrap_or_default();
        Ok(FeatureTable { columns, records })
    }

    /// Saves as JSON-lines for `.jsonl` paths, CSV otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let buf = std::io::BufWriter::new(file);
        if is_jsonl(path) {
            self.write_jsonl(buf)
        } else {
            self.write_csv(buf)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let buf = std::io::BufReader::new(file);
        let res = if is_jsonl(path) {
            Self::read_jsonl(buf)
        } else {
            Self::read_csv(buf)
        };
        res.map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}
