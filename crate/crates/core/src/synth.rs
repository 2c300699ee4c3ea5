//! Deterministic synthetic corpus: Voronoi ground truth, a corrupted
//! prediction, and a softmax map whose argmax is that prediction.
//!
//! Corruptions:
//!
//! * boundary jitter: the prediction is the Voronoi partition of displaced
//!   seeds, so cell boundaries move by roughly the displacement;
//! * class swaps: a predicted cell takes a non-background class absent from
//!   the scene;
//! * false blobs: connected blobs of a class absent from the ground truth
//!   and from the prediction in and around the blob, never overlapping or
//!   touching one another.
//!
//! Each scene uses a random palette of half the foreground classes, and
//! wrong labels come from outside it. This mimics a large label space, where
//! an image shows few of the classes and a wrong class is rarely present.
//!
//! Pixels whose predicted class differs from the ground truth get confidence
//! centred on `wrong_confidence`, all others on `correct_confidence`, with
//! logit-normal noise per region and per pixel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::maps::{write_mask, write_probability_map, ClassId, ProbabilityMap, SegmentationMask};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Voronoi cells of a coarse scene; fine scenes use twice as many.
    pub voronoi_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Expected number of false blobs per image (Poisson).
    pub false_segment_rate: f64,
    /// Inclusive pixel-count range of a false blob.
    pub false_segment_size: (usize, usize),
    /// Maximum seed displacement, in pixels, per axis.
    pub boundary_jitter: usize,
    pub class_swap_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxConfig {
    pub correct_confidence: f64,
    pub wrong_confidence: f64,
    /// Standard deviation of the logit noise.
    pub noise_temp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub scene: SceneConfig,
    pub corruption: CorruptionConfig,
    pub softmax: SoftmaxConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 128,
            num_classes: 8,
            scene: SceneConfig { voronoi_cells: 10 },
            corruption: CorruptionConfig {
                false_segment_rate: 3.0,
                false_segment_size: (16, 160),
                boundary_jitter: 2,
                class_swap_prob: 0.08,
            },
            softmax: SoftmaxConfig {
                correct_confidence: 0.92,
                wrong_confidence: 0.6,
                noise_temp: 0.6,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let c = &self.corruption;
        let s = &self.softmax;
        if self.scene.voronoi_cells == 0 {
            return bad("voronoi_cells must be at least 1".into());
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        if self.num_classes < 2 || self.num_classes > ClassId::MAX as usize + 1 {
            return bad(format!("num_classes must be in 2..=65536, got {}", self.num_classes));
        }
        if !(c.false_segment_rate >= 0.0 && c.false_segment_rate.is_finite()) {
            return bad(format!("false_segment_rate {} is not a valid rate", c.false_segment_rate));
        }
        let (lo, hi) = c.false_segment_size;
        if lo == 0 || lo > hi {
            return bad(format!("false_segment_size ({lo}, {hi}) is not a valid range"));
        }
        if !(0.0..=1.0).contains(&c.class_swap_prob) {
            return bad(format!("class_swap_prob {} is outside [0, 1]", c.class_swap_prob));
        }
        for (name, v) in [
            ("correct_confidence", s.correct_confidence),
            ("wrong_confidence", s.wrong_confidence),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} {v} is outside (0, 1)"));
            }
        }
        if !(s.noise_temp >= 0.0 && s.noise_temp.is_finite()) {
            return bad(format!("noise_temp {} is not valid", s.noise_temp));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub gt: SegmentationMask,
    pub pred: SegmentationMask,
    pub probs: ProbabilityMap,
    /// Pixel indices of each injected false blob.
    pub blobs: Vec<Vec<usize>>,
    pub swapped_cells: usize,
    pub scene_scale: &'static str,
}

/// Nearest-seed labels, ties to the lowest seed index.
fn voronoi(size: usize, seeds: &[(f64, f64)]) -> Vec<usize> {
    let mut cell = vec![0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for (k, &(sy, sx)) in seeds.iter().enumerate() {
                let d = (y - sy).powi(2) + (x - sx).powi(2);
                if d < best.0 {
                    best = (d, k);
                }
            }
            cell[r * size + c] = best.1;
        }
    }
    cell
}

fn neighbours4(i: usize, size: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / size, i % size);
    [
        (r > 0).then(|| i - size),
        (r + 1 < size).then(|| i + size),
        (c > 0).then(|| i - 1),
        (c + 1 < size).then(|| i + 1),
    ]
    .into_iter()
    .flatten()
}

/// Random connected growth from a random free pixel, avoiding `forbidden`.
fn grow_blob(rng: &mut ChaCha8Rng, size: usize, target: usize, forbidden: &[bool]) -> Vec<usize> {
    let start = rng.random_range(0..size * size);
    if forbidden[start] {
        return Vec::new();
    }
    let mut in_blob = vec![false; size * size];
    let mut blob = Vec::with_capacity(target);
    let mut frontier = vec![start];
    while blob.len() < target && !frontier.is_empty() {
        let i = frontier.swap_remove(rng.random_range(0..frontier.len()));
        if in_blob[i] || forbidden[i] {
            continue;
        }
        in_blob[i] = true;
        blob.push(i);
        frontier.extend(neighbours4(i, size).filter(|&j| !in_blob[j]));
    }
    blob.sort_unstable();
    blob
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const BLOB_ATTEMPTS: usize = 8;

/// Generates image `index` of the corpus; depends only on the config and
/// the index.
pub fn generate_image(config: &SynthConfig, index: u64) -> Result<SynthImage> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index));
    let size = config.image_size;
    let n = config.num_classes;
    let npx = size * size;
    let bg: ClassId = 0;

    let fine = rng.random_bool(0.5);
    let cells = config.scene.voronoi_cells * if fine { 2 } else { 1 };
    let seeds: Vec<(f64, f64)> = (0..cells)
        .map(|_| (rng.random::<f64>() * size as f64, rng.random::<f64>() * size as f64))
        .collect();
    // Foreground cells draw from a palette of half the foreground classes,
    // so every scene leaves some classes out. Cell 0 is always background.
    let foreground: Vec<ClassId> = (1..n as ClassId).collect();
    let mut palette: Vec<ClassId> = vec![bg];
    palette.extend(foreground.choose_multiple(&mut rng, foreground.len().div_ceil(2)).copied());
    let classes: Vec<ClassId> = (0..cells)
        .map(|k| if k == 0 { bg } else { *palette.choose(&mut rng).expect("palette has background") })
        .collect();
    let gt_cell = voronoi(size, &seeds);
    let gt: Vec<ClassId> = gt_cell.iter().map(|&k| classes[k]).collect();

    let j = config.corruption.boundary_jitter as f64;
    let moved: Vec<(f64, f64)> = seeds
        .iter()
        .map(|&(y, x)| {
            if j == 0.0 {
                (y, x)
            } else {
                (y + rng.random_range(-j..=j), x + rng.random_range(-j..=j))
            }
        })
        .collect();
    let pred_cell = if j == 0.0 { gt_cell.clone() } else { voronoi(size, &moved) };

    let mut pred_classes = classes.clone();
    let mut swapped_cells = 0;
    let mut in_scene = vec![false; n];
    for &c in &classes {
        in_scene[c as usize] = true;
    }
    for pc in pred_classes.iter_mut() {
        if config.corruption.class_swap_prob > 0.0 && rng.random_bool(config.corruption.class_swap_prob) {
            let options: Vec<ClassId> = (1..n as ClassId).filter(|&c| !in_scene[c as usize]).collect();
            if let Some(&c) = options.choose(&mut rng) {
                *pc = c;
                swapped_cells += 1;
            }
        }
    }
    let mut pred: Vec<ClassId> = pred_cell.iter().map(|&k| pred_classes[k]).collect();
    // Region of each pixel for confidence noise: predicted cell, or blob.
    let mut region: Vec<usize> = pred_cell.clone();
    let mut region_class: Vec<ClassId> = pred_classes.clone();

    let rate = config.corruption.false_segment_rate;
    let num_blobs = if rate > 0.0 {
        Poisson::new(rate)
            .map_err(|e| Error::Config(format!("false_segment_rate: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let (lo, hi) = config.corruption.false_segment_size;
    let mut forbidden = vec![false; npx];
    let mut blobs = Vec::new();
    for _ in 0..num_blobs {
        for _ in 0..BLOB_ATTEMPTS {
            let target = rng.random_range(lo..=hi);
            let blob = grow_blob(&mut rng, size, target, &forbidden);
            if blob.len() < lo {
                continue;
            }
            let mut present = vec![false; n];
            for &c in &gt {
                present[c as usize] = true;
            }
            for &i in &blob {
                for k in std::iter::once(i).chain(neighbours4(i, size)) {
                    present[pred[k] as usize] = true;
                }
            }
            let options: Vec<ClassId> = (1..n as ClassId).filter(|&c| !present[c as usize]).collect();
            let Some(&c) = options.choose(&mut rng) else { continue };
            let rid = region_class.len();
            region_class.push(c);
            for &i in &blob {
                pred[i] = c;
                region[i] = rid;
                forbidden[i] = true;
                for k in neighbours4(i, size) {
                    forbidden[k] = true;
                }
            }
            blobs.push(blob);
            break;
        }
    }

    let s = &config.softmax;
    let regions = region_class.len();
    let noise = |rng: &mut ChaCha8Rng| -> f64 { rng.sample::<f64, _>(StandardNormal) * s.noise_temp };
    let mut region_noise = Vec::with_capacity(regions);
    for &rc in &region_class {
        let z_ok = noise(&mut rng);
        let z_wrong = noise(&mut rng);
        let share = if n > 2 { rng.random_range(0.5..=0.9) } else { 1.0 };
        let others: Vec<ClassId> = (0..n as ClassId).filter(|&c| c != rc).collect();
        let runner_up = *others.choose(&mut rng).expect("at least two classes");
        region_noise.push((z_ok, z_wrong, share, runner_up));
    }
    let (mu_ok, mu_wrong) = (logit(s.correct_confidence), logit(s.wrong_confidence));
    let mut values = vec![0f32; npx * n];
    let mut row = vec![0f64; n];
    for i in 0..npx {
        let (z_ok, z_wrong, share, runner) = region_noise[region[i]];
        let c = pred[i] as usize;
        let wrong = pred[i] != gt[i];
        let mu = if wrong { mu_wrong + z_wrong } else { mu_ok + z_ok };
        let floor = share / (1.0 + share) + 0.01;
        let q = sigmoid(mu + 0.5 * noise(&mut rng)).clamp(floor, 1.0 - 1e-6);
        let runner = if wrong { gt[i] as usize } else { runner as usize };
        let rest = 1.0 - q;
        row.fill(if n > 2 { rest * (1.0 - share) / (n - 2) as f64 } else { 0.0 });
        row[c] = q;
        row[runner] = rest * share;
        for (v, &p) in values[i * n..(i + 1) * n].iter_mut().zip(&row) {
            *v = p as f32;
        }
    }

    Ok(SynthImage {
        gt: SegmentationMask::new(size, size, gt)?,
        pred: SegmentationMask::new(size, size, pred)?,
        probs: ProbabilityMap::new(size, size, n, values)?,
        blobs,
        swapped_cells,
        scene_scale: if fine { "fine" } else { "coarse" },
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn image_id(index: usize) -> String {
    format!("img_{index:04}")
}

/// Writes `count` images plus `manifest.json` into `out_dir` and returns
/// the manifest. Images are generated in parallel; the output does not
/// depend on the thread count.
pub fn generate_corpus(config: &SynthConfig, count: usize, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<ManifestEntry> = (0..count)
        .into_par_iter()
        .map(|k| {
            let img = generate_image(config, k as u64)?;
            let id = image_id(k);
            let prob = PathBuf::from(format!("{id}_prob.npy"));
            let pred = PathBuf::from(format!("{id}_pred.png"));
            let gt = PathBuf::from(format!("{id}_gt.png"));
            write_probability_map(out_dir.join(&prob), &img.probs)?;
            write_mask(out_dir.join(&pred), &img.pred)?;
            write_mask(out_dir.join(&gt), &img.gt)?;
            Ok(ManifestEntry {
                image_id: id,
                prob_path: prob,
                pred_mask_path: Some(pred),
                gt_mask_path: Some(gt),
                features_path: None,
                categories: BTreeMap::from([("scene_scale".to_string(), img.scene_scale.to_string())]),
            })
        })
        .collect::<Result<_>>()?;
    let mut manifest = DatasetManifest::new(config.num_classes, 0, out_dir);
    manifest.entries = entries;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
