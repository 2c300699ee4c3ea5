//! Per-pixel value types: softmax probability maps, class masks, feature
//! tensors and generic scalar grids, plus their on-disk encodings.
//!
//! Everything is row-major. Probability maps and feature tensors are stored as
//! `(row, column, channel)` with the channel varying fastest.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::npy::{self, NpyData};

/// Largest tolerated deviation of a pixel's probability sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

pub type ClassId = u16;

/// A dense `height × width` grid of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl Grid<f64> {
    /// Writes the grid as a float32 `(H, W)` NPY file.
    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        let data = self.data.iter().map(|&v| v as f32).collect();
        npy::write(path, &[self.height, self.width], &NpyData::F32(data))
    }
}

impl Grid<u32> {
    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        npy::write(
            path,
            &[self.height, self.width],
            &NpyData::U32(self.data.clone()),
        )
    }
}

/// Per-pixel categorical distributions over `num_classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    num_classes: usize,
    values: Vec<f32>,
}

impl ProbabilityMap {
    /// Builds a map after checking ranges and per-pixel sums.
    pub fn new(height: usize, width: usize, num_classes: usize, values: Vec<f32>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Validation(format!(
                "probability map needs at least 2 classes, got {num_classes}"
            )));
        }
        if values.len() != height * width * num_classes {
            return Err(Error::Validation(format!(
                "probability map {height}x{width}x{num_classes} needs {} values, got {}",
                height * width * num_classes,
                values.len()
            )));
        }
        let map = ProbabilityMap {
            height,
            width,
            num_classes,
            values,
        };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        let mut worst: Option<(usize, f64)> = None;
        for (idx, px) in self.values.chunks_exact(self.num_classes).enumerate() {
            if let Some(k) = px.iter().position(|&p| !(0.0..=1.0).contains(&p)) {
                let (r, c) = (idx / self.width, idx % self.width);
                return Err(Error::Validation(format!(
                    "probability {} outside [0, 1] at pixel ({r}, {c}), class {k}",
                    px[k]
                )));
            }
            let dev = (px.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs();
            if dev > PROB_SUM_TOLERANCE && worst.is_none_or(|(_, d)| dev > d) {
                worst = Some((idx, dev));
            }
        }
        if let Some((idx, dev)) = worst {
            let (r, c) = (idx / self.width, idx % self.width);
            return Err(Error::Validation(format!(
                "probabilities at pixel ({r}, {c}) sum to {} (deviation {dev:.3e} exceeds {PROB_SUM_TOLERANCE:e})",
                self.pixel(r, c).iter().map(|&p| p as f64).sum::<f64>()
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        self.pixel_at(row * self.width + col)
    }

    /// Class distribution of the pixel with linear (row-major) index `idx`.
    #[inline]
    pub fn pixel_at(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.num_classes..(idx + 1) * self.num_classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.num_classes)
    }

    pub fn to_npy_bytes(&self) -> Result<Vec<u8>> {
        npy::encode(
            &[self.height, self.width, self.num_classes],
            &NpyData::F32(self.values.clone()),
        )
    }
}

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    height: usize,
    width: usize,
    labels: Vec<ClassId>,
}

impl SegmentationMask {
    pub fn new(height: usize, width: usize, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Validation(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(SegmentationMask {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, class: ClassId) -> Self {
        SegmentationMask {
            height,
            width,
            labels: vec![class; height * width],
        }
    }

    /// Checks every label is below `num_classes`, naming the first offender.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| l as usize >= num_classes)
        {
            Some(idx) => Err(Error::Validation(format!(
                "label {} at pixel ({}, {}) is not below num_classes = {num_classes}",
                self.labels[idx],
                idx / self.width,
                idx % self.width
            ))),
            None => Ok(()),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [ClassId] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, class: ClassId) {
        self.labels[row * self.width + col] = class;
    }

    pub fn same_shape(&self, other: &SegmentationMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_npy_bytes(&self) -> Result<Vec<u8>> {
        npy::encode(
            &[self.height, self.width],
            &NpyData::U16(self.labels.clone()),
        )
    }

    /// Encodes as grayscale PNG, 8-bit when every label fits, else 16-bit.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let (w, h) = (self.width as u32, self.height as u32);
        let mut out = std::io::Cursor::new(Vec::new());
        let res = if self.labels.iter().all(|&l| l <= u8::MAX as u16) {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, self.labels.iter().map(|&l| l as u8).collect())
                    .ok_or_else(|| Error::Contract("mask buffer size mismatch".into()))?;
            buf.write_to(&mut out, image::ImageFormat::Png)
        } else {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, self.labels.clone())
                    .ok_or_else(|| Error::Contract("mask buffer size mismatch".into()))?;
            buf.write_to(&mut out, image::ImageFormat::Png)
        };
        res.map_err(|e| Error::Format(format!("PNG encoding failed: {e}")))?;
        Ok(out.into_inner())
    }
}

/// Penultimate-layer activations, `channels` values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::Validation(format!(
                "feature tensor {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature value at flat index {i}"
            )));
        }
        Ok(FeatureTensor {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_at(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a `(H, W, N)` little-endian float32 NPY file.
pub fn read_probability_map(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let arr = npy::read(path)?;
    let NpyData::F32(values) = arr.data else {
        return Err(Error::Format(format!(
            "{}: probability map must be <f4, found {:?}",
            path.display(),
            arr.data.dtype()
        )));
    };
    let [h, w, n] = arr.shape[..] else {
        return Err(Error::Format(format!(
            "{}: probability map must have shape (H, W, N), found {:?}",
            path.display(),
            arr.shape
        )));
    };
    ProbabilityMap::new(h, w, n, values).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_probability_map(path: impl AsRef<Path>, map: &ProbabilityMap) -> Result<()> {
    npy::write(
        path,
        &[map.height, map.width, map.num_classes],
        &NpyData::F32(map.values.clone()),
    )
}

/// Reads a `(H, W, C)` float32 NPY feature tensor.
pub fn read_feature_tensor(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let arr = npy::read(path)?;
    match (arr.data, &arr.shape[..]) {
        (NpyData::F32(values), &[h, w, c]) => FeatureTensor::new(h, w, c, values),
        (data, shape) => Err(Error::Format(format!(
            "{}: feature tensor must be <f4 (H, W, C), found {:?} {shape:?}",
            path.display(),
            data.dtype()
        ))),
    }
}

pub fn write_feature_tensor(path: impl AsRef<Path>, t: &FeatureTensor) -> Result<()> {
    npy::write(
        path,
        &[t.height, t.width, t.channels],
        &NpyData::F32(t.values.clone()),
    )
}

/// Reads a mask from a uint16 `(H, W)` NPY file or an 8/16-bit grayscale PNG,
/// chosen by file extension, and checks labels against `num_classes`.
pub fn read_mask(path: impl AsRef<Path>, num_classes: usize) -> Result<SegmentationMask> {
    let path = path.as_ref();
    let mask = if is_png(path) {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_png_mask(&bytes)
    } else {
        let arr = npy::read(path)?;
        match (arr.data, &arr.shape[..]) {
            (NpyData::U16(labels), &[h, w]) => SegmentationMask::new(h, w, labels),
            (data, shape) => Err(Error::Format(format!(
                "mask must be <u2 (H, W), found {:?} {shape:?}",
                data.dtype()
            ))),
        }
    };
    let mask = mask.and_then(|m| m.validate(num_classes).map(|_| m));
    mask.map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn decode_png_mask(bytes: &[u8]) -> Result<SegmentationMask> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG decoding failed: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            SegmentationMask::new(h, w, buf.into_raw().into_iter().map(u16::from).collect())
        }
        image::DynamicImage::ImageLuma16(buf) => SegmentationMask::new(h, w, buf.into_raw()),
        other => Err(Error::Format(format!(
            "mask PNG must be 8/16-bit grayscale, found {:?}",
            other.color()
        ))),
    }
}

/// Writes a mask as PNG or NPY depending on the extension.
pub fn write_mask(path: impl AsRef<Path>, mask: &SegmentationMask) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_png(path) {
        mask.to_png_bytes()?
    } else {
        mask.to_npy_bytes()?
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Per-pixel argmax; ties go to the smallest class index.
pub fn argmax_mask(probs: &ProbabilityMap) -> SegmentationMask {
    let labels = probs
        .pixels()
        .map(|px| {
            let mut best = 0;
            for k in 1..px.len() {
                if px[k] > px[best] {
                    best = k;
                }
            }
            best as ClassId
        })
        .collect();
    SegmentationMask {
        height: probs.height,
        width: probs.width,
        labels,
    }
}
