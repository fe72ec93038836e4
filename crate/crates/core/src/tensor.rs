//! Dense `F x C x H x W` tensors and binary masks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VinoError};

/// Below this many elements the element-wise kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 14;

/// Floor applied to the reference norm in [`l2_rel`].
pub const L2_REL_FLOOR: f64 = 1e-300;

/// Tensor extents: frames, channels, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Same frames and spatial extent with a single channel.
    pub fn mask_dims(&self) -> Dims {
        Dims::new(self.frames, 1, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(VinoError::InvalidTensor(format!(
                "all dims must be >= 1, got {:?}",
                self.as_array()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn offset(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        ((f * self.channels + c) * self.height + y) * self.width + x
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.channels, self.height, self.width
        )
    }
}

/// A real-valued video or latent tensor, row-major with frames outermost.
///
/// Decoded pixel videos use the same type; pixel values are normalized to
/// `[0, 1]` by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatent {
    dims: Dims,
    data: Vec<f64>,
}

/// Pixel-space frames share the latent representation.
pub type Video = VideoLatent;

impl VideoLatent {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(VinoError::InvalidTensor(format!(
                "data length {} does not match dims {dims} ({})",
                data.len(),
                dims.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VinoError::InvalidTensor(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    /// Builds a tensor from `(frame, channel, row, col)` coordinates.
    pub fn from_fn(
        dims: Dims,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for fr in 0..dims.frames {
            for c in 0..dims.channels {
                for y in 0..dims.height {
                    for x in 0..dims.width {
                        data.push(f(fr, c, y, x));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    /// Construction for kernels whose output is finite by construction.
    pub(crate) fn from_parts(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, f: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.dims.offset(f, c, y, x)]
    }

    /// Checks that every value is finite.
    pub fn validate(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(VinoError::InvalidTensor(format!(
                "non-finite value {} at flat index {i}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn ensure_same_dims(&self, other: &VideoLatent, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(VinoError::Shape(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> VideoLatent {
        let data = if self.len() >= PAR_THRESHOLD {
            self.data.par_iter().map(|&v| f(v)).collect()
        } else {
            self.data.iter().map(|&v| f(v)).collect()
        };
        Self::from_parts(self.dims, data)
    }

    /// Element-wise combination of two equally shaped tensors.
    pub fn zip_map(
        &self,
        other: &VideoLatent,
        f: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<VideoLatent> {
        self.ensure_same_dims(other, "zip_map")?;
        let data = if self.len() >= PAR_THRESHOLD {
            self.data
                .par_iter()
                .zip(other.data.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect()
        } else {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect()
        };
        Ok(Self::from_parts(self.dims, data))
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &VideoLatent, b: f64) -> Result<VideoLatent> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn scale(&self, s: f64) -> VideoLatent {
        self.map(|v| s * v)
    }

    pub fn add(&self, other: &VideoLatent) -> Result<VideoLatent> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &VideoLatent) -> Result<VideoLatent> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Sum of squares in flat index order.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.len() as f64
    }

    /// One frame as a contiguous `C x H x W` slice.
    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.dims.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    /// Concatenates tensors along the frame axis.
    pub fn concat_frames(parts: &[VideoLatent]) -> Result<VideoLatent> {
        let first = parts
            .first()
            .ok_or_else(|| VinoError::InvalidTensor("nothing to concatenate".into()))?;
        let base = first.dims;
        let mut frames = 0;
        let mut data = Vec::new();
        for p in parts {
            let d = p.dims;
            if (d.channels, d.height, d.width) != (base.channels, base.height, base.width) {
                return Err(VinoError::Shape(format!("concat: {d} vs {base}")));
            }
            frames += d.frames;
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_parts(
            Dims::new(frames, base.channels, base.height, base.width),
            data,
        ))
    }

    /// Splits along the frame axis into chunks of `frames` frames.
    pub fn split_frames(&self, frames: usize) -> Result<Vec<VideoLatent>> {
        if frames == 0 || !self.dims.frames.is_multiple_of(frames) {
            return Err(VinoError::Shape(format!(
                "cannot split {} frames into chunks of {frames}",
                self.dims.frames
            )));
        }
        let chunk = frames * self.dims.frame_len();
        let dims = Dims::new(
            frames,
            self.dims.channels,
            self.dims.height,
            self.dims.width,
        );
        Ok(self
            .data
            .chunks(chunk)
            .map(|c| Self::from_parts(dims, c.to_vec()))
            .collect())
    }
}

/// A `{0, 1}` mask of shape `F x 1 x H x W`, broadcast over channels when blending.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: Dims,
    data: Vec<f64>,
}

impl BinaryMask {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(frames, 1, height, width);
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(VinoError::InvalidMask(format!(
                "data length {} does not match dims {dims}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(VinoError::InvalidMask(format!(
                "value {} at flat index {i} is not 0 or 1",
                data[i]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(frames, height, width, vec![0.0; frames * height * width])
    }

    pub fn ones(frames: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(frames, height, width, vec![1.0; frames * height * width])
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width);
        for fr in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.push(if f(fr, y, x) { 1.0 } else { 0.0 });
                }
            }
        }
        Self::new(frames, height, width, data)
    }

    pub(crate) fn from_bits(frames: usize, height: usize, width: usize, bits: Vec<bool>) -> Self {
        let data = bits
            .into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect();
        Self {
            dims: Dims::new(frames, 1, height, width),
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.dims.frames
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, f: usize, y: usize, x: usize) -> bool {
        self.data[(f * self.dims.height + y) * self.dims.width + x] == 1.0
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.count_ones() == 0
    }

    /// `true` when every set element of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn complement(&self) -> BinaryMask {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Checks that the mask covers the frames and spatial extent of `latent`.
    pub fn ensure_matches(&self, latent: &VideoLatent) -> Result<()> {
        let d = latent.dims();
        if (self.dims.frames, self.dims.height, self.dims.width) != (d.frames, d.height, d.width) {
            return Err(VinoError::Shape(format!(
                "mask {} does not cover tensor {d}",
                self.dims
            )));
        }
        Ok(())
    }

    /// The mask itself as a single-channel tensor.
    pub fn to_latent(&self) -> VideoLatent {
        VideoLatent::from_parts(self.dims, self.data.clone())
    }
}

/// `fg * mask + bg * (1 - mask)` with the mask broadcast over channels.
pub fn blend(fg: &VideoLatent, bg: &VideoLatent, mask: &BinaryMask) -> Result<VideoLatent> {
    fg.ensure_same_dims(bg, "blend")?;
    mask.ensure_matches(fg)?;
    let d = fg.dims();
    let plane = d.height * d.width;
    let frame_len = d.frame_len();
    let kernel = |(i, (&f, &b)): (usize, (&f64, &f64))| {
        let frame = i / frame_len;
        let m = mask.data[frame * plane + i % plane];
        f * m + b * (1.0 - m)
    };
    let data: Vec<f64> = if fg.len() >= PAR_THRESHOLD {
        fg.data
            .par_iter()
            .zip(bg.data.par_iter())
            .enumerate()
            .map(kernel)
            .collect()
    } else {
        fg.data
            .iter()
            .zip(&bg.data)
            .enumerate()
            .map(kernel)
            .collect()
    };
    Ok(VideoLatent::from_parts(d, data))
}

/// `||a - b|| / max(||b||, L2_REL_FLOOR)`.
pub fn l2_rel(a: &VideoLatent, b: &VideoLatent) -> Result<f64> {
    a.ensure_same_dims(b, "l2_rel")?;
    let diff: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(diff.sqrt() / b.norm().max(L2_REL_FLOOR))
}
