//! Segmentation interface, binary dilation and the dual-mask union.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VinoError};
use crate::tensor::{BinaryMask, Video};

/// Object query handed to a [`Segmenter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTarget {
    /// RGB color of the object, each channel in `[0, 1]`.
    pub color: [f64; 3],
    /// Euclidean tolerance in RGB space.
    pub radius: f64,
}

impl SegmentTarget {
    pub fn new(color: [f64; 3], radius: f64) -> Self {
        Self { color, radius }
    }
}

/// Produces a per-frame object mask for a video (the SAM2 stand-in).
pub trait Segmenter: Send + Sync {
    fn segment(&self, video: &Video, target: &SegmentTarget) -> Result<BinaryMask>;
}

/// Marks pixels whose RGB value lies within `target.radius` of `target.color`.
///
/// RGB is read from the first three channels; further channels are ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ColorSegmenter;

impl Segmenter for ColorSegmenter {
    fn segment(&self, video: &Video, target: &SegmentTarget) -> Result<BinaryMask> {
        let d = video.dims();
        if d.channels < 3 {
            return Err(VinoError::Shape(format!(
                "color segmentation needs >= 3 channels, got {}",
                d.channels
            )));
        }
        if target.radius.is_nan() || target.radius < 0.0 {
            return Err(VinoError::InvalidParameter(format!(
                "segment radius {} must be >= 0",
                target.radius
            )));
        }
        let r2 = target.radius * target.radius;
        BinaryMask::from_fn(d.frames, d.height, d.width, |f, y, x| {
            let dist2: f64 = (0..3)
                .map(|c| (video.get(f, c, y, x) - target.color[c]).powi(2))
                .sum();
            dist2 <= r2
        })
    }
}

fn check_kernel(k: usize) -> Result<usize> {
    if k.is_multiple_of(2) {
        return Err(VinoError::InvalidParameter(format!(
            "dilation kernel must be odd and >= 1, got {k}"
        )));
    }
    Ok(k / 2)
}

/// Single-iteration `k x k` dilation per frame, reading outside the frame as 0.
pub fn dilate(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    let r = check_kernel(k)?;
    let (frames, h, w) = (mask.frames(), mask.height(), mask.width());
    if r == 0 {
        return Ok(mask.clone());
    }
    let plane = h * w;
    // square structuring element: row max followed by column max
    let bits: Vec<bool> = mask
        .data()
        .par_chunks(plane)
        .flat_map_iter(|frame| {
            let mut rows = vec![false; plane];
            for y in 0..h {
                for x in 0..w {
                    let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
                    rows[y * w + x] = (lo..=hi).any(|xx| frame[y * w + xx] == 1.0);
                }
            }
            let mut out = vec![false; plane];
            for y in 0..h {
                let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
                for x in 0..w {
                    out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
                }
            }
            out
        })
        .collect();
    Ok(BinaryMask::from_bits(frames, h, w, bits))
}

/// Element-wise maximum of two masks.
pub fn mask_union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    if a.dims() != b.dims() {
        return Err(VinoError::Shape(format!(
            "mask union: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    let bits = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x.max(y) == 1.0)
        .collect();
    Ok(BinaryMask::from_bits(
        a.frames(),
        a.height(),
        a.width(),
        bits,
    ))
}

/// `dilate(source, k) ∪ dilate(rough, k)`.
pub fn build_final_mask(source: &BinaryMask, rough: &BinaryMask, k: usize) -> Result<BinaryMask> {
    build_final_mask_with(source, k, rough, k)
}

/// [`build_final_mask`] with separate kernels for the source and rough masks.
pub fn build_final_mask_with(
    source: &BinaryMask,
    k_source: usize,
    rough: &BinaryMask,
    k_rough: usize,
) -> Result<BinaryMask> {
    if source.dims() != rough.dims() {
        return Err(VinoError::Shape(format!(
            "final mask: {} vs {}",
            source.dims(),
            rough.dims()
        )));
    }
    mask_union(&dilate(source, k_source)?, &dilate(rough, k_rough)?)
}

/// Max-pools a pixel mask by `factor` in both spatial directions, for codecs
/// whose latent grid is coarser than the pixel grid.
pub fn downsample_mask(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 {
        return Err(VinoError::InvalidParameter(
            "downsample factor must be >= 1".into(),
        ));
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let (frames, h, w) = (mask.frames(), mask.height(), mask.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(VinoError::Shape(format!(
            "mask {h}x{w} not divisible by factor {factor}"
        )));
    }
    let (lh, lw) = (h / factor, w / factor);
    BinaryMask::from_fn(frames, lh, lw, |f, y, x| {
        (0..factor).any(|dy| (0..factor).any(|dx| mask.get(f, y * factor + dy, x * factor + dx)))
    })
}
