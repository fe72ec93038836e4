//! Frame-level metrics: PSNR, temporal consistency and change statistics.

use serde_json::{json, Value};
use vino_core::{BinaryMask, EmbeddingProvider, ImageDescriptor, Video, VinoError};

use crate::error::{HarnessError, Result};

/// Differences at or below this are treated as unchanged.
pub const CHANGE_THRESHOLD: f64 = 1e-9;

fn same_dims(a: &Video, b: &Video) -> Result<()> {
    a.ensure_same_dims(b, "metric inputs")?;
    Ok(())
}

/// `10 log10(1 / MSE)` over all channels of the pixels in `region` (all pixels
/// when `None`). Identical inputs give `f64::INFINITY`.
pub fn psnr(generated: &Video, source: &Video, region: Option<&BinaryMask>) -> Result<f64> {
    same_dims(generated, source)?;
    let d = generated.dims();
    if let Some(m) = region {
        m.ensure_matches(generated)?;
        if m.is_empty_mask() {
            return Err(VinoError::EmptyMask("psnr region is empty".into()).into());
        }
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for f in 0..d.frames {
        for y in 0..d.height {
            for x in 0..d.width {
                if region.is_some_and(|m| !m.get(f, y, x)) {
                    continue;
                }
                for c in 0..d.channels {
                    let e = generated.get(f, c, y, x) - source.get(f, c, y, x);
                    sum += e * e;
                    n += 1;
                }
            }
        }
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// JSON form of a PSNR value; infinity becomes the string `"inf"`.
pub fn psnr_json(v: f64) -> Value {
    if v.is_infinite() && v > 0.0 {
        json!("inf")
    } else {
        json!(v)
    }
}

/// Mean cosine similarity between embeddings of adjacent frames.
pub fn temporal_score(frames: &Video, provider: &dyn EmbeddingProvider) -> Result<f64> {
    let n = frames.dims().frames;
    if n < 2 {
        return Err(HarnessError::Config(format!(
            "temporal score needs >= 2 frames, got {n}"
        )));
    }
    let embeds = (0..n)
        .map(|f| provider.embed_image(&ImageDescriptor::frame_of(frames, f)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    for pair in embeds.windows(2) {
        total += pair[0].cosine(&pair[1])?;
    }
    Ok(total / (n - 1) as f64)
}

/// Pixels where any channel differs by more than [`CHANGE_THRESHOLD`].
pub fn changed_mask(a: &Video, b: &Video) -> Result<BinaryMask> {
    same_dims(a, b)?;
    let d = a.dims();
    Ok(BinaryMask::from_fn(
        d.frames,
        d.height,
        d.width,
        |f, y, x| {
            (0..d.channels)
                .any(|c| (a.get(f, c, y, x) - b.get(f, c, y, x)).abs() > CHANGE_THRESHOLD)
        },
    )?)
}

pub fn changed_pixel_fraction(a: &Video, b: &Video) -> Result<f64> {
    let m = changed_mask(a, b)?;
    Ok(m.count_ones() as f64 / m.data().len() as f64)
}

/// Euclidean distance between `a` and `b` over the pixels of `mask`.
pub fn masked_l2(a: &Video, b: &Video, mask: &BinaryMask) -> Result<f64> {
    same_dims(a, b)?;
    mask.ensure_matches(a)?;
    let d = a.dims();
    let mut sum = 0.0f64;
    for f in 0..d.frames {
        for y in 0..d.height {
            for x in 0..d.width {
                if mask.get(f, y, x) {
                    for c in 0..d.channels {
                        sum += (a.get(f, c, y, x) - b.get(f, c, y, x)).powi(2);
                    }
                }
            }
        }
    }
    Ok(sum.sqrt())
}

/// Per-channel mean of `video` over the pixels of `mask`.
pub fn region_mean(video: &Video, mask: &BinaryMask) -> Result<Vec<f64>> {
    mask.ensure_matches(video)?;
    if mask.is_empty_mask() {
        return Err(VinoError::EmptyMask("region mean over an empty mask".into()).into());
    }
    let d = video.dims();
    let mut acc = vec![0.0; d.channels];
    for f in 0..d.frames {
        for y in 0..d.height {
            for x in 0..d.width {
                if mask.get(f, y, x) {
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += video.get(f, c, y, x);
                    }
                }
            }
        }
    }
    let n = mask.count_ones() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// `(y, x)` centroid of frame `f` of `mask`, `None` when the frame is empty.
pub fn centroid(mask: &BinaryMask, f: usize) -> Option<(f64, f64)> {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(f, y, x) {
                sy += y as f64;
                sx += x as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sy / n as f64, sx / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vino_core::{gaussian, Dims, HashEmbedder, SeedStream, VideoLatent};

    fn video(seed: u64) -> Video {
        gaussian(Dims::new(3, 3, 5, 4), &SeedStream::new(seed, "m")).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = video(1);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
        assert_eq!(psnr_json(f64::INFINITY), json!("inf"));
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&b, &a, None).unwrap() - 20.0).abs() < 1e-9);
        let empty = BinaryMask::zeros(3, 5, 4).unwrap();
        assert!(psnr(&a, &b, Some(&empty)).is_err());
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let (a, b) = (video(2), video(3));
        let mut mse = 0.0;
        for i in 0..a.len() {
            mse += (a.data()[i] - b.data()[i]).powi(2);
        }
        mse /= a.len() as f64;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b, None).unwrap() - want).abs() < 1e-12);

        let m = BinaryMask::from_fn(3, 5, 4, |f, y, x| (f + y + x) % 2 == 0).unwrap();
        let (mut s, mut n) = (0.0, 0.0);
        for f in 0..3 {
            for c in 0..3 {
                for y in 0..5 {
                    for x in 0..4 {
                        if (f + y + x) % 2 == 0 {
                            s += (a.get(f, c, y, x) - b.get(f, c, y, x)).powi(2);
                            n += 1.0;
                        }
                    }
                }
            }
        }
        let want = 10.0 * (n / s).log10();
        assert!((psnr(&a, &b, Some(&m)).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn temporal_examples() {
        let p = HashEmbedder::new(32, 3).unwrap();
        let one = video(4).split_frames(1).unwrap().remove(0);
        let same = VideoLatent::concat_frames(&[one.clone(), one.clone(), one.clone()]).unwrap();
        assert!((temporal_score(&same, &p).unwrap() - 1.0).abs() < 1e-12);
        let flip = VideoLatent::concat_frames(&[one.clone(), one.scale(-1.0)]).unwrap();
        assert!((temporal_score(&flip, &p).unwrap() + 1.0).abs() < 1e-12);
        assert!(temporal_score(&one, &p).is_err());
    }

    #[test]
    fn change_statistics() {
        let a = video(5);
        let mut data = a.data().to_vec();
        data[0] += 1.0;
        data[a.dims().offset(2, 1, 4, 3)] += 1e-10;
        let b = VideoLatent::new(a.dims(), data).unwrap();
        let m = changed_mask(&b, &a).unwrap();
        assert_eq!(m.count_ones(), 1);
        assert!(m.get(0, 0, 0));
        assert!((changed_pixel_fraction(&b, &a).unwrap() - 1.0 / 60.0).abs() < 1e-15);
        assert!((masked_l2(&b, &a, &m).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(centroid(&m, 0), Some((0.0, 0.0)));
        assert_eq!(centroid(&m, 1), None);
    }

    #[test]
    fn region_mean_per_channel() {
        let v = VideoLatent::from_fn(Dims::new(1, 2, 2, 2), |_, c, y, x| {
            (c * 10 + y * 2 + x) as f64
        })
        .unwrap();
        let m = BinaryMask::from_fn(1, 2, 2, |_, y, _| y == 1).unwrap();
        assert_eq!(region_mean(&v, &m).unwrap(), vec![2.5, 12.5]);
    }
}
