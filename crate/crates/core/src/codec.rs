//! Invertible pixel/latent codecs standing in for the VAE.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Result, VinoError};
use crate::rng::SeedStream;
use crate::tensor::{Video, VideoLatent};

/// Encoder/decoder pair between pixel frames and latents.
pub trait Codec: Send + Sync {
    fn encode(&self, video: &Video) -> Result<VideoLatent>;
    fn decode(&self, latent: &VideoLatent) -> Result<Video>;
    /// Spatial downsampling factor: latent height = pixel height / scale.
    fn scale(&self) -> usize;
}

/// Exact identity, `scale = 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn encode(&self, video: &Video) -> Result<VideoLatent> {
        video.validate()?;
        Ok(video.clone())
    }

    fn decode(&self, latent: &VideoLatent) -> Result<Video> {
        latent.validate()?;
        Ok(latent.clone())
    }

    fn scale(&self) -> usize {
        1
    }
}

/// Per-pixel channel mixing `latent = A * pixel` with a fixed invertible `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCodec {
    forward: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl LinearCodec {
    /// Rejects singular or badly conditioned matrices.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let c = matrix.nrows();
        if c == 0 || matrix.ncols() != c {
            return Err(VinoError::Shape(format!(
                "codec matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(VinoError::InvalidParameter(
                "codec matrix has non-finite entries".into(),
            ));
        }
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| VinoError::InvalidParameter("codec matrix is singular".into()))?;
        let residual = (&matrix * &inverse - DMatrix::<f64>::identity(c, c)).amax();
        if residual.is_nan() || residual > 1e-11 {
            return Err(VinoError::InvalidParameter(format!(
                "codec matrix is numerically singular (|A A^-1 - I| = {residual:e})"
            )));
        }
        Ok(Self {
            forward: matrix,
            inverse,
        })
    }

    /// `I + 0.3 * G` with `G` standard normal from `seed`.
    pub fn seeded(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(VinoError::InvalidParameter(
                "codec needs >= 1 channel".into(),
            ));
        }
        let g =
            SeedStream::new(seed, format!("codec.linear.{channels}")).normals(channels * channels);
        let m = DMatrix::from_fn(channels, channels, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id + 0.3 * g[i * channels + j]
        });
        Self::from_matrix(m)
    }

    pub fn channels(&self) -> usize {
        self.forward.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.forward
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    fn apply(&self, m: &DMatrix<f64>, x: &VideoLatent) -> Result<VideoLatent> {
        x.validate()?;
        let d = x.dims();
        if d.channels != self.channels() {
            return Err(VinoError::Shape(format!(
                "codec has {} channels, input {d}",
                self.channels()
            )));
        }
        let c = d.channels;
        let plane = d.height * d.width;
        let src = x.data();
        let mut out = vec![0.0; d.len()];
        out.par_chunks_mut(d.frame_len())
            .enumerate()
            .for_each(|(f, frame)| {
                let base = f * d.frame_len();
                for p in 0..plane {
                    for i in 0..c {
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += m[(i, j)] * src[base + j * plane + p];
                        }
                        frame[i * plane + p] = acc;
                    }
                }
            });
        VideoLatent::new(d, out)
    }
}

impl Codec for LinearCodec {
    fn encode(&self, video: &Video) -> Result<VideoLatent> {
        self.apply(&self.forward, video)
    }

    fn decode(&self, latent: &VideoLatent) -> Result<Video> {
        self.apply(&self.inverse, latent)
    }

    fn scale(&self) -> usize {
        1
    }
}
