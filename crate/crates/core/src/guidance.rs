//! Condition embeddings, classifier-free guidance and zero image guidance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, VinoError};
use crate::rng::SeedStream;
use crate::tensor::VideoLatent;

/// A condition embedding plus the exact-match key that identifies it.
///
/// Keys are how analytic denoisers look up the behaviour tied to a condition;
/// they never compare embedding values.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    key: String,
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(key: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(VinoError::Provider(format!(
                "non-finite embedding value {v}"
            )));
        }
        Ok(Self {
            key: key.into(),
            values,
        })
    }

    /// The zero vector of dimension `dim`.
    pub fn null(dim: usize) -> Self {
        Self {
            key: "null".into(),
            values: vec![0.0; dim],
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `factor * self`, keyed as `"{factor}*{key}"` (`factor = 0` gives the null key).
    pub fn scaled(&self, factor: f64) -> Self {
        if factor == 0.0 {
            return Self::null(self.dim());
        }
        if factor == 1.0 {
            return self.clone();
        }
        Self {
            key: format!("{factor}*{}", self.key),
            values: self.values.iter().map(|v| factor * v).collect(),
        }
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(VinoError::Shape(format!(
                "embedding dims {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return Err(VinoError::Provider("zero-norm embedding".into()));
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// Input to an image encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageDescriptor {
    /// The all-zero image.
    Zero,
    /// A reference image identified by name.
    Named { name: String },
    /// Raw `C x H x W` pixels, row-major.
    Pixels {
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    },
}

impl ImageDescriptor {
    pub fn named(name: impl Into<String>) -> Self {
        Self::Named { name: name.into() }
    }

    /// Frame `f` of a video as a pixel descriptor.
    pub fn frame_of(video: &VideoLatent, f: usize) -> Self {
        let d = video.dims();
        Self::Pixels {
            channels: d.channels,
            height: d.height,
            width: d.width,
            data: video.frame(f).to_vec(),
        }
    }
}

/// Image and text encoders (the CLIP stand-in).
pub trait EmbeddingProvider: Send + Sync {
    fn image_dim(&self) -> usize;
    fn text_dim(&self) -> usize;
    fn embed_image(&self, image: &ImageDescriptor) -> Result<Embedding>;
    fn embed_text(&self, text: &str) -> Result<Embedding>;
}

/// Deterministic, unit-norm embedder keyed on a seed.
///
/// Fixed vectors:
/// * the all-zero image (and any all-zero pixel input) embeds to `(1, ..., 1) / sqrt(d)`;
/// * the empty text embeds to the first basis vector `e_0`.
///
/// Named images and non-empty texts embed to a normalized Gaussian vector from
/// the stream `(seed, "img:" + name)` / `(seed, "txt:" + text)`. Pixel inputs are
/// average-pooled onto a grid of at most 4x4 cells per channel, projected by a
/// seeded Gaussian matrix and normalized, so the map is odd: `embed(-x) = -embed(x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

const POOL_GRID: usize = 4;

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(VinoError::InvalidParameter(
                "embedding dim must be >= 1".into(),
            ));
        }
        Ok(Self { dim, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Embedding of the all-zero image.
    pub fn zero_image_vector(&self) -> Vec<f64> {
        vec![1.0 / (self.dim as f64).sqrt(); self.dim]
    }

    fn hashed_unit(&self, label: &str) -> Vec<f64> {
        normalize(SeedStream::new(self.seed, label).normals(self.dim))
            .expect("gaussian draw of positive dimension has non-zero norm")
    }

    fn embed_pixels(&self, c: usize, h: usize, w: usize, data: &[f64]) -> Result<Embedding> {
        if c == 0 || h == 0 || w == 0 || data.len() != c * h * w {
            return Err(VinoError::Provider(format!(
                "pixel descriptor {c}x{h}x{w} has {} values",
                data.len()
            )));
        }
        if data.iter().all(|&v| v == 0.0) {
            return Embedding::new("img:zero", self.zero_image_vector());
        }
        let (gh, gw) = (POOL_GRID.min(h), POOL_GRID.min(w));
        let mut pooled = Vec::with_capacity(c * gh * gw);
        for ch in 0..c {
            for gy in 0..gh {
                let (y0, y1) = (gy * h / gh, (gy + 1) * h / gh);
                for gx in 0..gw {
                    let (x0, x1) = (gx * w / gw, (gx + 1) * w / gw);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += data[(ch * h + y) * w + x];
                        }
                    }
                    pooled.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        let cols = pooled.len();
        let proj =
            SeedStream::new(self.seed, format!("img.proj.{c}x{gh}x{gw}")).normals(self.dim * cols);
        let values: Vec<f64> = proj
            .chunks(cols)
            .map(|row| row.iter().zip(&pooled).map(|(a, b)| a * b).sum())
            .collect();
        let values = normalize(values)
            .ok_or_else(|| VinoError::Provider("pixel embedding has zero norm".into()))?;
        let digest = Sha256::digest(
            data.iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<u8>>(),
        );
        let tag: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Embedding::new(format!("img:px:{c}x{h}x{w}:{tag}"), values)
    }
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

impl EmbeddingProvider for HashEmbedder {
    fn image_dim(&self) -> usize {
        self.dim
    }

    fn text_dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, image: &ImageDescriptor) -> Result<Embedding> {
        match image {
            ImageDescriptor::Zero => Embedding::new("img:zero", self.zero_image_vector()),
            ImageDescriptor::Named { name } => Embedding::new(
                format!("img:{name}"),
                self.hashed_unit(&format!("img:{name}")),
            ),
            ImageDescriptor::Pixels {
                channels,
                height,
                width,
                data,
            } => self.embed_pixels(*channels, *height, *width, data),
        }
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        if text.is_empty() {
            let mut e0 = vec![0.0; self.dim];
            e0[0] = 1.0;
            return Embedding::new("txt:", e0);
        }
        Embedding::new(
            format!("txt:{text}"),
            self.hashed_unit(&format!("txt:{text}")),
        )
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(VinoError::InvalidParameter(format!(
            "gamma = {gamma} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_scale(w: f64) -> Result<()> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(VinoError::InvalidParameter(format!(
            "guidance scale w = {w} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Negative image embedding `gamma * embed(I_0) + (1 - gamma) * 0`.
pub fn zero_image_guidance(provider: &dyn EmbeddingProvider, gamma: f64) -> Result<Embedding> {
    check_gamma(gamma)?;
    Ok(provider.embed_image(&ImageDescriptor::Zero)?.scaled(gamma))
}

/// `(1 + w) * eps_cond - w * eps_uncond`.
pub fn cfg_combine(
    eps_cond: &VideoLatent,
    eps_uncond: &VideoLatent,
    w: f64,
) -> Result<VideoLatent> {
    check_scale(w)?;
    if w == 0.0 {
        eps_cond.ensure_same_dims(eps_uncond, "cfg_combine")?;
        return Ok(eps_cond.clone());
    }
    eps_cond.lincomb(1.0 + w, eps_uncond, -w)
}

/// How the negative text embedding is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeTextMode {
    /// `embed_text(neg_text)`.
    #[default]
    Plain,
    /// `gamma * embed_text(neg_text)`, the variant written in the procedure listing.
    GammaScaled,
}

/// Exact-match identifier of an (image, text) condition pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CondKey {
    pub image: String,
    pub text: String,
}

impl CondKey {
    pub fn new(image: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            image: image.into(),
            text: text.into(),
        }
    }

    pub fn of(image: &Embedding, text: &Embedding) -> Self {
        Self::new(image.key(), text.key())
    }
}

impl std::fmt::Display for CondKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}|{}", self.image, self.text)
    }
}

/// Positive and negative conditions for one edit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub c_img: Embedding,
    pub c_txt: Embedding,
    pub neg_img: Embedding,
    pub neg_txt: Embedding,
    pub w: f64,
    pub gamma: f64,
}

impl ConditionSet {
    pub fn new(
        c_img: Embedding,
        c_txt: Embedding,
        neg_img: Embedding,
        neg_txt: Embedding,
        w: f64,
        gamma: f64,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        check_scale(w)?;
        if c_img.dim() != neg_img.dim() || c_txt.dim() != neg_txt.dim() {
            return Err(VinoError::Shape(format!(
                "condition dims: image {} vs {}, text {} vs {}",
                c_img.dim(),
                neg_img.dim(),
                c_txt.dim(),
                neg_txt.dim()
            )));
        }
        Ok(Self {
            c_img,
            c_txt,
            neg_img,
            neg_txt,
            w,
            gamma,
        })
    }

    pub fn positive_key(&self) -> CondKey {
        CondKey::of(&self.c_img, &self.c_txt)
    }

    pub fn negative_key(&self) -> CondKey {
        CondKey::of(&self.neg_img, &self.neg_txt)
    }

    /// Same embeddings with a different guidance scale.
    pub fn with_scale(&self, w: f64) -> Result<Self> {
        check_scale(w)?;
        Ok(Self { w, ..self.clone() })
    }
}

/// Encodes the reference image, prompt and negative prompt into a [`ConditionSet`].
pub fn build_condition_set(
    provider: &dyn EmbeddingProvider,
    ref_image: &ImageDescriptor,
    text: &str,
    neg_text: &str,
    gamma: f64,
    w: f64,
    neg_text_mode: NegativeTextMode,
) -> Result<ConditionSet> {
    check_gamma(gamma)?;
    check_scale(w)?;
    let c_img = provider.embed_image(ref_image)?;
    let c_txt = provider.embed_text(text)?;
    let neg_img = zero_image_guidance(provider, gamma)?;
    let neg_txt = match neg_text_mode {
        NegativeTextMode::Plain => provider.embed_text(neg_text)?,
        NegativeTextMode::GammaScaled => provider.embed_text(neg_text)?.scaled(gamma),
    };
    ConditionSet::new(c_img, c_txt, neg_img, neg_txt, w, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use proptest::prelude::*;

    fn embedder() -> HashEmbedder {
        HashEmbedder::new(16, 5).unwrap()
    }

    #[test]
    fn zero_image_guidance_collapses() {
        let p = embedder();
        let base = p.embed_image(&ImageDescriptor::Zero).unwrap();
        let g0 = zero_image_guidance(&p, 0.0).unwrap();
        assert!(g0.values().iter().all(|&v| v == 0.0));
        assert_eq!(g0.dim(), 16);
        let g1 = zero_image_guidance(&p, 1.0).unwrap();
        assert_eq!(g1.values(), base.values());
        let half = zero_image_guidance(&p, 0.5).unwrap();
        for (h, b) in half.values().iter().zip(base.values()) {
            assert_eq!(*h, 0.5 * b);
        }
        assert!(zero_image_guidance(&p, 1.5).is_err());
        assert!(zero_image_guidance(&p, -0.1).is_err());
    }

    #[test]
    fn zero_image_guidance_norm_grows_with_gamma() {
        let p = embedder();
        let mut last = -1.0;
        for g in [0.0, 0.1, 0.25, 0.5, 0.75, 1.0] {
            let n = zero_image_guidance(&p, g).unwrap().norm();
            assert!(n > last);
            last = n;
        }
    }

    #[test]
    fn cfg_cases() {
        let d = Dims::new(1, 1, 1, 1);
        let c = VideoLatent::filled(d, 1.0).unwrap();
        let u = VideoLatent::filled(d, 0.5).unwrap();
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &u, 6.0).unwrap().data(), &[4.0]);
        assert_eq!(cfg_combine(&c, &c, 6.0).unwrap(), c);
        assert!(cfg_combine(&c, &u, -1.0).is_err());
        let other = VideoLatent::filled(Dims::new(1, 1, 1, 2), 0.0).unwrap();
        assert!(cfg_combine(&c, &other, 1.0).is_err());
        assert!(cfg_combine(&c, &other, 0.0).is_err());
    }

    #[test]
    fn hash_embedder_fixed_vectors() {
        let p = embedder();
        let z = p.embed_image(&ImageDescriptor::Zero).unwrap();
        assert!(z.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let empty = p.embed_text("").unwrap();
        assert_eq!(empty.values()[0], 1.0);
        assert!(empty.values()[1..].iter().all(|&v| v == 0.0));
        let black = ImageDescriptor::Pixels {
            channels: 3,
            height: 2,
            width: 2,
            data: vec![0.0; 12],
        };
        assert_eq!(p.embed_image(&black).unwrap().values(), z.values());
        for e in [
            p.embed_text("a blue circle").unwrap(),
            p.embed_image(&ImageDescriptor::named("ref")).unwrap(),
        ] {
            assert!((e.norm() - 1.0).abs() < 1e-12);
        }
        assert_ne!(
            p.embed_text("a").unwrap().values(),
            p.embed_text("b").unwrap().values()
        );
    }

    #[test]
    fn pixel_embedding_is_odd() {
        let p = embedder();
        let data: Vec<f64> = (0..3 * 8 * 8)
            .map(|i| ((i * 37) % 11) as f64 / 10.0)
            .collect();
        let neg: Vec<f64> = data.iter().map(|v| -v).collect();
        let a = p
            .embed_image(&ImageDescriptor::Pixels {
                channels: 3,
                height: 8,
                width: 8,
                data,
            })
            .unwrap();
        let b = p
            .embed_image(&ImageDescriptor::Pixels {
                channels: 3,
                height: 8,
                width: 8,
                data: neg,
            })
            .unwrap();
        assert!((a.cosine(&b).unwrap() + 1.0).abs() < 1e-12);
        assert!((a.cosine(&a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn condition_set_construction() {
        let p = embedder();
        let r = ImageDescriptor::named("circle");
        let a =
            build_condition_set(&p, &r, "circle", "", 0.5, 6.0, NegativeTextMode::Plain).unwrap();
        let b =
            build_condition_set(&p, &r, "circle", "", 0.5, 6.0, NegativeTextMode::Plain).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.neg_txt, p.embed_text("").unwrap());
        assert_ne!(a.positive_key(), a.negative_key());

        let z =
            build_condition_set(&p, &r, "circle", "", 0.0, 6.0, NegativeTextMode::Plain).unwrap();
        assert!(z.neg_img.values().iter().all(|&v| v == 0.0));

        let s = build_condition_set(
            &p,
            &r,
            "circle",
            "blurry",
            0.5,
            6.0,
            NegativeTextMode::GammaScaled,
        )
        .unwrap();
        let plain = p.embed_text("blurry").unwrap();
        for (x, y) in s.neg_txt.values().iter().zip(plain.values()) {
            assert_eq!(*x, 0.5 * y);
        }
        assert!(build_condition_set(&p, &r, "c", "", 2.0, 6.0, NegativeTextMode::Plain).is_err());
        assert!(build_condition_set(&p, &r, "c", "", 0.5, -6.0, NegativeTextMode::Plain).is_err());
    }

    proptest! {
        #[test]
        fn cfg_is_affine(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, w in 0.0f64..10.0, t in 0.0f64..1.0) {
            let d = Dims::new(1, 1, 1, 1);
            let x = |v: f64| VideoLatent::filled(d, v).unwrap();
            // affine in the first argument at fixed second argument
            let lhs = cfg_combine(&x(t * a + (1.0 - t) * b), &x(c), w).unwrap().data()[0];
            let rhs = t * cfg_combine(&x(a), &x(c), w).unwrap().data()[0]
                + (1.0 - t) * cfg_combine(&x(b), &x(c), w).unwrap().data()[0];
            prop_assert!((lhs - rhs).abs() < 1e-9);
            let same = cfg_combine(&x(a), &x(a), w).unwrap().data()[0];
            prop_assert!((same - a).abs() < 1e-12 * (1.0 + w) * (1.0 + a.abs()));
        }

        #[test]
        fn zero_image_guidance_is_linear(g in 0.0f64..=1.0) {
            let p = embedder();
            let one = zero_image_guidance(&p, 1.0).unwrap();
            let out = zero_image_guidance(&p, g).unwrap();
            for (o, v) in out.values().iter().zip(one.values()) {
                prop_assert!((o - g * v).abs() <= 1e-15);
            }
        }
    }
}
