//! Noise-prediction interface and analytic denoisers.

use std::collections::BTreeMap;

use crate::error::{Result, VinoError};
use crate::guidance::{cfg_combine, CondKey, ConditionSet};
use crate::schedule::NoiseSchedule;
use crate::tensor::{Dims, VideoLatent};

/// Predicts the noise `eps` contained in `z_t` at training step `t`.
pub trait Denoiser: Send + Sync {
    fn predict_eps(
        &self,
        z_t: &VideoLatent,
        t: usize,
        cond: &CondKey,
        schedule: &NoiseSchedule,
    ) -> Result<VideoLatent>;
}

/// Classifier-free guided prediction for the positive and negative conditions in `cond`.
pub fn conditioned_eps(
    denoiser: &dyn Denoiser,
    z_t: &VideoLatent,
    t: usize,
    cond: &ConditionSet,
    schedule: &NoiseSchedule,
) -> Result<VideoLatent> {
    let pos = denoiser.predict_eps(z_t, t, &cond.positive_key(), schedule)?;
    if cond.w == 0.0 {
        return Ok(pos);
    }
    let neg = denoiser.predict_eps(z_t, t, &cond.negative_key(), schedule)?;
    cfg_combine(&pos, &neg, cond.w)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstantValue {
    Scalar(f64),
    Tensor(VideoLatent),
}

/// Returns the same prediction for every input, which turns DDIM inversion
/// followed by sampling into an exact identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDenoiser {
    value: ConstantValue,
}

impl ConstantDenoiser {
    pub fn scalar(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(VinoError::InvalidParameter(format!("constant {value}")));
        }
        Ok(Self {
            value: ConstantValue::Scalar(value),
        })
    }

    pub fn tensor(value: VideoLatent) -> Self {
        Self {
            value: ConstantValue::Tensor(value),
        }
    }
}

impl Denoiser for ConstantDenoiser {
    fn predict_eps(
        &self,
        z_t: &VideoLatent,
        _t: usize,
        _cond: &CondKey,
        _schedule: &NoiseSchedule,
    ) -> Result<VideoLatent> {
        match &self.value {
            ConstantValue::Scalar(v) => VideoLatent::filled(z_t.dims(), *v),
            ConstantValue::Tensor(v) => {
                v.ensure_same_dims(z_t, "constant denoiser")?;
                Ok(v.clone())
            }
        }
    }
}

/// One isotropic Gaussian `N(mean, variance * I)` over the whole flattened tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub mean: VideoLatent,
    pub variance: f64,
}

/// Posterior of the clean latent given `z_t` under the activated mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPosterior {
    pub responsibilities: Vec<f64>,
    pub mean: VideoLatent,
}

/// Exact denoiser for data drawn from a Gaussian mixture.
///
/// Each condition key activates a weighted subset of components; the
/// prediction is the closed-form `E[eps | z_t]` under the forward process
/// `z_t = sqrt(ab) z_0 + sqrt(1 - ab) eps`.
#[derive(Debug, Clone, Default)]
pub struct GmmDenoiser {
    components: Vec<GmmComponent>,
    lookup: BTreeMap<CondKey, Vec<(usize, f64)>>,
}

impl GmmDenoiser {
    pub fn new() -> Self {
        Self::default()
    }

    fn dims(&self) -> Option<Dims> {
        self.components.first().map(|c| c.mean.dims())
    }

    /// Adds a component and returns its id. `variance = 0` is a point mass.
    pub fn add_component(&mut self, mean: VideoLatent, variance: f64) -> Result<usize> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(VinoError::InvalidParameter(format!(
                "component variance {variance} must be finite and >= 0"
            )));
        }
        if let Some(d) = self.dims() {
            if d != mean.dims() {
                return Err(VinoError::Shape(format!(
                    "component mean {} vs {d}",
                    mean.dims()
                )));
            }
        }
        self.components.push(GmmComponent { mean, variance });
        Ok(self.components.len() - 1)
    }

    /// Activates `(component, weight)` pairs for `key`; weights are normalized to sum to 1.
    pub fn register(&mut self, key: CondKey, members: &[(usize, f64)]) -> Result<()> {
        if members.is_empty() {
            return Err(VinoError::InvalidParameter(format!(
                "key `{key}` needs at least one component"
            )));
        }
        let mut total = 0.0;
        for &(id, w) in members {
            if id >= self.components.len() {
                return Err(VinoError::InvalidParameter(format!(
                    "unknown component {id}"
                )));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(VinoError::InvalidParameter(format!(
                    "component weight {w} must be positive"
                )));
            }
            total += w;
        }
        let normalized = members.iter().map(|&(id, w)| (id, w / total)).collect();
        self.lookup.insert(key, normalized);
        Ok(())
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn is_registered(&self, key: &CondKey) -> bool {
        self.lookup.contains_key(key)
    }

    fn members(&self, key: &CondKey) -> Result<&[(usize, f64)]> {
        self.lookup
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| VinoError::UnregisteredCondition(key.to_string()))
    }

    fn signal_level(t: usize, schedule: &NoiseSchedule) -> Result<f64> {
        if t == 0 || t > schedule.steps() {
            return Err(VinoError::InvalidParameter(format!(
                "timestep {t} outside [1, {}]",
                schedule.steps()
            )));
        }
        let ab = schedule.alpha_bar(t)?;
        if ab >= 1.0 {
            return Err(VinoError::DegenerateSchedule(format!(
                "alpha_bar[{t}] = 1 leaves no noise to predict"
            )));
        }
        Ok(ab)
    }

    /// Responsibilities and `E[z_0 | z_t]` for the components activated by `key`.
    pub fn posterior(
        &self,
        z_t: &VideoLatent,
        t: usize,
        key: &CondKey,
        schedule: &NoiseSchedule,
    ) -> Result<GmmPosterior> {
        let members = self.members(key)?;
        let ab = Self::signal_level(t, schedule)?;
        let s = ab.sqrt();
        let n = z_t.len() as f64;

        let resp = if members.len() == 1 {
            vec![1.0]
        } else {
            let logits: Vec<f64> = members
                .iter()
                .map(|&(id, w)| {
                    let c = &self.components[id];
                    c.mean.ensure_same_dims(z_t, "gmm posterior")?;
                    let v = ab * c.variance + 1.0 - ab;
                    let dist: f64 = z_t
                        .data()
                        .iter()
                        .zip(c.mean.data())
                        .map(|(z, m)| (z - s * m).powi(2))
                        .sum();
                    Ok(w.ln() - dist / (2.0 * v) - 0.5 * n * v.ln())
                })
                .collect::<Result<_>>()?;
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let unnorm: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = unnorm.iter().sum();
            unnorm.into_iter().map(|u| u / total).collect()
        };

        let mut mean = VideoLatent::zeros(z_t.dims())?;
        for (&(id, _), &r) in members.iter().zip(&resp) {
            if r == 0.0 {
                continue;
            }
            let c = &self.components[id];
            c.mean.ensure_same_dims(z_t, "gmm posterior")?;
            let v = ab * c.variance + 1.0 - ab;
            let gain = s * c.variance / v;
            let m_k = c.mean.zip_map(z_t, |mu, z| mu + gain * (z - s * mu))?;
            mean = mean.lincomb(1.0, &m_k, r)?;
        }
        Ok(GmmPosterior {
            responsibilities: resp,
            mean,
        })
    }
}

impl Denoiser for GmmDenoiser {
    fn predict_eps(
        &self,
        z_t: &VideoLatent,
        t: usize,
        cond: &CondKey,
        schedule: &NoiseSchedule,
    ) -> Result<VideoLatent> {
        let post = self.posterior(z_t, t, cond, schedule)?;
        let ab = schedule.alpha_bar(t)?;
        let (s, sigma) = (ab.sqrt(), (1.0 - ab).sqrt());
        z_t.zip_map(&post.mean, |z, m| (z - s * m) / sigma)
    }
}
