//! Run configuration: the edit parameters plus codec, denoiser and embedder choices.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vino_core::{
    build_condition_set, Codec, ColorSegmenter, ConstantDenoiser, Denoiser, EditConfig, EditDeps,
    GmmDenoiser, HashEmbedder, IdentityCodec, InversionGuidance, LinearCodec, Video,
};

use crate::error::{HarnessError, Result};
use crate::scenario::{render_target, ScenarioSpec};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CodecChoice {
    #[default]
    Identity,
    Linear {
        seed: u64,
    },
}

fn default_pos_variance() -> f64 {
    0.01
}
fn default_neg_variance() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserChoice {
    /// Positive condition -> encoded target render, negative -> encoded source.
    ScenarioGmm {
        scenario: ScenarioSpec,
        #[serde(default = "default_pos_variance")]
        pos_variance: f64,
        #[serde(default = "default_neg_variance")]
        neg_variance: f64,
    },
    /// Single Gaussian at the encoded source for every condition.
    SourceGaussian {
        variance: f64,
    },
    Constant {
        value: f64,
    },
}

fn default_dim() -> usize {
    64
}
fn default_embed_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_embed_seed")]
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            seed: default_embed_seed(),
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<HashEmbedder> {
        Ok(HashEmbedder::new(self.dim, self.seed)?)
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub edit: EditConfig,
    #[serde(default)]
    pub codec: CodecChoice,
    pub denoiser: DenoiserChoice,
    #[serde(default)]
    pub embedder: EmbedderConfig,
}

impl RunConfig {
    /// Edit for `scenario` with ρ₁ = ρ₂ = 20, ν = 50, k = 3, γ = 0.5, w = 6.
    pub fn for_scenario(scenario: &ScenarioSpec) -> Self {
        let edit = EditConfig::new(
            scenario.target_image(),
            scenario.source_segment(),
            scenario.target_segment(),
        );
        Self {
            version: CONFIG_VERSION,
            edit,
            codec: CodecChoice::Identity,
            denoiser: DenoiserChoice::ScenarioGmm {
                scenario: scenario.clone(),
                pos_variance: default_pos_variance(),
                neg_variance: default_neg_variance(),
            },
            embedder: EmbedderConfig::default(),
        }
    }

    pub fn canonical() -> Self {
        Self::for_scenario(&ScenarioSpec::canonical())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.edit
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match &self.denoiser {
            DenoiserChoice::ScenarioGmm {
                scenario,
                pos_variance,
                neg_variance,
            } => {
                scenario.validate()?;
                if !(*pos_variance >= 0.0 && *neg_variance >= 0.0) {
                    return Err(HarnessError::Config("GMM variances must be >= 0".into()));
                }
            }
            DenoiserChoice::SourceGaussian { variance } if variance.is_nan() || *variance < 0.0 => {
                return Err(HarnessError::Config("variance must be >= 0".into()));
            }
            DenoiserChoice::Constant { value } if !value.is_finite() => {
                return Err(HarnessError::Config("constant must be finite".into()));
            }
            _ => {}
        }
        if self.embedder.dim == 0 {
            return Err(HarnessError::Config("embedder dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Fully resolved config, every default written out.
    pub fn resolved(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Instantiates codec, embedder and denoiser for editing `source`.
    pub fn models(&self, source: &Video) -> Result<Models> {
        self.validate()?;
        let channels = source.dims().channels;
        let codec: Box<dyn Codec> = match self.codec {
            CodecChoice::Identity => Box::new(IdentityCodec),
            CodecChoice::Linear { seed } => Box::new(LinearCodec::seeded(channels, seed)?),
        };
        let provider = self.embedder.build()?;
        let e = &self.edit;
        let cond = build_condition_set(
            &provider,
            &e.ref_image,
            &e.text,
            &e.neg_text,
            e.gamma,
            e.w,
            e.neg_text_mode,
        )?;
        let z_src = codec.encode(source)?;
        let denoiser: Box<dyn Denoiser> = match &self.denoiser {
            DenoiserChoice::ScenarioGmm {
                scenario,
                pos_variance,
                neg_variance,
            } => {
                let (target, _) = render_target(scenario)?;
                if target.dims() != source.dims() {
                    return Err(HarnessError::Config(format!(
                        "scenario renders {} but the source is {}",
                        target.dims(),
                        source.dims()
                    )));
                }
                let mut g = GmmDenoiser::new();
                let pos = g.add_component(codec.encode(&target)?, *pos_variance)?;
                let neg = g.add_component(z_src, *neg_variance)?;
                g.register(cond.positive_key(), &[(pos, 1.0)])?;
                if cond.negative_key() != cond.positive_key() {
                    g.register(cond.negative_key(), &[(neg, 1.0)])?;
                }
                Box::new(g)
            }
            DenoiserChoice::SourceGaussian { variance } => {
                let mut g = GmmDenoiser::new();
                let id = g.add_component(z_src, *variance)?;
                g.register(cond.positive_key(), &[(id, 1.0)])?;
                if cond.negative_key() != cond.positive_key() {
                    g.register(cond.negative_key(), &[(id, 1.0)])?;
                }
                Box::new(g)
            }
            DenoiserChoice::Constant { value } => Box::new(ConstantDenoiser::scalar(*value)?),
        };
        Ok(Models {
            codec,
            denoiser,
            provider,
            segmenter: ColorSegmenter,
        })
    }

    pub fn inversion_guidance(&self) -> InversionGuidance {
        self.edit.inversion_guidance
    }
}

/// Owned model components for one run.
pub struct Models {
    pub codec: Box<dyn Codec>,
    pub denoiser: Box<dyn Denoiser>,
    pub provider: HashEmbedder,
    pub segmenter: ColorSegmenter,
}

impl Models {
    pub fn deps(&self) -> EditDeps<'_> {
        EditDeps {
            codec: self.codec.as_ref(),
            denoiser: self.denoiser.as_ref(),
            provider: &self.provider,
            segmenter: &self.segmenter,
        }
    }
}
