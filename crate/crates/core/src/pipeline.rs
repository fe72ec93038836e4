//! The two-stage editing procedure: rough edit, pixel paste, refined edit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::denoise::Denoiser;
use crate::error::{Result, VinoError};
use crate::guidance::{
    build_condition_set, ConditionSet, EmbeddingProvider, ImageDescriptor, NegativeTextMode,
};
use crate::masking::{build_final_mask_with, dilate, downsample_mask, SegmentTarget, Segmenter};
use crate::rng::SeedStream;
use crate::sampler::{
    denoise_trajectory, invert_trajectory, InversionGuidance, InversionTrajectory,
};
use crate::schedule::{
    linear_schedule_with, make_plan, rho_start_latent, BetaSpacing, NoiseSchedule, TimestepPlan,
};
use crate::tensor::{blend, BinaryMask, Video, VideoLatent};

/// Noise schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default)]
    pub spacing: BetaSpacing,
}

fn default_steps() -> usize {
    1000
}
fn default_beta_start() -> f64 {
    0.00085
}
fn default_beta_end() -> f64 {
    0.012
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            spacing: BetaSpacing::default(),
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_schedule_with(self.steps, self.beta_start, self.beta_end, self.spacing)
    }
}

fn default_nu() -> usize {
    50
}
fn default_rho() -> usize {
    20
}
fn default_k() -> usize {
    3
}
fn default_gamma() -> f64 {
    0.5
}
fn default_w() -> f64 {
    6.0
}

/// Parameters of one edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditConfig {
    #[serde(default = "default_nu")]
    pub nu: usize,
    #[serde(default = "default_rho")]
    pub rho_stage1: usize,
    #[serde(default = "default_rho")]
    pub rho_stage2: usize,
    /// Dilation kernel for the source mask (and the rough mask unless `k_rough` is set).
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub k_rough: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub neg_text: String,
    pub ref_image: ImageDescriptor,
    /// Object segmented in the source video.
    pub source_object: SegmentTarget,
    /// Object segmented in the rough edit.
    pub target_object: SegmentTarget,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub inversion_guidance: InversionGuidance,
    #[serde(default)]
    pub neg_text_mode: NegativeTextMode,
}

impl EditConfig {
    /// Defaults everywhere except the three descriptors.
    pub fn new(
        ref_image: ImageDescriptor,
        source_object: SegmentTarget,
        target_object: SegmentTarget,
    ) -> Self {
        Self {
            nu: default_nu(),
            rho_stage1: default_rho(),
            rho_stage2: default_rho(),
            k: default_k(),
            k_rough: None,
            gamma: default_gamma(),
            w: default_w(),
            seed: 0,
            text: String::new(),
            neg_text: String::new(),
            ref_image,
            source_object,
            target_object,
            schedule: ScheduleConfig::default(),
            inversion_guidance: InversionGuidance::default(),
            neg_text_mode: NegativeTextMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VinoError::InvalidParameter(m));
        if self.nu == 0 || self.nu > self.schedule.steps {
            return bad(format!(
                "nu = {} outside [1, {}]",
                self.nu, self.schedule.steps
            ));
        }
        for (name, rho) in [
            ("rho_stage1", self.rho_stage1),
            ("rho_stage2", self.rho_stage2),
        ] {
            if rho == 0 || rho > self.nu {
                return bad(format!("{name} = {rho} outside [1, nu = {}]", self.nu));
            }
        }
        for k in std::iter::once(self.k).chain(self.k_rough) {
            if k.is_multiple_of(2) {
                return bad(format!("kernel {k} must be odd and >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return bad(format!("w = {} must be finite and >= 0", self.w));
        }
        for (name, t) in [
            ("source_object", &self.source_object),
            ("target_object", &self.target_object),
        ] {
            if t.radius.is_nan() || t.radius < 0.0 || t.color.iter().any(|c| !c.is_finite()) {
                return bad(format!("{name} descriptor is invalid"));
            }
        }
        self.schedule.build().map(|_| ())
    }

    pub fn k_rough(&self) -> usize {
        self.k_rough.unwrap_or(self.k)
    }

    pub fn rho(&self, stage: Stage) -> usize {
        match stage {
            Stage::Rough => self.rho_stage1,
            Stage::Refine => self.rho_stage2,
        }
    }
}

/// Which of the two stages a [`run_stage`] call performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Rough,
    Refine,
}

impl Stage {
    fn eta_label(self) -> &'static str {
        match self {
            Stage::Rough => "stage1.eta",
            Stage::Refine => "stage2.eta",
        }
    }
}

/// Borrowed model components.
#[derive(Clone, Copy)]
pub struct EditDeps<'a> {
    pub codec: &'a dyn Codec,
    pub denoiser: &'a dyn Denoiser,
    pub provider: &'a dyn EmbeddingProvider,
    pub segmenter: &'a dyn Segmenter,
}

/// Output of one stage.
#[derive(Debug, Clone)]
pub struct StageResult {
    /// Blended latent at `tau_0`.
    pub latent: VideoLatent,
    /// `decode(latent)`.
    pub frames: Video,
    /// Latent-space mask used for blending.
    pub mask: BinaryMask,
    /// Background trajectory consumed by the blend.
    pub trajectory: Arc<InversionTrajectory>,
}

/// Both stages of an edit together with every intermediate mask (pixel space).
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub rough: StageResult,
    /// Stage-1 frames after pasting onto the source.
    pub rough_video: Video,
    pub refined: StageResult,
    pub source_mask: BinaryMask,
    pub source_mask_dilated: BinaryMask,
    pub rough_mask: BinaryMask,
    pub final_mask: BinaryMask,
}

impl EditOutcome {
    pub fn edited(&self) -> &Video {
        &self.refined.frames
    }
}

struct Engine {
    schedule: NoiseSchedule,
    plan: TimestepPlan,
    cond: ConditionSet,
}

impl Engine {
    fn new(cfg: &EditConfig, provider: &dyn EmbeddingProvider) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let plan = make_plan(&schedule, cfg.nu, cfg.rho_stage1)?;
        let cond = build_condition_set(
            provider,
            &cfg.ref_image,
            &cfg.text,
            &cfg.neg_text,
            cfg.gamma,
            cfg.w,
            cfg.neg_text_mode,
        )?;
        Ok(Self {
            schedule,
            plan,
            cond,
        })
    }

    fn invert(
        &self,
        z0: &VideoLatent,
        cfg: &EditConfig,
        deps: &EditDeps<'_>,
    ) -> Result<InversionTrajectory> {
        invert_trajectory(
            z0,
            &self.schedule,
            &self.plan,
            deps.denoiser,
            &self.cond,
            cfg.nu,
            cfg.inversion_guidance,
        )
    }

    fn stage(
        &self,
        z0_init: &VideoLatent,
        traj: &Arc<InversionTrajectory>,
        mask: &BinaryMask,
        cfg: &EditConfig,
        deps: &EditDeps<'_>,
        stage: Stage,
    ) -> Result<StageResult> {
        let rho = cfg.rho(stage);
        mask.ensure_matches(z0_init)?;
        let bg0 = traj.get(0)?;
        bg0.ensure_same_dims(z0_init, "stage background")?;
        traj.get(rho)?;
        let plan = self.plan.with_rho(rho)?;
        let eta = SeedStream::new(cfg.seed, stage.eta_label());
        let start = rho_start_latent(z0_init, &self.schedule, &plan, &eta)?;
        let mut hook = |i: usize, z_fg: VideoLatent| blend(&z_fg, traj.get(i)?, mask);
        let latent = denoise_trajectory(
            &start,
            rho,
            &self.schedule,
            &plan,
            deps.denoiser,
            &self.cond,
            Some(&mut hook),
        )?;
        let frames = deps.codec.decode(&latent)?;
        Ok(StageResult {
            latent,
            frames,
            mask: mask.clone(),
            trajectory: Arc::clone(traj),
        })
    }
}

/// One stage: rho-start from `z0_init`, then guided DDIM sampling with the
/// foreground blended onto `source_traj` under `mask` after every step.
pub fn run_stage(
    z0_init: &VideoLatent,
    source_traj: &Arc<InversionTrajectory>,
    mask: &BinaryMask,
    cfg: &EditConfig,
    deps: &EditDeps<'_>,
    stage: Stage,
) -> Result<StageResult> {
    Engine::new(cfg, deps.provider)?.stage(z0_init, source_traj, mask, cfg, deps, stage)
}

/// Pixel-space composite `rough * mask + source * (1 - mask)`.
pub fn paste_rough(rough: &Video, source: &Video, mask: &BinaryMask) -> Result<Video> {
    blend(rough, source, mask)
}

fn segment_nonempty(
    deps: &EditDeps<'_>,
    video: &Video,
    target: &SegmentTarget,
    what: &str,
) -> Result<BinaryMask> {
    let m = deps.segmenter.segment(video, target)?;
    m.ensure_matches(video)?;
    if m.is_empty_mask() {
        return Err(VinoError::EmptyMask(format!(
            "segmentation of the {what} found no foreground"
        )));
    }
    Ok(m)
}

/// Full two-stage edit of `source`.
pub fn run_edit(source: &Video, cfg: &EditConfig, deps: &EditDeps<'_>) -> Result<EditOutcome> {
    source.validate()?;
    let engine = Engine::new(cfg, deps.provider)?;
    let s = deps.codec.scale();

    // stage 1
    let source_mask = segment_nonempty(deps, source, &cfg.source_object, "source video")?;
    let source_mask_dilated = dilate(&source_mask, cfg.k)?;
    let z0 = deps.codec.encode(source)?;
    let traj = Arc::new(engine.invert(&z0, cfg, deps)?);
    let m1 = downsample_mask(&source_mask_dilated, s)?;
    let rough = engine.stage(&z0, &traj, &m1, cfg, deps, Stage::Rough)?;
    let rough_video = paste_rough(&rough.frames, source, &source_mask_dilated)?;

    // stage 2: start from the rough edit, keep the source background.
    // Inverting E(V_s) again reproduces `traj` bit for bit, so it is reused.
    let rough_mask = segment_nonempty(deps, &rough_video, &cfg.target_object, "rough edit")?;
    let final_mask = build_final_mask_with(&source_mask, cfg.k, &rough_mask, cfg.k_rough())?;
    let z0_rough = deps.codec.encode(&rough_video)?;
    let m2 = downsample_mask(&final_mask, s)?;
    let refined = engine.stage(&z0_rough, &traj, &m2, cfg, deps, Stage::Refine)?;

    Ok(EditOutcome {
        rough,
        rough_video,
        refined,
        source_mask,
        source_mask_dilated,
        rough_mask,
        final_mask,
    })
}
