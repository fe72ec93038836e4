//! Training-free two-stage video object editing in latent space.
//!
//! The engine builds a structured starting noise for each stage by partially
//! noising the clean latents (rho-start), denoises with classifier-free
//! guidance, and after every DDIM step blends the edited foreground with the
//! DDIM-inverted source background under a dilated mask. The second stage
//! repeats this from the rough edit using the union of the dilated source and
//! rough masks.
//!
//! Every learned component sits behind a trait ([`Denoiser`], [`Codec`],
//! [`EmbeddingProvider`], [`Segmenter`]) and ships with an analytic stand-in.

pub mod codec;
pub mod denoise;
pub mod error;
pub mod guidance;
pub mod masking;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;

pub use codec::{Codec, IdentityCodec, LinearCodec};
pub use denoise::{conditioned_eps, ConstantDenoiser, Denoiser, GmmDenoiser};
pub use error::{Result, VinoError};
pub use guidance::{
    build_condition_set, cfg_combine, zero_image_guidance, CondKey, ConditionSet, Embedding,
    EmbeddingProvider, HashEmbedder, ImageDescriptor, NegativeTextMode,
};
pub use masking::{
    build_final_mask, build_final_mask_with, dilate, downsample_mask, mask_union, ColorSegmenter,
    SegmentTarget, Segmenter,
};
pub use pipeline::{
    paste_rough, run_edit, run_stage, EditConfig, EditDeps, EditOutcome, ScheduleConfig, Stage,
    StageResult,
};
pub use rng::{gaussian, SeedStream};
pub use sampler::{
    ddim_invert_step, ddim_step, denoise_trajectory, forward_noise, invert_trajectory,
    InversionGuidance, InversionTrajectory,
};
pub use schedule::{
    default_schedule, linear_schedule, linear_schedule_with, make_plan, rho_start_latent,
    BetaSpacing, NoiseSchedule, TimestepPlan,
};
pub use tensor::{blend, l2_rel, BinaryMask, Dims, Video, VideoLatent};
