//! Config-driven edit runs and their container outputs.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use vino_core::{run_edit, EditOutcome, Video};

use crate::config::RunConfig;
use crate::container::{Container, Kind};
use crate::error::Result;
use crate::scenario::{synth_video, ScenarioSpec};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs the two-stage edit described by `cfg` on `source`.
pub fn edit(cfg: &RunConfig, source: &Video) -> Result<EditOutcome> {
    let models = cfg.models(source)?;
    Ok(run_edit(source, &cfg.edit, &models.deps())?)
}

fn edit_meta(cfg: &RunConfig, source: &Video, role: &str) -> Value {
    let src_bytes = Container::video(source, Value::Null)
        .to_bytes()
        .expect("valid video");
    json!({
        "role": role,
        "config": cfg.resolved(),
        "source_sha256": sha256_hex(&src_bytes),
        "tool": concat!("vino ", env!("CARGO_PKG_VERSION")),
    })
}

/// `edited.vint` for an outcome, with the resolved config in its metadata.
pub fn edited_container(cfg: &RunConfig, source: &Video, outcome: &EditOutcome) -> Container {
    Container::video(outcome.edited(), edit_meta(cfg, source, "edited"))
}

pub fn rough_container(cfg: &RunConfig, source: &Video, outcome: &EditOutcome) -> Container {
    Container::video(&outcome.rough_video, edit_meta(cfg, source, "rough"))
}

/// The four masks of an outcome keyed by file stem.
pub fn mask_containers(outcome: &EditOutcome) -> Vec<(&'static str, Container)> {
    [
        ("source_mask", &outcome.source_mask),
        ("source_mask_dilated", &outcome.source_mask_dilated),
        ("rough_mask", &outcome.rough_mask),
        ("final_mask", &outcome.final_mask),
    ]
    .into_iter()
    .map(|(name, m)| (name, Container::mask(m, json!({ "role": name }))))
    .collect()
}

/// Source and ground-truth mask containers for a scenario.
pub fn synth_containers(spec: &ScenarioSpec) -> Result<(Container, Container)> {
    let (video, mask) = synth_video(spec)?;
    let meta = json!({ "scenario": spec });
    Ok((
        Container::from_latent(&video, Kind::Video, meta.clone()),
        Container::mask(&mask, meta),
    ))
}
