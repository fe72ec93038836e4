//! `vino` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;
use vino_core::{
    denoise_trajectory, invert_trajectory, l2_rel, make_plan, InversionGuidance, VideoLatent,
};

use crate::checks;
use crate::config::{DenoiserChoice, RunConfig};
use crate::container::{Container, Kind};
use crate::error::{HarnessError, Result};
use crate::metrics::{changed_pixel_fraction, psnr, psnr_json, temporal_score};
use crate::ppm::write_frames;
use crate::run::{edit, edited_container, mask_containers, rough_container, synth_containers};
use crate::scenario::ScenarioSpec;

#[derive(Debug, Parser)]
#[command(
    name = "vino",
    version,
    about = "Two-stage training-free video object editing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scenario to a source video and its ground-truth mask.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Video and mask output paths.
        #[arg(long, num_args = 2, value_names = ["VIDEO", "MASK"])]
        out: Vec<PathBuf>,
    },
    /// Run the two-stage edit.
    Edit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_rough: Option<PathBuf>,
        #[arg(long)]
        dump_masks: Option<PathBuf>,
        #[arg(long)]
        frames_ppm: Option<PathBuf>,
    },
    /// DDIM-invert a source video and store the trajectory.
    Invert {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        nu: usize,
        #[arg(long)]
        out: PathBuf,
        /// Run config supplying codec, denoiser and conditions.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// PSNR, temporal score and changed-pixel fraction of `a` against `b`.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Restrict PSNR to this mask.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write the canonical scenario and run config.
    Canonical {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the acceptance and invariant checks.
    Selftest,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_video(path: &Path) -> Result<VideoLatent> {
    let c = Container::load(path)?;
    if c.kind == Kind::Mask {
        return Err(HarnessError::Format(format!(
            "{} holds a mask, expected a video",
            path.display()
        )));
    }
    c.to_latent()
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v).map_err(|e| HarnessError::Format(e.to_string()))? + "\n")
}

/// Executes one command, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out: paths } => {
            let spec: ScenarioSpec = read_json(&spec)?;
            let (video, mask) = synth_containers(&spec)?;
            video.save(&paths[0])?;
            mask.save(&paths[1])?;
            writeln!(
                out,
                "wrote {} and {}",
                paths[0].display(),
                paths[1].display()
            )?;
        }
        Command::Edit {
            config,
            source,
            out: out_path,
            dump_rough,
            dump_masks,
            frames_ppm,
        } => {
            let cfg = read_config(&config)?;
            let src = load_video(&source)?;
            let outcome = edit(&cfg, &src)?;
            edited_container(&cfg, &src, &outcome).save(&out_path)?;
            if let Some(p) = dump_rough {
                rough_container(&cfg, &src, &outcome).save(&p)?;
            }
            if let Some(dir) = dump_masks {
                std::fs::create_dir_all(&dir)?;
                for (name, c) in mask_containers(&outcome) {
                    c.save(&dir.join(format!("{name}.vint")))?;
                }
            }
            if let Some(dir) = frames_ppm {
                write_frames(outcome.edited(), &dir)?;
            }
            writeln!(
                out,
                "edited {} -> {} (final mask {} px)",
                src.dims(),
                out_path.display(),
                outcome.final_mask.count_ones()
            )?;
        }
        Command::Invert {
            source,
            nu,
            out: out_path,
            config,
        } => {
            let src = load_video(&source)?;
            let mut cfg = match config {
                Some(p) => read_config(&p)?,
                None => {
                    let mut c = RunConfig::canonical();
                    c.denoiser = DenoiserChoice::SourceGaussian { variance: 0.1 };
                    c
                }
            };
            cfg.edit.nu = nu;
            cfg.edit.rho_stage1 = cfg.edit.rho_stage1.min(nu.max(1));
            cfg.edit.rho_stage2 = cfg.edit.rho_stage2.min(nu.max(1));
            cfg.validate()?;
            let models = cfg.models(&src)?;
            let schedule = cfg.edit.schedule.build()?;
            let plan = make_plan(&schedule, nu, nu)?;
            let e = &cfg.edit;
            let cond = vino_core::build_condition_set(
                &models.provider,
                &e.ref_image,
                &e.text,
                &e.neg_text,
                e.gamma,
                e.w,
                e.neg_text_mode,
            )?;
            let z0 = models.codec.encode(&src)?;
            let denoiser = models.denoiser.as_ref();
            let traj = invert_trajectory(
                &z0,
                &schedule,
                &plan,
                denoiser,
                &cond,
                nu,
                e.inversion_guidance,
            )?;
            let recon_cond = match e.inversion_guidance {
                InversionGuidance::PositiveOnly => cond.with_scale(0.0)?,
                InversionGuidance::Conditioned => cond.clone(),
            };
            let recon = denoise_trajectory(
                traj.get(nu)?,
                nu,
                &schedule,
                &plan,
                denoiser,
                &recon_cond,
                None,
            )?;
            let err = l2_rel(&recon, &z0)?;
            let stacked = VideoLatent::concat_frames(traj.latents())?;
            let meta = json!({
                "role": "trajectory",
                "frames_per_latent": src.dims().frames,
                "tau": traj.taus(),
                "roundtrip_rel_error": err,
                "config": cfg.resolved(),
            });
            Container::from_latent(&stacked, Kind::Latent, meta).save(&out_path)?;
            writeln!(
                out,
                "inverted {} steps, round-trip relative error {err:e}",
                nu
            )?;
        }
        Command::Metrics { a, b, mask, json } => {
            let va = load_video(&a)?;
            let vb = load_video(&b)?;
            let region = mask.map(|p| Container::load(&p)?.to_mask()).transpose()?;
            let p = psnr(&va, &vb, region.as_ref())?;
            let provider = RunConfig::canonical().embedder.build()?;
            let temporal = temporal_score(&va, &provider)?;
            let changed = changed_pixel_fraction(&va, &vb)?;
            if json {
                let v = json!({
                    "psnr": psnr_json(p),
                    "temporal": temporal,
                    "changed_pixel_fraction": changed,
                });
                write!(out, "{}", pretty(&v)?)?;
            } else {
                let ps = if p.is_infinite() {
                    "inf".to_string()
                } else {
                    format!("{p:.4}")
                };
                writeln!(out, "psnr {ps} dB")?;
                writeln!(out, "temporal {temporal:.6}")?;
                writeln!(out, "changed_pixel_fraction {changed:.6}")?;
            }
        }
        Command::Canonical { spec, config } => {
            std::fs::write(&spec, pretty(&ScenarioSpec::canonical())?)?;
            std::fs::write(&config, pretty(&RunConfig::canonical().resolved())?)?;
            writeln!(out, "wrote {} and {}", spec.display(), config.display())?;
        }
        Command::Selftest => {
            let results = checks::selftest();
            for c in &results {
                writeln!(out, "{c}")?;
            }
            let failed = results.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(HarnessError::Check(format!(
                    "{failed} of {} checks failed",
                    results.len()
                )));
            }
            writeln!(out, "all {} checks passed", results.len())?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("vino: {e}");
            e.exit_code()
        }
    }
}
