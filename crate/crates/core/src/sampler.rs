//! Forward noising, the deterministic DDIM update and its inversion.

use serde::{Deserialize, Serialize};

use crate::denoise::{conditioned_eps, Denoiser};
use crate::error::{Result, VinoError};
use crate::guidance::ConditionSet;
use crate::rng::{gaussian, SeedStream};
use crate::schedule::{noise_to, NoiseSchedule, TimestepPlan};
use crate::tensor::VideoLatent;

/// `z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps` with `eps` drawn from `eps_stream`.
pub fn forward_noise(
    z0: &VideoLatent,
    t: usize,
    schedule: &NoiseSchedule,
    eps_stream: &SeedStream,
) -> Result<VideoLatent> {
    let ab = schedule.alpha_bar(t)?;
    let eps = gaussian(z0.dims(), eps_stream)?;
    noise_to(z0, ab, &eps)
}

fn check_levels(abar_t: f64, abar_prev: f64) -> Result<()> {
    for (name, v) in [("abar_t", abar_t), ("abar_prev", abar_prev)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(VinoError::InvalidParameter(format!(
                "{name} = {v} outside (0, 1]"
            )));
        }
    }
    Ok(())
}

/// One deterministic DDIM step from level `abar_t` to the less noisy `abar_prev`.
pub fn ddim_step(
    z_t: &VideoLatent,
    eps_hat: &VideoLatent,
    abar_t: f64,
    abar_prev: f64,
) -> Result<VideoLatent> {
    check_levels(abar_t, abar_prev)?;
    let (st, nt) = (abar_t.sqrt(), (1.0 - abar_t).sqrt());
    let (sp, np) = (abar_prev.sqrt(), (1.0 - abar_prev).sqrt());
    z_t.zip_map(eps_hat, |z, e| sp * ((z - nt * e) / st) + np * e)
}

/// Algebraic inverse of [`ddim_step`] at fixed `eps_hat`: maps `z_prev` back up to `abar_t`.
pub fn ddim_invert_step(
    z_prev: &VideoLatent,
    eps_hat: &VideoLatent,
    abar_t: f64,
    abar_prev: f64,
) -> Result<VideoLatent> {
    check_levels(abar_t, abar_prev)?;
    let (st, nt) = (abar_t.sqrt(), (1.0 - abar_t).sqrt());
    let (sp, np) = (abar_prev.sqrt(), (1.0 - abar_prev).sqrt());
    z_prev.zip_map(eps_hat, |z, e| st * ((z - np * e) / sp) + nt * e)
}

/// Which prediction drives DDIM inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionGuidance {
    /// Positive condition only, guidance scale 0.
    #[default]
    PositiveOnly,
    /// The same guided prediction used for sampling.
    Conditioned,
}

/// Latents `z_{tau_0} = z0, z_{tau_1}, ..., z_{tau_n}` produced by DDIM inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionTrajectory {
    latents: Vec<VideoLatent>,
    tau: Vec<usize>,
}

impl InversionTrajectory {
    /// Highest reduced index stored.
    pub fn max_index(&self) -> usize {
        self.latents.len() - 1
    }

    /// Latent at reduced index `i`.
    pub fn get(&self, i: usize) -> Result<&VideoLatent> {
        self.latents.get(i).ok_or(VinoError::TrajectoryTooShort {
            needed: i,
            available: self.max_index(),
        })
    }

    pub fn latents(&self) -> &[VideoLatent] {
        &self.latents
    }

    /// Training steps of the stored latents, `tau_0 = 0` first.
    pub fn taus(&self) -> &[usize] {
        &self.tau
    }

    pub fn clean(&self) -> &VideoLatent {
        &self.latents[0]
    }
}

/// DDIM-inverts `z0` along `tau_0 -> tau_up_to`.
///
/// Step `i` evaluates the prediction at the already known latent `z_{tau_{i-1}}`
/// with timestep `tau_i` and applies [`ddim_invert_step`].
pub fn invert_trajectory(
    z0: &VideoLatent,
    schedule: &NoiseSchedule,
    plan: &TimestepPlan,
    denoiser: &dyn Denoiser,
    cond: &ConditionSet,
    up_to: usize,
    guidance: InversionGuidance,
) -> Result<InversionTrajectory> {
    if up_to > plan.nu() {
        return Err(VinoError::InvalidParameter(format!(
            "inversion target {up_to} beyond nu = {}",
            plan.nu()
        )));
    }
    let cond = match guidance {
        InversionGuidance::PositiveOnly => cond.with_scale(0.0)?,
        InversionGuidance::Conditioned => cond.clone(),
    };
    let mut latents = Vec::with_capacity(up_to + 1);
    latents.push(z0.clone());
    for i in 1..=up_to {
        let prev = &latents[i - 1];
        let eps = conditioned_eps(denoiser, prev, plan.tau(i), &cond, schedule)?;
        let next = ddim_invert_step(
            prev,
            &eps,
            plan.alpha_bar(schedule, i)?,
            plan.alpha_bar(schedule, i - 1)?,
        )?;
        latents.push(next);
    }
    Ok(InversionTrajectory {
        latents,
        tau: (0..=up_to).map(|i| plan.tau(i)).collect(),
    })
}

/// Per-step hook applied to the latent reached at a reduced index.
pub type StepHook<'a> = dyn FnMut(usize, VideoLatent) -> Result<VideoLatent> + 'a;

/// Guided DDIM sampling from reduced index `start_index` down to `tau_0`.
///
/// After each step to index `i` the optional `per_step` hook receives
/// `(i, latent)` and returns the latent to continue from.
#[allow(clippy::too_many_arguments)]
pub fn denoise_trajectory(
    z_start: &VideoLatent,
    start_index: usize,
    schedule: &NoiseSchedule,
    plan: &TimestepPlan,
    denoiser: &dyn Denoiser,
    cond: &ConditionSet,
    mut per_step: Option<&mut StepHook<'_>>,
) -> Result<VideoLatent> {
    if start_index > plan.nu() {
        return Err(VinoError::InvalidParameter(format!(
            "start index {start_index} beyond nu = {}",
            plan.nu()
        )));
    }
    let mut z = z_start.clone();
    for t in (1..=start_index).rev() {
        let eps = conditioned_eps(denoiser, &z, plan.tau(t), cond, schedule)?;
        z = ddim_step(
            &z,
            &eps,
            plan.alpha_bar(schedule, t)?,
            plan.alpha_bar(schedule, t - 1)?,
        )?;
        if let Some(hook) = per_step.as_mut() {
            z = hook(t - 1, z)?;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{ConstantDenoiser, GmmDenoiser};
    use crate::guidance::{build_condition_set, HashEmbedder, ImageDescriptor, NegativeTextMode};
    use crate::schedule::{default_schedule, make_plan};
    use crate::tensor::{l2_rel, Dims};
    use proptest::prelude::*;

    fn scalar(v: f64) -> VideoLatent {
        VideoLatent::filled(Dims::new(1, 1, 1, 1), v).unwrap()
    }

    fn conditions(w: f64) -> ConditionSet {
        let p = HashEmbedder::new(8, 1).unwrap();
        build_condition_set(
            &p,
            &ImageDescriptor::named("ref"),
            "prompt",
            "",
            0.5,
            w,
            NegativeTextMode::Plain,
        )
        .unwrap()
    }

    #[test]
    fn forward_noise_cases() {
        let s = default_schedule();
        let d = Dims::new(1, 2, 4, 4);
        let z0 = gaussian(d, &SeedStream::new(1, "z0")).unwrap();
        let st = SeedStream::new(1, "eps");
        assert_eq!(forward_noise(&z0, 0, &s, &st).unwrap(), z0);
        let zero = VideoLatent::zeros(d).unwrap();
        let t = 500;
        let out = forward_noise(&zero, t, &s, &st).unwrap();
        let eps = gaussian(d, &st).unwrap();
        let k = (1.0 - s.alpha_bar(t).unwrap()).sqrt();
        for (o, e) in out.data().iter().zip(eps.data()) {
            assert_eq!(*o, k * e);
        }
        assert!(forward_noise(&z0, 1001, &s, &st).is_err());
    }

    #[test]
    fn forward_noise_unit_variance() {
        let s = default_schedule();
        let d = Dims::new(10, 1, 100, 1000);
        let z0 = gaussian(d, &SeedStream::new(9, "z0")).unwrap();
        let zt = forward_noise(&z0, 600, &s, &SeedStream::new(9, "eps")).unwrap();
        let m = zt.mean();
        let var = zt.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / zt.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn ddim_step_cases() {
        let z = scalar(1.7);
        let zero = scalar(0.0);
        let out = ddim_step(&z, &zero, 0.3, 0.8).unwrap();
        assert!((out.data()[0] - (0.8f64 / 0.3).sqrt() * 1.7).abs() < 1e-14);
        let e = scalar(-0.4);
        let same = ddim_step(&z, &e, 0.42, 0.42).unwrap();
        assert!((same.data()[0] - 1.7).abs() < 1e-14);

        // sqrt(0.64) (1 - sqrt(0.75) 0.5) / sqrt(0.25) + sqrt(0.36) 0.5
        let out = ddim_step(&scalar(1.0), &scalar(0.5), 0.25, 0.64).unwrap();
        let hand = 0.8 * (1.0 - 0.75f64.sqrt() * 0.5) / 0.5 + 0.6 * 0.5;
        assert!((out.data()[0] - hand).abs() < 1e-15);
        assert!(
            (out.data()[0] - 1.207_180).abs() < 5e-7,
            "{}",
            out.data()[0]
        );
        let back = ddim_invert_step(&out, &scalar(0.5), 0.25, 0.64).unwrap();
        assert!((back.data()[0] - 1.0).abs() < 1e-14);

        let up = ddim_invert_step(&z, &zero, 0.3, 0.8).unwrap();
        assert!((up.data()[0] - (0.3f64 / 0.8).sqrt() * 1.7).abs() < 1e-14);

        assert!(ddim_step(&z, &e, 0.0, 0.5).is_err());
        assert!(ddim_step(&z, &e, 0.5, 1.2).is_err());
        assert!(ddim_invert_step(&z, &e, -0.1, 0.5).is_err());
        let wide = VideoLatent::zeros(Dims::new(1, 1, 1, 2)).unwrap();
        assert!(ddim_step(&z, &wide, 0.5, 0.6).is_err());
    }

    #[test]
    fn constant_denoiser_trajectory_matches_closed_form() {
        let s = default_schedule();
        let plan = make_plan(&s, 10, 10).unwrap();
        let c = 0.3;
        let den = ConstantDenoiser::scalar(c).unwrap();
        let cond = conditions(6.0);
        let z0 = scalar(0.8);
        let traj = invert_trajectory(
            &z0,
            &s,
            &plan,
            &den,
            &cond,
            10,
            InversionGuidance::PositiveOnly,
        )
        .unwrap();
        // With constant eps the predicted clean latent is z0 at every step,
        // so by induction z_i = sqrt(ab_i) z0 + sqrt(1 - ab_i) c.
        for i in 0..=10 {
            let ab = plan.alpha_bar(&s, i).unwrap();
            let want = ab.sqrt() * 0.8 + (1.0 - ab).sqrt() * c;
            assert!(
                (traj.get(i).unwrap().data()[0] - want).abs() < 1e-12,
                "i={i}"
            );
        }
        assert_eq!(traj.taus()[0], 0);
        assert!(traj.get(11).is_err());
    }

    #[test]
    fn up_to_zero_keeps_only_z0() {
        let s = default_schedule();
        let plan = make_plan(&s, 50, 20).unwrap();
        let den = ConstantDenoiser::scalar(0.1).unwrap();
        let z0 = scalar(0.2);
        let traj = invert_trajectory(
            &z0,
            &s,
            &plan,
            &den,
            &conditions(6.0),
            0,
            InversionGuidance::PositiveOnly,
        )
        .unwrap();
        assert_eq!(traj.max_index(), 0);
        assert_eq!(traj.clean(), &z0);
        assert!(invert_trajectory(
            &z0,
            &s,
            &plan,
            &den,
            &conditions(6.0),
            51,
            InversionGuidance::PositiveOnly
        )
        .is_err());
    }

    #[test]
    fn denoise_without_hook_is_chained_steps() {
        let s = default_schedule();
        let plan = make_plan(&s, 50, 20).unwrap();
        let den = ConstantDenoiser::scalar(-0.2).unwrap();
        let cond = conditions(0.0);
        let start = scalar(1.3);
        let out = denoise_trajectory(&start, 20, &s, &plan, &den, &cond, None).unwrap();
        let mut z = 1.3f64;
        for t in (1..=20).rev() {
            let (a, b) = (
                s.alpha_bar(20 * t).unwrap(),
                s.alpha_bar(20 * (t - 1)).unwrap(),
            );
            z = b.sqrt() * (z - (1.0 - a).sqrt() * -0.2) / a.sqrt() + (1.0 - b).sqrt() * -0.2;
        }
        assert!((out.data()[0] - z).abs() < 1e-12);
        assert_eq!(
            denoise_trajectory(&start, 0, &s, &plan, &den, &cond, None).unwrap(),
            start
        );
    }

    #[test]
    fn hook_to_background_returns_source() {
        let s = default_schedule();
        let plan = make_plan(&s, 20, 20).unwrap();
        let d = Dims::new(1, 1, 3, 3);
        let z0 = gaussian(d, &SeedStream::new(4, "z0")).unwrap();
        let den = ConstantDenoiser::scalar(0.05).unwrap();
        let cond = conditions(6.0);
        let traj = invert_trajectory(
            &z0,
            &s,
            &plan,
            &den,
            &cond,
            20,
            InversionGuidance::PositiveOnly,
        )
        .unwrap();
        let noise = gaussian(d, &SeedStream::new(4, "other")).unwrap();
        let mut visited = Vec::new();
        let mut hook = |i: usize, _z: VideoLatent| {
            visited.push(i);
            Ok(traj.get(i)?.clone())
        };
        let out = denoise_trajectory(&noise, 20, &s, &plan, &den, &cond, Some(&mut hook)).unwrap();
        assert_eq!(out, z0);
        assert_eq!(visited, (0..20).rev().collect::<Vec<_>>());
    }

    #[test]
    fn constant_round_trip_is_exact() {
        let s = default_schedule();
        let plan = make_plan(&s, 50, 50).unwrap();
        let d = Dims::new(2, 4, 8, 8);
        let z0 = gaussian(d, &SeedStream::new(2, "z0")).unwrap();
        let den = ConstantDenoiser::tensor(gaussian(d, &SeedStream::new(2, "c")).unwrap());
        let cond = conditions(6.0);
        let traj = invert_trajectory(
            &z0,
            &s,
            &plan,
            &den,
            &cond,
            50,
            InversionGuidance::PositiveOnly,
        )
        .unwrap();
        let back =
            denoise_trajectory(traj.get(50).unwrap(), 50, &s, &plan, &den, &cond, None).unwrap();
        assert!(l2_rel(&back, &z0).unwrap() < 1e-9);
    }

    #[test]
    fn gmm_round_trip_improves_with_more_steps() {
        let s = default_schedule();
        let d = Dims::new(1, 3, 6, 6);
        let mu = VideoLatent::from_fn(d, |_, c, y, x| {
            0.1 * c as f64 + 0.05 * (y as f64 - x as f64)
        })
        .unwrap();
        let mut g = GmmDenoiser::new();
        let id = g.add_component(mu, 0.04).unwrap();
        let cond = conditions(0.0);
        g.register(cond.positive_key(), &[(id, 1.0)]).unwrap();
        let z0 = gaussian(d, &SeedStream::new(5, "z0")).unwrap().scale(0.2);
        let err = |nu: usize| {
            let plan = make_plan(&s, nu, nu).unwrap();
            let traj = invert_trajectory(
                &z0,
                &s,
                &plan,
                &g,
                &cond,
                nu,
                InversionGuidance::PositiveOnly,
            )
            .unwrap();
            let back =
                denoise_trajectory(traj.get(nu).unwrap(), nu, &s, &plan, &g, &cond, None).unwrap();
            l2_rel(&back, &z0).unwrap()
        };
        let (e25, e50, e100) = (err(25), err(50), err(100));
        assert!(e100 < e50 && e50 < e25, "{e25} {e50} {e100}");
    }

    proptest! {
        #[test]
        fn step_and_invert_are_mutual_inverses(
            z in -10.0f64..10.0, e in -5.0f64..5.0, a in 0.001f64..1.0, b in 0.001f64..1.0
        ) {
            let down = ddim_step(&scalar(z), &scalar(e), a, b).unwrap();
            let up = ddim_invert_step(&down, &scalar(e), a, b).unwrap();
            let tol = 1e-12 * (z.abs() + e.abs() / a.sqrt().min(b.sqrt())) / a.sqrt().min(b.sqrt()) + 1e-12;
            prop_assert!((up.data()[0] - z).abs() <= tol, "{} vs {z}", up.data()[0]);
        }
    }
}
