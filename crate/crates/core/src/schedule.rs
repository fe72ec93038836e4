//! Noise schedules, reduced DDIM timestep plans and rho-start initialization.
//!
//! Throughout the crate `alpha_bar[t]` is the cumulative signal retention
//! `prod_{s <= t} (1 - beta_s)` with `alpha_bar[0] = 1`, and the DDIM update is
//! written in terms of these cumulative products.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VinoError};
use crate::rng::{gaussian, SeedStream};
use crate::tensor::VideoLatent;

/// Interpolation used between `beta_start` and `beta_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSpacing {
    /// Linear in `sqrt(beta)` (the latent-diffusion "scaled linear" schedule).
    #[default]
    SqrtLinear,
    /// Linear in `beta`.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit `beta_1..beta_T`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(VinoError::InvalidParameter("schedule needs T >= 1".into()));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b < 1.0))
        {
            return Err(VinoError::InvalidParameter(format!(
                "beta_{} = {b} is outside (0, 1)",
                i + 1
            )));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { betas, alpha_bar })
    }

    /// Number of training steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar[0..=T]`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or_else(|| {
            VinoError::InvalidParameter(format!("timestep {t} outside [0, {}]", self.steps()))
        })
    }
}

/// `T` betas interpolated from `beta_start` to `beta_end` with the given spacing.
pub fn linear_schedule_with(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    spacing: BetaSpacing,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(VinoError::InvalidParameter("schedule needs T >= 1".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(VinoError::InvalidParameter(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let frac = |i: usize| {
        if steps == 1 {
            0.0
        } else {
            i as f64 / (steps - 1) as f64
        }
    };
    let betas = match spacing {
        BetaSpacing::Linear => (0..steps)
            .map(|i| beta_start + frac(i) * (beta_end - beta_start))
            .collect(),
        BetaSpacing::SqrtLinear => {
            let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
            (0..steps)
                .map(|i| {
                    let s = a + frac(i) * (b - a);
                    s * s
                })
                .collect()
        }
    };
    NoiseSchedule::from_betas(betas)
}

/// Schedule with the default `sqrt(beta)`-linear spacing.
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    linear_schedule_with(steps, beta_start, beta_end, BetaSpacing::SqrtLinear)
}

/// Default backbone schedule: `T = 1000`, beta from 0.00085 to 0.012.
pub fn default_schedule() -> NoiseSchedule {
    linear_schedule(1000, 0.00085, 0.012).expect("default schedule parameters are valid")
}

/// Reduced DDIM subsequence `tau_1 < ... < tau_nu` with a start index `rho`.
///
/// `tau(0)` is the clean end of the trajectory (training step 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPlan {
    tau: Vec<usize>,
    rho: usize,
}

impl TimestepPlan {
    pub fn nu(&self) -> usize {
        self.tau.len() - 1
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    /// Training step of reduced index `i`, `0 <= i <= nu`.
    pub fn tau(&self, i: usize) -> usize {
        self.tau[i]
    }

    /// `tau_1..=tau_nu`.
    pub fn taus(&self) -> &[usize] {
        &self.tau[1..]
    }

    /// Same subsequence, different start index.
    pub fn with_rho(&self, rho: usize) -> Result<Self> {
        check_rho(rho, self.nu())?;
        Ok(Self {
            tau: self.tau.clone(),
            rho,
        })
    }

    /// `alpha_bar` at reduced index `i`.
    pub fn alpha_bar(&self, schedule: &NoiseSchedule, i: usize) -> Result<f64> {
        let t = *self.tau.get(i).ok_or_else(|| {
            VinoError::InvalidParameter(format!("reduced index {i} outside [0, {}]", self.nu()))
        })?;
        schedule.alpha_bar(t)
    }
}

fn check_rho(rho: usize, nu: usize) -> Result<()> {
    if rho == 0 || rho > nu {
        return Err(VinoError::InvalidParameter(format!(
            "rho = {rho} outside [1, nu = {nu}]"
        )));
    }
    Ok(())
}

/// Uniform plan `tau_i = round(i * T / nu)`.
pub fn make_plan(schedule: &NoiseSchedule, nu: usize, rho: usize) -> Result<TimestepPlan> {
    let steps = schedule.steps();
    if nu == 0 || nu > steps {
        return Err(VinoError::InvalidParameter(format!(
            "nu = {nu} outside [1, T = {steps}]"
        )));
    }
    check_rho(rho, nu)?;
    // round half up in integer arithmetic
    let tau: Vec<usize> = (0..=nu).map(|i| (2 * i * steps + nu) / (2 * nu)).collect();
    assert!(
        tau.windows(2).all(|w| w[0] < w[1]),
        "uniform plan must be strictly increasing for nu <= T"
    );
    Ok(TimestepPlan { tau, rho })
}

/// `sqrt(ab) * z0 + sqrt(1 - ab) * noise`.
pub fn noise_to(z0: &VideoLatent, alpha_bar: f64, noise: &VideoLatent) -> Result<VideoLatent> {
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(VinoError::InvalidParameter(format!(
            "alpha_bar = {alpha_bar} outside [0, 1]"
        )));
    }
    z0.lincomb(alpha_bar.sqrt(), noise, (1.0 - alpha_bar).sqrt())
}

/// Starting latent at `tau_rho`, noised directly from the clean latents.
pub fn rho_start_latent(
    z0: &VideoLatent,
    schedule: &NoiseSchedule,
    plan: &TimestepPlan,
    eta_stream: &SeedStream,
) -> Result<VideoLatent> {
    if plan.tau(plan.nu()) > schedule.steps() {
        return Err(VinoError::InvalidParameter(
            "plan does not belong to this schedule".into(),
        ));
    }
    let ab = plan.alpha_bar(schedule, plan.rho())?;
    let eta = gaussian(z0.dims(), eta_stream)?;
    noise_to(z0, ab, &eta)
}
