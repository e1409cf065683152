//! Variance-preserving diffusion over whole forecast trajectories with a
//! velocity-parameterized denoiser and a deterministic DDIM sampler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{label, RngStream};
use crate::numerics::RealArray;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedulePoint {
    pub alpha: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
}

/// Which noise direction the sampler re-injects after each clean estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDirection {
    /// Reconstructed noise `sigma * x + alpha * v` (standard DDIM).
    #[default]
    EpsilonHat,
    /// The raw velocity estimate.
    LiteralVelocity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub sample_steps: usize,
    pub schedule: ScheduleKind,
    pub noise_direction: NoiseDirection,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            sample_steps: 10,
            schedule: ScheduleKind::Cosine,
            noise_direction: NoiseDirection::EpsilonHat,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_steps == 0 {
            return Err(Error::arg("sample_steps must be at least 1"));
        }
        Ok(())
    }
}

/// `alpha = cos(pi*tau/2)`, `sigma = sin(pi*tau/2)`.
pub fn schedule_at(tau: f64) -> Result<NoiseSchedulePoint> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::arg(format!("diffusion time {tau} outside [0, 1]")));
    }
    let angle = std::f64::consts::FRAC_PI_2 * tau;
    Ok(NoiseSchedulePoint {
        alpha: angle.cos(),
        sigma: angle.sin(),
    })
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "trajectory lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `alpha * a + sigma * b` where the coefficients come from the schedule.
fn combine(a: &[f64], b: &[f64], ca: f64, cb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect()
}

/// Noisy sample `x_tau = alpha * x0 + sigma * eps`.
pub fn forward_noise(x0: &[f64], eps: &[f64], tau: f64) -> Result<Vec<f64>> {
    same_len(x0, eps)?;
    let s = schedule_at(tau)?;
    Ok(combine(x0, eps, s.alpha, s.sigma))
}

/// Velocity target `alpha * eps - sigma * x0`.
pub fn velocity_target(x0: &[f64], eps: &[f64], tau: f64) -> Result<Vec<f64>> {
    same_len(x0, eps)?;
    let s = schedule_at(tau)?;
    Ok(combine(eps, x0, s.alpha, -s.sigma))
}

/// Clean-sample estimate `alpha * x_tau - sigma * v`.
pub fn clean_estimate(x_tau: &[f64], v: &[f64], tau: f64) -> Result<Vec<f64>> {
    same_len(x_tau, v)?;
    let s = schedule_at(tau)?;
    Ok(combine(x_tau, v, s.alpha, -s.sigma))
}

/// A denoiser already bound to its conditioning context.
pub trait VelocityModel {
    /// Trajectory length the model predicts.
    fn horizon(&self) -> usize;

    /// Velocity estimates for several noisy trajectories at one diffusion
    /// time. Rows are independent.
    fn velocity_batch(&self, xs: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>>;

    fn velocity(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        Ok(self
            .velocity_batch(&[x.to_vec()], tau)?
            .pop()
            .expect("one row in, one row out"))
    }
}

/// One training draw: diffusion time, noise, noisy input, and velocity target.
#[derive(Clone, Debug)]
pub struct NoisedSample {
    pub tau: f64,
    pub eps: Vec<f64>,
    pub x_tau: Vec<f64>,
    pub target: Vec<f64>,
}

/// Draws `tau ~ U[0,1)` and `eps ~ N(0, I)` and forms the training pair.
pub fn draw_noised(x0: &[f64], rng: &mut RngStream) -> NoisedSample {
    let tau = rng.uniform();
    let eps = rng.normals(x0.len());
    noised_at(x0, eps, tau)
}

pub fn noised_at(x0: &[f64], eps: Vec<f64>, tau: f64) -> NoisedSample {
    let s = schedule_at(tau).expect("tau drawn from [0, 1]");
    NoisedSample {
        tau,
        x_tau: combine(x0, &eps, s.alpha, s.sigma),
        target: combine(&eps, x0, s.alpha, -s.sigma),
        eps,
    }
}

/// Mean squared velocity error over a batch and the full horizon.
///
/// `model(x_tau, tau, context)` returns the velocity estimate.
pub fn velocity_loss<C, F>(model: F, batch: &[(Vec<f64>, C)], rng: &mut RngStream) -> Result<f64>
where
    F: Fn(&[f64], f64, &C) -> Result<Vec<f64>>,
{
    if batch.is_empty() {
        return Err(Error::arg("velocity loss needs a non-empty batch"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (x0, ctx) in batch {
        let draw = draw_noised(x0, rng);
        let v = model(&draw.x_tau, draw.tau, ctx)?;
        same_len(&v, &draw.target)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("model returned a non-finite velocity"));
        }
        total += v
            .iter()
            .zip(&draw.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += v.len();
    }
    Ok(total / count as f64)
}

/// Runs the sampler in lockstep from the given starting noise, one row per
/// trajectory.
pub fn ddim_from_noise(
    model: &dyn VelocityModel,
    cfg: &DiffusionConfig,
    mut xs: Vec<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let steps = cfg.sample_steps;
    for t in (1..=steps).rev() {
        let tau = t as f64 / steps as f64;
        let tau_prev = (t - 1) as f64 / steps as f64;
        let now = schedule_at(tau)?;
        let prev = schedule_at(tau_prev)?;
        let vs = model.velocity_batch(&xs, tau)?;
        for (row, (x, v)) in xs.iter_mut().zip(&vs).enumerate() {
            for (xi, &vi) in x.iter_mut().zip(v) {
                let x0 = now.alpha * *xi - now.sigma * vi;
                let dir = match cfg.noise_direction {
                    NoiseDirection::EpsilonHat => now.sigma * *xi + now.alpha * vi,
                    NoiseDirection::LiteralVelocity => vi,
                };
                *xi = prev.alpha * x0 + prev.sigma * dir;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite state at sampling step {t} (trajectory {row})"
                )));
            }
        }
    }
    Ok(xs)
}

/// Starting noise for sampling stream `stream` under `root_seed`.
pub fn initial_noise(root_seed: u64, stream: u64, horizon: usize) -> Vec<f64> {
    RngStream::derive(root_seed, &[label::SAMPLING, stream]).normals(horizon)
}

/// One deterministic trajectory from `x_1 ~ N(0, I)` drawn with `seed`.
pub fn ddim_sample(model: &dyn VelocityModel, cfg: &DiffusionConfig, seed: u64) -> Result<Vec<f64>> {
    let x = initial_noise(seed, 0, model.horizon());
    Ok(ddim_from_noise(model, cfg, vec![x])?.pop().expect("one row"))
}

/// `members x horizon` samples; member `m` starts from stream `(root_seed, m)`.
pub fn generate_ensemble(
    model: &dyn VelocityModel,
    cfg: &DiffusionConfig,
    members: usize,
    root_seed: u64,
) -> Result<RealArray> {
    if members == 0 {
        return Err(Error::arg("ensemble needs at least one member"));
    }
    let horizon = model.horizon();
    let noise = (0..members)
        .map(|m| initial_noise(root_seed, m as u64, horizon))
        .collect();
    let rows = ddim_from_noise(model, cfg, noise).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(msg.replace("trajectory", "member")),
        other => other,
    })?;
    RealArray::matrix(members, horizon, rows.concat())
}
