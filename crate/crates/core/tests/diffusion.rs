//! Sampler checks against a Gaussian data distribution, where the optimal
//! denoiser and the exact noise-to-data map have closed forms.

use hydrodiff::diffusion::{
    clean_estimate, ddim_from_noise, forward_noise, generate_ensemble, schedule_at, velocity_target,
    DiffusionConfig, VelocityModel,
};
use hydrodiff::Result;
use proptest::prelude::*;

/// Optimal velocity for data drawn independently from `N(mean, std^2)`.
struct GaussianDenoiser {
    mean: Vec<f64>,
    std: f64,
}

impl VelocityModel for GaussianDenoiser {
    fn horizon(&self) -> usize {
        self.mean.len()
    }

    fn velocity_batch(&self, xs: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
        let s = schedule_at(tau)?;
        let var = self.std * self.std;
        let gain = s.alpha * var / (s.alpha * s.alpha * var + s.sigma * s.sigma);
        Ok(xs
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&self.mean)
                    .map(|(&xt, &m)| {
                        let x0 = m + gain * (xt - s.alpha * m);
                        let eps = if s.sigma > 0.0 { (xt - s.alpha * x0) / s.sigma } else { 0.0 };
                        s.alpha * eps - s.sigma * x0
                    })
                    .collect()
            })
            .collect())
    }
}

#[test]
fn many_step_sampling_follows_the_exact_flow_map() {
    // The probability-flow map sends z to mean + std * z for Gaussian data.
    let model = GaussianDenoiser {
        mean: vec![0.5, -1.0, 2.0],
        std: 0.4,
    };
    let z = vec![vec![0.3, -1.2, 2.1], vec![-0.7, 0.0, 0.9]];
    let max_error = |steps: usize| {
        let cfg = DiffusionConfig {
            sample_steps: steps,
            ..DiffusionConfig::default()
        };
        let out = ddim_from_noise(&model, &cfg, z.clone()).unwrap();
        out.iter()
            .zip(&z)
            .flat_map(|(row, zrow)| {
                row.iter()
                    .zip(zrow)
                    .zip(&model.mean)
                    .map(|((x, zi), m)| (x - (m + model.std * zi)).abs())
            })
            .fold(0.0, f64::max)
    };
    // The sampler is a first-order scheme: doubling the steps halves the error.
    let (e200, e400, e800) = (max_error(200), max_error(400), max_error(800));
    assert!(e800 < 2e-3, "{e800}");
    assert!((e200 / e400 - 2.0).abs() < 0.2, "{e200} {e400}");
    assert!((e400 / e800 - 2.0).abs() < 0.2, "{e400} {e800}");
}

#[test]
fn ensemble_moments_match_the_data_distribution() {
    let model = GaussianDenoiser {
        mean: vec![1.5; 4],
        std: 0.5,
    };
    let cfg = DiffusionConfig {
        sample_steps: 100,
        ..DiffusionConfig::default()
    };
    let ens = generate_ensemble(&model, &cfg, 4000, 21).unwrap();
    let data = ens.data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 1.5).abs() < 0.03, "mean {mean}");
    assert!((var.sqrt() - 0.5).abs() < 0.03, "std {}", var.sqrt());
}

#[test]
fn ensembles_are_reproducible_and_distinct_across_seeds() {
    let model = GaussianDenoiser {
        mean: vec![0.0; 8],
        std: 1.0,
    };
    let cfg = DiffusionConfig::default();
    let a = generate_ensemble(&model, &cfg, 5, 3).unwrap();
    let b = generate_ensemble(&model, &cfg, 5, 3).unwrap();
    let c = generate_ensemble(&model, &cfg, 5, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.shape(), &[5, 8]);
    assert!(generate_ensemble(&model, &cfg, 0, 3).is_err());
    let zero = DiffusionConfig {
        sample_steps: 0,
        ..DiffusionConfig::default()
    };
    assert!(generate_ensemble(&model, &zero, 2, 3).is_err());
}

proptest! {
    #[test]
    fn velocity_and_noisy_sample_recover_the_clean_trajectory(
        pairs in prop::collection::vec((-5.0f64..5.0, -3.0f64..3.0), 1..16),
        tau in 0.0f64..=1.0,
    ) {
        let (x0, eps): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let xt = forward_noise(&x0, &eps, tau).unwrap();
        let v = velocity_target(&x0, &eps, tau).unwrap();
        let back = clean_estimate(&xt, &v, tau).unwrap();
        for (a, b) in back.iter().zip(&x0) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Rotation by the schedule angle preserves the pair's energy.
        let e_in: f64 = x0.iter().chain(&eps).map(|x| x * x).sum();
        let e_out: f64 = xt.iter().chain(&v).map(|x| x * x).sum();
        prop_assert!((e_in - e_out).abs() < 1e-9 * e_in.max(1.0));
    }
}
