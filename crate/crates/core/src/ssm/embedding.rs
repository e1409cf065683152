//! Sinusoidal embedding of the diffusion time.

use crate::error::{Error, Result};

const MAX_PERIOD: f64 = 1e4;

/// `[sin(w_k tau) | cos(w_k tau)]` with `w_k = exp(k ln(1e4) / (dim/2 - 1))`,
/// `k = 0..dim/2`.
pub fn diffusion_time_embedding(tau: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::arg(format!("embedding width must be even and at least 2, got {dim}")));
    }
    let half = dim / 2;
    let step = if half > 1 { MAX_PERIOD.ln() / (half - 1) as f64 } else { 0.0 };
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let arg = (k as f64 * step).exp() * tau;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_sin_zero_cos_one() {
        assert_eq!(diffusion_time_embedding(0.0, 8).unwrap(), vec![0., 0., 0., 0., 1., 1., 1., 1.]);
    }

    #[test]
    fn frequencies_span_one_to_max_period() {
        let e = diffusion_time_embedding(0.5, 4).unwrap();
        let want = [0.5f64.sin(), 5000f64.sin(), 0.5f64.cos(), 5000f64.cos()];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(diffusion_time_embedding(0.1, 5).is_err());
        assert!(diffusion_time_embedding(0.1, 0).is_err());
    }
}
