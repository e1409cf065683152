//! Causal linear convolution through zero-padded real FFTs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::array::Complex;
use crate::error::{Error, Result};

/// Padded transform length for a causal convolution of length `len`:
/// the next power of two at or above `2 * len - 1`.
pub fn padded_len(len: usize) -> usize {
    (2 * len.max(1) - 1).next_power_of_two()
}

struct Plans {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

thread_local! {
    static PLANS: RefCell<(RealFftPlanner<f64>, HashMap<usize, Arc<Plans>>)> =
        RefCell::new((RealFftPlanner::new(), HashMap::new()));
}

fn plans(n: usize) -> Arc<Plans> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry(n)
            .or_insert_with(|| {
                Arc::new(Plans {
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                })
            })
            .clone()
    })
}

/// Reusable spectra for convolutions of a fixed length.
pub struct Convolver {
    len: usize,
    padded: usize,
    plans: Arc<Plans>,
}

impl Convolver {
    pub fn new(len: usize) -> Self {
        let padded = padded_len(len);
        Self {
            len,
            padded,
            plans: plans(padded),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn spectrum_len(&self) -> usize {
        self.padded / 2 + 1
    }

    /// Spectrum of `signal` zero-padded to the transform length.
    pub fn spectrum(&self, signal: &[f64]) -> Vec<Complex> {
        let mut buf = vec![0.0; self.padded];
        buf[..signal.len()].copy_from_slice(signal);
        let mut out = self.plans.forward.make_output_vec();
        self.plans
            .forward
            .process(&mut buf, &mut out)
            .expect("fft buffer sizes are fixed by the plan");
        out
    }

    /// Inverse transform, normalized, truncated to the first `len` samples.
    pub fn inverse(&self, mut spectrum: Vec<Complex>) -> Vec<f64> {
        // The DC and Nyquist bins of a real signal carry no imaginary part.
        spectrum[0].im = 0.0;
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
        let mut out = self.plans.inverse.make_output_vec();
        self.plans
            .inverse
            .process(&mut spectrum, &mut out)
            .expect("fft buffer sizes are fixed by the plan");
        let scale = 1.0 / self.padded as f64;
        out.truncate(self.len);
        for v in &mut out {
            *v *= scale;
        }
        out
    }

    /// `out[t] = sum_{s<=t} a[s] * b[t-s]` from two spectra.
    pub fn convolve_spectra(&self, a: &[Complex], b: &[Complex]) -> Vec<f64> {
        self.inverse(a.iter().zip(b).map(|(x, y)| x * y).collect())
    }

    /// `out[s] = sum_{t>=s} g[t] * a[t-s]` from the spectra of `g` and `a`.
    pub fn correlate_spectra(&self, g: &[Complex], a: &[Complex]) -> Vec<f64> {
        self.inverse(g.iter().zip(a).map(|(x, y)| x * y.conj()).collect())
    }
}

/// Causal linear convolution `out[t] = sum_{s=0..t} k[s] * u[t-s]`.
pub fn fft_linear_convolve(u: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if u.len() != k.len() {
        return Err(Error::arg(format!(
            "signal length {} differs from kernel length {}",
            u.len(),
            k.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::arg("convolution needs at least one sample"));
    }
    let conv = Convolver::new(u.len());
    Ok(conv.convolve_spectra(&conv.spectrum(u), &conv.spectrum(k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct(u: &[f64], k: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|t| (0..=t).map(|s| k[s] * u[t - s]).sum())
            .collect()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let out = fft_linear_convolve(&[3.0, 1.0, 4.0], &[1.0, 0.0, 0.0]).unwrap();
        for (a, b) in out.iter().zip([3.0, 1.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ones_give_ramp() {
        let out = fft_linear_convolve(&[1.0; 4], &[1.0; 4]).unwrap();
        for (a, b) in out.iter().zip(direct(&[1.0; 4], &[1.0; 4])) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out[3] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(matches!(
            fft_linear_convolve(&[1.0, 2.0], &[1.0]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn padded_length_is_power_of_two() {
        assert_eq!(padded_len(1), 1);
        assert_eq!(padded_len(3), 8);
        assert_eq!(padded_len(372), 1024);
    }

    #[test]
    fn correlation_matches_direct() {
        let g = [0.5, -1.0, 2.0, 0.25];
        let a = [1.0, 3.0, -2.0, 0.5];
        let conv = Convolver::new(4);
        let out = conv.correlate_spectra(&conv.spectrum(&g), &conv.spectrum(&a));
        for s in 0..4 {
            let want: f64 = (s..4).map(|t| g[t] * a[t - s]).sum();
            assert!((out[s] - want).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_direct_convolution(
            data in (1usize..=1024).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            ))
        ) {
            let (u, k) = data;
            let fast = fft_linear_convolve(&u, &k).unwrap();
            let slow = direct(&u, &k);
            let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-10, "max abs diff {err}");
        }
    }
}
