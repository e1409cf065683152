//! Numerical kernels checked against direct evaluation.

use hydrodiff::numerics::gradcheck::check_gradients;
use hydrodiff::numerics::rng::stream_id;
use hydrodiff::numerics::{fft_linear_convolve, gradient_of, ParamSet, RealArray, RngStream};
use proptest::prelude::*;

fn direct_convolve(u: &[f64], k: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|t| (0..=t).map(|j| k[j] * u[t - j]).sum())
        .collect()
}

proptest! {
    #[test]
    fn fft_convolution_matches_the_direct_sum(
        pairs in prop::collection::vec((-10.0f64..10.0, -2.0f64..2.0), 1..200),
    ) {
        let (u, k): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let fast = fft_linear_convolve(&u, &k).unwrap();
        let slow = direct_convolve(&u, &k);
        prop_assert_eq!(fast.len(), u.len());
        let scale = u.iter().map(|x| x.abs()).sum::<f64>() * k.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 * scale.max(1.0));
        }
    }
}

#[test]
fn convolution_rejects_mismatched_lengths() {
    assert!(fft_linear_convolve(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn tape_gradients_match_finite_differences() {
    let mut rng = RngStream::new(5, 0);
    let mut params = ParamSet::new();
    params.insert("w1", RealArray::matrix(3, 4, rng.normals(12)).unwrap());
    params.insert("b1", RealArray::vector(rng.normals(4)));
    params.insert("g", RealArray::vector(rng.normals(4)));
    params.insert("beta", RealArray::vector(rng.normals(4)));
    params.insert("w2", RealArray::matrix(4, 2, rng.normals(8)).unwrap());
    let x = RealArray::matrix(5, 3, rng.normals(15)).unwrap();
    let target = rng.normals(10);
    let weights: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 0.1).collect();
    let report = check_gradients(
        &params,
        |tape, vars| {
            let xv = tape.constant(x.clone());
            let h = tape.matmul(xv, vars["w1"]);
            let h = tape.add_row(h, vars["b1"]);
            let h = tape.layer_norm(h, vars["g"], vars["beta"]);
            let h = tape.gelu(h);
            let s = tape.sigmoid(h);
            let t = tape.tanh(h);
            let h = tape.mul(s, t);
            let out = tape.matmul(h, vars["w2"]);
            Ok(tape.weighted_sse(out, &target, &weights))
        },
        1e-6,
    )
    .unwrap();
    assert_eq!(report.checked, 12 + 4 + 4 + 4 + 8);
    assert!(report.max_rel_error < 1e-6, "{:?}", report.worst);
}

#[test]
fn gradient_of_a_quadratic_is_exact() {
    let mut params = ParamSet::new();
    params.insert("a", RealArray::vector(vec![1.0, -2.0, 3.0]));
    let (loss, grads) = gradient_of(&params, |tape, vars| {
        let sq = tape.mul(vars["a"], vars["a"]);
        Ok(tape.sum(sq))
    })
    .unwrap();
    assert_eq!(loss, 14.0);
    assert_eq!(grads.expect("a").data(), &[2.0, -4.0, 6.0]);
}

#[test]
fn streams_are_reproducible_and_separated() {
    let a = RngStream::derive(9, &[3, 1, 2]).normals(64);
    assert_eq!(a, RngStream::derive(9, &[3, 1, 2]).normals(64));
    assert_ne!(a, RngStream::derive(9, &[3, 2, 1]).normals(64));
    assert_ne!(a, RngStream::derive(10, &[3, 1, 2]).normals(64));
    assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
}

#[test]
fn normal_draws_have_unit_moments() {
    let xs = RngStream::new(17, 4).normals(200_000);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n / (var * var);
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((var - 1.0).abs() < 0.01, "{var}");
    assert!((kurt - 3.0).abs() < 0.05, "{kurt}");
}
