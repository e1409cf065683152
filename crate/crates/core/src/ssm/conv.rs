//! Per-channel causal convolution of a batch of sequences with learned kernels.

use crate::numerics::{Complex, Convolver, RealArray, Tape, Var};

/// `x` is `[B*len x H]` (one block of `len` rows per sequence), `k` is
/// `[H x len]`. Row `t` of block `b` becomes `sum_{s<=t} k[h, s] x[b, t-s, h]`.
pub fn causal_conv(tape: &mut Tape, x: Var, k: Var, len: usize) -> Var {
    let xv = tape.value(x);
    let h_len = xv.cols();
    let batch = xv.rows() / len;
    assert_eq!(batch * len, xv.rows(), "causal_conv: ragged sequences");
    assert_eq!(tape.value(k).shape(), [h_len, len], "causal_conv: kernel shape");
    let conv = Convolver::new(len);
    let kv = tape.value(k).data();
    let k_spec: Vec<Vec<Complex>> = (0..h_len).map(|h| conv.spectrum(&kv[h * len..(h + 1) * len])).collect();
    let xd = xv.data();
    let mut out = vec![0.0; xd.len()];
    let mut x_spec = Vec::with_capacity(batch * h_len);
    let mut column = vec![0.0; len];
    for b in 0..batch {
        for h in 0..h_len {
            for (t, c) in column.iter_mut().enumerate() {
                *c = xd[(b * len + t) * h_len + h];
            }
            let spec = conv.spectrum(&column);
            let y = conv.convolve_spectra(&spec, &k_spec[h]);
            for (t, v) in y.into_iter().enumerate() {
                out[(b * len + t) * h_len + h] = v;
            }
            x_spec.push(spec);
        }
    }
    let out = RealArray::matrix(batch * len, h_len, out).expect("conv shape");
    tape.custom(out, &[x, k], move |p, g| {
        let gd = g.data();
        let want_x = p.wants(x);
        let mut gx = if want_x { vec![0.0; gd.len()] } else { Vec::new() };
        let bins = conv.spectrum_len();
        let mut gk_spec = vec![vec![Complex::new(0.0, 0.0); bins]; h_len];
        let mut column = vec![0.0; len];
        for b in 0..batch {
            for h in 0..h_len {
                for (t, c) in column.iter_mut().enumerate() {
                    *c = gd[(b * len + t) * h_len + h];
                }
                let g_spec = conv.spectrum(&column);
                if want_x {
                    let col = conv.correlate_spectra(&g_spec, &k_spec[h]);
                    for (t, v) in col.into_iter().enumerate() {
                        gx[(b * len + t) * h_len + h] = v;
                    }
                }
                for ((acc, gs), xs) in gk_spec[h].iter_mut().zip(&g_spec).zip(&x_spec[b * h_len + h]) {
                    *acc += gs * xs.conj();
                }
            }
        }
        if want_x {
            p.accumulate(x, &gx);
        }
        p.accumulate_with(k, |buf| {
            for (h, spec) in gk_spec.into_iter().enumerate() {
                for (o, v) in buf[h * len..(h + 1) * len].iter_mut().zip(conv.inverse(spec)) {
                    *o += v;
                }
            }
        });
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::numerics::{gaussian_sample, ParamSet};

    #[test]
    fn matches_direct_sum() {
        let (batch, len, h_len) = (2, 9, 3);
        let x = gaussian_sample(&[batch * len, h_len], 1);
        let k = gaussian_sample(&[h_len, len], 2);
        let mut tape = Tape::inference();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let y = causal_conv(&mut tape, xv, kv, len);
        let y = tape.value(y);
        for b in 0..batch {
            for h in 0..h_len {
                for t in 0..len {
                    let want: f64 = (0..=t)
                        .map(|s| k.data()[h * len + s] * x.data()[(b * len + t - s) * h_len + h])
                        .sum();
                    assert!((y.data()[(b * len + t) * h_len + h] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (batch, len, h_len) = (2, 7, 2);
        let mut set = ParamSet::new();
        set.insert("x", gaussian_sample(&[batch * len, h_len], 3));
        set.insert("k", gaussian_sample(&[h_len, len], 4));
        let w = gaussian_sample(&[batch * len, h_len], 5);
        let report = check_gradients(
            &set,
            |t, v| {
                let y = causal_conv(t, v["x"], v["k"], len);
                let wv = t.constant(w.clone());
                let prod = t.mul(y, wv);
                let sq = t.mul(prod, prod);
                Ok(t.sum(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
