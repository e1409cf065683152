//! Frequency-tuned diagonal state-space kernels.
//!
//! Each channel holds `n` complex modes; the real kernel is twice the real
//! part of the modal sum, i.e. every stored mode stands for a conjugate pair.

use crate::error::{Error, Result};
use crate::numerics::dense::{sigmoid, softplus};
use crate::numerics::{Complex, ComplexSequence, RealArray, Tape, Var};

/// `lambda_j = alpha_r * Re(base_j) + i * alpha_i * Im(base_j)`.
pub fn tune_frequencies(base: &ComplexSequence, alpha_r: f64, alpha_i: f64) -> ComplexSequence {
    ComplexSequence {
        re: base.re.iter().map(|r| alpha_r * r).collect(),
        im: base.im.iter().map(|i| alpha_i * i).collect(),
    }
}

/// S4D-Lin base eigenvalues `-1/2 + i*pi*j`, `j = 0..n`.
pub fn s4d_lin_base(n: usize) -> ComplexSequence {
    ComplexSequence {
        re: vec![-0.5; n],
        im: (0..n).map(|j| std::f64::consts::PI * j as f64).collect(),
    }
}

/// Below this modulus the zero-order-hold input scale uses its series limit.
const TINY_LAMBDA: f64 = 1e-12;
/// Below this `|lambda * dt|` the scale derivative uses its Taylor series.
const SERIES_W: f64 = 1e-3;

/// `exp(w) - 1` without cancellation for small `w`.
fn expm1(w: Complex) -> Complex {
    let half = (0.5 * w.im).sin();
    Complex::new(
        w.re.exp_m1() * w.im.cos() - 2.0 * half * half,
        w.re.exp() * w.im.sin(),
    )
}

/// Zero-order-hold discretization of one mode: `(exp(lambda*dt), (exp(lambda*dt) - 1) / lambda)`.
pub fn discretize(lambda: Complex, dt: f64) -> Result<(Complex, Complex)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::arg(format!("time step must be positive, got {dt}")));
    }
    if lambda.re > 0.0 {
        return Err(Error::arg(format!("unstable mode {lambda}")));
    }
    Ok(zoh(lambda, dt))
}

fn zoh(lambda: Complex, dt: f64) -> (Complex, Complex) {
    let w = lambda * dt;
    let em1 = expm1(w);
    let abar = em1 + 1.0;
    let scale = if lambda.norm() < TINY_LAMBDA {
        Complex::new(dt, 0.0) * (1.0 + w * 0.5)
    } else {
        em1 / lambda
    };
    (abar, scale)
}

/// `d scale / d lambda` for `scale = (exp(lambda*dt) - 1) / lambda`.
fn zoh_scale_dlambda(lambda: Complex, dt: f64, abar: Complex, scale: Complex) -> Complex {
    let w = lambda * dt;
    if w.norm() < SERIES_W {
        // dt^2 * (1/2 + w/3 + w^2/8 + w^3/30 + w^4/144)
        let poly = ((((w / 144.0 + 1.0 / 30.0) * w + 0.125) * w + 1.0 / 3.0) * w) + 0.5;
        poly * (dt * dt)
    } else {
        (abar * dt - scale) / lambda
    }
}

/// Kernel parameters of one layer, `channels x modes` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmLayerParams {
    pub channels: usize,
    pub modes: usize,
    /// `Re(lambda_base) = -softplus(theta_re)`.
    pub theta_re: Vec<f64>,
    /// `Im(lambda_base)`.
    pub omega: Vec<f64>,
    /// `alpha_r = exp(log_alpha_r)`, so tuning never flips the real sign.
    pub log_alpha_r: f64,
    pub alpha_i: f64,
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
    pub c_re: Vec<f64>,
    pub c_im: Vec<f64>,
    /// Per channel.
    pub log_dt: Vec<f64>,
}

impl SsmLayerParams {
    pub fn alpha_r(&self) -> f64 {
        self.log_alpha_r.exp()
    }

    pub fn lambda_base(&self, h: usize) -> ComplexSequence {
        let lo = h * self.modes;
        let hi = lo + self.modes;
        ComplexSequence {
            re: self.theta_re[lo..hi].iter().map(|&t| -softplus(t)).collect(),
            im: self.omega[lo..hi].to_vec(),
        }
    }

    /// Tuned eigenvalues of channel `h`.
    pub fn lambda(&self, h: usize) -> ComplexSequence {
        tune_frequencies(&self.lambda_base(h), self.alpha_r(), self.alpha_i)
    }

    pub fn dt(&self, h: usize) -> f64 {
        self.log_dt[h].exp()
    }

    fn check(&self) {
        let cm = self.channels * self.modes;
        for v in [&self.theta_re, &self.omega, &self.b_re, &self.b_im, &self.c_re, &self.c_im] {
            assert_eq!(v.len(), cm, "kernel parameter length");
        }
        assert_eq!(self.log_dt.len(), self.channels, "log_dt length");
    }
}

/// Per-mode quantities reused by the backward pass.
struct ModeCache {
    lambda: Complex,
    abar: Complex,
    scale: Complex,
    weight: Complex,
}

fn mode_caches(p: &SsmLayerParams) -> Vec<ModeCache> {
    let ar = p.alpha_r();
    let mut out = Vec::with_capacity(p.channels * p.modes);
    for h in 0..p.channels {
        let dt = p.dt(h);
        for j in 0..p.modes {
            let idx = h * p.modes + j;
            let lambda = Complex::new(-ar * softplus(p.theta_re[idx]), p.alpha_i * p.omega[idx]);
            let (abar, scale) = zoh(lambda, dt);
            let b = Complex::new(p.b_re[idx], p.b_im[idx]);
            let c = Complex::new(p.c_re[idx], p.c_im[idx]);
            out.push(ModeCache {
                lambda,
                abar,
                scale,
                weight: c * b * scale,
            });
        }
    }
    out
}

fn kernel_from_cache(p: &SsmLayerParams, cache: &[ModeCache], len: usize) -> Vec<f64> {
    let mut k = vec![0.0; p.channels * len];
    for h in 0..p.channels {
        let row = &mut k[h * len..(h + 1) * len];
        for m in &cache[h * p.modes..(h + 1) * p.modes] {
            let mut term = m.weight;
            for v in row.iter_mut() {
                *v += 2.0 * term.re;
                term *= m.abar;
            }
        }
    }
    k
}

/// `K[h, l] = 2 Re(sum_j C_j B_j scale_j abar_j^l)`, shape `channels x len`.
pub fn ssm_kernel(p: &SsmLayerParams, len: usize) -> Result<RealArray> {
    p.check();
    if len == 0 {
        return Err(Error::arg("kernel length must be at least 1"));
    }
    let k = kernel_from_cache(p, &mode_caches(p), len);
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("kernel overflow"));
    }
    RealArray::matrix(p.channels, len, k)
}

/// Runs the discretized recurrence `h_k = abar h_{k-1} + B scale u_k`,
/// `y_k = 2 Re(C h_k)` on one channel. Reference path for the kernel.
pub fn recurrence(p: &SsmLayerParams, channel: usize, u: &[f64]) -> Vec<f64> {
    let dt = p.dt(channel);
    let lambda = p.lambda(channel);
    let lo = channel * p.modes;
    let mut state = vec![Complex::new(0.0, 0.0); p.modes];
    let mut drive = Vec::with_capacity(p.modes);
    let mut abars = Vec::with_capacity(p.modes);
    for j in 0..p.modes {
        let (abar, scale) = zoh(lambda.get(j), dt);
        abars.push(abar);
        drive.push(Complex::new(p.b_re[lo + j], p.b_im[lo + j]) * scale);
    }
    u.iter()
        .map(|&uk| {
            let mut y = 0.0;
            for j in 0..p.modes {
                state[j] = abars[j] * state[j] + drive[j] * uk;
                y += 2.0 * (Complex::new(p.c_re[lo + j], p.c_im[lo + j]) * state[j]).re;
            }
            y
        })
        .collect()
}

/// Tape handles of one layer's kernel parameters.
#[derive(Clone, Copy, Debug)]
pub struct KernelVars {
    pub theta_re: Var,
    pub omega: Var,
    pub log_alpha_r: Var,
    pub alpha_i: Var,
    pub b_re: Var,
    pub b_im: Var,
    pub c_re: Var,
    pub c_im: Var,
    pub log_dt: Var,
}

impl KernelVars {
    fn all(&self) -> [Var; 9] {
        [
            self.theta_re,
            self.omega,
            self.log_alpha_r,
            self.alpha_i,
            self.b_re,
            self.b_im,
            self.c_re,
            self.c_im,
            self.log_dt,
        ]
    }

    pub fn read(&self, tape: &Tape, channels: usize, modes: usize) -> SsmLayerParams {
        let v = |x: Var| tape.value(x).data().to_vec();
        SsmLayerParams {
            channels,
            modes,
            theta_re: v(self.theta_re),
            omega: v(self.omega),
            log_alpha_r: tape.value(self.log_alpha_r).item(),
            alpha_i: tape.value(self.alpha_i).item(),
            b_re: v(self.b_re),
            b_im: v(self.b_im),
            c_re: v(self.c_re),
            c_im: v(self.c_im),
            log_dt: v(self.log_dt),
        }
    }
}

/// Records the kernel of one layer on the tape, shape `channels x len`.
pub fn kernel_op(tape: &mut Tape, vars: KernelVars, channels: usize, modes: usize, len: usize) -> Var {
    let p = vars.read(tape, channels, modes);
    p.check();
    let cache = mode_caches(&p);
    let k = kernel_from_cache(&p, &cache, len);
    let out = RealArray::matrix(channels, len, k).expect("kernel shape");
    tape.custom(out, &vars.all(), move |pass, g| {
        let g = g.data();
        let ar = p.alpha_r();
        let n = channels * modes;
        let mut g_theta = vec![0.0; n];
        let mut g_omega = vec![0.0; n];
        let mut g_b_re = vec![0.0; n];
        let mut g_b_im = vec![0.0; n];
        let mut g_c_re = vec![0.0; n];
        let mut g_c_im = vec![0.0; n];
        let mut g_log_dt = vec![0.0; channels];
        let mut g_log_ar = 0.0;
        let mut g_ai = 0.0;
        for h in 0..channels {
            let dt = p.dt(h);
            let grow = &g[h * len..(h + 1) * len];
            for j in 0..modes {
                let idx = h * modes + j;
                let m = &cache[idx];
                // Conjugate-gradient convention: g_z = dL/dRe z + i dL/dIm z.
                let mut acc_w = Complex::new(0.0, 0.0);
                let mut acc_z = Complex::new(0.0, 0.0);
                let mut pow = Complex::new(1.0, 0.0);
                let mut pow_prev = Complex::new(0.0, 0.0);
                for (l, &gl) in grow.iter().enumerate() {
                    acc_w += pow.conj() * gl;
                    if l > 0 {
                        acc_z += pow_prev.conj() * (gl * l as f64);
                    }
                    pow_prev = pow;
                    pow *= m.abar;
                }
                let g_w = acc_w * 2.0;
                let g_z = m.weight.conj() * acc_z * 2.0;
                let b = Complex::new(p.b_re[idx], p.b_im[idx]);
                let c = Complex::new(p.c_re[idx], p.c_im[idx]);
                let g_c = g_w * (b * m.scale).conj();
                let g_b = g_w * (c * m.scale).conj();
                let g_s = g_w * (c * b).conj();
                let ds_dl = zoh_scale_dlambda(m.lambda, dt, m.abar, m.scale);
                let dz_dl = m.abar * dt;
                let g_lambda = g_s * ds_dl.conj() + g_z * dz_dl.conj();
                let g_dt = (g_s * m.abar.conj()).re + (g_z * (m.lambda * m.abar).conj()).re;
                g_c_re[idx] = g_c.re;
                g_c_im[idx] = g_c.im;
                g_b_re[idx] = g_b.re;
                g_b_im[idx] = g_b.im;
                // Re(lambda) = -alpha_r * softplus(theta), Im(lambda) = alpha_i * omega.
                let sp = softplus(p.theta_re[idx]);
                g_theta[idx] = -g_lambda.re * ar * sigmoid(p.theta_re[idx]);
                g_log_ar += -g_lambda.re * ar * sp;
                g_omega[idx] = g_lambda.im * p.alpha_i;
                g_ai += g_lambda.im * p.omega[idx];
                g_log_dt[h] += g_dt * dt;
            }
        }
        pass.accumulate(vars.theta_re, &g_theta);
        pass.accumulate(vars.omega, &g_omega);
        pass.accumulate(vars.log_alpha_r, &[g_log_ar]);
        pass.accumulate(vars.alpha_i, &[g_ai]);
        pass.accumulate(vars.b_re, &g_b_re);
        pass.accumulate(vars.b_im, &g_b_im);
        pass.accumulate(vars.c_re, &g_c_re);
        pass.accumulate(vars.c_im, &g_c_im);
        pass.accumulate(vars.log_dt, &g_log_dt);
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    pub(crate) fn random_params(rng: &mut RngStream, channels: usize, modes: usize) -> SsmLayerParams {
        let cm = channels * modes;
        let mut v = |lo: f64, hi: f64, n: usize| (0..n).map(|_| rng.uniform_range(lo, hi)).collect::<Vec<_>>();
        SsmLayerParams {
            channels,
            modes,
            theta_re: v(-2.0, 1.0, cm),
            omega: v(0.0, 20.0, cm),
            log_alpha_r: 0.0,
            alpha_i: 1.0,
            b_re: v(-1.0, 1.0, cm),
            b_im: v(-1.0, 1.0, cm),
            c_re: v(-1.0, 1.0, cm),
            c_im: v(-1.0, 1.0, cm),
            log_dt: v(0.01f64.ln(), 0.1f64.ln(), channels),
        }
    }

    #[test]
    fn tuning_scales_parts_independently() {
        let base = s4d_lin_base(4);
        assert_eq!(tune_frequencies(&base, 1.0, 1.0), base);
        let doubled = tune_frequencies(&base, 2.0, 1.0);
        assert_eq!(doubled.re, vec![-1.0; 4]);
        assert_eq!(doubled.im, base.im);
        let tuned = tune_frequencies(&base, 0.5, 2.0);
        assert_eq!(tuned.re[1], -0.25);
        assert!((tuned.im[1] - 2.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn discretize_known_mode() {
        let (abar, scale) = discretize(Complex::new(-1.0, 0.0), 0.1).unwrap();
        // exp(-0.1) and 1 - exp(-0.1) to 16 digits.
        assert!((abar.re - 0.904_837_418_035_959_6).abs() < 1e-15);
        assert!((scale.re - 0.095_162_581_964_040_43).abs() < 1e-15);
        assert!(abar.im.abs() < 1e-18 && scale.im.abs() < 1e-18);
    }

    #[test]
    fn discretize_zero_limit() {
        let (abar, scale) = discretize(Complex::new(0.0, 0.0), 0.05).unwrap();
        assert_eq!(abar, Complex::new(1.0, 0.0));
        assert_eq!(scale, Complex::new(0.05, 0.0));
        // Just above the cutoff the closed form agrees with the Taylor series.
        let lam = Complex::new(-1e-9, 2e-9);
        let (_, s) = discretize(lam, 0.05).unwrap();
        let w = lam * 0.05;
        let series = (1.0 + w / 2.0 + w * w / 6.0) * 0.05;
        assert!((s - series).norm() < 1e-16);
    }

    #[test]
    fn discretize_small_step() {
        let (abar, scale) = discretize(Complex::new(-0.7, 3.0), 1e-10).unwrap();
        assert!((abar - 1.0).norm() < 1e-9);
        assert!(scale.norm() < 1e-9);
        assert!(discretize(Complex::new(-1.0, 0.0), 0.0).is_err());
        assert!(discretize(Complex::new(0.5, 0.0), 0.1).is_err());
    }

    #[test]
    fn integrator_mode_gives_constant_kernel() {
        // lambda -> 0 (theta very negative, alpha_i = 0): abar = 1, scale = dt.
        let dt: f64 = 0.1;
        let p = SsmLayerParams {
            channels: 1,
            modes: 1,
            theta_re: vec![-60.0],
            omega: vec![0.0],
            log_alpha_r: 0.0,
            alpha_i: 0.0,
            b_re: vec![1.0],
            b_im: vec![0.0],
            c_re: vec![3.0],
            c_im: vec![0.0],
            log_dt: vec![dt.ln()],
        };
        let k = ssm_kernel(&p, 16).unwrap();
        let c = 3.0 * dt;
        for &v in k.data() {
            assert!((v - 2.0 * c).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn kernel_convolution_matches_recurrence() {
        let mut rng = RngStream::new(8, 0);
        let p = random_params(&mut rng, 3, 6);
        let len = 64;
        let k = ssm_kernel(&p, len).unwrap();
        for h in 0..3 {
            let u: Vec<f64> = (0..len).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let conv = crate::numerics::fft_linear_convolve(&u, k.row(h)).unwrap();
            let rec = recurrence(&p, h, &u);
            for (a, b) in conv.iter().zip(&rec) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn identity_tuning_reproduces_untuned_kernel() {
        let mut rng = RngStream::new(12, 0);
        let p = random_params(&mut rng, 2, 5);
        let k = ssm_kernel(&p, 40).unwrap();
        // Untuned: plug lambda_base straight into the modal sum.
        for h in 0..2 {
            let base = p.lambda_base(h);
            let mut want = vec![0.0; 40];
            for j in 0..5 {
                let (abar, scale) = discretize(base.get(j), p.dt(h)).unwrap();
                let idx = h * 5 + j;
                let w = Complex::new(p.c_re[idx], p.c_im[idx]) * Complex::new(p.b_re[idx], p.b_im[idx]) * scale;
                let mut z = Complex::new(1.0, 0.0);
                for v in want.iter_mut() {
                    *v += 2.0 * (w * z).re;
                    z *= abar;
                }
            }
            for (a, b) in k.row(h).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn stable_modes_decay_geometrically() {
        let mut rng = RngStream::new(4, 0);
        let mut p = random_params(&mut rng, 1, 4);
        // Re(lambda) <= -0.1 for every mode.
        p.theta_re.iter_mut().for_each(|t| *t = t.max(-2.0));
        let dt = p.dt(0);
        let slowest = p.lambda(0).re.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(slowest <= -0.1);
        let k = ssm_kernel(&p, 200).unwrap();
        let bound: f64 = (0..4)
            .map(|j| {
                let idx = j;
                2.0 * (Complex::new(p.c_re[idx], p.c_im[idx]) * Complex::new(p.b_re[idx], p.b_im[idx])).norm()
                    * discretize(p.lambda(0).get(j), dt).unwrap().1.norm()
            })
            .sum();
        for (l, v) in k.data().iter().enumerate() {
            assert!(v.abs() <= bound * (slowest * dt * l as f64).exp() + 1e-15);
        }
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        use crate::numerics::gradcheck::check_gradients;
        use crate::numerics::ParamSet;
        let mut rng = RngStream::new(31, 0);
        let p = random_params(&mut rng, 2, 3);
        let mut set = ParamSet::new();
        let put = |set: &mut ParamSet, name: &str, shape: Vec<usize>, data: Vec<f64>| {
            set.insert(name, RealArray::new(shape, data).unwrap());
        };
        put(&mut set, "theta_re", vec![2, 3], p.theta_re.clone());
        put(&mut set, "omega", vec![2, 3], p.omega.clone());
        put(&mut set, "log_alpha_r", vec![1], vec![0.3]);
        put(&mut set, "alpha_i", vec![1], vec![0.8]);
        put(&mut set, "b_re", vec![2, 3], p.b_re.clone());
        put(&mut set, "b_im", vec![2, 3], p.b_im.clone());
        put(&mut set, "c_re", vec![2, 3], p.c_re.clone());
        put(&mut set, "c_im", vec![2, 3], p.c_im.clone());
        put(&mut set, "log_dt", vec![2], p.log_dt.clone());
        let weights: Vec<f64> = (0..2 * 20).map(|i| ((i * 7) as f64).sin()).collect();
        let report = check_gradients(
            &set,
            |t, v| {
                let vars = KernelVars {
                    theta_re: v["theta_re"],
                    omega: v["omega"],
                    log_alpha_r: v["log_alpha_r"],
                    alpha_i: v["alpha_i"],
                    b_re: v["b_re"],
                    b_im: v["b_im"],
                    c_re: v["c_re"],
                    c_im: v["c_im"],
                    log_dt: v["log_dt"],
                };
                let k = kernel_op(t, vars, 2, 3, 20);
                let w = t.constant(RealArray::matrix(2, 20, weights.clone()).unwrap());
                let prod = t.mul(k, w);
                let sq = t.mul(prod, prod);
                Ok(t.sum(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
