//! Stacked frequency-tuned SSM layers and the cached inference path.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::conv::causal_conv;
use super::embedding::diffusion_time_embedding;
use super::input::batch_input;
use super::kernel::{kernel_op, ssm_kernel, KernelVars};
use crate::data::{ConditioningTuple, SeqDims};
use crate::diffusion::VelocityModel;
use crate::error::{Error, Result};
use crate::numerics::dense::{self, gelu, layer_norm_row, sigmoid};
use crate::numerics::{ParamSet, RealArray, RngStream, Tape, Var};

/// How the per-layer frequency scales start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningInit {
    /// `alpha_r ~ U(0, cfr]`, `alpha_i ~ U(0, cfi]`.
    Range,
    /// `alpha_r = cfr`, `alpha_i = cfi`.
    Fixed,
    /// `alpha_r = alpha_i = 1`.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// `a * sigmoid(b)` over the two halves of the output mix.
    Glu,
    /// First half of the output mix only.
    Open,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub n_layers: usize,
    pub cfr: f64,
    pub cfi: f64,
    pub tuning_init: TuningInit,
    pub dropout: f64,
    pub min_dt: f64,
    pub max_dt: f64,
    pub time_embed_dim: usize,
    pub activation: Activation,
    pub gate: Gate,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            d_state: 256,
            n_layers: 6,
            cfr: 10.0,
            cfi: 10.0,
            tuning_init: TuningInit::Range,
            dropout: 0.2,
            min_dt: 0.01,
            max_dt: 0.1,
            time_embed_dim: 32,
            activation: Activation::Gelu,
            gate: Gate::Glu,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.n_layers == 0 {
            return Err(Error::arg("d_model, d_state and n_layers must be positive"));
        }
        if !(self.cfr > 0.0 && self.cfi > 0.0) {
            return Err(Error::arg("cfr and cfi must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.min_dt > 0.0 && self.min_dt <= self.max_dt) {
            return Err(Error::arg("time step range must satisfy 0 < min_dt <= max_dt"));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::arg("time_embed_dim must be even and at least 2"));
        }
        Ok(())
    }
}

/// Optimizer treatment of a named parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Eigenvalues, input/output vectors and frequency scales.
    Kernel,
    /// Log time steps.
    TimeStep,
    Global,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.ends_with(".kernel.log_dt") {
        ParamGroup::TimeStep
    } else if name.contains(".kernel.") {
        ParamGroup::Kernel
    } else {
        ParamGroup::Global
    }
}

fn pname(layer: usize, suffix: &str) -> String {
    format!("layers.{layer}.{suffix}")
}

const KERNEL_FIELDS: [&str; 9] = [
    "theta_re",
    "omega",
    "log_alpha_r",
    "alpha_i",
    "b_re",
    "b_im",
    "c_re",
    "c_im",
    "log_dt",
];

/// Tape handles of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub norm_gain: Var,
    pub norm_bias: Var,
    pub kernel: KernelVars,
    pub skip: Var,
    pub time_weight: Var,
    pub time_bias: Var,
    pub mix_weight: Var,
    pub mix_bias: Var,
}

impl LayerVars {
    pub fn lookup(vars: &IndexMap<String, Var>, layer: usize) -> Self {
        let v = |s: &str| vars[&pname(layer, s)];
        let k = |s: &str| v(&format!("kernel.{s}"));
        Self {
            norm_gain: v("norm.gain"),
            norm_bias: v("norm.bias"),
            kernel: KernelVars {
                theta_re: k("theta_re"),
                omega: k("omega"),
                log_alpha_r: k("log_alpha_r"),
                alpha_i: k("alpha_i"),
                b_re: k("b_re"),
                b_im: k("b_im"),
                c_re: k("c_re"),
                c_im: k("c_im"),
                log_dt: k("log_dt"),
            },
            skip: v("skip"),
            time_weight: v("time.weight"),
            time_bias: v("time.bias"),
            mix_weight: v("mix.weight"),
            mix_bias: v("mix.bias"),
        }
    }
}

/// Values produced by one recorded forward pass.
pub struct BackboneTrace {
    /// `[B x horizon]`.
    pub output: Var,
    /// Normalized layer inputs `[B*L x H]`, one per layer.
    pub layer_inputs: Vec<Var>,
}

/// One S4D-FT block on `x[B*len x H]`: pre-norm, kernel convolution with skip,
/// diffusion-time bias on the final `horizon` rows, activation, dropout,
/// gated output mix, residual.
#[allow(clippy::too_many_arguments)]
pub fn s4dft_layer(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    lv: &LayerVars,
    x: Var,
    time_embedding: Var,
    len: usize,
    horizon: usize,
    dropout: Option<&mut RngStream>,
) -> (Var, Var) {
    let h = cfg.d_model;
    let u = tape.layer_norm(x, lv.norm_gain, lv.norm_bias);
    let k = kernel_op(tape, lv.kernel, h, cfg.d_state, len);
    let conv = causal_conv(tape, u, k, len);
    let skip = tape.mul_row(u, lv.skip);
    let mut y = tape.add(conv, skip);
    let bias = tape.matmul(time_embedding, lv.time_weight);
    let bias = tape.add_row(bias, lv.time_bias);
    y = tape.add_block_bias(y, bias, len, len - horizon, horizon);
    let mut a = match cfg.activation {
        Activation::Gelu => tape.gelu(y),
        Activation::Identity => y,
    };
    if let Some(rng) = dropout {
        if cfg.dropout > 0.0 {
            let keep = 1.0 - cfg.dropout;
            let shape = tape.value(a).shape().to_vec();
            let n: usize = shape.iter().product();
            let mask: Vec<f64> = (0..n)
                .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            a = tape.mul_const(a, RealArray::new(shape, mask).expect("mask shape"));
        }
    }
    let m = tape.matmul(a, lv.mix_weight);
    let m = tape.add_row(m, lv.mix_bias);
    let first = tape.split_cols(m, 0, h);
    let o = match cfg.gate {
        Gate::Glu => {
            let second = tape.split_cols(m, h, h);
            let gate = tape.sigmoid(second);
            tape.mul(first, gate)
        }
        Gate::Open => first,
    };
    (tape.add(x, o), u)
}

/// Frequency-tuned SSM denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmBackbone {
    pub cfg: BackboneConfig,
    pub dims: SeqDims,
}

impl SsmBackbone {
    pub fn new(cfg: BackboneConfig, dims: SeqDims) -> Result<Self> {
        cfg.validate()?;
        dims.validate()?;
        Ok(Self { cfg, dims })
    }

    /// Randomly initialized parameters drawn from `rng`.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamSet {
        let cfg = &self.cfg;
        let (h, n) = (cfg.d_model, cfg.d_state);
        let d_in = self.dims.input_dim();
        let mut p = ParamSet::new();
        linear(&mut p, "input", d_in, h, rng);
        let theta0 = (0.5f64.exp() - 1.0).ln();
        let (ln_lo, ln_hi) = (cfg.min_dt.ln(), cfg.max_dt.ln());
        for l in 0..cfg.n_layers {
            p.insert(pname(l, "norm.gain"), RealArray::full(&[h], 1.0));
            p.insert(pname(l, "norm.bias"), RealArray::zeros(&[h]));
            let omega: Vec<f64> = (0..h)
                .flat_map(|_| (0..n).map(|j| std::f64::consts::PI * j as f64))
                .collect();
            let (ar, ai) = match cfg.tuning_init {
                TuningInit::Range => (cfg.cfr * (1.0 - rng.uniform()), cfg.cfi * (1.0 - rng.uniform())),
                TuningInit::Fixed => (cfg.cfr, cfg.cfi),
                TuningInit::Identity => (1.0, 1.0),
            };
            let c_std = 0.5f64.sqrt();
            let kn = |s: &str| pname(l, &format!("kernel.{s}"));
            p.insert(kn("theta_re"), RealArray::full(&[h, n], theta0));
            p.insert(kn("omega"), RealArray::new(vec![h, n], omega).expect("omega shape"));
            p.insert(kn("log_alpha_r"), RealArray::vector(vec![ar.ln()]));
            p.insert(kn("alpha_i"), RealArray::vector(vec![ai]));
            p.insert(kn("b_re"), RealArray::full(&[h, n], 1.0));
            p.insert(kn("b_im"), RealArray::zeros(&[h, n]));
            let c_re: Vec<f64> = (0..h * n).map(|_| c_std * rng.normal()).collect();
            let c_im: Vec<f64> = (0..h * n).map(|_| c_std * rng.normal()).collect();
            p.insert(kn("c_re"), RealArray::new(vec![h, n], c_re).expect("c shape"));
            p.insert(kn("c_im"), RealArray::new(vec![h, n], c_im).expect("c shape"));
            let log_dt: Vec<f64> = (0..h).map(|_| rng.uniform_range(ln_lo, ln_hi)).collect();
            p.insert(kn("log_dt"), RealArray::vector(log_dt));
            p.insert(pname(l, "skip"), RealArray::vector(rng.normals(h)));
            linear(&mut p, &pname(l, "time"), cfg.time_embed_dim, h, rng);
            linear(&mut p, &pname(l, "mix"), h, 2 * h, rng);
        }
        p.insert("final_norm.gain", RealArray::full(&[h], 1.0));
        p.insert("final_norm.bias", RealArray::zeros(&[h]));
        linear(&mut p, "output", h, 1, rng);
        p
    }

    pub fn batch_input(&self, tuples: &[&ConditioningTuple], xs: &[&[f64]]) -> Result<RealArray> {
        batch_input(&self.dims, tuples, xs)
    }

    /// Recorded forward pass. `inputs` comes from [`Self::batch_input`], `taus`
    /// holds one diffusion time per sequence. Dropout is active when an RNG is
    /// given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &IndexMap<String, Var>,
        inputs: RealArray,
        taus: &[f64],
        mut dropout: Option<&mut RngStream>,
    ) -> Result<BackboneTrace> {
        let len = self.dims.seq_len();
        let horizon = self.dims.horizon();
        let batch = taus.len();
        if inputs.shape() != [batch * len, self.dims.input_dim()] {
            return Err(Error::arg(format!("input shape {:?} does not match batch {batch}", inputs.shape())));
        }
        let mut emb = Vec::with_capacity(batch * self.cfg.time_embed_dim);
        for &tau in taus {
            emb.extend(diffusion_time_embedding(tau, self.cfg.time_embed_dim)?);
        }
        let emb = tape.constant(RealArray::matrix(batch, self.cfg.time_embed_dim, emb)?);
        let input = tape.constant(inputs);
        let x = tape.matmul(input, vars["input.weight"]);
        let mut x = tape.add_row(x, vars["input.bias"]);
        let mut layer_inputs = Vec::with_capacity(self.cfg.n_layers);
        for l in 0..self.cfg.n_layers {
            let lv = LayerVars::lookup(vars, l);
            let (next, u) = s4dft_layer(tape, &self.cfg, &lv, x, emb, len, horizon, dropout.as_deref_mut());
            x = next;
            layer_inputs.push(u);
        }
        let x = tape.layer_norm(x, vars["final_norm.gain"], vars["final_norm.bias"]);
        let out = tape.matmul(x, vars["output.weight"]);
        let out = tape.add_row(out, vars["output.bias"]);
        let out = tape.select_rows(out, len, len - horizon, horizon);
        let output = tape.reshape(out, vec![batch, horizon]);
        if !tape.value(output).is_finite() {
            return Err(Error::numeric("backbone output is not finite"));
        }
        Ok(BackboneTrace { output, layer_inputs })
    }

    /// Velocity estimates in eval mode, one row per `(tuple, x_tau, tau)`.
    pub fn predict(&self, params: &ParamSet, tuples: &[&ConditioningTuple], xs: &[&[f64]], taus: &[f64]) -> Result<RealArray> {
        let mut tape = Tape::inference();
        let vars = tape.params(params);
        let inputs = self.batch_input(tuples, xs)?;
        let trace = self.forward(&mut tape, &vars, inputs, taus, None)?;
        Ok(tape.value(trace.output).clone())
    }

    /// Precomputes everything that does not depend on the noisy trajectory or
    /// the diffusion time for one conditioning tuple.
    pub fn condition<'a>(&'a self, params: &'a ParamSet, c: &ConditioningTuple) -> Result<CachedSsm<'a>> {
        c.check(&self.dims)?;
        let len = self.dims.seq_len();
        let horizon = self.dims.horizon();
        let start = len - horizon;
        let zeros = vec![0.0; horizon];
        let mut tape = Tape::inference();
        let vars = tape.params(params);
        let inputs = self.batch_input(&[c], &[&zeros])?;
        let width = self.dims.input_dim();
        let tail_inputs = inputs.data()[start * width..].to_vec();
        let trace = self.forward(&mut tape, &vars, inputs, &[0.0], None)?;
        let h = self.cfg.d_model;
        let mut layers = Vec::with_capacity(self.cfg.n_layers);
        for (l, &u) in trace.layer_inputs.iter().enumerate() {
            let kernel = ssm_kernel(&self.layer_kernel_params(params, l), len)?;
            let ud = tape.value(u).data();
            let mut prefix = vec![0.0; horizon * h];
            for tt in 0..horizon {
                let t = start + tt;
                for ch in 0..h {
                    let kr = kernel.row(ch);
                    let mut acc = 0.0;
                    for r in 0..start {
                        acc += kr[t - r] * ud[r * h + ch];
                    }
                    prefix[tt * h + ch] = acc;
                }
            }
            layers.push(CachedLayer { kernel, prefix });
        }
        Ok(CachedSsm {
            backbone: self,
            params,
            tail_inputs,
            layers,
        })
    }

    pub fn layer_kernel_params(&self, params: &ParamSet, layer: usize) -> super::kernel::SsmLayerParams {
        let g = |s: &str| params.expect(&pname(layer, &format!("kernel.{s}"))).data().to_vec();
        super::kernel::SsmLayerParams {
            channels: self.cfg.d_model,
            modes: self.cfg.d_state,
            theta_re: g("theta_re"),
            omega: g("omega"),
            log_alpha_r: g("log_alpha_r")[0],
            alpha_i: g("alpha_i")[0],
            b_re: g("b_re"),
            b_im: g("b_im"),
            c_re: g("c_re"),
            c_im: g("c_im"),
            log_dt: g("log_dt"),
        }
    }

    /// Names of every kernel field, for grouping and inspection.
    pub fn kernel_field_names(&self, layer: usize) -> Vec<String> {
        KERNEL_FIELDS.iter().map(|f| pname(layer, &format!("kernel.{f}"))).collect()
    }
}

fn linear(p: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    let b: Vec<f64> = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    p.insert(format!("{prefix}.weight"), RealArray::matrix(fan_in, fan_out, w).expect("weight shape"));
    p.insert(format!("{prefix}.bias"), RealArray::vector(b));
}

struct CachedLayer {
    kernel: RealArray,
    /// Contribution of the prefix rows to the convolution at the final rows,
    /// `[horizon x H]`.
    prefix: Vec<f64>,
}

/// A backbone bound to one conditioning tuple. Evaluating a velocity only
/// recomputes the final `horizon` rows.
pub struct CachedSsm<'a> {
    backbone: &'a SsmBackbone,
    params: &'a ParamSet,
    tail_inputs: Vec<f64>,
    layers: Vec<CachedLayer>,
}

impl CachedSsm<'_> {
    fn velocity_row(&self, x_tau: &[f64], biases: &[Vec<f64>]) -> Vec<f64> {
        let bb = self.backbone;
        let cfg = &bb.cfg;
        let h = cfg.d_model;
        let horizon = bb.dims.horizon();
        let width = bb.dims.input_dim();
        let p = self.params;
        let mut input = self.tail_inputs.clone();
        for (t, &v) in x_tau.iter().enumerate() {
            input[t * width + width - 1] = v;
        }
        let mut x = dense::matmul(&input, p.expect("input.weight").data(), horizon, width, h);
        add_bias(&mut x, p.expect("input.bias").data());
        let mut u = vec![0.0; horizon * h];
        let mut a = vec![0.0; horizon * h];
        for (l, layer) in self.layers.iter().enumerate() {
            let get = |s: &str| p.expect(&pname(l, s)).data();
            let (gain, bias) = (get("norm.gain"), get("norm.bias"));
            for t in 0..horizon {
                layer_norm_row(&x[t * h..(t + 1) * h], gain, bias, &mut u[t * h..(t + 1) * h]);
            }
            let skip = get("skip");
            for t in 0..horizon {
                for ch in 0..h {
                    let kr = layer.kernel.row(ch);
                    let mut acc = layer.prefix[t * h + ch];
                    for r in 0..=t {
                        acc += kr[t - r] * u[r * h + ch];
                    }
                    let y = acc + skip[ch] * u[t * h + ch] + biases[l][ch];
                    a[t * h + ch] = match cfg.activation {
                        Activation::Gelu => gelu(y),
                        Activation::Identity => y,
                    };
                }
            }
            let mut m = dense::matmul(&a, get("mix.weight"), horizon, h, 2 * h);
            add_bias(&mut m, get("mix.bias"));
            for t in 0..horizon {
                for ch in 0..h {
                    let first = m[t * 2 * h + ch];
                    let o = match cfg.gate {
                        Gate::Glu => first * sigmoid(m[t * 2 * h + h + ch]),
                        Gate::Open => first,
                    };
                    x[t * h + ch] += o;
                }
            }
        }
        let (gain, bias) = (p.expect("final_norm.gain").data(), p.expect("final_norm.bias").data());
        let w = p.expect("output.weight").data();
        let b0 = p.expect("output.bias").data()[0];
        (0..horizon)
            .map(|t| {
                layer_norm_row(&x[t * h..(t + 1) * h], gain, bias, &mut u[t * h..(t + 1) * h]);
                b0 + u[t * h..(t + 1) * h].iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

fn add_bias(rows: &mut [f64], bias: &[f64]) {
    for row in rows.chunks_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

impl VelocityModel for CachedSsm<'_> {
    fn horizon(&self) -> usize {
        self.backbone.dims.horizon()
    }

    fn velocity_batch(&self, xs: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.backbone.cfg;
        let emb = diffusion_time_embedding(tau, cfg.time_embed_dim)?;
        let biases: Vec<Vec<f64>> = (0..cfg.n_layers)
            .map(|l| {
                let mut b = self.params.expect(&pname(l, "time.bias")).data().to_vec();
                dense::matmul_row(&emb, self.params.expect(&pname(l, "time.weight")).data(), cfg.d_model, &mut b);
                b
            })
            .collect();
        xs.iter()
            .map(|x| {
                if x.len() != self.horizon() {
                    return Err(Error::arg(format!("trajectory has {} entries, expected {}", x.len(), self.horizon())));
                }
                let v = self.velocity_row(x, &biases);
                if v.iter().any(|e| !e.is_finite()) {
                    return Err(Error::numeric("velocity estimate is not finite"));
                }
                Ok(v)
            })
            .collect()
    }
}
