//! Recurrent baseline denoisers: encoder-decoder and decoder-only LSTMs.
//!
//! Gate order inside every weight matrix is input, forget, cell, output.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{ConditioningTuple, SeqDims};
use crate::diffusion::VelocityModel;
use crate::error::{Error, Result};
use crate::numerics::dense::{matmul_row, sigmoid};
use crate::numerics::{ParamSet, RealArray, RngStream, Tape, Var};
use crate::ssm::{batch_input, diffusion_time_embedding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmArch {
    /// Encoder over the past window; its final state, shifted by the
    /// diffusion-time projection, seeds a decoder over Day-0..Day-7.
    EncoderDecoder,
    /// One pass over past and future rows; the diffusion-time projection is
    /// added to the Day-0 input.
    DecoderOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden_size: usize,
    pub dropout: f64,
    pub initial_forget_bias: f64,
    pub time_embed_dim: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden_size: 256,
            dropout: 0.5,
            initial_forget_bias: 3.0,
            time_embed_dim: 32,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::arg("hidden_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::arg("time_embed_dim must be even and at least 2"));
        }
        Ok(())
    }
}

/// Weights of one LSTM block.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[input x 4*hidden]`.
    pub w_ih: Vec<f64>,
    /// `[hidden x 4*hidden]`.
    pub w_hh: Vec<f64>,
    /// `[4*hidden]`.
    pub bias: Vec<f64>,
}

impl LstmParams {
    fn from_set(p: &ParamSet, prefix: &str) -> Self {
        let w_ih = p.expect(&format!("{prefix}.w_ih"));
        let hidden = w_ih.cols() / 4;
        Self {
            input_size: w_ih.rows(),
            hidden_size: hidden,
            w_ih: w_ih.data().to_vec(),
            w_hh: p.expect(&format!("{prefix}.w_hh")).data().to_vec(),
            bias: p.expect(&format!("{prefix}.bias")).data().to_vec(),
        }
    }
}

/// Closed-form size of one block: `4h(in + h) + 4h`.
pub fn lstm_param_count(input: usize, hidden: usize) -> usize {
    4 * hidden * (input + hidden) + 4 * hidden
}

/// One step of the standard LSTM update.
pub fn lstm_cell(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
    let hs = p.hidden_size;
    let mut z = p.bias.clone();
    matmul_row(x, &p.w_ih, 4 * hs, &mut z);
    matmul_row(h_prev, &p.w_hh, 4 * hs, &mut z);
    let mut h = vec![0.0; hs];
    let mut c = vec![0.0; hs];
    for j in 0..hs {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hs + j]);
        let g = z[2 * hs + j].tanh();
        let o = sigmoid(z[3 * hs + j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    (h, c)
}

struct BlockVars {
    w_ih: Var,
    w_hh: Var,
    bias: Var,
}

impl BlockVars {
    fn lookup(vars: &IndexMap<String, Var>, prefix: &str) -> Self {
        Self {
            w_ih: vars[&format!("{prefix}.w_ih")],
            w_hh: vars[&format!("{prefix}.w_hh")],
            bias: vars[&format!("{prefix}.bias")],
        }
    }
}

/// Recorded cell step from a precomputed input projection `xw[B x 4h]`.
fn cell_step(tape: &mut Tape, block: &BlockVars, xw: Var, h: Var, c: Var, hs: usize) -> (Var, Var) {
    let hw = tape.matmul(h, block.w_hh);
    let z = tape.add(xw, hw);
    let z = tape.add_row(z, block.bias);
    let zi = tape.split_cols(z, 0, hs);
    let zf = tape.split_cols(z, hs, hs);
    let zg = tape.split_cols(z, 2 * hs, hs);
    let zo = tape.split_cols(z, 3 * hs, hs);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tc = tape.tanh(c_next);
    (tape.mul(o, tc), c_next)
}

fn run_steps(
    tape: &mut Tape,
    block: &BlockVars,
    xw: Var,
    steps: usize,
    state: (Var, Var),
    hs: usize,
    extra: Option<(usize, Var)>,
) -> (Vec<Var>, (Var, Var)) {
    let (mut h, mut c) = state;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut x_t = tape.select_rows(xw, steps, t, 1);
        if let Some((at, add)) = extra {
            if at == t {
                x_t = tape.add(x_t, add);
            }
        }
        (h, c) = cell_step(tape, block, x_t, h, c, hs);
        outs.push(h);
    }
    (outs, (h, c))
}

/// LSTM denoiser over the same conditioning and noisy-trajectory layout as
/// the SSM backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmBackbone {
    pub arch: LstmArch,
    pub cfg: LstmConfig,
    pub dims: SeqDims,
}

impl LstmBackbone {
    pub fn new(arch: LstmArch, cfg: LstmConfig, dims: SeqDims) -> Result<Self> {
        cfg.validate()?;
        dims.validate()?;
        Ok(Self { arch, cfg, dims })
    }

    fn encoder_input(&self) -> usize {
        self.dims.n_forcings + self.dims.n_static
    }

    pub fn init_params(&self, rng: &mut RngStream) -> ParamSet {
        let hs = self.cfg.hidden_size;
        let d_in = self.dims.input_dim();
        let e = self.cfg.time_embed_dim;
        let mut p = ParamSet::new();
        match self.arch {
            LstmArch::EncoderDecoder => {
                self.block(&mut p, "encoder", self.encoder_input(), rng);
                linear(&mut p, "time", e, 2 * hs, rng);
                self.block(&mut p, "decoder", d_in, rng);
            }
            LstmArch::DecoderOnly => {
                linear(&mut p, "time", e, d_in, rng);
                self.block(&mut p, "lstm", d_in, rng);
            }
        }
        linear(&mut p, "head", hs, 1, rng);
        p
    }

    fn block(&self, p: &mut ParamSet, prefix: &str, input: usize, rng: &mut RngStream) {
        let hs = self.cfg.hidden_size;
        let bound = 1.0 / (hs as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.uniform_range(-bound, bound)).collect::<Vec<_>>();
        let w_ih = draw(input * 4 * hs);
        let w_hh = draw(hs * 4 * hs);
        let mut bias = vec![0.0; 4 * hs];
        bias[hs..2 * hs].iter_mut().for_each(|b| *b = self.cfg.initial_forget_bias);
        p.insert(format!("{prefix}.w_ih"), RealArray::matrix(input, 4 * hs, w_ih).expect("shape"));
        p.insert(format!("{prefix}.w_hh"), RealArray::matrix(hs, 4 * hs, w_hh).expect("shape"));
        p.insert(format!("{prefix}.bias"), RealArray::vector(bias));
    }

    pub fn batch_input(&self, tuples: &[&ConditioningTuple], xs: &[&[f64]]) -> Result<RealArray> {
        batch_input(&self.dims, tuples, xs)
    }

    /// Recorded forward pass returning `[B x horizon]`. `inputs` is laid out as
    /// in [`batch_input`].
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &IndexMap<String, Var>,
        inputs: RealArray,
        taus: &[f64],
        dropout: Option<&mut RngStream>,
    ) -> Result<Var> {
        let dims = &self.dims;
        let (len, horizon, day0) = (dims.seq_len(), dims.horizon(), dims.day0_index());
        let batch = taus.len();
        let hs = self.cfg.hidden_size;
        if inputs.shape() != [batch * len, dims.input_dim()] {
            return Err(Error::arg(format!("input shape {:?} does not match batch {batch}", inputs.shape())));
        }
        let mut emb = Vec::with_capacity(batch * self.cfg.time_embed_dim);
        for &tau in taus {
            emb.extend(diffusion_time_embedding(tau, self.cfg.time_embed_dim)?);
        }
        let emb = tape.constant(RealArray::matrix(batch, self.cfg.time_embed_dim, emb)?);
        let tproj = tape.matmul(emb, vars["time.weight"]);
        let tproj = tape.add_row(tproj, vars["time.bias"]);
        let zeros = tape.constant(RealArray::zeros(&[batch, hs]));
        let input = tape.constant(inputs);
        let outs = match self.arch {
            LstmArch::EncoderDecoder => {
                let enc = BlockVars::lookup(vars, "encoder");
                let past = tape.select_rows(input, len, 0, dims.past_len);
                let past = tape.split_cols(past, 0, self.encoder_input());
                let xw = tape.matmul(past, enc.w_ih);
                let (_, (h, c)) = run_steps(tape, &enc, xw, dims.past_len, (zeros, zeros), hs, None);
                let th = tape.split_cols(tproj, 0, hs);
                let tc = tape.split_cols(tproj, hs, hs);
                let h = tape.add(h, th);
                let c = tape.add(c, tc);
                let dec = BlockVars::lookup(vars, "decoder");
                let rows = tape.select_rows(input, len, day0, horizon);
                let xw = tape.matmul(rows, dec.w_ih);
                run_steps(tape, &dec, xw, horizon, (h, c), hs, None).0
            }
            LstmArch::DecoderOnly => {
                let block = BlockVars::lookup(vars, "lstm");
                let xw = tape.matmul(input, block.w_ih);
                let tw = tape.matmul(tproj, block.w_ih);
                let (outs, _) = run_steps(tape, &block, xw, len, (zeros, zeros), hs, Some((day0, tw)));
                outs[day0..].to_vec()
            }
        };
        let mut stacked = tape.stack_steps(&outs);
        if let Some(rng) = dropout {
            if self.cfg.dropout > 0.0 {
                let keep = 1.0 - self.cfg.dropout;
                let n = batch * horizon * hs;
                let mask: Vec<f64> = (0..n)
                    .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                stacked = tape.mul_const(stacked, RealArray::matrix(batch * horizon, hs, mask)?);
            }
        }
        let out = tape.matmul(stacked, vars["head.weight"]);
        let out = tape.add_row(out, vars["head.bias"]);
        let output = tape.reshape(out, vec![batch, horizon]);
        if !tape.value(output).is_finite() {
            return Err(Error::numeric("LSTM output is not finite"));
        }
        Ok(output)
    }

    pub fn predict(&self, params: &ParamSet, tuples: &[&ConditioningTuple], xs: &[&[f64]], taus: &[f64]) -> Result<RealArray> {
        let mut tape = Tape::inference();
        let vars = tape.params(params);
        let inputs = self.batch_input(tuples, xs)?;
        let out = self.forward(&mut tape, &vars, inputs, taus, None)?;
        Ok(tape.value(out).clone())
    }

    /// Runs the part of the recurrence that does not see the noisy trajectory
    /// or the diffusion time.
    pub fn condition<'a>(&'a self, params: &'a ParamSet, c: &ConditioningTuple) -> Result<CachedLstm<'a>> {
        c.check(&self.dims)?;
        let dims = &self.dims;
        let hs = self.cfg.hidden_size;
        let zeros = vec![0.0; dims.horizon()];
        let inputs = self.batch_input(&[c], &[&zeros])?;
        let width = dims.input_dim();
        let day0 = dims.day0_index();
        let (block_name, prefix_rows, prefix_width) = match self.arch {
            LstmArch::EncoderDecoder => ("encoder", dims.past_len, self.encoder_input()),
            LstmArch::DecoderOnly => ("lstm", day0, width),
        };
        let block = LstmParams::from_set(params, block_name);
        let (mut h, mut cell) = (vec![0.0; hs], vec![0.0; hs]);
        for t in 0..prefix_rows {
            let row = &inputs.data()[t * width..t * width + prefix_width];
            (h, cell) = lstm_cell(row, &h, &cell, &block);
        }
        let tail = inputs.data()[day0 * width..].to_vec();
        let step_block = match self.arch {
            LstmArch::EncoderDecoder => LstmParams::from_set(params, "decoder"),
            LstmArch::DecoderOnly => block,
        };
        Ok(CachedLstm {
            backbone: self,
            params,
            block: step_block,
            state: (h, cell),
            tail,
        })
    }
}

fn linear(p: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    let b: Vec<f64> = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    p.insert(format!("{prefix}.weight"), RealArray::matrix(fan_in, fan_out, w).expect("weight shape"));
    p.insert(format!("{prefix}.bias"), RealArray::vector(b));
}

/// An LSTM bound to one conditioning tuple.
pub struct CachedLstm<'a> {
    backbone: &'a LstmBackbone,
    params: &'a ParamSet,
    block: LstmParams,
    state: (Vec<f64>, Vec<f64>),
    /// Input rows from Day-0 on with a zero target channel.
    tail: Vec<f64>,
}

impl CachedLstm<'_> {
    fn velocity_row(&self, x_tau: &[f64], tproj: &[f64]) -> Vec<f64> {
        let bb = self.backbone;
        let hs = bb.cfg.hidden_size;
        let width = bb.dims.input_dim();
        let (mut h, mut c) = self.state.clone();
        if bb.arch == LstmArch::EncoderDecoder {
            h.iter_mut().zip(&tproj[..hs]).for_each(|(a, b)| *a += b);
            c.iter_mut().zip(&tproj[hs..]).for_each(|(a, b)| *a += b);
        }
        let w = self.params.expect("head.weight").data();
        let b0 = self.params.expect("head.bias").data()[0];
        let mut row = vec![0.0; width];
        x_tau
            .iter()
            .enumerate()
            .map(|(t, &xv)| {
                row.copy_from_slice(&self.tail[t * width..(t + 1) * width]);
                row[width - 1] = xv;
                if t == 0 && bb.arch == LstmArch::DecoderOnly {
                    row.iter_mut().zip(tproj).for_each(|(a, b)| *a += b);
                }
                (h, c) = lstm_cell(&row, &h, &c, &self.block);
                b0 + h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

impl VelocityModel for CachedLstm<'_> {
    fn horizon(&self) -> usize {
        self.backbone.dims.horizon()
    }

    fn velocity_batch(&self, xs: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
        let emb = diffusion_time_embedding(tau, self.backbone.cfg.time_embed_dim)?;
        let mut tproj = self.params.expect("time.bias").data().to_vec();
        let width = tproj.len();
        matmul_row(&emb, self.params.expect("time.weight").data(), width, &mut tproj);
        xs.iter()
            .map(|x| {
                if x.len() != self.horizon() {
                    return Err(Error::arg(format!("trajectory has {} entries, expected {}", x.len(), self.horizon())));
                }
                let v = self.velocity_row(x, &tproj);
                if v.iter().any(|e| !e.is_finite()) {
                    return Err(Error::numeric("velocity estimate is not finite"));
                }
                Ok(v)
            })
            .collect()
    }
}
