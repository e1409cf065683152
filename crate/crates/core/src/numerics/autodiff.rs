//! Array-level reverse-mode differentiation.
//!
//! Operations push their output onto a [`Tape`] together with a closure that
//! maps the output gradient onto the gradients of their inputs. Nodes whose
//! inputs are all constants record no closure, and a tape built with
//! [`Tape::inference`] records none at all.

use std::cell::RefCell;

use indexmap::IndexMap;

use super::array::RealArray;
use super::dense;
use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub type BackwardFn = Box<dyn Fn(&BackwardPass<'_>, &RealArray)>;

pub struct Tape {
    values: Vec<RealArray>,
    needs_grad: Vec<bool>,
    backward: Vec<Option<BackwardFn>>,
    record: bool,
}

/// Gradient accumulator handed to backward closures.
pub struct BackwardPass<'a> {
    values: &'a [RealArray],
    needs_grad: &'a [bool],
    grads: RefCell<Vec<Option<RealArray>>>,
}

impl BackwardPass<'_> {
    pub fn value(&self, v: Var) -> &RealArray {
        &self.values[v.0]
    }

    pub fn wants(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    /// Adds into the gradient buffer of `v` (zero-initialized on first use).
    pub fn accumulate_with(&self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let mut grads = self.grads.borrow_mut();
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| RealArray::zeros(self.values[v.0].shape()));
        f(buf.data_mut());
    }

    pub fn accumulate(&self, v: Var, g: &[f64]) {
        self.accumulate_with(v, |buf| {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        });
    }
}

/// Gradients of a scalar with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<RealArray>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&RealArray> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<RealArray> {
        self.grads[v.0].take()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            needs_grad: Vec::new(),
            backward: Vec::new(),
            record: true,
        }
    }

    /// A tape that evaluates values only.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &RealArray {
        &self.values[v.0]
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: RealArray) -> Var {
        let record = self.record;
        self.push_node(value, record, None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: RealArray) -> Var {
        self.push_node(value, false, None)
    }

    /// Registers every array of `params` as a leaf.
    pub fn params(&mut self, params: &ParamSet) -> IndexMap<String, Var> {
        params
            .iter()
            .map(|(name, value)| (name.to_string(), self.param(value.clone())))
            .collect()
    }

    fn push_node(&mut self, value: RealArray, needs: bool, back: Option<BackwardFn>) -> Var {
        let id = Var(self.values.len());
        self.values.push(value);
        self.needs_grad.push(needs);
        self.backward.push(if needs { back } else { None });
        id
    }

    /// Records a custom operation. The closure is kept only when some input
    /// needs a gradient.
    pub fn custom(
        &mut self,
        value: RealArray,
        inputs: &[Var],
        back: impl Fn(&BackwardPass<'_>, &RealArray) + 'static,
    ) -> Var {
        let needs = self.record && inputs.iter().any(|v| self.needs_grad[v.0]);
        let back: Option<BackwardFn> = if needs { Some(Box::new(back)) } else { None };
        self.push_node(value, needs, back)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = self.values[loss.0].data();
        if value.len() != 1 {
            return Err(Error::arg("backward needs a scalar output"));
        }
        if !value[0].is_finite() {
            return Err(Error::numeric(format!("loss is not finite: {}", value[0])));
        }
        let pass = BackwardPass {
            values: &self.values,
            needs_grad: &self.needs_grad,
            grads: RefCell::new(vec![None; self.values.len()]),
        };
        pass.grads.borrow_mut()[loss.0] = Some(RealArray::full(self.values[loss.0].shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(back) = &self.backward[i] else {
                continue;
            };
            let g = pass.grads.borrow_mut()[i].take();
            if let Some(g) = g {
                back(&pass, &g);
            }
        }
        Ok(Gradients {
            grads: pass.grads.into_inner(),
        })
    }

    // ----- elementwise -----

    fn check_same(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "{op}: shape mismatch"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "add");
        let mut out = self.values[a.0].clone();
        out.add_assign(&self.values[b.0]);
        self.custom(out, &[a, b], move |p, g| {
            p.accumulate(a, g.data());
            p.accumulate(b, g.data());
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "sub");
        let bv = &self.values[b.0];
        let mut out = self.values[a.0].clone();
        for (o, x) in out.data_mut().iter_mut().zip(bv.data()) {
            *o -= x;
        }
        self.custom(out, &[a, b], move |p, g| {
            p.accumulate(a, g.data());
            p.accumulate_with(b, |buf| {
                for (o, x) in buf.iter_mut().zip(g.data()) {
                    *o -= x;
                }
            });
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "mul");
        let av = &self.values[a.0];
        let bv = &self.values[b.0];
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = RealArray::new(av.shape().to_vec(), data).expect("same shape");
        self.custom(out, &[a, b], move |p, g| {
            let (av, bv) = (p.value(a).data(), p.value(b).data());
            p.accumulate_with(a, |buf| {
                for ((o, gv), y) in buf.iter_mut().zip(g.data()).zip(bv) {
                    *o += gv * y;
                }
            });
            p.accumulate_with(b, |buf| {
                for ((o, gv), x) in buf.iter_mut().zip(g.data()).zip(av) {
                    *o += gv * x;
                }
            });
        })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.values[a.0].map(|v| v * c);
        self.custom(out, &[a], move |p, g| {
            p.accumulate_with(a, |buf| {
                for (o, gv) in buf.iter_mut().zip(g.data()) {
                    *o += gv * c;
                }
            });
        })
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: RealArray) -> Var {
        let av = &self.values[a.0];
        assert_eq!(av.len(), mask.len(), "mul_const: length mismatch");
        let data = av.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = RealArray::new(av.shape().to_vec(), data).expect("same shape");
        self.custom(out, &[a], move |p, g| {
            p.accumulate_with(a, |buf| {
                for ((o, gv), m) in buf.iter_mut().zip(g.data()).zip(mask.data()) {
                    *o += gv * m;
                }
            });
        })
    }

    fn unary(&mut self, a: Var, f: fn(f64) -> f64, df_from: fn(f64, f64) -> f64) -> Var {
        let out = self.values[a.0].map(f);
        let id = Var(self.values.len());
        self.custom(out, &[a], move |p, g| {
            let x = p.value(a).data();
            let y = p.value(id).data();
            p.accumulate_with(a, |buf| {
                for (i, o) in buf.iter_mut().enumerate() {
                    *o += g.data()[i] * df_from(x[i], y[i]);
                }
            });
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, dense::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, dense::gelu, |x, _| dense::gelu_grad(x))
    }

    // ----- matrix -----

    /// `a[m x k] * b[k x n]`; `a` may have any leading shape.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        let (m, k) = (av.rows(), av.cols());
        assert_eq!(bv.shape().len(), 2, "matmul: right operand must be 2-D");
        assert_eq!(bv.shape()[0], k, "matmul: inner dimensions differ");
        let n = bv.shape()[1];
        let out = RealArray::matrix(m, n, dense::matmul(av.data(), bv.data(), m, k, n))
            .expect("matmul shape");
        self.custom(out, &[a, b], move |p, g| {
            if p.wants(a) {
                let ga = dense::matmul_bt(g.data(), p.value(b).data(), m, n, k);
                p.accumulate(a, &ga);
            }
            if p.wants(b) {
                let av = p.value(a).data();
                p.accumulate_with(b, |buf| dense::matmul_at_acc(av, g.data(), m, k, n, buf));
            }
        })
    }

    /// Adds a row vector `r[n]` to every row of `a[m x n]`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let n = self.values[a.0].cols();
        assert_eq!(self.values[r.0].len(), n, "add_row: width mismatch");
        let mut out = self.values[a.0].clone();
        let rv = self.values[r.0].data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (o, x) in row.iter_mut().zip(&rv) {
                *o += x;
            }
        }
        self.custom(out, &[a, r], move |p, g| {
            p.accumulate(a, g.data());
            p.accumulate_with(r, |buf| {
                for row in g.data().chunks(n) {
                    for (o, x) in buf.iter_mut().zip(row) {
                        *o += x;
                    }
                }
            });
        })
    }

    /// Multiplies every row of `a[m x n]` elementwise by `r[n]`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let n = self.values[a.0].cols();
        assert_eq!(self.values[r.0].len(), n, "mul_row: width mismatch");
        let rv = self.values[r.0].data().to_vec();
        let mut out = self.values[a.0].clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, x) in row.iter_mut().zip(&rv) {
                *o *= x;
            }
        }
        self.custom(out, &[a, r], move |p, g| {
            let rv = p.value(r).data();
            p.accumulate_with(a, |buf| {
                for (brow, grow) in buf.chunks_mut(n).zip(g.data().chunks(n)) {
                    for ((o, gv), x) in brow.iter_mut().zip(grow).zip(rv) {
                        *o += gv * x;
                    }
                }
            });
            let av = p.value(a).data();
            p.accumulate_with(r, |buf| {
                for (arow, grow) in av.chunks(n).zip(g.data().chunks(n)) {
                    for ((o, gv), x) in buf.iter_mut().zip(grow).zip(arow) {
                        *o += gv * x;
                    }
                }
            });
        })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.values[x.0];
        let (m, n) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.values[gain.0].data(), self.values[bias.0].data());
        let mut out = vec![0.0; m * n];
        let mut stats = Vec::with_capacity(m);
        for i in 0..m {
            stats.push(dense::layer_norm_row(
                &xv.data()[i * n..(i + 1) * n],
                gv,
                bv,
                &mut out[i * n..(i + 1) * n],
            ));
        }
        let out = RealArray::new(xv.shape().to_vec(), out).expect("same shape");
        self.custom(out, &[x, gain, bias], move |p, g| {
            let xv = p.value(x).data();
            let gv = p.value(gain).data();
            let gd = g.data();
            let mut gx = vec![0.0; m * n];
            let mut ggain = vec![0.0; n];
            let mut gbias = vec![0.0; n];
            for i in 0..m {
                let (mean, rstd) = stats[i];
                let xr = &xv[i * n..(i + 1) * n];
                let gr = &gd[i * n..(i + 1) * n];
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for j in 0..n {
                    let xhat = (xr[j] - mean) * rstd;
                    let dxhat = gr[j] * gv[j];
                    ggain[j] += gr[j] * xhat;
                    gbias[j] += gr[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                let nf = n as f64;
                for j in 0..n {
                    let xhat = (xr[j] - mean) * rstd;
                    let dxhat = gr[j] * gv[j];
                    gx[i * n + j] = rstd * (dxhat - sum_dxhat / nf - xhat * sum_dxhat_xhat / nf);
                }
            }
            p.accumulate(x, &gx);
            p.accumulate(gain, &ggain);
            p.accumulate(bias, &gbias);
        })
    }

    /// Columns `start..start+len` of a 2-D array.
    pub fn split_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = &self.values[a.0];
        let (m, n) = (av.rows(), av.cols());
        assert!(start + len <= n, "split_cols: out of range");
        let mut data = Vec::with_capacity(m * len);
        for row in av.data().chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = RealArray::matrix(m, len, data).expect("split shape");
        self.custom(out, &[a], move |p, g| {
            p.accumulate_with(a, |buf| {
                for (brow, grow) in buf.chunks_mut(n).zip(g.data().chunks(len)) {
                    for (o, x) in brow[start..start + len].iter_mut().zip(grow) {
                        *o += x;
                    }
                }
            });
        })
    }

    /// For `a` laid out as `blocks` consecutive blocks of `block_len` rows,
    /// keeps rows `start..start+len` of every block.
    pub fn select_rows(&mut self, a: Var, block_len: usize, start: usize, len: usize) -> Var {
        let av = &self.values[a.0];
        let n = av.cols();
        let blocks = av.rows() / block_len;
        assert_eq!(blocks * block_len, av.rows(), "select_rows: ragged blocks");
        assert!(start + len <= block_len, "select_rows: out of range");
        let mut data = Vec::with_capacity(blocks * len * n);
        for b in 0..blocks {
            let lo = (b * block_len + start) * n;
            data.extend_from_slice(&av.data()[lo..lo + len * n]);
        }
        let out = RealArray::matrix(blocks * len, n, data).expect("select shape");
        self.custom(out, &[a], move |p, g| {
            p.accumulate_with(a, |buf| {
                for b in 0..blocks {
                    let lo = (b * block_len + start) * n;
                    let src = &g.data()[b * len * n..(b + 1) * len * n];
                    for (o, x) in buf[lo..lo + len * n].iter_mut().zip(src) {
                        *o += x;
                    }
                }
            });
        })
    }

    /// Adds `bias[b]` to rows `start..start+len` of block `b` of `a`.
    pub fn add_block_bias(
        &mut self,
        a: Var,
        bias: Var,
        block_len: usize,
        start: usize,
        len: usize,
    ) -> Var {
        let n = self.values[a.0].cols();
        let blocks = self.values[a.0].rows() / block_len;
        assert_eq!(self.values[bias.0].rows(), blocks, "add_block_bias: one bias row per block");
        assert_eq!(self.values[bias.0].cols(), n, "add_block_bias: width mismatch");
        let mut out = self.values[a.0].clone();
        {
            let bv = self.values[bias.0].data().to_vec();
            let od = out.data_mut();
            for b in 0..blocks {
                for t in start..start + len {
                    let row = &mut od[(b * block_len + t) * n..(b * block_len + t + 1) * n];
                    for (o, x) in row.iter_mut().zip(&bv[b * n..(b + 1) * n]) {
                        *o += x;
                    }
                }
            }
        }
        self.custom(out, &[a, bias], move |p, g| {
            p.accumulate(a, g.data());
            p.accumulate_with(bias, |buf| {
                for b in 0..blocks {
                    for t in start..start + len {
                        let grow = &g.data()[(b * block_len + t) * n..(b * block_len + t + 1) * n];
                        for (o, x) in buf[b * n..(b + 1) * n].iter_mut().zip(grow) {
                            *o += x;
                        }
                    }
                }
            });
        })
    }

    /// Interleaves per-step `[B x n]` arrays into `[B*T x n]` (block per batch row).
    pub fn stack_steps(&mut self, steps: &[Var]) -> Var {
        let t_len = steps.len();
        assert!(t_len > 0, "stack_steps: no steps");
        let b_len = self.values[steps[0].0].rows();
        let n = self.values[steps[0].0].cols();
        let mut data = vec![0.0; b_len * t_len * n];
        for (t, s) in steps.iter().enumerate() {
            let sv = self.values[s.0].data();
            for b in 0..b_len {
                let dst = (b * t_len + t) * n;
                data[dst..dst + n].copy_from_slice(&sv[b * n..(b + 1) * n]);
            }
        }
        let out = RealArray::matrix(b_len * t_len, n, data).expect("stack shape");
        let steps = steps.to_vec();
        let inputs = steps.clone();
        self.custom(out, &inputs, move |p, g| {
            for (t, &s) in steps.iter().enumerate() {
                p.accumulate_with(s, |buf| {
                    for b in 0..b_len {
                        let src = (b * t_len + t) * n;
                        for (o, x) in buf[b * n..(b + 1) * n].iter_mut().zip(&g.data()[src..src + n]) {
                            *o += x;
                        }
                    }
                });
            }
        })
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let out = self.values[a.0]
            .clone()
            .reshaped(shape)
            .expect("reshape keeps the element count");
        self.custom(out, &[a], move |p, g| p.accumulate(a, g.data()))
    }

    // ----- reductions -----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data().iter().sum();
        self.custom(RealArray::scalar(s), &[a], move |p, g| {
            let gv = g.item();
            p.accumulate_with(a, |buf| buf.iter_mut().for_each(|o| *o += gv));
        })
    }

    /// Mean squared difference to a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Var {
        let pv = self.values[pred.0].data();
        assert_eq!(pv.len(), target.len(), "mse: length mismatch");
        let n = pv.len() as f64;
        let loss = pv.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let target = target.to_vec();
        self.custom(RealArray::scalar(loss), &[pred], move |p, g| {
            let scale = 2.0 * g.item() / n;
            let pv = p.value(pred).data();
            p.accumulate_with(pred, |buf| {
                for ((o, a), b) in buf.iter_mut().zip(pv).zip(&target) {
                    *o += scale * (a - b);
                }
            });
        })
    }

    /// `(1/B) * sum_b w_b * sum_f (pred[b,f] - target[b,f])^2` for `pred[B x F]`.
    pub fn weighted_sse(&mut self, pred: Var, target: &[f64], weights: &[f64]) -> Var {
        let pv = self.values[pred.0].data();
        let b_len = weights.len();
        assert_eq!(pv.len(), target.len(), "weighted_sse: length mismatch");
        let f_len = pv.len() / b_len;
        let mut loss = 0.0;
        for b in 0..b_len {
            let mut s = 0.0;
            for f in 0..f_len {
                let d = pv[b * f_len + f] - target[b * f_len + f];
                s += d * d;
            }
            loss += weights[b] * s;
        }
        loss /= b_len as f64;
        let target = target.to_vec();
        let weights = weights.to_vec();
        self.custom(RealArray::scalar(loss), &[pred], move |p, g| {
            let pv = p.value(pred).data();
            let scale = 2.0 * g.item() / b_len as f64;
            p.accumulate_with(pred, |buf| {
                for b in 0..b_len {
                    for f in 0..f_len {
                        let i = b * f_len + f;
                        buf[i] += scale * weights[b] * (pv[i] - target[i]);
                    }
                }
            });
        })
    }
}

/// Evaluates `loss` on a fresh tape and returns its value with the gradient
/// of every parameter. Parameters the loss never touches get exact zeros.
pub fn gradient_of<F>(params: &ParamSet, loss: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Tape, &IndexMap<String, Var>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.params(params);
    let out = loss(&mut tape, &vars)?;
    let value = tape.value(out).item();
    let mut grads = tape.backward(out)?;
    let mut result = params.zeros_like();
    for (name, g) in result.iter_mut() {
        if let Some(computed) = grads.take(vars[name]) {
            *g = computed;
        }
    }
    Ok((value, result))
}
