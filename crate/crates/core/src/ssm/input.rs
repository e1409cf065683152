//! Packing a conditioning tuple and a noisy trajectory into model rows.

use crate::data::{ConditioningTuple, SeqDims};
use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// Writes sequence row `t` into `out`: forcings, statics, then the target
/// channel (zero before Day-0, `x_tau` from Day-0 on).
pub fn write_input_row(c: &ConditioningTuple, x_tau: &[f64], t: usize, out: &mut [f64]) {
    let forcing = c.forcing_row(t);
    let (f_part, rest) = out.split_at_mut(forcing.len());
    f_part.copy_from_slice(forcing);
    let (s_part, target) = rest.split_at_mut(c.statics.len());
    s_part.copy_from_slice(&c.statics);
    let day0 = c.past.rows() - 1;
    target[0] = if t >= day0 { x_tau[t - day0] } else { 0.0 };
}

/// Input sequence `[(past + future) x (forcings + statics + 1)]`.
pub fn assemble_input(c: &ConditioningTuple, x_tau: &[f64]) -> Result<RealArray> {
    let past = c.past.rows();
    let future = c.future.rows();
    if past == 0 {
        return Err(Error::arg("past window is empty"));
    }
    if x_tau.len() != future + 1 {
        return Err(Error::arg(format!(
            "noisy trajectory has {} entries, expected {}",
            x_tau.len(),
            future + 1
        )));
    }
    if c.future.cols() != c.past.cols() && future > 0 {
        return Err(Error::arg("past and future forcing widths differ"));
    }
    let width = c.past.cols() + c.statics.len() + 1;
    let len = past + future;
    let mut data = vec![0.0; len * width];
    for (t, row) in data.chunks_mut(width).enumerate() {
        write_input_row(c, x_tau, t, row);
    }
    RealArray::matrix(len, width, data)
}

/// Stacks the assembled inputs of several conditioning tuples and noisy
/// trajectories into `[B*L x d_in]`, one block of `L` rows per tuple.
pub fn batch_input(dims: &SeqDims, tuples: &[&ConditioningTuple], xs: &[&[f64]]) -> Result<RealArray> {
    if tuples.len() != xs.len() {
        return Err(Error::arg("one noisy trajectory per conditioning tuple"));
    }
    let len = dims.seq_len();
    let width = dims.input_dim();
    let mut data = vec![0.0; tuples.len() * len * width];
    for (b, (c, x)) in tuples.iter().zip(xs).enumerate() {
        c.check(dims)?;
        if x.len() != dims.horizon() {
            return Err(Error::arg(format!(
                "noisy trajectory has {} entries, expected {}",
                x.len(),
                dims.horizon()
            )));
        }
        for t in 0..len {
            let lo = (b * len + t) * width;
            write_input_row(c, x, t, &mut data[lo..lo + width]);
        }
    }
    RealArray::matrix(tuples.len() * len, width, data)
}
