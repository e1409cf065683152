use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// Sequence geometry shared by every backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqDims {
    /// Past window length, ending at the initialization day (Day-0).
    pub past_len: usize,
    /// Future forcing days after the initialization day.
    pub future_len: usize,
    pub n_forcings: usize,
    pub n_static: usize,
}

impl Default for SeqDims {
    fn default() -> Self {
        Self {
            past_len: 365,
            future_len: 7,
            n_forcings: 5,
            n_static: 27,
        }
    }
}

impl SeqDims {
    /// Predicted trajectory length: Day-0 plus the future days.
    pub fn horizon(&self) -> usize {
        self.future_len + 1
    }

    pub fn seq_len(&self) -> usize {
        self.past_len + self.future_len
    }

    /// Forcings, statics and the target channel.
    pub fn input_dim(&self) -> usize {
        self.n_forcings + self.n_static + 1
    }

    /// Row index of Day-0 in the assembled sequence.
    pub fn day0_index(&self) -> usize {
        self.past_len - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.past_len == 0 || self.n_forcings == 0 {
            return Err(Error::arg("past_len and n_forcings must be positive"));
        }
        Ok(())
    }
}

/// Conditioning context of one forecast: past forcings, future forcings and
/// static attributes, all in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningTuple {
    /// `past_len x n_forcings`, last row is Day-0.
    pub past: RealArray,
    /// `future_len x n_forcings`, Day-1 onwards.
    pub future: RealArray,
    pub statics: Vec<f64>,
}

impl ConditioningTuple {
    pub fn check(&self, dims: &SeqDims) -> Result<()> {
        let ok = self.past.shape() == [dims.past_len, dims.n_forcings]
            && self.future.shape() == [dims.future_len, dims.n_forcings]
            && self.statics.len() == dims.n_static;
        if !ok {
            return Err(Error::arg(format!(
                "conditioning shapes past {:?}, future {:?}, statics {} do not match {:?}",
                self.past.shape(),
                self.future.shape(),
                self.statics.len(),
                dims
            )));
        }
        Ok(())
    }

    /// Forcings for sequence row `t` (past rows first, then future rows).
    pub fn forcing_row(&self, t: usize) -> &[f64] {
        let p = self.past.rows();
        if t < p {
            self.past.row(t)
        } else {
            self.future.row(t - p)
        }
    }
}
