use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::record::{BasinRecord, N_FORCINGS, N_STATICS};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Inclusive calendar range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::arg(format!("date range {start}..{end} is empty")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// One set of statistics over all basins.
    #[default]
    Pooled,
    /// Forcing and streamflow statistics per basin; statics stay pooled.
    PerBasin,
}

/// Per-variable mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub forcing_mean: Vec<f64>,
    pub forcing_std: Vec<f64>,
    pub static_mean: Vec<f64>,
    pub static_std: Vec<f64>,
    pub q_mean: f64,
    pub q_std: f64,
}

/// Population mean and standard deviation, the latter floored at [`STD_FLOOR`].
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Some((mean, var.sqrt().max(STD_FLOOR)))
}

impl NormStats {
    pub fn normalize_forcing(&self, f: &[f64; N_FORCINGS]) -> [f64; N_FORCINGS] {
        std::array::from_fn(|j| (f[j] - self.forcing_mean[j]) / self.forcing_std[j])
    }

    pub fn normalize_statics(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, v)| (v - self.static_mean[j]) / self.static_std[j])
            .collect()
    }

    pub fn normalize_q(&self, q: f64) -> f64 {
        (q - self.q_mean) / self.q_std
    }

    pub fn denormalize_q(&self, z: f64) -> f64 {
        z * self.q_std + self.q_mean
    }
}

fn dynamic_stats(records: &[&BasinRecord], range: DateRange) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let in_range = || {
        records.iter().flat_map(move |r| {
            r.dates
                .iter()
                .enumerate()
                .filter(move |(_, d)| range.contains(**d))
                .map(move |(i, _)| (*r, i))
        })
    };
    let mut f_mean = Vec::with_capacity(N_FORCINGS);
    let mut f_std = Vec::with_capacity(N_FORCINGS);
    for j in 0..N_FORCINGS {
        let (m, s) = mean_std(in_range().map(|(r, i)| r.forcings[i][j]))
            .ok_or_else(|| Error::arg(format!("no days within {}..{}", range.start, range.end)))?;
        f_mean.push(m);
        f_std.push(s);
    }
    let (q_mean, q_std) = mean_std(in_range().filter_map(|(r, i)| r.streamflow[i]))
        .ok_or_else(|| Error::arg("no streamflow observations in the training range"))?;
    Ok((f_mean, f_std, q_mean, q_std))
}

/// Statistics over the days of `range` pooled across `records`.
pub fn compute_norm_stats(records: &[BasinRecord], range: DateRange) -> Result<NormStats> {
    let refs: Vec<&BasinRecord> = records.iter().collect();
    let (forcing_mean, forcing_std, q_mean, q_std) = dynamic_stats(&refs, range)?;
    let (static_mean, static_std) = static_stats(records)?;
    Ok(NormStats {
        forcing_mean,
        forcing_std,
        static_mean,
        static_std,
        q_mean,
        q_std,
    })
}

fn static_stats(records: &[BasinRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mean = Vec::with_capacity(N_STATICS);
    let mut std = Vec::with_capacity(N_STATICS);
    for j in 0..N_STATICS {
        if records.iter().any(|r| r.statics.len() != N_STATICS) {
            return Err(Error::arg(format!("every basin needs {N_STATICS} static attributes")));
        }
        let (m, s) = mean_std(records.iter().map(|r| r.statics[j])).ok_or_else(|| Error::arg("no basins"))?;
        mean.push(m);
        std.push(s);
    }
    Ok((mean, std))
}

/// One set of statistics per record, honoring `mode`.
pub fn norm_stats_per_basin(records: &[BasinRecord], range: DateRange, mode: NormMode) -> Result<Vec<NormStats>> {
    let pooled = compute_norm_stats(records, range)?;
    match mode {
        NormMode::Pooled => Ok(vec![pooled; records.len()]),
        NormMode::PerBasin => records
            .iter()
            .map(|r| {
                let (forcing_mean, forcing_std, q_mean, q_std) = dynamic_stats(&[r], range)?;
                Ok(NormStats {
                    forcing_mean,
                    forcing_std,
                    q_mean,
                    q_std,
                    ..pooled.clone()
                })
            })
            .collect(),
    }
}
