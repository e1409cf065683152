use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::conditioning::{ConditioningTuple, SeqDims};
use super::norm::{mean_std, norm_stats_per_basin, DateRange, NormMode, NormStats};
use super::record::{BasinRecord, N_FORCINGS};
use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// Initialization indices of one basin inside a date range.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WindowSet {
    pub indices: Vec<usize>,
    /// Dates in range lacking the past window or the future days.
    pub skipped_history: usize,
    /// Dates dropped because a target day is missing.
    pub skipped_missing: usize,
}

/// Valid initialization indices of `record` whose whole target window
/// (Day-0..Day-L_ff) lies in `range`. With `require_target`, windows with a
/// missing observation are dropped.
pub fn make_windows(record: &BasinRecord, range: DateRange, dims: &SeqDims, require_target: bool) -> WindowSet {
    let mut set = WindowSet::default();
    let n = record.len();
    for (i, d) in record.dates.iter().enumerate() {
        if !range.contains(*d) {
            continue;
        }
        if i + 1 < dims.past_len || i + dims.future_len >= n {
            set.skipped_history += 1;
            continue;
        }
        if !range.contains(record.dates[i + dims.future_len]) {
            continue;
        }
        if require_target && record.streamflow[i..=i + dims.future_len].iter().any(Option::is_none) {
            set.skipped_missing += 1;
            continue;
        }
        set.indices.push(i);
    }
    set
}

/// Train, validation and test ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl Splits {
    /// Consecutive blocks of 365-day years starting at `first`.
    pub fn by_years(first: NaiveDate, train: u32, validation: u32, test: u32) -> Result<Self> {
        let block = |from: u32, years: u32| -> Result<DateRange> {
            if years == 0 {
                return Err(Error::arg("every split needs at least one year"));
            }
            let start = first + chrono::Days::new(365 * from as u64);
            let end = first + chrono::Days::new(365 * (from + years) as u64 - 1);
            DateRange::new(start, end)
        };
        Ok(Self {
            train: block(0, train)?,
            validation: block(train, validation)?,
            test: block(train + validation, test)?,
        })
    }
}

/// A basin in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBasin {
    pub basin_id: String,
    pub dates: Vec<NaiveDate>,
    /// `days x N_FORCINGS`, normalized.
    pub forcings: Vec<f64>,
    /// Normalized streamflow.
    pub streamflow: Vec<Option<f64>>,
    /// Streamflow in mm/day.
    pub raw_streamflow: Vec<Option<f64>>,
    pub statics: Vec<f64>,
    pub stats: NormStats,
    /// Standard deviation of normalized streamflow over the training range.
    pub target_std: f64,
}

/// One forecast window: basin and Day-0 index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub basin: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: SeqDims,
    pub basins: Vec<PreparedBasin>,
}

impl Dataset {
    /// Normalizes `records` with statistics over `train`.
    pub fn prepare(records: &[BasinRecord], train: DateRange, mode: NormMode, dims: SeqDims) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::arg("no basins"));
        }
        if dims.n_forcings != N_FORCINGS || records.iter().any(|r| r.statics.len() != dims.n_static) {
            return Err(Error::arg("record widths do not match the sequence dimensions"));
        }
        let stats = norm_stats_per_basin(records, train, mode)?;
        let basins = records
            .iter()
            .zip(stats)
            .map(|(r, s)| {
                r.validate()?;
                let forcings = r.forcings.iter().flat_map(|f| s.normalize_forcing(f)).collect();
                let streamflow: Vec<Option<f64>> = r.streamflow.iter().map(|q| q.map(|v| s.normalize_q(v))).collect();
                let train_q = r
                    .dates
                    .iter()
                    .zip(&streamflow)
                    .filter(|(d, _)| train.contains(**d))
                    .filter_map(|(_, q)| *q);
                let target_std = mean_std(train_q).map(|(_, sd)| sd).unwrap_or(1.0);
                Ok(PreparedBasin {
                    basin_id: r.basin_id.clone(),
                    dates: r.dates.clone(),
                    forcings,
                    statics: s.normalize_statics(&r.statics),
                    streamflow,
                    raw_streamflow: r.streamflow.clone(),
                    stats: s,
                    target_std,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, basins })
    }

    /// Windows of every basin in `range`, with the per-basin skip counts.
    pub fn windows(&self, range: DateRange, require_target: bool) -> (Vec<Window>, Vec<WindowSet>) {
        let mut all = Vec::new();
        let mut sets = Vec::with_capacity(self.basins.len());
        for (b, basin) in self.basins.iter().enumerate() {
            let shim = BasinRecord {
                basin_id: String::new(),
                dates: basin.dates.clone(),
                forcings: Vec::new(),
                streamflow: basin.streamflow.clone(),
                statics: Vec::new(),
            };
            let set = make_windows(&shim, range, &self.dims, require_target);
            all.extend(set.indices.iter().map(|&index| Window { basin: b, index }));
            sets.push(set);
        }
        (all, sets)
    }

    pub fn tuple(&self, w: Window) -> ConditioningTuple {
        let basin = &self.basins[w.basin];
        let d = &self.dims;
        let nf = d.n_forcings;
        let lo = (w.index + 1 - d.past_len) * nf;
        let mid = (w.index + 1) * nf;
        let hi = (w.index + 1 + d.future_len) * nf;
        ConditioningTuple {
            past: RealArray::matrix(d.past_len, nf, basin.forcings[lo..mid].to_vec()).expect("past shape"),
            future: RealArray::matrix(d.future_len, nf, basin.forcings[mid..hi].to_vec()).expect("future shape"),
            statics: basin.statics.clone(),
        }
    }

    /// Normalized Day-0..Day-L_ff streamflow, if complete.
    pub fn target(&self, w: Window) -> Option<Vec<f64>> {
        self.basins[w.basin].streamflow[w.index..=w.index + self.dims.future_len]
            .iter()
            .copied()
            .collect()
    }

    pub fn init_date(&self, w: Window) -> NaiveDate {
        self.basins[w.basin].dates[w.index]
    }

    pub fn basin_index(&self, basin_id: &str) -> Option<usize> {
        self.basins.iter().position(|b| b.basin_id == basin_id)
    }
}
