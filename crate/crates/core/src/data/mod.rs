//! Basin records, normalization, windows, and the synthetic generator.

mod conditioning;
mod dataset;
mod forecast;
mod norm;
mod record;
mod synthetic;

pub use conditioning::{ConditioningTuple, SeqDims};
pub use dataset::{make_windows, Dataset, PreparedBasin, Splits, Window, WindowSet};
pub use forecast::{read_forecast_csv, write_forecast_csv, ForecastRow};
pub use norm::{compute_norm_stats, mean_std, norm_stats_per_basin, DateRange, NormMode, NormStats, STD_FLOOR};
pub use record::{
    format_f64, load_basin_csv, load_static_csv, write_basin_csv, write_static_csv, BasinRecord, DATE_FORMAT,
    FORCING_NAMES, N_FORCINGS, N_STATICS, STATIC_NAMES,
};
pub use synthetic::{
    derive_vapor_pressure, linear_reservoir, synthetic_basin, synthetic_dataset, SyntheticConfig, SyntheticParams,
};
