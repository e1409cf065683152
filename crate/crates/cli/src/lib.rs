//! Batch commands wiring data generation, training, forecasting and
//! evaluation around a run configuration.

pub mod config;
mod evaluate;
mod pipeline;

pub use config::{parse_leads, RunConfig};
pub use evaluate::{evaluate, median, EvaluateOptions, EvaluationReport, MetricRow, SkillRow, WilcoxonRow, METRICS};
pub use pipeline::{
    climatology, forecast, generate_data, load_data_dir, train, ForecastOptions, ForecastReport, SkippedForecast,
    TrainReport, STATICS_FILE,
};

/// Process exit code for a failed command: 3 for numerical failures such as
/// divergence, 2 for usage and input errors.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hydrodiff::Error>() {
            return match e {
                hydrodiff::Error::Numeric(_) | hydrodiff::Error::Diverged { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}
