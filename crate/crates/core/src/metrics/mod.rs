//! Deterministic and ensemble verification scores.

mod climatology;
mod deterministic;
mod probabilistic;
mod wilcoxon;

pub use climatology::{climatology_members, climatology_pool, CLIMATOLOGY_HALF_WINDOW};
pub use deterministic::{
    cor, fhv, fhv_with, flv, flv_with, kge, nse, segment_len, skill_score, PairedSeries, SkillKind,
    HIGH_FLOW_FRACTION, LOW_FLOW_FRACTION,
};
pub use probabilistic::{
    crps, crps_ensemble, exceedance_probability, precision_recall_ap, quantile, reliability_and_sharpness,
    EnsembleSeries, PrCurve, PrPoint, Reliability, ReliabilityBin,
};
pub use wilcoxon::{wilcoxon_one_sided, EXACT_MAX_N};
