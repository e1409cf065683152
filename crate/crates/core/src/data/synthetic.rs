use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::record::{BasinRecord, N_STATICS};
use crate::error::{Error, Result};
use crate::numerics::rng::label;
use crate::numerics::RngStream;

/// `e = q p / (0.622 + 0.378 q)` for specific humidity `q` (kg/kg) and
/// pressure `p` (Pa).
pub fn derive_vapor_pressure(q: f64, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) || !(p > 0.0) {
        return Err(Error::arg(format!("specific humidity {q} or pressure {p} out of range")));
    }
    Ok(q * p / (0.622 + 0.378 * q))
}

/// Linear reservoir `S_{t+1} = S_t + P_t - k S_t`, `q_t = k S_t`. Returns the
/// discharge series and the final storage.
pub fn linear_reservoir(precip: &[f64], k: f64, s0: f64) -> (Vec<f64>, f64) {
    let mut s = s0;
    let q = precip
        .iter()
        .map(|p| {
            let out = k * s;
            s += p - out;
            out
        })
        .collect();
    (q, s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Recession coefficient, `0 < k < 1`.
    pub k: f64,
    /// Mean daily probability of rain.
    pub rain_prob: f64,
    /// Mean depth of a rain day (mm).
    pub rain_scale: f64,
    /// Relative seasonal swing of the rain probability.
    pub rain_seasonality: f64,
    pub temp_mean: f64,
    pub temp_amplitude: f64,
    pub start: NaiveDate,
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::arg(format!("k must lie in (0, 1), got {}", self.k)));
        }
        if !(self.rain_prob > 0.0 && self.rain_prob < 1.0) {
            return Err(Error::arg(format!("rain_prob must lie in (0, 1), got {}", self.rain_prob)));
        }
        if !(self.rain_scale > 0.0) {
            return Err(Error::arg(format!("rain_scale must be positive, got {}", self.rain_scale)));
        }
        if !(self.rain_seasonality.abs() < 1.0) {
            return Err(Error::arg("rain_seasonality must lie in (-1, 1)"));
        }
        if !(self.temp_amplitude >= 0.0 && self.temp_mean.is_finite()) {
            return Err(Error::arg("temperature cycle parameters are invalid"));
        }
        Ok(())
    }
}

const SURFACE_PRESSURE: f64 = 101_325.0;

/// Saturation vapor pressure (Pa) over water.
fn saturation_vp(t: f64) -> f64 {
    611.2 * (17.67 * t / (t + 243.5)).exp()
}

fn run_stats(flags: &[bool]) -> (f64, f64) {
    let n = flags.len() as f64;
    let hits = flags.iter().filter(|f| **f).count();
    let runs = flags.windows(2).filter(|w| w[1] && !w[0]).count() + usize::from(flags.first() == Some(&true));
    let freq = hits as f64 / n;
    let dur = if runs > 0 { hits as f64 / runs as f64 } else { 0.0 };
    (freq, dur)
}

/// A catchment driven by seasonal compound-Poisson rain through a linear
/// reservoir. Statics summarize the generated climate plus seeded soil,
/// vegetation and terrain draws; `slope_mean` encodes `k`.
pub fn synthetic_basin(basin_id: &str, seed: u64, n_days: usize, params: &SyntheticParams) -> Result<BasinRecord> {
    params.validate()?;
    if n_days < 400 {
        return Err(Error::arg(format!("n_days must be at least 400, got {n_days}")));
    }
    let mut rng = RngStream::new(seed, 0);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut dates = Vec::with_capacity(n_days);
    let mut precip = Vec::with_capacity(n_days);
    let mut forcings = Vec::with_capacity(n_days);
    let mut date = params.start;
    for _ in 0..n_days {
        let phase = two_pi * date.ordinal0() as f64 / 365.25;
        let p_rain = (params.rain_prob * (1.0 + params.rain_seasonality * phase.sin())).clamp(0.0, 0.95);
        let wet = rng.uniform() < p_rain;
        let depth = if wet { -params.rain_scale * (1.0 - rng.uniform()).ln() } else { 0.0 };
        let seasonal_t = params.temp_mean + params.temp_amplitude * (phase - 1.8).sin();
        let tmax = seasonal_t + 4.0 + 1.5 * rng.normal() - if wet { 2.0 } else { 0.0 };
        let tmin = tmax - 8.0 - 1.5 * rng.normal().abs();
        let srad = (190.0 + 110.0 * (phase - 1.4).sin() - if wet { 70.0 } else { 0.0 } + 15.0 * rng.normal()).max(5.0);
        let e = saturation_vp(tmin);
        let q_spec = 0.622 * e / (SURFACE_PRESSURE - 0.378 * e);
        let vp = derive_vapor_pressure(q_spec, SURFACE_PRESSURE)?;
        dates.push(date);
        precip.push(depth);
        forcings.push([depth, tmax, tmin, srad, vp]);
        date = date.succ_opt().ok_or_else(|| Error::arg("date overflow"))?;
    }
    let mean_p = params.rain_prob * params.rain_scale;
    let (q, _) = linear_reservoir(&precip, params.k, mean_p / params.k);

    let n = n_days as f64;
    let p_mean = precip.iter().sum::<f64>() / n;
    let t_mean = forcings.iter().map(|f| 0.5 * (f[1] + f[2])).sum::<f64>() / n;
    let pet_mean = (1.0 + 0.08 * t_mean + 0.2 * rng.normal()).max(0.2);
    let snow: f64 = forcings.iter().filter(|f| 0.5 * (f[1] + f[2]) < 0.0).map(|f| f[0]).sum();
    let high: Vec<bool> = precip.iter().map(|p| *p >= 5.0 * p_mean).collect();
    let low: Vec<bool> = precip.iter().map(|p| *p < 1.0).collect();
    let (high_freq, high_dur) = run_stats(&high);
    let (low_freq, low_dur) = run_stats(&low);
    let mut texture = [rng.uniform() + 0.1, rng.uniform() + 0.1, rng.uniform() + 0.1];
    let total: f64 = texture.iter().sum();
    texture.iter_mut().for_each(|t| *t /= total);
    let lai_max = rng.uniform_range(1.0, 6.0);
    let gvf_max = rng.uniform_range(0.4, 0.95);
    let statics = vec![
        p_mean,
        pet_mean,
        pet_mean / p_mean.max(1e-6),
        params.rain_seasonality,
        snow / (p_mean * n).max(1e-6),
        high_freq * 365.25,
        high_dur,
        low_freq * 365.25,
        low_dur,
        rng.uniform_range(100.0, 3000.0),
        5.0 + 200.0 * params.k,
        rng.uniform_range(50.0, 2000.0),
        rng.uniform(),
        lai_max,
        lai_max * rng.uniform_range(0.2, 0.8),
        gvf_max,
        gvf_max * rng.uniform_range(0.1, 0.6),
        rng.uniform_range(1.0, 40.0),
        rng.uniform_range(0.5, 1.5),
        rng.uniform_range(0.3, 0.5),
        rng.uniform_range(0.5, 5.0),
        rng.uniform_range(0.2, 1.0),
        texture[0] * 100.0,
        texture[1] * 100.0,
        texture[2] * 100.0,
        rng.uniform_range(0.0, 0.3),
        rng.uniform_range(-16.0, -12.0),
    ];
    debug_assert_eq!(statics.len(), N_STATICS);
    Ok(BasinRecord {
        basin_id: basin_id.to_string(),
        dates,
        forcings,
        streamflow: q.into_iter().map(Some).collect(),
        statics,
    })
}

/// Ranges from which per-basin generator parameters are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_basins: usize,
    pub n_days: usize,
    pub start: NaiveDate,
    pub k_min: f64,
    pub k_max: f64,
    pub rain_prob_min: f64,
    pub rain_prob_max: f64,
    pub rain_scale_min: f64,
    pub rain_scale_max: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_basins: 8,
            n_days: 3650,
            start: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            k_min: 0.05,
            k_max: 0.3,
            rain_prob_min: 0.2,
            rain_prob_max: 0.5,
            rain_scale_min: 4.0,
            rain_scale_max: 12.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, lo: f64, hi: f64| {
            if lo > 0.0 && lo <= hi && hi < 1.0 {
                Ok(())
            } else {
                Err(Error::arg(format!("{name}_min/{name}_max must satisfy 0 < min <= max < 1, got {lo}, {hi}")))
            }
        };
        unit("k", self.k_min, self.k_max)?;
        unit("rain_prob", self.rain_prob_min, self.rain_prob_max)?;
        if !(self.rain_scale_min > 0.0 && self.rain_scale_min <= self.rain_scale_max) {
            return Err(Error::arg("rain_scale_min/rain_scale_max must satisfy 0 < min <= max"));
        }
        if self.n_basins == 0 {
            return Err(Error::arg("n_basins must be positive"));
        }
        if self.n_days < 400 {
            return Err(Error::arg(format!("n_days must be at least 400, got {}", self.n_days)));
        }
        Ok(())
    }
}

/// Basins `basin_00`, `basin_01`, ... with parameters drawn per basin.
pub fn synthetic_dataset(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<BasinRecord>> {
    cfg.validate()?;
    (0..cfg.n_basins)
        .map(|b| {
            let mut rng = RngStream::derive(seed, &[label::SYNTHETIC, b as u64]);
            let params = SyntheticParams {
                k: rng.uniform_range(cfg.k_min, cfg.k_max),
                rain_prob: rng.uniform_range(cfg.rain_prob_min, cfg.rain_prob_max),
                rain_scale: rng.uniform_range(cfg.rain_scale_min, cfg.rain_scale_max),
                rain_seasonality: rng.uniform_range(-0.6, 0.6),
                temp_mean: rng.uniform_range(0.0, 20.0),
                temp_amplitude: rng.uniform_range(4.0, 14.0),
                start: cfg.start,
            };
            synthetic_basin(&format!("basin_{b:02}"), rng.next_u64(), cfg.n_days, &params)
        })
        .collect()
}
