use crate::error::{Error, Result};

/// Observations with an ensemble of simulations per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSeries {
    pub obs: Vec<f64>,
    /// One row of members per observation.
    pub members: Vec<Vec<f64>>,
}

impl EnsembleSeries {
    pub fn new(obs: Vec<f64>, members: Vec<Vec<f64>>) -> Result<Self> {
        if obs.len() != members.len() {
            return Err(Error::arg("one member row per observation"));
        }
        if members.iter().any(|m| m.is_empty()) {
            return Err(Error::arg("ensembles need at least one member"));
        }
        Ok(Self { obs, members })
    }

    pub fn mean(&self) -> Vec<f64> {
        self.members
            .iter()
            .map(|m| m.iter().sum::<f64>() / m.len() as f64)
            .collect()
    }
}

/// `(1/M) sum|m_i - y| - (1/(2M^2)) sum_ij |m_i - m_j|` for one time step.
pub fn crps(members: &[f64], obs: f64) -> f64 {
    let m = members.len() as f64;
    let spread_to_obs = members.iter().map(|x| (x - obs).abs()).sum::<f64>() / m;
    // sum_ij |m_i - m_j| from the sorted members in O(M log M).
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 + 1.0 - m))
        .sum::<f64>()
        * 2.0;
    spread_to_obs - pair_sum / (2.0 * m * m)
}

/// Mean CRPS over time.
pub fn crps_ensemble(e: &EnsembleSeries) -> Result<f64> {
    if e.obs.is_empty() {
        return Err(Error::undefined("empty ensemble series"));
    }
    Ok(e.obs.iter().zip(&e.members).map(|(o, m)| crps(m, *o)).sum::<f64>() / e.obs.len() as f64)
}

/// Linear-interpolation quantile: position `(n - 1) q` in the sorted sample.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::arg("quantile needs a sample and q in [0, 1]"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    Ok(s[lo] + (h - lo as f64) * (s[hi] - s[lo]))
}

/// Fraction of members strictly above `threshold` at each time step.
pub fn exceedance_probability(e: &EnsembleSeries, threshold: f64) -> Vec<f64> {
    e.members
        .iter()
        .map(|m| m.iter().filter(|x| **x > threshold).count() as f64 / m.len() as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_probability: f64,
    pub observed_frequency: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reliability {
    pub reliability: f64,
    pub sharpness: f64,
    /// Non-empty bins only.
    pub bins: Vec<ReliabilityBin>,
}

/// Binned calibration error over non-empty bins and the population variance
/// of the forecast probabilities.
pub fn reliability_and_sharpness(probs: &[f64], events: &[bool], n_bins: usize) -> Result<Reliability> {
    if probs.len() != events.len() {
        return Err(Error::arg("one event indicator per probability"));
    }
    if n_bins < 2 {
        return Err(Error::arg("need at least two bins"));
    }
    if probs.is_empty() {
        return Err(Error::undefined("no forecasts"));
    }
    let mut sums = vec![(0usize, 0.0, 0.0); n_bins];
    for (&p, &e) in probs.iter().zip(events) {
        let b = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        sums[b].0 += 1;
        sums[b].1 += p;
        sums[b].2 += f64::from(u8::from(e));
    }
    let bins: Vec<ReliabilityBin> = sums
        .iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(b, s)| ReliabilityBin {
            lower: b as f64 / n_bins as f64,
            upper: (b + 1) as f64 / n_bins as f64,
            count: s.0,
            mean_probability: s.1 / s.0 as f64,
            observed_frequency: s.2 / s.0 as f64,
        })
        .collect();
    let reliability = bins
        .iter()
        .map(|b| (b.mean_probability - b.observed_frequency).powi(2))
        .sum::<f64>()
        / bins.len() as f64;
    let mp = probs.iter().sum::<f64>() / probs.len() as f64;
    let sharpness = probs.iter().map(|p| (p - mp) * (p - mp)).sum::<f64>() / probs.len() as f64;
    Ok(Reliability {
        reliability,
        sharpness,
        bins,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

/// Precision-recall sweep over the distinct forecast probabilities, highest
/// first; a case is flagged when its probability is at least the threshold.
pub fn precision_recall_ap(probs: &[f64], events: &[bool]) -> Result<PrCurve> {
    if probs.len() != events.len() {
        return Err(Error::arg("one event indicator per probability"));
    }
    let positives = events.iter().filter(|e| **e).count();
    if positives == 0 {
        return Err(Error::undefined("no observed events"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = probs[order[i]];
        while i < order.len() && probs[order[i]] == threshold {
            if events[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold,
            precision,
            recall,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap,
    })
}
