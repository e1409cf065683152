use crate::error::{Error, Result};

/// Share of the flow-duration curve used by [`fhv`].
pub const HIGH_FLOW_FRACTION: f64 = 0.001;
/// Share of the flow-duration curve used by [`flv`].
pub const LOW_FLOW_FRACTION: f64 = 0.30;

/// Observed and simulated values with missing pairs removed.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSeries {
    pub obs: Vec<f64>,
    pub sim: Vec<f64>,
}

impl PairedSeries {
    pub fn new(obs: Vec<f64>, sim: Vec<f64>) -> Result<Self> {
        if obs.len() != sim.len() {
            return Err(Error::arg(format!("{} observations vs {} simulations", obs.len(), sim.len())));
        }
        Ok(Self { obs, sim })
    }

    /// Keeps pairs where both sides are present and finite.
    pub fn from_options(obs: &[Option<f64>], sim: &[f64]) -> Result<Self> {
        if obs.len() != sim.len() {
            return Err(Error::arg(format!("{} observations vs {} simulations", obs.len(), sim.len())));
        }
        let (obs, sim) = obs
            .iter()
            .zip(sim)
            .filter_map(|(o, s)| o.filter(|o| o.is_finite() && s.is_finite()).map(|o| (o, *s)))
            .unzip();
        Ok(Self { obs, sim })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn require(&self, n: usize) -> Result<()> {
        if self.len() < n {
            return Err(Error::undefined(format!("needs at least {n} pairs, found {}", self.len())));
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std(v: &[f64], m: f64) -> f64 {
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Nash-Sutcliffe efficiency.
pub fn nse(p: &PairedSeries) -> Result<f64> {
    p.require(1)?;
    let mo = mean(&p.obs);
    let den: f64 = p.obs.iter().map(|o| (o - mo) * (o - mo)).sum();
    if den == 0.0 {
        return Err(Error::undefined("observations are constant"));
    }
    let num: f64 = p.obs.iter().zip(&p.sim).map(|(o, s)| (o - s) * (o - s)).sum();
    Ok(1.0 - num / den)
}

/// Pearson correlation.
pub fn cor(p: &PairedSeries) -> Result<f64> {
    p.require(2)?;
    let (mo, ms) = (mean(&p.obs), mean(&p.sim));
    let (so, ss) = (std(&p.obs, mo), std(&p.sim, ms));
    if so == 0.0 || ss == 0.0 {
        return Err(Error::undefined("zero variance"));
    }
    let cov = p.obs.iter().zip(&p.sim).map(|(o, s)| (o - mo) * (s - ms)).sum::<f64>() / p.len() as f64;
    Ok((cov / (so * ss)).clamp(-1.0, 1.0))
}

/// Kling-Gupta efficiency.
pub fn kge(p: &PairedSeries) -> Result<f64> {
    p.require(2)?;
    let (mo, ms) = (mean(&p.obs), mean(&p.sim));
    if mo == 0.0 {
        return Err(Error::undefined("observed mean is zero"));
    }
    let r = cor(p)?;
    let alpha = std(&p.sim, ms) / std(&p.obs, mo);
    let beta = ms / mo;
    Ok(1.0 - ((r - 1.0).powi(2) + (alpha - 1.0).powi(2) + (beta - 1.0).powi(2)).sqrt())
}

/// Segment size `max(1, round(fraction * n))`.
pub fn segment_len(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Pairs ordered by observation, largest first; ties keep input order.
fn ranked(p: &PairedSeries) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = p.obs.iter().copied().zip(p.sim.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn segment_bias(pairs: &[(f64, f64)]) -> Result<f64> {
    let obs: f64 = pairs.iter().map(|p| p.0).sum();
    if obs == 0.0 {
        return Err(Error::undefined("flow segment sums to zero"));
    }
    let diff: f64 = pairs.iter().map(|p| p.1 - p.0).sum();
    Ok(100.0 * diff / obs)
}

/// Percent bias over the highest-flow segment.
pub fn fhv_with(p: &PairedSeries, fraction: f64) -> Result<f64> {
    p.require(1)?;
    let pairs = ranked(p);
    segment_bias(&pairs[..segment_len(p.len(), fraction)])
}

/// Percent bias over the lowest-flow segment.
pub fn flv_with(p: &PairedSeries, fraction: f64) -> Result<f64> {
    p.require(1)?;
    let pairs = ranked(p);
    let n = segment_len(p.len(), fraction);
    segment_bias(&pairs[pairs.len() - n..])
}

pub fn fhv(p: &PairedSeries) -> Result<f64> {
    fhv_with(p, HIGH_FLOW_FRACTION)
}

pub fn flv(p: &PairedSeries) -> Result<f64> {
    flv_with(p, LOW_FLOW_FRACTION)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkillKind {
    Nse,
    Kge,
    Crps,
}

/// Skill of a model score relative to a reference score.
pub fn skill_score(model: f64, reference: f64, kind: SkillKind) -> Result<f64> {
    match kind {
        SkillKind::Nse | SkillKind::Kge => {
            if reference == 1.0 {
                return Err(Error::undefined("reference efficiency is perfect"));
            }
            Ok((model - reference) / (1.0 - reference))
        }
        SkillKind::Crps => {
            if reference == 0.0 {
                return Err(Error::undefined("reference CRPS is zero"));
            }
            Ok(1.0 - model / reference)
        }
    }
}
