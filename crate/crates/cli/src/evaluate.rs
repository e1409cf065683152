//! Verification of forecast files against observations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use chrono::{Days, NaiveDate};
use hydrodiff::data::{format_f64, read_forecast_csv, BasinRecord};
use hydrodiff::io::write_atomic;
use hydrodiff::metrics::{
    cor, crps_ensemble, exceedance_probability, fhv, flv, kge, nse, precision_recall_ap, quantile,
    reliability_and_sharpness, skill_score, wilcoxon_one_sided, EnsembleSeries, PairedSeries, PrCurve, Reliability,
    SkillKind,
};

use crate::config::RunConfig;
use crate::pipeline::load_data_dir;

/// Per-(basin, lead) metrics in report order.
pub const METRICS: [&str; 9] = [
    "nse",
    "kge",
    "cor",
    "fhv",
    "flv",
    "crps",
    "reliability",
    "sharpness",
    "average_precision",
];

const SKILL_METRICS: [(&str, SkillKind); 3] = [("nse", SkillKind::Nse), ("kge", SkillKind::Kge), ("crps", SkillKind::Crps)];

#[derive(Clone, Debug)]
pub struct EvaluateOptions {
    pub forecast: PathBuf,
    pub reference: Option<PathBuf>,
    /// Directory for the report files.
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub basin_id: String,
    pub lead_days: usize,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillRow {
    pub basin_id: String,
    pub lead_days: usize,
    pub metric: &'static str,
    pub model: f64,
    pub reference: f64,
    pub skill: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonRow {
    pub lead_days: usize,
    pub metric: &'static str,
    pub n_basins: usize,
    pub median_skill: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluationReport {
    pub metrics: Vec<MetricRow>,
    pub skill: Vec<SkillRow>,
    pub wilcoxon: Vec<WilcoxonRow>,
}

/// Median of the finite values, or NaN when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvaluationReport {
    /// Median over basins of `metric` at `lead`.
    pub fn median(&self, metric: &str, lead: usize) -> f64 {
        median(
            self.metrics
                .iter()
                .filter(|r| r.metric == metric && r.lead_days == lead)
                .map(|r| r.value),
        )
    }

    pub fn wilcoxon(&self, metric: &str, lead: usize) -> Option<&WilcoxonRow> {
        self.wilcoxon.iter().find(|r| r.metric == metric && r.lead_days == lead)
    }
}

type Key = (String, NaiveDate, usize);

/// Members of every `(basin, init date, lead)` in member order.
fn load_ensembles(path: &Path) -> Result<BTreeMap<Key, Vec<f64>>> {
    let rows = read_forecast_csv(path).with_context(|| format!("cannot read forecast {}", path.display()))?;
    let mut map: BTreeMap<Key, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        map.entry((r.basin_id, r.init_date, r.lead_days)).or_default().push((r.member, r.value));
    }
    Ok(map
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(m, _)| *m);
            (k, v.into_iter().map(|(_, x)| x).collect())
        })
        .collect())
}

/// Undefined metrics become NaN; other failures propagate.
fn defined(r: hydrodiff::Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(hydrodiff::Error::UndefinedMetric(_)) => Ok(f64::NAN),
        Err(e) => Err(e.into()),
    }
}

struct Scored {
    values: [f64; METRICS.len()],
    reliability: Option<Reliability>,
    pr: Option<PrCurve>,
}

fn score(obs: &[f64], ens: &[Vec<f64>], threshold: f64, bins: usize) -> Result<Scored> {
    let series = EnsembleSeries::new(obs.to_vec(), ens.to_vec())?;
    let paired = PairedSeries::new(obs.to_vec(), series.mean())?;
    let probs = exceedance_probability(&series, threshold);
    let events: Vec<bool> = obs.iter().map(|o| *o > threshold).collect();
    let rel = reliability_and_sharpness(&probs, &events, bins)?;
    let pr = match precision_recall_ap(&probs, &events) {
        Ok(c) => Some(c),
        Err(hydrodiff::Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Scored {
        values: [
            defined(nse(&paired))?,
            defined(kge(&paired))?,
            defined(cor(&paired))?,
            defined(fhv(&paired))?,
            defined(flv(&paired))?,
            crps_ensemble(&series)?,
            rel.reliability,
            rel.sharpness,
            pr.as_ref().map_or(f64::NAN, |c| c.average_precision),
        ],
        reliability: Some(rel),
        pr,
    })
}

fn observation(records: &HashMap<&str, &BasinRecord>, basin: &str, date: NaiveDate) -> Option<f64> {
    let rec = records.get(basin)?;
    rec.index_of(date).and_then(|i| rec.streamflow[i])
}

fn csv_text(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// Scores a forecast file per basin and lead, writes the report CSVs into
/// `opts.out_dir`, and with a reference adds skill scores and one-sided
/// Wilcoxon tests of model improvement across basins.
pub fn evaluate(cfg: &RunConfig, opts: &EvaluateOptions) -> Result<EvaluationReport> {
    let (lead_min, lead_max) = (cfg.evaluate.lead_min, cfg.evaluate.lead_max);
    let records = load_data_dir(&cfg.data.dir)?;
    let by_id: HashMap<&str, &BasinRecord> = records.iter().map(|r| (r.basin_id.as_str(), r)).collect();
    let model = load_ensembles(&opts.forecast)?;
    let reference = opts.reference.as_deref().map(load_ensembles).transpose()?;

    // Keys with an observation, inside the lead range, and in the reference.
    let keys: Vec<&Key> = model
        .keys()
        .filter(|(b, d, l)| (lead_min..=lead_max).contains(l) && observation(&by_id, b, *d + Days::new(*l as u64)).is_some())
        .filter(|k| reference.as_ref().is_none_or(|r| r.contains_key(*k)))
        .collect();
    if keys.is_empty() {
        return Err(hydrodiff::Error::Argument("forecasts and observations do not overlap".into()).into());
    }

    // Event threshold per basin over the evaluated target days.
    let mut targets: BTreeMap<&str, BTreeSet<NaiveDate>> = BTreeMap::new();
    for (b, d, l) in &keys {
        targets.entry(b.as_str()).or_default().insert(*d + Days::new(*l as u64));
    }
    let mut thresholds = BTreeMap::new();
    for (b, dates) in &targets {
        let obs: Vec<f64> = dates.iter().filter_map(|d| observation(&by_id, b, *d)).collect();
        thresholds.insert(*b, quantile(&obs, cfg.evaluate.event_quantile)?);
    }

    let mut report = EvaluationReport::default();
    let mut rel_rows = Vec::new();
    let mut pr_rows = Vec::new();
    let mut per_group: BTreeMap<(&str, usize), Vec<&Key>> = BTreeMap::new();
    for k in &keys {
        per_group.entry((k.0.as_str(), k.2)).or_default().push(k);
    }
    let bins = cfg.evaluate.reliability_bins;
    let mut ref_values: BTreeMap<(&str, usize), [f64; METRICS.len()]> = BTreeMap::new();
    for ((basin, lead), group) in &per_group {
        let obs: Vec<f64> = group
            .iter()
            .map(|(b, d, l)| observation(&by_id, b, *d + Days::new(*l as u64)).expect("filtered above"))
            .collect();
        let ens: Vec<Vec<f64>> = group.iter().map(|k| model[*k].clone()).collect();
        let thr = thresholds[basin];
        let scored = score(&obs, &ens, thr, bins).with_context(|| format!("basin {basin}, lead {lead}"))?;
        for (metric, value) in METRICS.iter().zip(scored.values) {
            report.metrics.push(MetricRow {
                basin_id: basin.to_string(),
                lead_days: *lead,
                metric,
                value,
            });
        }
        for bin in scored.reliability.iter().flat_map(|r| &r.bins) {
            rel_rows.push(format!(
                "{basin},{lead},{},{},{},{},{}",
                format_f64(bin.lower),
                format_f64(bin.upper),
                bin.count,
                format_f64(bin.mean_probability),
                format_f64(bin.observed_frequency)
            ));
        }
        for p in scored.pr.iter().flat_map(|c| &c.points) {
            pr_rows.push(format!(
                "{basin},{lead},{},{},{}",
                format_f64(p.threshold),
                format_f64(p.precision),
                format_f64(p.recall)
            ));
        }
        if let Some(r) = &reference {
            let ref_ens: Vec<Vec<f64>> = group.iter().map(|k| r[*k].clone()).collect();
            let scored = score(&obs, &ref_ens, thr, bins).with_context(|| format!("reference basin {basin}, lead {lead}"))?;
            ref_values.insert((basin, *lead), scored.values);
        }
    }

    if reference.is_some() {
        let value_of = |basin: &str, lead: usize, metric: &str| {
            report
                .metrics
                .iter()
                .find(|r| r.basin_id == basin && r.lead_days == lead && r.metric == metric)
                .map_or(f64::NAN, |r| r.value)
        };
        for ((basin, lead), refs) in &ref_values {
            for (metric, kind) in SKILL_METRICS {
                let idx = METRICS.iter().position(|m| *m == metric).expect("known metric");
                let m = value_of(basin, *lead, metric);
                let r = refs[idx];
                report.skill.push(SkillRow {
                    basin_id: basin.to_string(),
                    lead_days: *lead,
                    metric,
                    model: m,
                    reference: r,
                    skill: defined(skill_score(m, r, kind)).unwrap_or(f64::NAN),
                });
            }
        }
        let leads: BTreeSet<usize> = ref_values.keys().map(|(_, l)| *l).collect();
        for lead in leads {
            for (metric, kind) in SKILL_METRICS {
                let rows: Vec<&SkillRow> = report
                    .skill
                    .iter()
                    .filter(|s| s.lead_days == lead && s.metric == metric && s.model.is_finite() && s.reference.is_finite())
                    .collect();
                // Positive differences favour the model.
                let diffs: Vec<f64> = rows
                    .iter()
                    .map(|s| match kind {
                        SkillKind::Crps => s.reference - s.model,
                        _ => s.model - s.reference,
                    })
                    .collect();
                let p_value = match wilcoxon_one_sided(&diffs) {
                    Ok(p) => p,
                    Err(hydrodiff::Error::UndefinedMetric(_)) => 1.0,
                    Err(e) => return Err(e.into()),
                };
                report.wilcoxon.push(WilcoxonRow {
                    lead_days: lead,
                    metric,
                    n_basins: rows.len(),
                    median_skill: median(rows.iter().map(|s| s.skill)),
                    p_value,
                });
            }
        }
    }

    write_reports(&opts.out_dir, &report, rel_rows, pr_rows)?;
    Ok(report)
}

fn write_reports(dir: &Path, report: &EvaluationReport, rel_rows: Vec<String>, pr_rows: Vec<String>) -> Result<()> {
    let put = |name: &str, text: String| -> Result<()> {
        write_atomic(&dir.join(name), text.as_bytes()).with_context(|| format!("cannot write {name}"))?;
        Ok(())
    };
    put(
        "metrics.csv",
        csv_text(
            "basin_id,lead_days,metric,value",
            report
                .metrics
                .iter()
                .map(|r| format!("{},{},{},{}", r.basin_id, r.lead_days, r.metric, format_f64(r.value))),
        ),
    )?;
    put(
        "reliability.csv",
        csv_text(
            "basin_id,lead_days,bin_lower,bin_upper,count,mean_probability,observed_frequency",
            rel_rows,
        ),
    )?;
    put("pr_curve.csv", csv_text("basin_id,lead_days,threshold,precision,recall", pr_rows))?;

    // Empirical CDF of per-basin values for each metric and lead.
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &report.metrics {
        if r.value.is_finite() {
            let m = METRICS.iter().position(|m| *m == r.metric).expect("known metric");
            groups.entry((m, r.lead_days)).or_default().push(r.value);
        }
    }
    let mut cdf_rows = Vec::new();
    for ((m, lead), mut values) in groups {
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        for (i, v) in values.iter().enumerate() {
            cdf_rows.push(format!(
                "{},{lead},{},{}",
                METRICS[m],
                format_f64(*v),
                format_f64((i + 1) as f64 / n)
            ));
        }
    }
    put("metric_cdf.csv", csv_text("metric,lead_days,value,cdf", cdf_rows))?;

    if !report.skill.is_empty() {
        put(
            "skill.csv",
            csv_text(
                "basin_id,lead_days,metric,model,reference,skill",
                report.skill.iter().map(|s| {
                    format!(
                        "{},{},{},{},{},{}",
                        s.basin_id,
                        s.lead_days,
                        s.metric,
                        format_f64(s.model),
                        format_f64(s.reference),
                        format_f64(s.skill)
                    )
                }),
            ),
        )?;
        put(
            "wilcoxon.csv",
            csv_text(
                "lead_days,metric,n_basins,median_skill,p_value",
                report.wilcoxon.iter().map(|w| {
                    format!(
                        "{},{},{},{},{}",
                        w.lead_days,
                        w.metric,
                        w.n_basins,
                        format_f64(w.median_skill),
                        format_f64(w.p_value)
                    )
                }),
            ),
        )?;
    }
    if report.metrics.is_empty() {
        return Err(anyhow!("no metrics computed"));
    }
    Ok(())
}
