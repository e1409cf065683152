//! Data generation, training, forecasting and the climatology reference.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use chrono::{Days, NaiveDate};
use hydrodiff::data::{
    load_basin_csv, load_static_csv, synthetic_dataset, write_basin_csv, write_forecast_csv, write_static_csv,
    BasinRecord, Dataset, ForecastRow, SeqDims, Window,
};
use hydrodiff::diffusion::generate_ensemble;
use hydrodiff::io::write_atomic;
use hydrodiff::metrics::{climatology_members, climatology_pool};
use hydrodiff::model::Model;
use hydrodiff::numerics::rng::{label, stream_id};
use hydrodiff::numerics::RngStream;
use hydrodiff::training::{fit, load_checkpoint, save_checkpoint, write_loss_trace, Checkpoint, EpochLog};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

pub const STATICS_FILE: &str = "statics.csv";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct DataManifest<'a> {
    seed: u64,
    synthetic: &'a hydrodiff::data::SyntheticConfig,
    basins: Vec<&'a str>,
}

/// Writes the synthetic basins, the static table and a manifest into
/// `cfg.data.dir`. Returns the basin ids.
pub fn generate_data(cfg: &RunConfig) -> Result<Vec<String>> {
    let records = synthetic_dataset(&cfg.synthetic, cfg.seed)?;
    let dir = &cfg.data.dir;
    for r in &records {
        write_basin_csv(r, &dir.join(format!("{}.csv", r.basin_id)))
            .with_context(|| format!("cannot write basin files into {}", dir.display()))?;
    }
    write_static_csv(&records, &dir.join(STATICS_FILE))?;
    write_json(
        &dir.join("manifest.json"),
        &DataManifest {
            seed: cfg.seed,
            synthetic: &cfg.synthetic,
            basins: records.iter().map(|r| r.basin_id.as_str()).collect(),
        },
    )?;
    Ok(records.into_iter().map(|r| r.basin_id).collect())
}

/// Loads every basin listed in the static table, in table order.
pub fn load_data_dir(dir: &Path) -> Result<Vec<BasinRecord>> {
    let statics_path = dir.join(STATICS_FILE);
    let statics =
        load_static_csv(&statics_path).with_context(|| format!("cannot load {}", statics_path.display()))?;
    if statics.is_empty() {
        return Err(hydrodiff::Error::EmptyRecord(statics_path).into());
    }
    statics
        .into_iter()
        .map(|(id, values)| {
            let path = dir.join(format!("{id}.csv"));
            let mut rec = load_basin_csv(&path).with_context(|| format!("cannot load basin {id}"))?;
            rec.basin_id = id;
            rec.statics = values;
            Ok(rec)
        })
        .collect()
}

fn prepare(cfg: &RunConfig, records: &[BasinRecord]) -> Result<Dataset> {
    let splits = cfg.splits.resolve()?;
    Ok(Dataset::prepare(records, splits.train, cfg.data.norm, cfg.model.dims)?)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub trace: Vec<EpochLog>,
    pub selected_epoch: usize,
    pub model_path: PathBuf,
    pub last_path: PathBuf,
}

/// Keeps the rows of an earlier loss trace up to `epochs_done`.
fn earlier_trace(path: &Path, epochs_done: u32) -> String {
    let Ok(text) = std::fs::read_to_string(path) else {
        return String::new();
    };
    text.lines()
        .skip(1)
        .filter(|line| {
            line.split(',')
                .next()
                .and_then(|e| e.parse::<u32>().ok())
                .is_some_and(|e| e <= epochs_done)
        })
        .map(|line| format!("{line}\n"))
        .collect()
}

/// Fits the configured model, or resumes `resume`, and writes `model.ckpt`
/// (the checkpoint chosen by the kind's policy), `last.ckpt` and
/// `loss_trace.csv` into `cfg.out_dir`.
pub fn train(cfg: &RunConfig, resume: Option<&Path>, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainReport> {
    let records = load_data_dir(&cfg.data.dir)?;
    let data = prepare(cfg, &records)?;
    let splits = cfg.splits.resolve()?;
    let start = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).with_context(|| format!("cannot resume from {}", path.display()))?;
            if ckpt.model.kind() != cfg.model.kind {
                return Err(hydrodiff::Error::Checkpoint(format!(
                    "checkpoint holds {}, config asks for {}",
                    ckpt.model.kind(),
                    cfg.model.kind
                ))
                .into());
            }
            ckpt
        }
        None => Checkpoint::fresh(Model::init(cfg.model.clone(), cfg.seed)?),
    };
    let trace_path = cfg.out_dir.join("loss_trace.csv");
    let earlier = if resume.is_some() {
        earlier_trace(&trace_path, start.epochs_done)
    } else {
        String::new()
    };
    let res = fit(start, &data, splits.train, Some(splits.validation), &cfg.train, on_epoch)?;
    let model_path = cfg.out_dir.join("model.ckpt");
    let last_path = cfg.out_dir.join("last.ckpt");
    save_checkpoint(
        &Checkpoint {
            model: res.selected,
            optimizer: None,
            epochs_done: res.selected_epoch as u32,
        },
        &model_path,
    )?;
    save_checkpoint(&res.last, &last_path)?;
    write_loss_trace(&trace_path, &res.trace)?;
    if !earlier.is_empty() {
        let text = std::fs::read_to_string(&trace_path)?;
        let (header, rest) = text.split_once('\n').unwrap_or((&text, ""));
        write_atomic(&trace_path, format!("{header}\n{earlier}{rest}").as_bytes())?;
    }
    Ok(TrainReport {
        trace: res.trace,
        selected_epoch: res.selected_epoch,
        model_path,
        last_path,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedForecast {
    pub basin_id: String,
    pub init_date: NaiveDate,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastReport {
    pub kind: String,
    pub seed: u64,
    pub members: usize,
    pub sample_steps: usize,
    pub forecasts: usize,
    pub rows: usize,
    /// Negative streamflow values before any clamping.
    pub negative_values: usize,
    pub clamped: bool,
    pub skipped: Vec<SkippedForecast>,
}

#[derive(Clone, Debug)]
pub struct ForecastOptions {
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

/// Initialization points per the forecast section, with skipped dates.
fn forecast_windows(cfg: &RunConfig, records: &[BasinRecord], dims: &SeqDims) -> Result<(Vec<Window>, Vec<SkippedForecast>)> {
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    match &cfg.forecast.dates {
        Some(dates) => {
            for (b, rec) in records.iter().enumerate() {
                for &date in dates {
                    let reason = match rec.index_of(date) {
                        None => Some("date outside the record".to_string()),
                        Some(i) if i + 1 < dims.past_len => {
                            Some(format!("fewer than {} days of history", dims.past_len))
                        }
                        Some(i) if i + dims.future_len >= rec.len() => {
                            Some(format!("fewer than {} days of future forcings", dims.future_len))
                        }
                        Some(i) => {
                            windows.push(Window { basin: b, index: i });
                            None
                        }
                    };
                    if let Some(reason) = reason {
                        skipped.push(SkippedForecast {
                            basin_id: rec.basin_id.clone(),
                            init_date: date,
                            reason,
                        });
                    }
                }
            }
        }
        None => {
            let test = cfg.splits.resolve()?.test;
            for (b, rec) in records.iter().enumerate() {
                let set = hydrodiff::data::make_windows(rec, test, dims, false);
                windows.extend(
                    set.indices
                        .iter()
                        .step_by(cfg.forecast.date_stride)
                        .map(|&index| Window { basin: b, index }),
                );
            }
        }
    }
    if windows.is_empty() {
        return Err(anyhow!("no initialization date has enough history and future forcings"));
    }
    Ok((windows, skipped))
}

fn finish_forecast(
    cfg: &RunConfig,
    output: &Path,
    kind: String,
    members: usize,
    forecasts: usize,
    mut rows: Vec<ForecastRow>,
    skipped: Vec<SkippedForecast>,
) -> Result<ForecastReport> {
    let negative_values = rows.iter().filter(|r| r.value < 0.0).count();
    if cfg.forecast.clamp_negative {
        rows.iter_mut().for_each(|r| r.value = r.value.max(0.0));
    }
    write_forecast_csv(&rows, output)?;
    let report = ForecastReport {
        kind,
        seed: cfg.seed,
        members,
        sample_steps: cfg.diffusion.sample_steps,
        forecasts,
        rows: rows.len(),
        negative_values,
        clamped: cfg.forecast.clamp_negative,
        skipped,
    };
    let name = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    write_json(&output.with_file_name(format!("{name}_manifest.json")), &report)?;
    Ok(report)
}

/// Samples ensembles (diffusion kinds) or point forecasts (deterministic
/// kinds) for every initialization date and writes them in mm/day.
pub fn forecast(cfg: &RunConfig, opts: &ForecastOptions) -> Result<ForecastReport> {
    let ckpt = load_checkpoint(&opts.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", opts.checkpoint.display()))?;
    let model = ckpt.model;
    let dims = model.config.dims;
    let records = load_data_dir(&cfg.data.dir)?;
    let splits = cfg.splits.resolve()?;
    let data = Dataset::prepare(&records, splits.train, cfg.data.norm, dims)?;
    let (windows, skipped) = forecast_windows(cfg, &records, &dims)?;
    let members = if model.kind().is_diffusion() { cfg.forecast.members } else { 1 };
    let per_window: Vec<Result<Vec<ForecastRow>>> = windows
        .par_iter()
        .map(|&w| {
            let c = data.tuple(w);
            let basin = &data.basins[w.basin];
            let ensemble: Vec<Vec<f64>> = if model.kind().is_diffusion() {
                let bound = model.network.condition(&model.params, &c)?;
                let root = stream_id(&[cfg.seed, label::SAMPLING, w.basin as u64, w.index as u64]);
                let arr = generate_ensemble(bound.as_ref(), &cfg.diffusion, members, root)?;
                (0..members).map(|m| arr.row(m).to_vec()).collect()
            } else {
                vec![model.predict_deterministic(&c)?]
            };
            let init_date = data.init_date(w);
            let mut rows = Vec::with_capacity(members * dims.horizon());
            for lead in 0..dims.horizon() {
                for (member, traj) in ensemble.iter().enumerate() {
                    rows.push(ForecastRow {
                        basin_id: basin.basin_id.clone(),
                        init_date,
                        lead_days: lead,
                        member,
                        value: basin.stats.denormalize_q(traj[lead]),
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let rows = per_window.into_iter().collect::<Result<Vec<_>>>()?.concat();
    finish_forecast(cfg, &opts.output, model.kind().to_string(), members, windows.len(), rows, skipped)
}

/// Reference ensembles of historical observations from the training period
/// within a few calendar days of each target day.
pub fn climatology(cfg: &RunConfig, output: &Path) -> Result<ForecastReport> {
    let records = load_data_dir(&cfg.data.dir)?;
    let dims = cfg.model.dims;
    let history = cfg.splits.resolve()?.train;
    let (windows, skipped) = forecast_windows(cfg, &records, &dims)?;
    let members = cfg.forecast.members;
    let mut rows = Vec::with_capacity(windows.len() * dims.horizon() * members);
    for w in &windows {
        let rec = &records[w.basin];
        let init_date = rec.dates[w.index];
        for lead in 0..dims.horizon() {
            let target = init_date + Days::new(lead as u64);
            let pool = climatology_pool(&rec.dates, &rec.streamflow, history, target);
            let mut rng = RngStream::derive(cfg.seed, &[label::CLIMATOLOGY, w.basin as u64, w.index as u64, lead as u64]);
            let draws = climatology_members(&pool, members, &mut rng)
                .with_context(|| format!("basin {} on {target}", rec.basin_id))?;
            rows.extend(draws.into_iter().enumerate().map(|(member, value)| ForecastRow {
                basin_id: rec.basin_id.clone(),
                init_date,
                lead_days: lead,
                member,
                value,
            }));
        }
    }
    finish_forecast(cfg, output, "climatology".into(), members, windows.len(), rows, skipped)
}
