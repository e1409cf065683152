//! `hydrodiff` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use hydrodiff_cli::{
    climatology, evaluate, exit_code, forecast, generate_data, parse_leads, train, EvaluateOptions, ForecastOptions,
    RunConfig,
};

/// Probabilistic streamflow forecasting with diffusion models.
#[derive(Parser, Debug)]
#[command(name = "hydrodiff", version)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the data directory for `generate-data`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic basin files, the static table and a manifest.
    GenerateData,
    /// Train the configured model.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Forecast every initialization date with a trained checkpoint.
    Forecast {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ensemble size.
        #[arg(long)]
        members: Option<usize>,
        /// DDIM sampling steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Comma-separated initialization dates (YYYY-MM-DD).
        #[arg(long, value_delimiter = ',')]
        dates: Option<Vec<NaiveDate>>,
        /// Replace negative streamflow by zero.
        #[arg(long)]
        clamp: bool,
    },
    /// Build a climatology reference ensemble for the forecast dates.
    Climatology {
        #[arg(long)]
        members: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        dates: Option<Vec<NaiveDate>>,
    },
    /// Score a forecast file against the observations.
    Evaluate {
        /// Defaults to `<out>/forecast.csv`.
        #[arg(long)]
        forecast: Option<PathBuf>,
        /// Reference forecast for skill scores and Wilcoxon tests.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Inclusive lead range, e.g. `1..7`.
        #[arg(long)]
        leads: Option<String>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HYDRODIFF_THREADS") {
        let n: usize = v.parse().with_context(|| format!("HYDRODIFF_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.sync_seed();
    }
    if let (Some(out), false) = (&cli.out, matches!(cli.command, Command::GenerateData)) {
        cfg.out_dir = out.clone();
    }
    match cli.command {
        Command::GenerateData => {
            if let Some(out) = cli.out {
                cfg.data.dir = out;
            }
            let ids = generate_data(&cfg)?;
            println!("wrote {} basins to {}", ids.len(), cfg.data.dir.display());
        }
        Command::Train { resume } => {
            let report = train(&cfg, resume.as_deref(), |log| {
                let val = log.val_loss.map_or("-".to_string(), |v| format!("{v:.6}"));
                println!(
                    "epoch {:>3}  train_loss {:.6}  val_loss {val}  lr {:.3e}",
                    log.epoch, log.train_loss, log.lr
                );
            })?;
            println!(
                "kept epoch {} -> {}",
                report.selected_epoch,
                report.model_path.display()
            );
        }
        Command::Forecast {
            checkpoint,
            members,
            steps,
            dates,
            clamp,
        } => {
            if let Some(m) = members {
                cfg.forecast.members = m;
            }
            if let Some(s) = steps {
                cfg.diffusion.sample_steps = s;
            }
            if dates.is_some() {
                cfg.forecast.dates = dates;
            }
            cfg.forecast.clamp_negative |= clamp;
            cfg.validate()?;
            let opts = ForecastOptions {
                checkpoint: checkpoint.unwrap_or_else(|| cfg.out_dir.join("model.ckpt")),
                output: cfg.out_dir.join("forecast.csv"),
            };
            let report = forecast(&cfg, &opts)?;
            print_forecast_summary(&report, &opts.output);
        }
        Command::Climatology { members, dates } => {
            if let Some(m) = members {
                cfg.forecast.members = m;
            }
            if dates.is_some() {
                cfg.forecast.dates = dates;
            }
            cfg.validate()?;
            let output = cfg.out_dir.join("climatology.csv");
            let report = climatology(&cfg, &output)?;
            print_forecast_summary(&report, &output);
        }
        Command::Evaluate {
            forecast,
            reference,
            leads,
        } => {
            if let Some(l) = leads {
                (cfg.evaluate.lead_min, cfg.evaluate.lead_max) = parse_leads(&l)?;
            }
            cfg.validate()?;
            let opts = EvaluateOptions {
                forecast: forecast.unwrap_or_else(|| cfg.out_dir.join("forecast.csv")),
                reference,
                out_dir: cfg.out_dir.clone(),
            };
            let report = evaluate(&cfg, &opts)?;
            println!("lead  median_nse  median_kge  median_crps");
            for lead in cfg.evaluate.lead_min..=cfg.evaluate.lead_max {
                println!(
                    "{lead:>4}  {:>10.4}  {:>10.4}  {:>11.4}",
                    report.median("nse", lead),
                    report.median("kge", lead),
                    report.median("crps", lead)
                );
            }
            for w in &report.wilcoxon {
                println!(
                    "lead {} {}: median skill {:.4}, one-sided Wilcoxon p = {:.4} (n = {})",
                    w.lead_days, w.metric, w.median_skill, w.p_value, w.n_basins
                );
            }
        }
    }
    Ok(())
}

fn print_forecast_summary(report: &hydrodiff_cli::ForecastReport, output: &std::path::Path) {
    println!(
        "wrote {} rows ({} forecasts x {} members) to {}",
        report.rows,
        report.forecasts,
        report.members,
        output.display()
    );
    if !report.skipped.is_empty() {
        eprintln!("skipped {} initialization dates, see the manifest", report.skipped.len());
    }
    if report.negative_values > 0 {
        eprintln!(
            "warning: {} negative streamflow values{}",
            report.negative_values,
            if report.clamped { " clamped to zero" } else { "" }
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
