use std::path::Path;

use chrono::NaiveDate;

use super::record::{format_f64, DATE_FORMAT};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const HEADER: [&str; 5] = ["basin_id", "init_date", "lead_days", "member", "value"];

/// One value of one ensemble member.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRow {
    pub basin_id: String,
    pub init_date: NaiveDate,
    pub lead_days: usize,
    pub member: usize,
    pub value: f64,
}

pub fn write_forecast_csv(rows: &[ForecastRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.basin_id.clone(),
            r.init_date.format(DATE_FORMAT).to_string(),
            r.lead_days.to_string(),
            r.member.to_string(),
            format_f64(r.value),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

pub fn read_forecast_csv(path: &Path) -> Result<Vec<ForecastRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let perr = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = reader.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(perr(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| perr(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != HEADER.len() {
            return Err(perr(line, format!("expected {} columns, found {}", HEADER.len(), rec.len())));
        }
        rows.push(ForecastRow {
            basin_id: rec[0].to_string(),
            init_date: NaiveDate::parse_from_str(&rec[1], DATE_FORMAT)
                .map_err(|_| perr(line, format!("malformed date `{}`", &rec[1])))?,
            lead_days: rec[2].parse().map_err(|_| perr(line, format!("invalid lead `{}`", &rec[2])))?,
            member: rec[3].parse().map_err(|_| perr(line, format!("invalid member `{}`", &rec[3])))?,
            value: rec[4]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(line, format!("invalid value `{}`", &rec[4])))?,
        });
    }
    Ok(rows)
}
