use std::fs;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Forcing columns in file order.
pub const FORCING_NAMES: [&str; 5] = ["prcp", "tmax", "tmin", "srad", "vp"];
pub const N_FORCINGS: usize = FORCING_NAMES.len();

/// Static catchment attributes in file order.
pub const STATIC_NAMES: [&str; 27] = [
    "p_mean",
    "pet_mean",
    "aridity",
    "p_seasonality",
    "frac_snow",
    "high_prec_freq",
    "high_prec_dur",
    "low_prec_freq",
    "low_prec_dur",
    "elev_mean",
    "slope_mean",
    "area_gages2",
    "frac_forest",
    "lai_max",
    "lai_diff",
    "gvf_max",
    "gvf_diff",
    "soil_depth_pelletier",
    "soil_depth_statsgo",
    "soil_porosity",
    "soil_conductivity",
    "max_water_content",
    "sand_frac",
    "silt_frac",
    "clay_frac",
    "carbonate_rocks_frac",
    "geol_permeability",
];
pub const N_STATICS: usize = STATIC_NAMES.len();

const BASIN_HEADER: [&str; 7] = ["date", "prcp", "tmax", "tmin", "srad", "vp", "qobs"];

/// Daily series of one catchment.
#[derive(Clone, Debug, PartialEq)]
pub struct BasinRecord {
    pub basin_id: String,
    pub dates: Vec<NaiveDate>,
    /// Precipitation (mm/day), max and min temperature (degC), shortwave
    /// radiation (W/m2), vapor pressure (Pa).
    pub forcings: Vec<[f64; N_FORCINGS]>,
    /// Streamflow (mm/day); `None` marks a missing observation.
    pub streamflow: Vec<Option<f64>>,
    pub statics: Vec<f64>,
}

impl BasinRecord {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    /// Checks calendar contiguity, finite forcings and non-negative precipitation.
    pub fn validate(&self) -> Result<()> {
        if self.forcings.len() != self.len() || self.streamflow.len() != self.len() {
            return Err(Error::arg(format!("basin {}: column lengths differ", self.basin_id)));
        }
        for w in self.dates.windows(2) {
            if (w[1] - w[0]).num_days() != 1 {
                return Err(Error::arg(format!(
                    "basin {}: dates not contiguous at {}",
                    self.basin_id, w[1]
                )));
            }
        }
        for (f, d) in self.forcings.iter().zip(&self.dates) {
            if f.iter().any(|v| !v.is_finite()) || f[0] < 0.0 {
                return Err(Error::arg(format!("basin {}: invalid forcing on {d}", self.basin_id)));
            }
        }
        Ok(())
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_error(path, line, e.to_string())
}

/// Reads a basin file with header `date,prcp,tmax,tmin,srad,vp,qobs`. The
/// basin id is the file stem; statics are left empty.
pub fn load_basin_csv(path: &Path) -> Result<BasinRecord> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))),
            _ => csv_error(path, e),
        })?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != BASIN_HEADER {
        return Err(parse_error(path, 1, format!("expected header {}", BASIN_HEADER.join(","))));
    }
    let basin_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rec = BasinRecord {
        basin_id,
        dates: Vec::new(),
        forcings: Vec::new(),
        streamflow: Vec::new(),
        statics: Vec::new(),
    };
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != BASIN_HEADER.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} columns, found {}", BASIN_HEADER.len(), row.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&row[0], DATE_FORMAT)
            .map_err(|_| parse_error(path, line, format!("malformed date `{}`", &row[0])))?;
        if let Some(&prev) = rec.dates.last() {
            let gap = (date - prev).num_days();
            if gap == 0 {
                return Err(parse_error(path, line, format!("duplicate date {date}")));
            }
            if gap != 1 {
                return Err(parse_error(path, line, format!("date {date} does not follow {prev}")));
            }
        }
        let mut forcing = [0.0; N_FORCINGS];
        for (j, f) in forcing.iter_mut().enumerate() {
            let field = &row[j + 1];
            *f = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(path, line, format!("invalid {} value `{field}`", FORCING_NAMES[j])))?;
        }
        if forcing[0] < 0.0 {
            return Err(parse_error(path, line, "negative precipitation"));
        }
        let q = match row[6].trim() {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(path, line, format!("invalid qobs value `{s}`")))?,
            ),
        };
        rec.dates.push(date);
        rec.forcings.push(forcing);
        rec.streamflow.push(q);
    }
    if rec.is_empty() {
        return Err(Error::EmptyRecord(path.to_path_buf()));
    }
    Ok(rec)
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

fn to_csv_bytes(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    write(&mut w).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_basin_csv(rec: &BasinRecord, path: &Path) -> Result<()> {
    let bytes = to_csv_bytes(|w| {
        w.write_record(BASIN_HEADER)?;
        for i in 0..rec.len() {
            let mut row = vec![rec.dates[i].format(DATE_FORMAT).to_string()];
            row.extend(rec.forcings[i].iter().map(|v| format_f64(*v)));
            row.push(rec.streamflow[i].map(format_f64).unwrap_or_default());
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Writes `basin_id` plus the named static attributes, one row per basin.
pub fn write_static_csv(records: &[BasinRecord], path: &Path) -> Result<()> {
    let bytes = to_csv_bytes(|w| {
        let mut header = vec!["basin_id"];
        header.extend(STATIC_NAMES);
        w.write_record(&header)?;
        for r in records {
            let mut row = vec![r.basin_id.clone()];
            row.extend(r.statics.iter().map(|v| format_f64(*v)));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Reads the static table into `(basin_id, attributes)` pairs in file order.
pub fn load_static_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut want = vec!["basin_id"];
    want.extend(STATIC_NAMES);
    if header.iter().collect::<Vec<_>>() != want {
        return Err(parse_error(path, 1, "static header must be basin_id followed by the 27 attribute names"));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != want.len() {
            return Err(parse_error(path, line, format!("expected {} columns, found {}", want.len(), row.len())));
        }
        let values = row
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| parse_error(path, line, "invalid static value"))?;
        out.push((row[0].to_string(), values));
    }
    Ok(out)
}
