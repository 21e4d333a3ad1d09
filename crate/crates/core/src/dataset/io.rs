//! Record CSV: `location,year,cultivar,soil,nitrogen_kg_ha,ahu,yield_kg_ha`.
//!
//! `yield_kg_ha` is optional (prediction inputs). Columns may appear in any
//! order; unknown columns are rejected.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{DatasetError, YieldRecord, MAX_NITROGEN_KG_HA};
use crate::weather::{accumulate_heat_units, load_weather_csv};

const LOCATION: &str = "location";
const YEAR: &str = "year";
const CULTIVAR: &str = "cultivar";
const SOIL: &str = "soil";
const NITROGEN: &str = "nitrogen_kg_ha";
const AHU: &str = "ahu";
const YIELD: &str = "yield_kg_ha";

const ALL_COLUMNS: [&str; 7] = [LOCATION, YEAR, CULTIVAR, SOIL, NITROGEN, AHU, YIELD];

/// Where the `ahu` value of each record comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum AhuSource {
    /// The record CSV has an `ahu` column.
    Column,
    /// The record CSV has no `ahu` column; each record's AHU is computed from
    /// `<dir>/<location>_<year>.csv` in the weather CSV format.
    WeatherDir { dir: PathBuf, clamp: bool },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io(format!("{}: {e}", path.display()))
}

pub fn load_records_csv(path: impl AsRef<Path>) -> Result<Vec<YieldRecord>, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_records_csv(file, &AhuSource::Column)
}

/// Loads records without an `ahu` column and joins AHU from per
/// location-year weather files.
pub fn load_records_with_weather(
    path: impl AsRef<Path>,
    weather_dir: impl Into<PathBuf>,
    clamp: bool,
) -> Result<Vec<YieldRecord>, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_records_csv(
        file,
        &AhuSource::WeatherDir {
            dir: weather_dir.into(),
            clamp,
        },
    )
}

pub fn read_records_csv<R: Read>(
    reader: R,
    ahu: &AhuSource,
) -> Result<Vec<YieldRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let Some(&name) = ALL_COLUMNS.iter().find(|&&c| c == h) else {
            return Err(DatasetError::UnknownColumn(h.to_owned()));
        };
        if index.insert(name, i).is_some() {
            return Err(DatasetError::MalformedRow {
                line: 1,
                reason: format!("duplicate column {name}"),
            });
        }
    }
    let ahu_from_column = matches!(ahu, AhuSource::Column);
    for name in [LOCATION, YEAR, CULTIVAR, SOIL, NITROGEN] {
        if !index.contains_key(name) {
            return Err(DatasetError::MissingColumn(name.to_owned()));
        }
    }
    match (ahu_from_column, index.contains_key(AHU)) {
        (true, false) => return Err(DatasetError::MissingColumn(AHU.to_owned())),
        (false, true) => {
            return Err(DatasetError::UnknownColumn(format!(
                "{AHU} (AHU is computed from the weather directory)"
            )))
        }
        _ => {}
    }

    let mut records = Vec::new();
    let mut season_ahu: HashMap<(String, i32), f64> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |reason: String| DatasetError::MalformedRow { line, reason };
        let text = |name: &str| -> Result<&str, DatasetError> {
            let v = row.get(index[name]).unwrap_or("");
            if v.is_empty() {
                Err(malformed(format!("empty {name}")))
            } else {
                Ok(v)
            }
        };
        let number = |name: &str| -> Result<f64, DatasetError> {
            let raw = text(name)?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(malformed(format!("{name} is not a finite number: {raw:?}"))),
            }
        };

        let location = text(LOCATION)?.to_owned();
        let year: i32 = text(YEAR)?.parse().map_err(|_| {
            malformed(format!(
                "year is not an integer: {:?}",
                row.get(index[YEAR]).unwrap_or("")
            ))
        })?;
        let cultivar = text(CULTIVAR)?.to_owned();
        let soil = text(SOIL)?.to_owned();
        let nitrogen_kg_ha = number(NITROGEN)?;
        if nitrogen_kg_ha < 0.0 {
            return Err(DatasetError::NegativeNitrogen {
                line,
                value: nitrogen_kg_ha,
            });
        }
        if nitrogen_kg_ha > MAX_NITROGEN_KG_HA {
            return Err(DatasetError::NitrogenOutOfRange {
                line,
                value: nitrogen_kg_ha,
            });
        }
        let yield_kg_ha = if index.contains_key(YIELD) {
            let y = number(YIELD)?;
            if y <= 0.0 {
                return Err(DatasetError::NonPositiveYield { line, value: y });
            }
            Some(y)
        } else {
            None
        };
        let ahu_value = match ahu {
            AhuSource::Column => number(AHU)?,
            AhuSource::WeatherDir { dir, clamp } => {
                let key = (location.clone(), year);
                match season_ahu.get(&key) {
                    Some(&v) => v,
                    None => {
                        let v = season_from_weather(dir, &location, year, *clamp)?;
                        season_ahu.insert(key, v);
                        v
                    }
                }
            }
        };

        records.push(YieldRecord {
            location,
            year,
            cultivar,
            soil,
            nitrogen_kg_ha,
            ahu: ahu_value,
            yield_kg_ha,
        });
    }
    Ok(records)
}

fn season_from_weather(
    dir: &Path,
    location: &str,
    year: i32,
    clamp: bool,
) -> Result<f64, DatasetError> {
    let path = dir.join(format!("{location}_{year}.csv"));
    if !path.is_file() {
        return Err(DatasetError::MissingWeather {
            location: location.to_owned(),
            year,
            path: path.display().to_string(),
        });
    }
    let wrap = |source| DatasetError::Weather {
        location: location.to_owned(),
        year,
        source,
    };
    let series = load_weather_csv(&path).map_err(wrap)?;
    accumulate_heat_units(&series, clamp).map_err(wrap)
}

/// Writes records in the canonical column order. The `yield_kg_ha` column is
/// written only when every record has a yield.
pub fn write_records_csv<W: Write>(writer: W, records: &[YieldRecord]) -> Result<(), DatasetError> {
    let labelled = !records.is_empty() && records.iter().all(|r| r.yield_kg_ha.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| DatasetError::Io(e.to_string());
    let header: &[&str] = if labelled {
        &ALL_COLUMNS
    } else {
        &ALL_COLUMNS[..6]
    };
    w.write_record(header).map_err(io)?;
    for r in records {
        let mut fields = vec![
            r.location.clone(),
            r.year.to_string(),
            r.cultivar.clone(),
            r.soil.clone(),
            r.nitrogen_kg_ha.to_string(),
            r.ahu.to_string(),
        ];
        if labelled {
            fields.push(r.yield_kg_ha.map(|y| y.to_string()).unwrap_or_default());
        }
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| DatasetError::Io(e.to_string()))?;
    Ok(())
}
