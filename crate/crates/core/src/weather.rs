//! Daily temperatures to accumulated heat units.
//!
//! A day contributes `DD60 = (Tmax + Tmin) / 2 - 60` (°F); a season's AHU is
//! the sum of DD60 over its days. With `clamp` on, days whose mean is below
//! 60°F contribute zero instead of a negative value.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

/// Base temperature of the DD60 heat unit, °F.
pub const BASE_TEMP_F: f64 = 60.0;

/// Plausible range for a daily temperature reading, °F.
pub const SANE_TEMP_RANGE_F: (f64, f64) = (-60.0, 150.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeatherError {
    #[error("NonFiniteInput: temperature is not a finite number")]
    NonFiniteInput,
    #[error("OutOfRange: temperature {value}°F outside [-60, 150]")]
    OutOfRange { value: f64 },
    #[error("InvertedRange: tmax {tmax_f}°F is below tmin {tmin_f}°F")]
    InvertedRange { tmax_f: f64, tmin_f: f64 },
    #[error("EmptySeries: no daily records")]
    EmptySeries,
    #[error("on {date}: {source}")]
    Day {
        date: NaiveDate,
        #[source]
        source: Box<WeatherError>,
    },
    #[error("line {line}: {source}")]
    AtLine {
        line: u64,
        #[source]
        source: Box<WeatherError>,
    },
    #[error("MalformedRow at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("DuplicateDate at line {line}: {date}")]
    DuplicateDate { line: u64, date: NaiveDate },
    #[error("UnsortedDates at line {line}: {date} comes after {previous}")]
    UnsortedDates {
        line: u64,
        date: NaiveDate,
        previous: NaiveDate,
    },
    #[error("MissingColumn: {0}")]
    MissingColumn(String),
    #[error("io: {0}")]
    Io(String),
}

impl WeatherError {
    fn at_line(self, line: u64) -> Self {
        WeatherError::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// The innermost error, with date or line wrappers removed.
    pub fn root(&self) -> &WeatherError {
        match self {
            WeatherError::Day { source, .. } | WeatherError::AtLine { source, .. } => source.root(),
            other => other,
        }
    }
}

fn check_temp(value: f64) -> Result<(), WeatherError> {
    if !value.is_finite() {
        return Err(WeatherError::NonFiniteInput);
    }
    if value < SANE_TEMP_RANGE_F.0 || value > SANE_TEMP_RANGE_F.1 {
        return Err(WeatherError::OutOfRange { value });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyTemperature {
    pub date: NaiveDate,
    pub tmax_f: f64,
    pub tmin_f: f64,
}

impl DailyTemperature {
    pub fn new(date: NaiveDate, tmax_f: f64, tmin_f: f64) -> Result<Self, WeatherError> {
        validate_day(tmax_f, tmin_f)?;
        Ok(Self {
            date,
            tmax_f,
            tmin_f,
        })
    }
}

fn validate_day(tmax_f: f64, tmin_f: f64) -> Result<(), WeatherError> {
    check_temp(tmax_f)?;
    check_temp(tmin_f)?;
    if tmax_f < tmin_f {
        return Err(WeatherError::InvertedRange { tmax_f, tmin_f });
    }
    Ok(())
}

/// Daily readings of one location-season, in strictly increasing date order.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSeries {
    records: Vec<DailyTemperature>,
    pub location_id: String,
    pub season_year: i32,
}

impl TemperatureSeries {
    /// Builds a series, rejecting days that are not in strictly increasing
    /// order. Gaps between days are allowed.
    pub fn new(
        location_id: impl Into<String>,
        season_year: i32,
        records: Vec<DailyTemperature>,
    ) -> Result<Self, WeatherError> {
        for (i, pair) in records.windows(2).enumerate() {
            let line = i as u64 + 2;
            if pair[1].date == pair[0].date {
                return Err(WeatherError::DuplicateDate {
                    line,
                    date: pair[1].date,
                });
            }
            if pair[1].date < pair[0].date {
                return Err(WeatherError::UnsortedDates {
                    line,
                    date: pair[1].date,
                    previous: pair[0].date,
                });
            }
        }
        Ok(Self {
            records,
            location_id: location_id.into(),
            season_year,
        })
    }

    pub fn records(&self) -> &[DailyTemperature] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// DD60 heat unit of one day.
pub fn degree_day(tmax_f: f64, tmin_f: f64, clamp: bool) -> Result<f64, WeatherError> {
    validate_day(tmax_f, tmin_f)?;
    let dd = (tmax_f + tmin_f) / 2.0 - BASE_TEMP_F;
    Ok(if clamp { dd.max(0.0) } else { dd })
}

/// Seasonal AHU: the sum of daily DD60 values in record order.
pub fn accumulate_heat_units(series: &TemperatureSeries, clamp: bool) -> Result<f64, WeatherError> {
    accumulate_days(series.records(), clamp)
}

pub(crate) fn accumulate_days(days: &[DailyTemperature], clamp: bool) -> Result<f64, WeatherError> {
    if days.is_empty() {
        return Err(WeatherError::EmptySeries);
    }
    days.iter().try_fold(0.0, |acc, d| {
        degree_day(d.tmax_f, d.tmin_f, clamp)
            .map(|dd| acc + dd)
            .map_err(|e| WeatherError::Day {
                date: d.date,
                source: Box::new(e),
            })
    })
}

pub fn celsius_to_fahrenheit(celsius: f64) -> f64 {
    celsius * 9.0 / 5.0 + 32.0
}

/// Temperature unit of the two temperature columns of a weather file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TempUnit {
    /// Header `date,tmax_f,tmin_f`.
    #[default]
    Fahrenheit,
    /// Header `date,tmax_c,tmin_c`; values are converted to °F on load.
    Celsius,
}

impl TempUnit {
    fn columns(self) -> [&'static str; 3] {
        match self {
            TempUnit::Fahrenheit => ["date", "tmax_f", "tmin_f"],
            TempUnit::Celsius => ["date", "tmax_c", "tmin_c"],
        }
    }
}

/// Loads a weather CSV (`date,tmax_f,tmin_f`).
///
/// The location id is the file stem and the season year is the year of the
/// first record. Rows must already be sorted by date.
pub fn load_weather_csv(path: impl AsRef<Path>) -> Result<TemperatureSeries, WeatherError> {
    load_weather_csv_with_unit(path, TempUnit::Fahrenheit)
}

pub fn load_weather_csv_with_unit(
    path: impl AsRef<Path>,
    unit: TempUnit,
) -> Result<TemperatureSeries, WeatherError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| WeatherError::Io(format!("{}: {e}", path.display())))?;
    let location = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_weather_csv(file, location, unit)
}

/// Parses weather CSV text from any reader. See [`load_weather_csv`].
pub fn read_weather_csv<R: Read>(
    reader: R,
    location_id: impl Into<String>,
    unit: TempUnit,
) -> Result<TemperatureSeries, WeatherError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| WeatherError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    // A zero-length file has no header either; it is an empty series, not a
    // schema problem.
    if headers.is_empty() {
        return Err(WeatherError::EmptySeries);
    }
    let mut idx = [0usize; 3];
    for (slot, name) in idx.iter_mut().zip(unit.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| WeatherError::MissingColumn(name.to_string()))?;
    }

    let mut records: Vec<DailyTemperature> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| WeatherError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(idx[i]).unwrap_or("");
        let malformed = |reason: String| WeatherError::MalformedRow { line, reason };

        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date {:?}: {e}", field(0))))?;
        let parse_temp = |i: usize| -> Result<f64, WeatherError> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| malformed(format!("bad temperature {:?}", field(i))))?;
            Ok(match unit {
                TempUnit::Fahrenheit => v,
                TempUnit::Celsius => celsius_to_fahrenheit(v),
            })
        };
        let tmax = parse_temp(1)?;
        let tmin = parse_temp(2)?;
        let day = DailyTemperature::new(date, tmax, tmin).map_err(|e| e.at_line(line))?;

        if let Some(prev) = records.last() {
            if day.date == prev.date {
                return Err(WeatherError::DuplicateDate { line, date });
            }
            if day.date < prev.date {
                return Err(WeatherError::UnsortedDates {
                    line,
                    date,
                    previous: prev.date,
                });
            }
        }
        records.push(day);
    }
    if records.is_empty() {
        return Err(WeatherError::EmptySeries);
    }
    let season_year = chrono::Datelike::year(&records[0].date);
    TemperatureSeries::new(location_id, season_year, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(offset: u64, tmax: f64, tmin: f64) -> DailyTemperature {
        let date = NaiveDate::from_ymd_opt(2020, 4, 1).unwrap() + chrono::Days::new(offset);
        DailyTemperature::new(date, tmax, tmin).unwrap()
    }

    fn series(days: &[(f64, f64)]) -> TemperatureSeries {
        let records = days
            .iter()
            .enumerate()
            .map(|(i, &(hi, lo))| day(i as u64, hi, lo))
            .collect();
        TemperatureSeries::new("test", 2020, records).unwrap()
    }

    #[test]
    fn degree_day_examples() {
        assert_eq!(degree_day(95.0, 65.0, false).unwrap(), 20.0);
        assert_eq!(degree_day(60.0, 60.0, false).unwrap(), 0.0);
        assert_eq!(degree_day(70.0, 40.0, false).unwrap(), -5.0);
        assert_eq!(degree_day(70.0, 40.0, true).unwrap(), 0.0);
        assert_eq!(degree_day(95.0, 65.0, false), degree_day(90.0, 70.0, false));
    }

    #[test]
    fn degree_day_errors() {
        assert_eq!(
            degree_day(f64::NAN, 60.0, true),
            Err(WeatherError::NonFiniteInput)
        );
        assert_eq!(
            degree_day(80.0, f64::INFINITY, true),
            Err(WeatherError::NonFiniteInput)
        );
        assert!(matches!(
            degree_day(60.0, 70.0, true),
            Err(WeatherError::InvertedRange { .. })
        ));
        assert!(matches!(
            degree_day(200.0, 70.0, true),
            Err(WeatherError::OutOfRange { .. })
        ));
    }

    #[test]
    fn accumulate_examples() {
        assert_eq!(
            accumulate_heat_units(&series(&[(95.0, 65.0), (60.0, 60.0)]), false).unwrap(),
            20.0
        );
        assert_eq!(
            accumulate_heat_units(&series(&[(70.0, 40.0)]), true).unwrap(),
            0.0
        );
        let season = series(&vec![(90.0, 70.0); 150]);
        assert_eq!(accumulate_heat_units(&season, false).unwrap(), 3000.0);
    }

    #[test]
    fn empty_series_is_rejected() {
        let empty = TemperatureSeries::new("x", 2020, vec![]).unwrap();
        assert_eq!(
            accumulate_heat_units(&empty, true),
            Err(WeatherError::EmptySeries)
        );
    }

    #[test]
    fn bad_day_reports_its_date() {
        let d = DailyTemperature {
            date: NaiveDate::from_ymd_opt(2021, 6, 3).unwrap(),
            tmax_f: 50.0,
            tmin_f: 70.0,
        };
        let err = accumulate_days(&[d], true).unwrap_err();
        assert!(matches!(err, WeatherError::Day { date, .. } if date == d.date));
        assert!(matches!(err.root(), WeatherError::InvertedRange { .. }));
    }

    #[test]
    fn series_rejects_duplicate_and_unsorted_dates() {
        let a = day(0, 80.0, 60.0);
        let b = day(1, 80.0, 60.0);
        assert!(matches!(
            TemperatureSeries::new("x", 2020, vec![a, a]),
            Err(WeatherError::DuplicateDate { .. })
        ));
        assert!(matches!(
            TemperatureSeries::new("x", 2020, vec![b, a]),
            Err(WeatherError::UnsortedDates { .. })
        ));
        // Gaps are fine.
        assert!(TemperatureSeries::new("x", 2020, vec![a, day(5, 80.0, 60.0)]).is_ok());
    }

    fn parse(text: &str) -> Result<TemperatureSeries, WeatherError> {
        read_weather_csv(text.as_bytes(), "site", TempUnit::Fahrenheit)
    }

    #[test]
    fn csv_two_rows() {
        let s = parse("date,tmax_f,tmin_f\n2020-05-01,95,65\n2020-05-02,60,60\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.season_year, 2020);
        assert_eq!(s.location_id, "site");
    }

    #[test]
    fn csv_header_only_is_empty_series() {
        assert_eq!(
            parse("date,tmax_f,tmin_f\n"),
            Err(WeatherError::EmptySeries)
        );
        assert_eq!(parse(""), Err(WeatherError::EmptySeries));
    }

    #[test]
    fn csv_inverted_row_carries_line_number() {
        let err = parse("date,tmax_f,tmin_f\n2020-05-01,95,65\n2020-05-02,50,70\n").unwrap_err();
        match err {
            WeatherError::AtLine { line, source } => {
                assert_eq!(line, 3);
                assert!(matches!(*source, WeatherError::InvertedRange { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_structural_errors() {
        assert_eq!(
            parse("date,tmax_f\n2020-05-01,95\n"),
            Err(WeatherError::MissingColumn("tmin_f".into()))
        );
        assert!(matches!(
            parse("date,tmax_f,tmin_f\n2020-05-02,95,65\n2020-05-01,95,65\n"),
            Err(WeatherError::UnsortedDates { line: 3, .. })
        ));
        assert!(matches!(
            parse("date,tmax_f,tmin_f\n2020-05-01,95,65\n2020-05-01,95,65\n"),
            Err(WeatherError::DuplicateDate { line: 3, .. })
        ));
        assert!(matches!(
            parse("date,tmax_f,tmin_f\n05/01/2020,95,65\n"),
            Err(WeatherError::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            parse("date,tmax_f,tmin_f\n2020-05-01,hot,65\n"),
            Err(WeatherError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn csv_celsius_columns_convert() {
        let s = read_weather_csv(
            "date,tmax_c,tmin_c\n2020-05-01,35,15\n".as_bytes(),
            "x",
            TempUnit::Celsius,
        )
        .unwrap();
        assert_eq!(s.records()[0].tmax_f, 95.0);
        assert_eq!(s.records()[0].tmin_f, 59.0);
    }

    // Temperatures on a 0.5°F grid keep every sum exact in f64, so the
    // properties below can be asserted with `==`.
    fn half_degree_days() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0i32..160, 0i32..80), 1..120).prop_map(|v| {
            v.into_iter()
                .map(|(lo, spread)| {
                    let lo = 20.0 + lo as f64 * 0.5;
                    (lo + spread as f64 * 0.5, lo)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn additivity(days in half_degree_days(), cut in 0usize..120, clamp in any::<bool>()) {
            let cut = cut.min(days.len());
            let whole = accumulate_heat_units(&series(&days), clamp).unwrap();
            let sum_part = |p: &[(f64, f64)]| if p.is_empty() { 0.0 } else { accumulate_heat_units(&series(p), clamp).unwrap() };
            prop_assert_eq!(whole, sum_part(&days[..cut]) + sum_part(&days[cut..]));
        }

        #[test]
        fn clamp_never_lowers(days in half_degree_days()) {
            let s = series(&days);
            let clamped = accumulate_heat_units(&s, true).unwrap();
            let raw = accumulate_heat_units(&s, false).unwrap();
            let any_cold = days.iter().any(|&(hi, lo)| (hi + lo) / 2.0 < BASE_TEMP_F);
            prop_assert!(clamped >= raw);
            prop_assert_eq!(clamped == raw, !any_cold);
        }

        #[test]
        fn translation(days in half_degree_days()) {
            let shifted: Vec<_> = days.iter().map(|&(hi, lo)| (hi + 2.0, lo + 2.0)).collect();
            let a = accumulate_heat_units(&series(&days), false).unwrap();
            let b = accumulate_heat_units(&series(&shifted), false).unwrap();
            prop_assert_eq!(b, a + 2.0 * days.len() as f64);
        }
    }
}
