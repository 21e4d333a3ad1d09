//! Yield records, categorical encoding and deterministic splitting.

mod io;
mod outliers;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::weather::WeatherError;

pub use io::{
    load_records_csv, load_records_with_weather, read_records_csv, write_records_csv, AhuSource,
};
pub use outliers::{
    quantile_linear, remove_outliers, tukey_fence, OutlierField, OutlierPartition, TukeyFence,
};

/// Model input columns, in design-matrix order.
pub const FEATURE_NAMES: [&str; 4] = ["cultivar", "soil", "nitrogen_kg_ha", "ahu"];

/// Categorical columns handled by the [`Encoder`], in encoder order.
pub const CATEGORICAL_COLUMNS: [&str; 2] = ["cultivar", "soil"];

/// Upper sanity bound for a nitrogen application, kg/ha.
pub const MAX_NITROGEN_KG_HA: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(String),
    #[error("MalformedRow at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("MissingColumn: {0}")]
    MissingColumn(String),
    #[error("UnknownColumn: {0}")]
    UnknownColumn(String),
    #[error("NegativeNitrogen at line {line}: {value}")]
    NegativeNitrogen { line: u64, value: f64 },
    #[error("NitrogenOutOfRange at line {line}: {value} exceeds 1000 kg/ha")]
    NitrogenOutOfRange { line: u64, value: f64 },
    #[error("NonPositiveYield at line {line}: {value}")]
    NonPositiveYield { line: u64, value: f64 },
    #[error("TooFewRecords: need at least {needed}, found {found}")]
    TooFewRecords { needed: usize, found: usize },
    #[error("FieldAbsent: {0} is missing on at least one record")]
    FieldAbsent(String),
    #[error("InvalidMultiplier: outlier multiplier must be positive, got {0}")]
    InvalidMultiplier(f64),
    #[error("EmptyInput: no records")]
    EmptyInput,
    #[error("UnseenCategory: {column} label {label:?} was not seen when the encoder was fitted")]
    UnseenCategory { column: String, label: String },
    #[error("InvalidEncoder: {0}")]
    InvalidEncoder(String),
    #[error("PartialTargets: some records have yield_kg_ha and some do not")]
    PartialTargets,
    #[error("InvalidFraction: {name} = {value}")]
    InvalidFraction { name: &'static str, value: f64 },
    #[error("MissingWeather: no weather file for {location} {year} at {path}")]
    MissingWeather {
        location: String,
        year: i32,
        path: String,
    },
    #[error("weather for {location} {year}: {source}")]
    Weather {
        location: String,
        year: i32,
        #[source]
        source: WeatherError,
    },
}

/// One location-season observation.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldRecord {
    pub location: String,
    pub year: i32,
    pub cultivar: String,
    pub soil: String,
    pub nitrogen_kg_ha: f64,
    pub ahu: f64,
    /// Absent for prediction-only records.
    pub yield_kg_ha: Option<f64>,
}

/// Label-to-code table of one categorical column. Codes are positions in
/// the lexicographically sorted label list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    column: String,
    labels: Vec<String>,
}

impl CategoryMap {
    /// Builds a map from labels that must already be strictly sorted.
    pub fn from_sorted_labels(
        column: impl Into<String>,
        labels: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let column = column.into();
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::InvalidEncoder(format!(
                "labels of {column} are not strictly sorted"
            )));
        }
        if labels
            .iter()
            .any(|l| l.is_empty() || l.contains(['\n', '\r']))
        {
            return Err(DatasetError::InvalidEncoder(format!(
                "{column} has an empty or multi-line label"
            )));
        }
        Ok(Self { column, labels })
    }

    fn fit<'a>(column: &str, labels: impl Iterator<Item = &'a str>) -> Self {
        let mut labels: Vec<String> = labels.map(str::to_owned).collect();
        labels.sort_unstable();
        labels.dedup();
        Self {
            column: column.to_owned(),
            labels,
        }
    }

    pub fn column(&self) -> &str {
        &self.column
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn encode(&self, label: &str) -> Result<usize, DatasetError> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| DatasetError::UnseenCategory {
                column: self.column.clone(),
                label: label.to_owned(),
            })
    }

    pub fn decode(&self, code: usize) -> Option<&str> {
        self.labels.get(code).map(String::as_str)
    }
}

/// Ordinal encoding of the `cultivar` and `soil` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    cultivar: CategoryMap,
    soil: CategoryMap,
}

impl Encoder {
    pub fn new(cultivar: CategoryMap, soil: CategoryMap) -> Result<Self, DatasetError> {
        if cultivar.column != "cultivar" || soil.column != "soil" {
            return Err(DatasetError::InvalidEncoder(
                "expected cultivar and soil maps".into(),
            ));
        }
        Ok(Self { cultivar, soil })
    }

    pub fn cultivar(&self) -> &CategoryMap {
        &self.cultivar
    }

    pub fn soil(&self) -> &CategoryMap {
        &self.soil
    }

    /// Maps in [`CATEGORICAL_COLUMNS`] order.
    pub fn columns(&self) -> [&CategoryMap; 2] {
        [&self.cultivar, &self.soil]
    }
}

pub fn fit_encoder(records: &[YieldRecord]) -> Result<Encoder, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    Ok(Encoder {
        cultivar: CategoryMap::fit("cultivar", records.iter().map(|r| r.cultivar.as_str())),
        soil: CategoryMap::fit("soil", records.iter().map(|r| r.soil.as_str())),
    })
}

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_cols: usize) -> Self {
        assert!(n_cols > 0, "matrix needs at least one column");
        assert_eq!(
            data.len() % n_cols,
            0,
            "data length is not a multiple of the column count"
        );
        Self { data, n_cols }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], n_cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), n_cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(data, n_cols)
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Encoded records: design matrix `[cultivar, soil, nitrogen_kg_ha, ahu]`
/// plus targets when every record carries a yield.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<YieldRecord>,
    encoder: Encoder,
    features: FeatureMatrix,
    targets: Option<Vec<f64>>,
}

impl Dataset {
    pub fn records(&self) -> &[YieldRecord] {
        &self.records
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.targets.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n_cols = self.features.n_cols();
        let mut data = Vec::with_capacity(indices.len() * n_cols);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            encoder: self.encoder.clone(),
            features: FeatureMatrix::new(data, n_cols),
            targets: self
                .targets
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }
}

pub fn encode(records: &[YieldRecord], encoder: &Encoder) -> Result<Dataset, DatasetError> {
    let mut data = Vec::with_capacity(records.len() * FEATURE_NAMES.len());
    for r in records {
        data.push(encoder.cultivar.encode(&r.cultivar)? as f64);
        data.push(encoder.soil.encode(&r.soil)? as f64);
        data.push(r.nitrogen_kg_ha);
        data.push(r.ahu);
    }
    let features = FeatureMatrix::new(data, FEATURE_NAMES.len());
    if !features.is_finite() {
        return Err(DatasetError::MalformedRow {
            line: 0,
            reason: "non-finite feature value".into(),
        });
    }

    let labelled = records.iter().filter(|r| r.yield_kg_ha.is_some()).count();
    let targets = if labelled == records.len() && !records.is_empty() {
        let t: Vec<f64> = records.iter().filter_map(|r| r.yield_kg_ha).collect();
        if t.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::MalformedRow {
                line: 0,
                reason: "non-finite target".into(),
            });
        }
        Some(t)
    } else if labelled == 0 {
        None
    } else {
        return Err(DatasetError::PartialTargets);
    };

    Ok(Dataset {
        records: records.to_vec(),
        encoder: encoder.clone(),
        features,
        targets,
    })
}

/// Split fractions and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// Share of all rows held out as the test set.
    pub test_frac: f64,
    /// Share of the non-test rows used for validation.
    pub valid_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            test_frac: 0.1,
            valid_frac: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return Err(DatasetError::InvalidFraction {
                name: "test_frac",
                value: self.test_frac,
            });
        }
        if !(self.valid_frac >= 0.0 && self.valid_frac < 1.0) {
            return Err(DatasetError::InvalidFraction {
                name: "valid_frac",
                value: self.valid_frac,
            });
        }
        Ok(())
    }
}

/// Row indices of the three partitions, each in shuffled order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_SPLIT_ROWS: usize = 10;

// ceil() that ignores representation error such as 90 * 0.2 = 18.000000000000004.
fn ceil_count(n: usize, frac: f64) -> usize {
    ((n as f64 * frac) - 1e-9).ceil().max(0.0) as usize
}

/// Shuffles `0..n` with [`SplitMix64`] seeded by `spec.seed`, then takes the
/// first `ceil(n * test_frac)` rows as test, the next
/// `ceil((n - n_test) * valid_frac)` as validation, and the rest as train.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices, DatasetError> {
    spec.validate()?;
    if n < MIN_SPLIT_ROWS {
        return Err(DatasetError::TooFewRecords {
            needed: MIN_SPLIT_ROWS,
            found: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(spec.seed).shuffle(&mut order);

    let n_test = ceil_count(n, spec.test_frac).clamp(1, n - 1);
    let rest = n - n_test;
    let n_valid = ceil_count(rest, spec.valid_frac).min(rest - 1);
    let test = order[..n_test].to_vec();
    let valid = order[n_test..n_test + n_valid].to_vec();
    let train = order[n_test + n_valid..].to_vec();
    Ok(SplitIndices { train, valid, test })
}

/// Deterministic `(train, valid, test)` partition of a dataset.
pub fn split(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    let idx = split_indices(dataset.len(), spec)?;
    Ok((
        dataset.subset(&idx.train),
        dataset.subset(&idx.valid),
        dataset.subset(&idx.test),
    ))
}

impl fmt::Display for OutlierField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for OutlierField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yield_kg_ha" | "yield" => Ok(OutlierField::Yield),
            "nitrogen_kg_ha" | "nitrogen" => Ok(OutlierField::Nitrogen),
            "ahu" => Ok(OutlierField::Ahu),
            other => Err(format!(
                "unknown outlier field {other:?} (yield_kg_ha, nitrogen_kg_ha, ahu)"
            )),
        }
    }
}
