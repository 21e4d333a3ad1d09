//! Bootstrap-aggregated regression forest.
//!
//! Tree `i` is trained on a bootstrap sample drawn with a [`SplitMix64`]
//! seeded by `mix(master_seed, i)` (see [`crate::rng::mix`]), so trees can be
//! fitted in any order or on any number of threads and the model comes out
//! the same.

mod format;
mod tree;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{
    encode, Dataset, DatasetError, Encoder, FeatureMatrix, YieldRecord, FEATURE_NAMES,
};
use crate::rng::{mix, SplitMix64};

pub use format::{load_model, read_model, save_model, write_model, FORMAT_VERSION};
pub use tree::{fit_tree, Node, RegressionTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("EmptyNodeSet: no rows to fit")]
    EmptyNodeSet,
    #[error("NonFiniteFeature{}", .row.map(|r| format!(" in row {r}")).unwrap_or_default())]
    NonFiniteFeature { row: Option<usize> },
    #[error("NonFiniteTarget in row {row}")]
    NonFiniteTarget { row: usize },
    #[error("EmptyDataset: no labelled rows to train on")]
    EmptyDataset,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("WidthMismatch: expected {expected} features, got {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("row {row}: {source}")]
    AtRow {
        row: usize,
        #[source]
        source: Box<ForestError>,
    },
    #[error("FormatVersionMismatch: expected {FORMAT_VERSION}, found {found}")]
    FormatVersionMismatch { found: String },
    #[error("CorruptTree in tree {tree}: {reason}")]
    CorruptTree { tree: usize, reason: String },
    #[error("UnknownFeatureIndex in tree {tree}: {index}")]
    UnknownFeatureIndex { tree: usize, index: usize },
    #[error("model parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Number of features each node may consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxFeatures {
    #[default]
    All,
    /// `floor(sqrt(p))`, at least 1.
    Sqrt,
    /// `floor(p / 3)`, at least 1.
    Third,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Third => n_features / 3,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

impl fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxFeatures::All => f.write_str("all"),
            MaxFeatures::Sqrt => f.write_str("sqrt"),
            MaxFeatures::Third => f.write_str("third"),
            MaxFeatures::Count(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for MaxFeatures {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(MaxFeatures::All),
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "third" => Ok(MaxFeatures::Third),
            n => n.parse().map(MaxFeatures::Count).map_err(|_| {
                format!("max_features must be all, sqrt, third or an integer, got {n:?}")
            }),
        }
    }
}

impl serde::Serialize for MaxFeatures {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    /// Bootstrap sample size as a fraction of the training rows.
    pub bootstrap_size: f64,
    pub master_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 10,
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
            bootstrap_size: 1.0,
            master_seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: &str| Err(ForestError::InvalidConfig(m.to_owned()));
        if self.n_estimators < 1 {
            return bad("n_estimators must be at least 1");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be at least 1");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2");
        }
        if !(self.bootstrap_size > 0.0 && self.bootstrap_size <= 1.0) {
            return bad("bootstrap_size must be in (0, 1]");
        }
        if self.max_features == MaxFeatures::Count(0) {
            return bad("max_features must be at least 1");
        }
        Ok(())
    }

    /// Seed of tree `index`.
    pub fn tree_seed(&self, index: usize) -> u64 {
        mix(self.master_seed, index as u64)
    }
}

/// Options that affect how a forest is trained but not which forest comes out
/// (threads), or that are recorded as metadata (clamp mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// Whether the AHU feature was computed with negative days clamped to 0.
    pub clamp_mode: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            clamp_mode: true,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub(crate) trees: Vec<RegressionTree>,
    pub(crate) config: ForestConfig,
    pub(crate) encoder: Encoder,
    pub(crate) feature_names: Vec<String>,
    pub(crate) clamp_mode: bool,
    pub(crate) train_target_range: (f64, f64),
}

pub fn fit_forest(
    dataset: &Dataset,
    config: &ForestConfig,
) -> Result<RandomForestModel, ForestError> {
    fit_forest_with(dataset, config, &FitOptions::default())
}

pub fn fit_forest_with(
    dataset: &Dataset,
    config: &ForestConfig,
    options: &FitOptions,
) -> Result<RandomForestModel, ForestError> {
    config.validate()?;
    let targets = dataset.targets().ok_or(ForestError::EmptyDataset)?;
    if dataset.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    let matrix = dataset.features();
    if let Some(r) = matrix
        .rows()
        .position(|row| row.iter().any(|v| !v.is_finite()))
    {
        return Err(ForestError::NonFiniteFeature { row: Some(r) });
    }
    let n = targets.len();
    let sample_size = ((n as f64 * config.bootstrap_size) - 1e-9).ceil().max(1.0) as usize;

    let fit_one = |i: usize| -> Result<RegressionTree, ForestError> {
        let seed = config.tree_seed(i);
        let mut rng = SplitMix64::new(mix(seed, 0));
        let sample: Vec<usize> = (0..sample_size)
            .map(|_| rng.below(n as u64) as usize)
            .collect();
        fit_tree(matrix, targets, &sample, config, seed)
    };
    let fit_all = || -> Result<Vec<RegressionTree>, ForestError> {
        (0..config.n_estimators)
            .into_par_iter()
            .map(fit_one)
            .collect()
    };
    let trees = match options.threads {
        None => fit_all()?,
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| ForestError::InvalidConfig(format!("thread pool: {e}")))?
            .install(fit_all)?,
    };

    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RandomForestModel {
        trees,
        config: config.clone(),
        encoder: dataset.encoder().clone(),
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        clamp_mode: options.clamp_mode,
        train_target_range: (lo, hi),
    })
}

/// Parallel batches kick in above this many rows.
const PAR_BATCH_ROWS: usize = 4096;

impl RandomForestModel {
    /// Assembles a model from parts, checking the tree count and widths.
    pub fn from_parts(
        trees: Vec<RegressionTree>,
        config: ForestConfig,
        encoder: Encoder,
        feature_names: Vec<String>,
        clamp_mode: bool,
        train_target_range: (f64, f64),
    ) -> Result<Self, ForestError> {
        config.validate()?;
        if trees.len() != config.n_estimators {
            return Err(ForestError::InvalidConfig(format!(
                "{} trees for n_estimators = {}",
                trees.len(),
                config.n_estimators
            )));
        }
        for (i, t) in trees.iter().enumerate() {
            if t.feature_count() != feature_names.len() {
                return Err(ForestError::CorruptTree {
                    tree: i,
                    reason: format!(
                        "tree has {} features, model has {}",
                        t.feature_count(),
                        feature_names.len()
                    ),
                });
            }
        }
        let (lo, hi) = train_target_range;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(ForestError::InvalidConfig(
                "train_target_range is inverted".into(),
            ));
        }
        Ok(Self {
            trees,
            config,
            encoder,
            feature_names,
            clamp_mode,
            train_target_range,
        })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn clamp_mode(&self) -> bool {
        self.clamp_mode
    }

    pub fn train_target_range(&self) -> (f64, f64) {
        self.train_target_range
    }

    /// Mean of the tree predictions for one encoded row.
    pub fn predict(&self, row: &[f64]) -> Result<f64, ForestError> {
        if row.len() != self.feature_count() {
            return Err(ForestError::WidthMismatch {
                expected: self.feature_count(),
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFiniteFeature { row: None });
        }
        Ok(self.predict_unchecked(row))
    }

    fn predict_unchecked(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        let (lo, hi) = self.train_target_range;
        // Rounding in the mean must not step outside the leaf value range.
        (sum / self.trees.len() as f64).clamp(lo, hi)
    }

    /// Predictions for every row, in row order.
    pub fn predict_batch(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>, ForestError> {
        let one = |(i, row): (usize, &[f64])| {
            self.predict(row).map_err(|e| ForestError::AtRow {
                row: i,
                source: Box::new(e),
            })
        };
        if matrix.n_rows() >= PAR_BATCH_ROWS {
            matrix
                .rows()
                .collect::<Vec<_>>()
                .into_par_iter()
                .enumerate()
                .map(one)
                .collect()
        } else {
            matrix.rows().enumerate().map(one).collect()
        }
    }

    /// Encodes records with the model's encoder.
    pub fn encode_records(&self, records: &[YieldRecord]) -> Result<Dataset, ForestError> {
        Ok(encode(records, &self.encoder)?)
    }

    pub fn predict_records(&self, records: &[YieldRecord]) -> Result<Vec<f64>, ForestError> {
        let ds = self.encode_records(records)?;
        self.predict_batch(ds.features())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fit_encoder;

    fn records(n: usize) -> Vec<YieldRecord> {
        let soils = ["clay", "loam", "sand"];
        (0..n)
            .map(|i| YieldRecord {
                location: "X".into(),
                year: 2017 + (i % 6) as i32,
                cultivar: if i % 2 == 0 { "A".into() } else { "B".into() },
                soil: soils[i % 3].into(),
                nitrogen_kg_ha: (i % 4) as f64 * 100.0,
                ahu: 2000.0 + (i % 9) as f64 * 50.0,
                yield_kg_ha: Some(800.0 + ((i * 37) % 23) as f64 * 20.0 + (i % 4) as f64 * 50.0),
            })
            .collect()
    }

    fn dataset(n: usize) -> Dataset {
        let recs = records(n);
        encode(&recs, &fit_encoder(&recs).unwrap()).unwrap()
    }

    #[test]
    fn ten_trees_by_default() {
        let m = fit_forest(&dataset(60), &ForestConfig::default()).unwrap();
        assert_eq!(m.trees().len(), 10);
    }

    #[test]
    fn constant_target_forest_predicts_the_constant() {
        let mut recs = records(30);
        for r in &mut recs {
            r.yield_kg_ha = Some(1234.5);
        }
        let ds = encode(&recs, &fit_encoder(&recs).unwrap()).unwrap();
        let m = fit_forest(&ds, &ForestConfig::default()).unwrap();
        for t in m.trees() {
            assert_eq!(t.nodes().len(), 1);
        }
        assert_eq!(m.predict(&[1.0, 2.0, 55.0, 99999.0]).unwrap(), 1234.5);
    }

    #[test]
    fn forest_prediction_is_the_tree_mean() {
        let m = fit_forest(&dataset(80), &ForestConfig::default()).unwrap();
        let row = [1.0, 0.0, 150.0, 2210.0];
        let mean = m.trees().iter().map(|t| t.predict_row(&row)).sum::<f64>() / 10.0;
        assert_eq!(m.predict(&row).unwrap(), mean);
    }

    #[test]
    fn mean_of_two_trees() {
        let leaf = |v| {
            RegressionTree::from_nodes(
                vec![Node::Leaf {
                    value: v,
                    n_samples: 1,
                }],
                4,
                0,
            )
            .unwrap()
        };
        let recs = records(4);
        let config = ForestConfig {
            n_estimators: 2,
            ..ForestConfig::default()
        };
        let m = RandomForestModel::from_parts(
            vec![leaf(1000.0), leaf(1200.0)],
            config,
            fit_encoder(&recs).unwrap(),
            FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            true,
            (1000.0, 1200.0),
        )
        .unwrap();
        assert_eq!(m.predict(&[0.0; 4]).unwrap(), 1100.0);
    }

    #[test]
    fn thread_count_does_not_change_the_model() {
        let ds = dataset(200);
        let config = ForestConfig {
            max_features: MaxFeatures::Count(2),
            bootstrap_size: 0.7,
            ..ForestConfig::default()
        };
        let one = fit_forest_with(
            &ds,
            &config,
            &FitOptions {
                threads: Some(1),
                ..FitOptions::default()
            },
        )
        .unwrap();
        let many = fit_forest_with(
            &ds,
            &config,
            &FitOptions {
                threads: Some(4),
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn max_depth_zero_gives_bootstrap_means() {
        let ds = dataset(50);
        let config = ForestConfig {
            max_depth: Some(0),
            n_estimators: 3,
            ..ForestConfig::default()
        };
        let m = fit_forest(&ds, &config).unwrap();
        let t = ds.targets().unwrap();
        for (i, tree) in m.trees().iter().enumerate() {
            let mut rng = SplitMix64::new(mix(config.tree_seed(i), 0));
            let sample: Vec<f64> = (0..50).map(|_| t[rng.below(50) as usize]).collect();
            let mean = sample.iter().sum::<f64>() / 50.0;
            assert_eq!(
                tree.nodes(),
                &[Node::Leaf {
                    value: mean,
                    n_samples: 50
                }]
            );
        }
    }

    #[test]
    fn invalid_configs() {
        let ds = dataset(20);
        for config in [
            ForestConfig {
                n_estimators: 0,
                ..ForestConfig::default()
            },
            ForestConfig {
                min_samples_leaf: 0,
                ..ForestConfig::default()
            },
            ForestConfig {
                min_samples_split: 1,
                ..ForestConfig::default()
            },
            ForestConfig {
                bootstrap_size: 0.0,
                ..ForestConfig::default()
            },
            ForestConfig {
                bootstrap_size: 1.5,
                ..ForestConfig::default()
            },
            ForestConfig {
                max_features: MaxFeatures::Count(0),
                ..ForestConfig::default()
            },
        ] {
            assert!(matches!(
                fit_forest(&ds, &config),
                Err(ForestError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn unlabelled_dataset_cannot_train() {
        let mut recs = records(10);
        for r in &mut recs {
            r.yield_kg_ha = None;
        }
        let ds = encode(&recs, &fit_encoder(&recs).unwrap()).unwrap();
        assert_eq!(
            fit_forest(&ds, &ForestConfig::default()),
            Err(ForestError::EmptyDataset)
        );
    }

    #[test]
    fn predict_checks_width_and_finiteness() {
        let m = fit_forest(&dataset(30), &ForestConfig::default()).unwrap();
        assert_eq!(
            m.predict(&[0.0; 3]),
            Err(ForestError::WidthMismatch {
                expected: 4,
                found: 3
            })
        );
        assert_eq!(
            m.predict(&[0.0, 0.0, f64::NAN, 1.0]),
            Err(ForestError::NonFiniteFeature { row: None })
        );
        let bad = FeatureMatrix::from_rows(&[[0.0; 4], [0.0, 0.0, f64::INFINITY, 0.0]], 4);
        assert!(matches!(
            m.predict_batch(&bad),
            Err(ForestError::AtRow { row: 1, .. })
        ));
    }

    #[test]
    fn batch_matches_single_rows() {
        let m = fit_forest(&dataset(120), &ForestConfig::default()).unwrap();
        let mut rng = SplitMix64::new(8);
        let rows: Vec<[f64; 4]> = (0..10_000)
            .map(|_| {
                [
                    rng.below(2) as f64,
                    rng.below(3) as f64,
                    rng.next_f64() * 300.0,
                    1800.0 + rng.next_f64() * 800.0,
                ]
            })
            .collect();
        let matrix = FeatureMatrix::from_rows(&rows, 4);
        let batch = m.predict_batch(&matrix).unwrap();
        assert_eq!(batch.len(), rows.len());
        for (r, p) in rows.iter().zip(&batch) {
            assert_eq!(m.predict(r).unwrap(), *p);
        }
        assert!(m
            .predict_batch(&FeatureMatrix::new(vec![], 4))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn max_features_parsing() {
        assert_eq!("all".parse::<MaxFeatures>().unwrap(), MaxFeatures::All);
        assert_eq!("3".parse::<MaxFeatures>().unwrap(), MaxFeatures::Count(3));
        assert!("lots".parse::<MaxFeatures>().is_err());
        assert_eq!(MaxFeatures::Sqrt.resolve(4), 2);
        assert_eq!(MaxFeatures::Third.resolve(4), 1);
        assert_eq!(MaxFeatures::Count(9).resolve(4), 4);
    }
}
