//! The prep and train stages of the command-line pipeline.

use thiserror::Error;

use crate::dataset::{
    encode, fit_encoder, remove_outliers, split_indices, Dataset, DatasetError, Encoder,
    OutlierField, SplitIndices, SplitSpec, TukeyFence, YieldRecord,
};
use crate::forest::{fit_forest_with, FitOptions, ForestConfig, ForestError, RandomForestModel};
use crate::metrics::{evaluate, MetricsError, MetricsReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Outlier fence applied during prep; `None` keeps every row.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OutlierRule {
    pub field: OutlierField,
    pub k: f64,
}

impl Default for OutlierRule {
    fn default() -> Self {
        Self {
            field: OutlierField::Yield,
            k: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub records: Vec<YieldRecord>,
    /// Input row indices (0-based) that were removed.
    pub removed_rows: Vec<usize>,
    pub fences: Vec<TukeyFence>,
    /// Encoder fitted on the kept records.
    pub encoder: Encoder,
}

pub fn prepare(
    records: &[YieldRecord],
    outliers: Option<OutlierRule>,
) -> Result<Prepared, PipelineError> {
    let (kept, removed_rows, fences) = match outliers {
        Some(rule) => {
            let part = remove_outliers(records, rule.field, rule.k)?;
            (part.kept_records(records), part.removed, part.passes)
        }
        None => (records.to_vec(), Vec::new(), Vec::new()),
    };
    let encoder = fit_encoder(&kept)?;
    Ok(Prepared {
        records: kept,
        removed_rows,
        fences,
        encoder,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: RandomForestModel,
    pub split: SplitIndices,
    pub dataset: Dataset,
    /// `None` when the validation split is empty.
    pub valid_metrics: Option<MetricsReport>,
}

impl Trained {
    pub fn train_set(&self) -> Dataset {
        self.dataset.subset(&self.split.train)
    }

    pub fn valid_set(&self) -> Dataset {
        self.dataset.subset(&self.split.valid)
    }

    pub fn test_set(&self) -> Dataset {
        self.dataset.subset(&self.split.test)
    }
}

/// Encodes labelled records, splits them, fits a forest on the train part
/// and scores the validation part.
pub fn train(
    records: &[YieldRecord],
    split: &SplitSpec,
    config: &ForestConfig,
    options: &FitOptions,
) -> Result<Trained, PipelineError> {
    config.validate()?;
    let encoder = fit_encoder(records)?;
    let dataset = encode(records, &encoder)?;
    if dataset.targets().is_none() {
        return Err(ForestError::EmptyDataset.into());
    }
    let idx = split_indices(dataset.len(), split)?;
    let model = fit_forest_with(&dataset.subset(&idx.train), config, options)?;
    let valid_metrics = if idx.valid.is_empty() {
        None
    } else {
        Some(evaluate(&model, &dataset.subset(&idx.valid))?.report)
    };
    Ok(Trained {
        model,
        split: idx,
        dataset,
        valid_metrics,
    })
}
