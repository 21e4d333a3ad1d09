//! RMSE, R² and accuracy (100 minus MAPE) of yield predictions.

use thiserror::Error;

use crate::dataset::Dataset;
use crate::forest::{ForestError, RandomForestModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("LengthMismatch: {actual} actual values vs {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("EmptyInput: no values")]
    EmptyInput,
    #[error("TooFewValues: R² needs at least 2 values")]
    TooFewValues,
    #[error("ZeroVariance: all actual values are equal")]
    ZeroVariance,
    #[error("NonPositiveActual: actual value {value} at index {index}")]
    NonPositiveActual { index: usize, value: f64 },
    #[error("NonFiniteInput at index {index}")]
    NonFiniteInput { index: usize },
    #[error("MissingTargets: dataset has no yield column")]
    MissingTargets,
    #[error(transparent)]
    Forest(#[from] ForestError),
}

fn check(actual: &[f64], predicted: &[f64]) -> Result<(), MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(index) = actual
        .iter()
        .zip(predicted)
        .position(|(a, p)| !a.is_finite() || !p.is_finite())
    {
        return Err(MetricsError::NonFiniteInput { index });
    }
    Ok(())
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    let sse: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    if actual.len() < 2 {
        return Err(MetricsError::TooFewValues);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `100 * (1 - mean(|a - p| / a))`. Can go negative for very poor
/// predictions; the raw value is returned.
pub fn accuracy_pct(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted)?;
    if let Some((index, &value)) = actual.iter().enumerate().find(|(_, &a)| a <= 0.0) {
        return Err(MetricsError::NonPositiveActual { index, value });
    }
    let mape = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).abs() / a)
        .sum::<f64>()
        / actual.len() as f64;
    Ok(100.0 * (1.0 - mape))
}

/// Conditions that did not stop evaluation but make a metric unusable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    /// R² undefined because every actual value is equal.
    ZeroVariance,
    /// R² undefined for a single value.
    TooFewValues,
    /// accuracy_pct is below zero.
    NegativeAccuracy,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricsReport {
    pub rmse: f64,
    /// `None` when R² is undefined; see `flags`.
    pub r2: Option<f64>,
    pub accuracy_pct: f64,
    pub n: usize,
    pub flags: Vec<MetricFlag>,
}

impl MetricsReport {
    pub fn from_pairs(actual: &[f64], predicted: &[f64]) -> Result<Self, MetricsError> {
        let mut flags = Vec::new();
        let rmse = rmse(actual, predicted)?;
        let accuracy_pct = accuracy_pct(actual, predicted)?;
        if accuracy_pct < 0.0 {
            flags.push(MetricFlag::NegativeAccuracy);
        }
        let r2 = match r2(actual, predicted) {
            Ok(v) => Some(v),
            Err(MetricsError::ZeroVariance) => {
                flags.push(MetricFlag::ZeroVariance);
                None
            }
            Err(MetricsError::TooFewValues) => {
                flags.push(MetricFlag::TooFewValues);
                None
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            rmse,
            r2,
            accuracy_pct,
            n: actual.len(),
            flags,
        })
    }
}

/// Metrics plus the `(actual, predicted)` pairs they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

pub fn evaluate(model: &RandomForestModel, dataset: &Dataset) -> Result<Evaluation, MetricsError> {
    let actual = dataset
        .targets()
        .ok_or(MetricsError::MissingTargets)?
        .to_vec();
    let predicted = model.predict_batch(dataset.features())?;
    let report = MetricsReport::from_pairs(&actual, &predicted)?;
    Ok(Evaluation {
        report,
        actual,
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode, fit_encoder, YieldRecord};
    use crate::forest::{fit_forest, ForestConfig};
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[100.0], &[104.0]).unwrap(), 4.0);
    }

    #[test]
    fn r2_examples() {
        let a = [1.0, 4.0, 2.0, 9.0];
        assert_eq!(r2(&a, &a).unwrap(), 1.0);
        assert_eq!(r2(&a, &[4.0; 4]).unwrap(), 0.0);
        assert_eq!(r2(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_pct(&[5.0, 7.0], &[5.0, 7.0]).unwrap(), 100.0);
        assert_eq!(accuracy_pct(&[100.0], &[90.0]).unwrap(), 90.0);
        assert_eq!(
            accuracy_pct(&[100.0, 200.0], &[110.0, 180.0]).unwrap(),
            90.0
        );
    }

    #[test]
    fn errors() {
        assert_eq!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch {
                actual: 1,
                predicted: 2
            })
        );
        assert_eq!(rmse(&[], &[]), Err(MetricsError::EmptyInput));
        assert_eq!(
            r2(&[3.0, 3.0], &[1.0, 2.0]),
            Err(MetricsError::ZeroVariance)
        );
        assert_eq!(
            r2(&[3.0, 4.0], &[1.0]),
            Err(MetricsError::LengthMismatch {
                actual: 2,
                predicted: 1
            })
        );
        assert_eq!(
            accuracy_pct(&[1.0, 0.0], &[1.0, 1.0]),
            Err(MetricsError::NonPositiveActual {
                index: 1,
                value: 0.0
            })
        );
        assert_eq!(
            rmse(&[f64::NAN], &[1.0]),
            Err(MetricsError::NonFiniteInput { index: 0 })
        );
    }

    #[test]
    fn report_flags_degenerate_metrics() {
        let r = MetricsReport::from_pairs(&[5.0, 5.0], &[5.0, 5.0]).unwrap();
        assert_eq!((r.rmse, r.accuracy_pct, r.r2), (0.0, 100.0, None));
        assert_eq!(r.flags, vec![MetricFlag::ZeroVariance]);
        let r = MetricsReport::from_pairs(&[1.0, 2.0], &[10.0, 10.0]).unwrap();
        assert!(r.accuracy_pct < 0.0);
        assert!(r.flags.contains(&MetricFlag::NegativeAccuracy));
    }

    #[test]
    fn evaluate_constant_model() {
        let recs: Vec<YieldRecord> = (0..12)
            .map(|i| YieldRecord {
                location: "X".into(),
                year: 2020,
                cultivar: "A".into(),
                soil: "clay".into(),
                nitrogen_kg_ha: i as f64 * 10.0,
                ahu: 2000.0,
                yield_kg_ha: Some(1500.0),
            })
            .collect();
        let ds = encode(&recs, &fit_encoder(&recs).unwrap()).unwrap();
        let model = fit_forest(&ds, &ForestConfig::default()).unwrap();
        let ev = evaluate(&model, &ds).unwrap();
        assert_eq!(ev.report.rmse, 0.0);
        assert_eq!(ev.report.accuracy_pct, 100.0);
        assert_eq!(ev.report.r2, None);
        assert_eq!(ev.report.flags, vec![MetricFlag::ZeroVariance]);
        assert_eq!(ev.report.n, 12);
        assert_eq!(evaluate(&model, &ds).unwrap(), ev);
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        prop::collection::vec((1.0f64..5000.0, 1.0f64..5000.0), 2..60)
            .prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn rmse_is_symmetric((a, p) in pairs()) {
            prop_assert_eq!(rmse(&a, &p).unwrap(), rmse(&p, &a).unwrap());
        }

        #[test]
        fn joint_permutation_invariance((a, p) in pairs(), seed in any::<u64>()) {
            let mut idx: Vec<usize> = (0..a.len()).collect();
            crate::rng::SplitMix64::new(seed).shuffle(&mut idx);
            let a2: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let tol = 1e-9;
            prop_assert!((rmse(&a, &p).unwrap() - rmse(&a2, &p2).unwrap()).abs() <= tol * rmse(&a, &p).unwrap().max(1.0));
            prop_assert!((r2(&a, &p).unwrap() - r2(&a2, &p2).unwrap()).abs() <= tol * r2(&a, &p).unwrap().abs().max(1.0));
        }

        #[test]
        fn accuracy_is_scale_invariant((a, p) in pairs(), scale in 0.01f64..100.0) {
            let a2: Vec<f64> = a.iter().map(|x| x * scale).collect();
            let p2: Vec<f64> = p.iter().map(|x| x * scale).collect();
            let acc = accuracy_pct(&a, &p).unwrap();
            prop_assert!((acc - accuracy_pct(&a2, &p2).unwrap()).abs() <= 1e-9 * acc.abs().max(1.0));
        }

        #[test]
        fn r2_never_exceeds_one((a, p) in pairs()) {
            prop_assert!(r2(&a, &p).unwrap() <= 1.0);
            prop_assert!(rmse(&a, &p).unwrap() >= 0.0);
        }
    }
}
