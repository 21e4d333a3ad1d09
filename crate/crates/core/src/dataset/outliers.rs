use super::{DatasetError, YieldRecord};

/// Numeric record column an outlier fence can be applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierField {
    #[default]
    Yield,
    Nitrogen,
    Ahu,
}

impl OutlierField {
    pub fn column(self) -> &'static str {
        match self {
            OutlierField::Yield => "yield_kg_ha",
            OutlierField::Nitrogen => "nitrogen_kg_ha",
            OutlierField::Ahu => "ahu",
        }
    }

    fn value(self, r: &YieldRecord) -> Option<f64> {
        match self {
            OutlierField::Yield => r.yield_kg_ha,
            OutlierField::Nitrogen => Some(r.nitrogen_kg_ha),
            OutlierField::Ahu => Some(r.ahu),
        }
    }
}

/// Quantile of sorted data by linear interpolation at position `p * (n - 1)`.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TukeyFence {
    pub q1: f64,
    pub q3: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TukeyFence {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

pub fn tukey_fence(values: &[f64], k: f64) -> TukeyFence {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let q3 = quantile_linear(&sorted, 0.75);
    let iqr = q3 - q1;
    TukeyFence {
        q1,
        q3,
        lower: q1 - k * iqr,
        upper: q3 + k * iqr,
    }
}

/// Result of [`remove_outliers`]: indices into the input, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierPartition {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// Fence of every pass; the last one removed nothing.
    pub passes: Vec<TukeyFence>,
}

impl OutlierPartition {
    pub fn kept_records(&self, records: &[YieldRecord]) -> Vec<YieldRecord> {
        self.kept.iter().map(|&i| records[i].clone()).collect()
    }

    pub fn removed_records(&self, records: &[YieldRecord]) -> Vec<YieldRecord> {
        self.removed.iter().map(|&i| records[i].clone()).collect()
    }
}

const MIN_OUTLIER_ROWS: usize = 4;

/// Tukey fence on `field`: keeps values in `[Q1 - k*IQR, Q3 + k*IQR]`.
///
/// The fence is recomputed on the kept values and reapplied until a pass
/// removes nothing (or fewer than four values remain), so running this on its
/// own `kept` output is a no-op.
pub fn remove_outliers(
    records: &[YieldRecord],
    field: OutlierField,
    k: f64,
) -> Result<OutlierPartition, DatasetError> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(DatasetError::InvalidMultiplier(k));
    }
    if records.len() < MIN_OUTLIER_ROWS {
        return Err(DatasetError::TooFewRecords {
            needed: MIN_OUTLIER_ROWS,
            found: records.len(),
        });
    }
    let values: Vec<f64> = records
        .iter()
        .map(|r| field.value(r))
        .collect::<Option<_>>()
        .ok_or_else(|| DatasetError::FieldAbsent(field.column().to_owned()))?;

    let mut keep = vec![true; values.len()];
    let mut passes = Vec::new();
    loop {
        let current: Vec<f64> = values
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .collect();
        if current.len() < MIN_OUTLIER_ROWS {
            break;
        }
        let fence = tukey_fence(&current, k);
        passes.push(fence);
        let mut changed = false;
        for (flag, &v) in keep.iter_mut().zip(&values) {
            if *flag && !fence.contains(v) {
                *flag = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let (kept, removed) = (0..values.len()).partition(|&i| keep[i]);
    Ok(OutlierPartition {
        kept,
        removed,
        passes,
    })
}
