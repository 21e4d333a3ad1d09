use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cotton_yield::dataset::OutlierField;
use cotton_yield::forest::MaxFeatures;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "cotton-yield",
    version,
    about = "Cotton yield prediction from accumulated heat units"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the accumulated heat units of a weather CSV, or a table for a
    /// directory of them.
    Ahu(AhuArgs),
    /// Remove outliers and write a cleaned record CSV plus a report.
    Prep(PrepArgs),
    /// Generate labelled records from a synthetic response surface.
    GenSynth(GenSynthArgs),
    /// Split a record CSV, fit a forest on the train part and score the
    /// validation part.
    Train(TrainArgs),
    /// Score a model on labelled records.
    Evaluate(EvaluateArgs),
    /// Predict yields for records.
    Predict(PredictArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct AhuArgs {
    /// Weather CSV (`date,tmax_f,tmin_f`).
    #[arg(long, required_unless_present = "dir", conflicts_with = "dir")]
    pub input: Option<PathBuf>,
    /// Directory of weather CSVs, one per location-season.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Keep negative daily values instead of counting them as 0.
    #[arg(long)]
    pub unclamped: bool,
    /// Columns are `tmax_c,tmin_c` in degrees Celsius.
    #[arg(long)]
    pub celsius: bool,
}

/// A record CSV, optionally joined with weather files for its AHU column.
#[derive(Debug, Args, Serialize)]
pub struct RecordsInput {
    /// Record CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Compute `ahu` from `<dir>/<location>_<year>.csv` instead of reading
    /// an `ahu` column.
    #[arg(long)]
    pub weather_dir: Option<PathBuf>,
    /// With --weather-dir: keep negative daily values.
    #[arg(long, requires = "weather_dir")]
    pub unclamped: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepArgs {
    #[command(flatten)]
    pub records: RecordsInput,
    /// Cleaned record CSV. The report goes to `<out>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Tukey fence multiplier.
    #[arg(long, default_value_t = 1.5)]
    pub outlier_k: f64,
    /// Field the fence is computed on: yield, nitrogen or ahu.
    #[arg(long, default_value_t = OutlierField::Yield)]
    pub outlier_field: OutlierField,
    /// Keep every row.
    #[arg(long)]
    pub no_outlier: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    /// Generator config; the shipped default grid when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the shipped dense grid instead of the default one.
    #[arg(long, conflicts_with = "config")]
    pub dense: bool,
    /// Output record CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Labelled record CSV with an `ahu` column.
    #[arg(long)]
    pub input: PathBuf,
    /// Model file. Validation metrics go to `<model-out>.metrics.json`.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Also write the held-out test rows as a record CSV.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Master seed for the split and the forest.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub valid_frac: f64,
    #[arg(long, default_value_t = 10)]
    pub n_estimators: usize,
    /// Unlimited when omitted.
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    #[arg(long, default_value_t = 2)]
    pub min_samples_split: usize,
    /// all, sqrt, third or a count.
    #[arg(long, default_value_t = MaxFeatures::All)]
    pub max_features: MaxFeatures,
    /// Bootstrap sample size as a fraction of the train rows.
    #[arg(long, default_value_t = 1.0)]
    pub bootstrap_size: f64,
    /// Worker threads; does not change the model.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Record that the input AHU was computed without clamping.
    #[arg(long)]
    pub unclamped: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub records: RecordsInput,
    /// Per-row CSV `row_id,actual_kg_ha,predicted_kg_ha`. Metrics go to
    /// `<report-out>.metrics.json`.
    #[arg(long)]
    pub report_out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub records: RecordsInput,
    /// CSV `row_id,predicted_kg_ha`.
    #[arg(long)]
    pub out: PathBuf,
}
