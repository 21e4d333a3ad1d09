use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cotton_yield::dataset::{
    load_records_csv, load_records_with_weather, write_records_csv, SplitSpec, YieldRecord,
};
use cotton_yield::forest::{load_model, save_model, FitOptions, ForestConfig, RandomForestModel};
use cotton_yield::metrics::{evaluate, MetricsReport};
use cotton_yield::pipeline::{prepare, train, OutlierRule};
use cotton_yield::synthgen::{generate_csv, SynthConfig};
use cotton_yield::weather::{accumulate_heat_units, load_weather_csv_with_unit, TempUnit};
use serde_json::json;

use crate::args::{
    AhuArgs, EvaluateArgs, GenSynthArgs, PredictArgs, PrepArgs, RecordsInput, TrainArgs,
};
use crate::error::{CliError, CliResult, Context};
use crate::manifest::{sidecar, write_json, ManifestBuilder};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).write_at(path)?))
}

/// Loads the records and digests the record file plus any weather files the
/// join read.
fn load_records(
    input: &RecordsInput,
    manifest: &mut ManifestBuilder,
) -> CliResult<Vec<YieldRecord>> {
    manifest.input(&input.input)?;
    let Some(dir) = &input.weather_dir else {
        return load_records_csv(&input.input).data_at(&input.input);
    };
    let records =
        load_records_with_weather(&input.input, dir, !input.unclamped).data_at(&input.input)?;
    let seasons: BTreeSet<(&str, i32)> = records
        .iter()
        .map(|r| (r.location.as_str(), r.year))
        .collect();
    for (location, year) in seasons {
        manifest.input(&dir.join(format!("{location}_{year}.csv")))?;
    }
    manifest.clamp_mode = Some(!input.unclamped);
    Ok(records)
}

fn load_model_at(path: &Path, manifest: &mut ManifestBuilder) -> CliResult<RandomForestModel> {
    manifest.input(path)?;
    let model = load_model(path).data_at(path)?;
    manifest.master_seed = Some(model.config().master_seed);
    manifest.clamp_mode = Some(model.clamp_mode());
    Ok(model)
}

pub fn ahu(args: &AhuArgs) -> CliResult<()> {
    let unit = if args.celsius {
        TempUnit::Celsius
    } else {
        TempUnit::Fahrenheit
    };
    let clamp = !args.unclamped;
    if let Some(path) = &args.input {
        let series = load_weather_csv_with_unit(path, unit).data_at(path)?;
        let total = accumulate_heat_units(&series, clamp).data_at(path)?;
        println!("{total:?}");
        return Ok(());
    }
    let dir = args.dir.as_ref().expect("clap requires --input or --dir");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .data_at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("{}: no .csv files", dir.display())));
    }
    let mut rows = Vec::with_capacity(files.len());
    for path in &files {
        let series = load_weather_csv_with_unit(path, unit).data_at(path)?;
        let total = accumulate_heat_units(&series, clamp).data_at(path)?;
        rows.push(format!(
            "{},{},{},{total:?}",
            series.location_id,
            series.season_year,
            series.len()
        ));
    }
    println!("location,season_year,days,ahu");
    for row in rows {
        println!("{row}");
    }
    Ok(())
}

pub fn prep(args: &PrepArgs) -> CliResult<()> {
    let rule = if args.no_outlier {
        None
    } else {
        if !(args.outlier_k > 0.0 && args.outlier_k.is_finite()) {
            return Err(CliError::usage(format!(
                "InvalidMultiplier: --outlier-k must be positive, got {}",
                args.outlier_k
            )));
        }
        Some(OutlierRule {
            field: args.outlier_field,
            k: args.outlier_k,
        })
    };
    let mut manifest = ManifestBuilder::new("prep", args)?;
    let records = load_records(&args.records, &mut manifest)?;
    let prepared = prepare(&records, rule).data_at(&args.records.input)?;

    let mut out = create(&args.out)?;
    write_records_csv(&mut out, &prepared.records).write_at(&args.out)?;
    out.flush().write_at(&args.out)?;

    let report_path = sidecar(&args.out, "report.json");
    let enc = &prepared.encoder;
    let report = json!({
        "input_rows": records.len(),
        "output_rows": prepared.records.len(),
        "outlier_rule": rule,
        "removed_rows": prepared.removed_rows,
        "fence_passes": prepared.fences,
        "encoder": {
            "cultivar": enc.cultivar().labels(),
            "soil": enc.soil().labels(),
        },
    });
    write_json(&report_path, &report)?;
    println!(
        "{} rows in, {} rows out, removed {:?}",
        records.len(),
        prepared.records.len(),
        prepared.removed_rows
    );
    manifest.finish(&args.out, vec![args.out.clone(), report_path])?;
    Ok(())
}

pub fn gen_synth(args: &GenSynthArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("gen-synth", args)?;
    let config = match &args.config {
        Some(path) => {
            manifest.input(path)?;
            SynthConfig::load(path).data_at(path)?
        }
        None if args.dense => SynthConfig::shipped_dense(),
        None => SynthConfig::shipped_default(),
    };
    manifest.master_seed = Some(config.seed);
    let mut out = create(&args.out)?;
    let rows = generate_csv(&config, &mut out).data_at(&args.out)?;
    out.flush().write_at(&args.out)?;
    println!("{rows} rows written to {}", args.out.display());
    manifest.finish(&args.out, vec![args.out.clone()])?;
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let split = SplitSpec {
        seed: args.seed,
        test_frac: args.test_frac,
        valid_frac: args.valid_frac,
    };
    split.validate().map_err(CliError::usage)?;
    let config = ForestConfig {
        n_estimators: args.n_estimators,
        max_depth: args.max_depth,
        min_samples_leaf: args.min_samples_leaf,
        min_samples_split: args.min_samples_split,
        max_features: args.max_features,
        bootstrap_size: args.bootstrap_size,
        master_seed: args.seed,
    };
    config.validate().map_err(CliError::usage)?;
    if args.threads == Some(0) {
        return Err(CliError::usage(
            "InvalidConfig: --threads must be at least 1",
        ));
    }
    let options = FitOptions {
        clamp_mode: !args.unclamped,
        threads: args.threads,
    };

    let mut manifest = ManifestBuilder::new("train", args)?;
    manifest.master_seed = Some(args.seed);
    manifest.clamp_mode = Some(options.clamp_mode);
    manifest.input(&args.input)?;
    let records = load_records_csv(&args.input).data_at(&args.input)?;
    let trained = train(&records, &split, &config, &options).data_at(&args.input)?;

    save_model(&trained.model, &args.model_out).write_at(&args.model_out)?;
    let metrics_path = sidecar(&args.model_out, "metrics.json");
    let summary = json!({
        "split": {
            "params": split,
            "train_rows": trained.split.train.len(),
            "valid_rows": trained.split.valid.len(),
            "test_rows": trained.split.test.len(),
        },
        "config": config,
        "clamp_mode": options.clamp_mode,
        "train_target_range": trained.model.train_target_range(),
        "valid": trained.valid_metrics,
    });
    write_json(&metrics_path, &summary)?;
    let mut outputs = vec![args.model_out.clone(), metrics_path];
    if let Some(path) = &args.test_out {
        let mut out = create(path)?;
        write_records_csv(&mut out, trained.test_set().records()).write_at(path)?;
        out.flush().write_at(path)?;
        outputs.push(path.clone());
    }
    println!(
        "{} trees; rows train {} valid {} test {}",
        trained.model.trees().len(),
        trained.split.train.len(),
        trained.split.valid.len(),
        trained.split.test.len()
    );
    match &trained.valid_metrics {
        Some(m) => println!("valid: {}", format_metrics(m)),
        None => println!("valid: empty split, no metrics"),
    }
    manifest.finish(&args.model_out, outputs)?;
    Ok(())
}

fn format_metrics(m: &MetricsReport) -> String {
    let r2 =
        m.r2.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.4}"));
    format!(
        "n {} rmse {:.2} r2 {r2} accuracy_pct {:.2}",
        m.n, m.rmse, m.accuracy_pct
    )
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("evaluate", args)?;
    let model = load_model_at(&args.model, &mut manifest)?;
    let records = load_records(&args.records, &mut manifest)?;
    let input = &args.records.input;
    let dataset = model.encode_records(&records).data_at(input)?;
    let ev = evaluate(&model, &dataset).data_at(input)?;

    let mut out = create(&args.report_out)?;
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "row_id,actual_kg_ha,predicted_kg_ha")?;
        for (i, (a, p)) in ev.actual.iter().zip(&ev.predicted).enumerate() {
            writeln!(out, "{i},{a},{p}")?;
        }
        out.flush()
    };
    write(&mut out).write_at(&args.report_out)?;
    let metrics_path = sidecar(&args.report_out, "metrics.json");
    let summary = json!({
        "metrics": ev.report,
        "model_config": model.config(),
        "clamp_mode": model.clamp_mode(),
        "train_target_range": model.train_target_range(),
    });
    write_json(&metrics_path, &summary)?;
    println!("{}", format_metrics(&ev.report));
    manifest.finish(
        &args.report_out,
        vec![args.report_out.clone(), metrics_path],
    )?;
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("predict", args)?;
    let model = load_model_at(&args.model, &mut manifest)?;
    let mut records = load_records(&args.records, &mut manifest)?;
    // Labels play no part in prediction.
    for r in &mut records {
        r.yield_kg_ha = None;
    }
    let preds = model
        .predict_records(&records)
        .data_at(&args.records.input)?;

    let mut out = create(&args.out)?;
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "row_id,predicted_kg_ha")?;
        for (i, p) in preds.iter().enumerate() {
            writeln!(out, "{i},{p}")?;
        }
        out.flush()
    };
    write(&mut out).write_at(&args.out)?;
    println!(
        "{} predictions written to {}",
        preds.len(),
        args.out.display()
    );
    manifest.finish(&args.out, vec![args.out.clone()])?;
    Ok(())
}
