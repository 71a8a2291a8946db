use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::config::{Format, RunConfig};
use super::output::{input_record, InputRecord, OutputDir};
use super::{AblateCmd, CliError, DataArgs, EvalCmd, ForecastCmd, SplitChoice, StatsCmd, SynthCmd, TieChoice, TrainCmd};
use crate::checkpoint::Checkpoint;
use crate::data::{
    context_cases, decode_case, fit_apply_scaling, fit_forecast_scaler, forecast_cases, generate_synth, load_csv, load_uea,
    load_uea_pair, scale_cases, write_csv, CsvSchema, ForecastCase, ForecastSettings, Sample, ScaleKind, Scaler, SeriesDataset,
    Split, SynthSpec, Target, Task,
};
use crate::metrics::{self, ResultsMatrix, TieRule};
use crate::model::{HeadKind, PhmmModel, Prediction, SequenceModel};
use crate::train::{self, TrainLog, TrainOptions};

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

fn to_json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("outputs serialize") + "\n"
}

fn config_json(v: &impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn resolve_format(explicit: Option<Format>, path: &Path) -> Result<Format> {
    if let Some(f) = explicit {
        return Ok(f);
    }
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ts") => Ok(Format::Uea),
        Some("csv") => Ok(Format::Csv),
        _ => usage(format!("cannot infer the format of {}; pass --format uea|csv", path.display())),
    }
}

/// Every header column not claimed by the id, time, label or split role.
fn infer_value_cols(path: &Path, schema: &CsvSchema) -> Result<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let reserved = [
        Some(schema.id_col.as_str()),
        schema.time_col.as_deref(),
        schema.label_col.as_deref(),
        schema.split_col.as_deref(),
    ];
    Ok(headers
        .iter()
        .filter(|h| !reserved.contains(&Some(*h)))
        .map(str::to_string)
        .collect())
}

/// Re-index class ids to `names`, the order a checkpoint was trained with.
fn align_classes(ds: &mut SeriesDataset, names: &[String]) -> Result<()> {
    let Task::Classification { class_names } = &ds.task else {
        return Ok(());
    };
    if class_names == names {
        return Ok(());
    }
    let map: Vec<usize> = class_names
        .iter()
        .map(|n| {
            names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| CliError::Usage(format!("label {n:?} is not one of the model's classes {names:?}")))
        })
        .collect::<Result<_>>()?;
    for s in &mut ds.samples {
        if let Some(Target::Class(c)) = &mut s.target {
            *c = map[*c];
        }
    }
    ds.task = Task::Classification {
        class_names: names.to_vec(),
    };
    Ok(())
}

/// Load the dataset named by `args`. A separate test file becomes the test
/// split and everything in the main file the train split.
fn load_dataset(args: &DataArgs, rc_csv: &CsvSchema, format: Option<Format>, task: &Task) -> Result<(SeriesDataset, Vec<InputRecord>)> {
    let mut inputs = vec![input_record(&args.data)?];
    if let Some(t) = &args.test_data {
        inputs.push(input_record(t)?);
    }
    let fmt = resolve_format(format, &args.data)?;
    let ds = match fmt {
        Format::Uea => {
            if matches!(task, Task::Forecast { .. }) {
                return usage(".ts files hold classification data; use csv for forecasting");
            }
            let mut ds = match &args.test_data {
                Some(t) => load_uea_pair(&args.data, t)?,
                None => load_uea(&args.data)?,
            };
            if let Task::Classification { class_names } = task {
                if !class_names.is_empty() {
                    align_classes(&mut ds, class_names)?;
                }
            }
            ds
        }
        Format::Csv => {
            let mut schema = rc_csv.clone();
            if schema.value_cols.is_empty() {
                schema.value_cols = infer_value_cols(&args.data, &schema)?;
            }
            let mut ds = load_csv(&args.data, &schema, task)?;
            if let Some(t) = &args.test_data {
                let test_task = ds.task.clone();
                let test = load_csv(t, &schema, &test_task)?;
                ds.samples.iter_mut().for_each(|s| s.split = Split::Train);
                ds.samples.extend(test.samples.into_iter().map(|mut s| {
                    s.split = Split::Test;
                    s
                }));
                ds.pad_to_max();
            }
            ds
        }
    };
    ds.validate()?;
    Ok((ds, inputs))
}

fn select(ds: &SeriesDataset, split: SplitChoice) -> Result<Vec<Sample>> {
    let picked: Vec<Sample> = match split {
        SplitChoice::Train => ds.split_owned(Split::Train),
        SplitChoice::Test => ds.split_owned(Split::Test),
        SplitChoice::All => ds.samples.clone(),
    };
    if picked.is_empty() {
        return usage(format!("the {split:?} split of {} is empty", ds.name).to_lowercase());
    }
    Ok(picked)
}

fn identity_scaler(dim: usize) -> Scaler {
    Scaler {
        kind: ScaleKind::ZScore,
        offset: vec![0.0; dim],
        scale: vec![1.0; dim],
    }
}

fn predict_all<M: SequenceModel>(model: &M, samples: &[Sample]) -> Result<Vec<Prediction>> {
    let preds: Vec<std::result::Result<Prediction, _>> = samples
        .par_iter()
        .map(|s| model.infer(&s.tensors(), s.mask_opt()))
        .collect();
    preds.into_iter().map(|p| p.map_err(CliError::from)).collect()
}

/// A trained model with everything needed to checkpoint it.
struct Fitted {
    model: PhmmModel,
    log: TrainLog,
    task: Task,
    scaler: Option<Scaler>,
    forecast: Option<ForecastSettings>,
}

/// Train on the train split of `ds` as `rc` describes.
fn fit(ds: &SeriesDataset, rc: &RunConfig, timing: bool) -> Result<Fitted> {
    let opts = TrainOptions { timing };
    match rc.forecast {
        None => {
            let (ds, scaler) = match rc.data.scale.kind() {
                Some(k) => {
                    let ds = fit_apply_scaling(ds.clone(), k)?;
                    let sc = ds.scaler.clone();
                    (ds, sc)
                }
                None => (ds.clone(), None),
            };
            let num_classes = ds.num_classes().unwrap_or(0);
            if num_classes < 2 {
                return usage(format!("classification needs at least 2 classes, found {num_classes}"));
            }
            let train_set = ds.split_owned(Split::Train);
            if train_set.is_empty() {
                return usage("the train split is empty");
            }
            let cfg = rc.model.model_config(ds.dim, HeadKind::Classifier { num_classes });
            let mut model = PhmmModel::new(cfg, rc.train.seed)?;
            let log = train::train(&mut model, &train_set, None, &rc.train, opts)?;
            Ok(Fitted {
                model,
                log,
                task: ds.task.clone(),
                scaler,
                forecast: None,
            })
        }
        Some(fs) => {
            let train_set = ds.split_owned(Split::Train);
            if train_set.is_empty() {
                return usage("the train split is empty");
            }
            let mut cases = forecast_cases(&train_set, fs.horizon, fs.context, fs.input, fs.target)?;
            let scaler = match rc.data.scale.kind() {
                Some(k) => Some(fit_forecast_scaler(&cases, k)?),
                None => None,
            };
            scale_cases(&mut cases, scaler.as_ref().unwrap_or(&identity_scaler(ds.dim)), fs.target);
            let samples: Vec<Sample> = cases.into_iter().map(|c| c.sample).collect();
            let cfg = rc.model.model_config(ds.dim, HeadKind::Predictor {
                output_dim: fs.horizon * ds.dim,
            });
            let mut model = PhmmModel::new(cfg, rc.train.seed)?;
            let log = train::train(&mut model, &samples, None, &rc.train, opts)?;
            Ok(Fitted {
                model,
                log,
                task: Task::Forecast { horizon: fs.horizon },
                scaler,
                forecast: Some(fs),
            })
        }
    }
}

fn data_task(rc: &RunConfig) -> Task {
    match rc.forecast {
        Some(fs) => Task::Forecast { horizon: fs.horizon },
        None => Task::Classification { class_names: Vec::new() },
    }
}

fn elapsed(started: Instant, timing: bool) -> Option<u64> {
    timing.then(|| started.elapsed().as_millis() as u64)
}

pub fn train(cmd: &TrainCmd, rc: RunConfig, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let mut out = OutputDir::new(&cmd.out.out, cmd.out.overwrite)?;
    let (ds, inputs) = load_dataset(&cmd.data, &rc.data.csv, rc.data.format, &data_task(&rc))?;
    let fitted = fit(&ds, &rc, cmd.out.timing)?;
    let ck = Checkpoint::from_model(&fitted.model, rc.train.seed, fitted.task, fitted.scaler, fitted.forecast);
    let last = fitted.log.records.last().expect("the log holds the epoch-0 record");
    let summary = format!(
        "trained {} epochs: elbo {:.4}, train {} {:.4}",
        rc.train.epochs, last.elbo, fitted.log.metric, last.train_metric
    );
    out.add("checkpoint.json", ck.to_json());
    out.add("train_log.jsonl", fitted.log.to_jsonl());
    let dir = out.commit("train", argv, &config_json(&rc), &inputs, elapsed(started, cmd.out.timing))?;
    Ok(format!("{summary} -> {}", dir.display()))
}

struct ForecastScore {
    rmse: f64,
    persistence_rmse: f64,
    ratio: Option<f64>,
    rows: Vec<(String, usize, usize, f64, f64, f64)>,
}

fn score_forecasts(model: &PhmmModel, cases: &[ForecastCase], scaler: &Scaler, fs: &ForecastSettings) -> Result<ForecastScore> {
    let samples: Vec<Sample> = cases.iter().map(|c| c.sample.clone()).collect();
    let preds = predict_all(model, &samples)?;
    let (mut pred, mut truth, mut persist) = (Vec::new(), Vec::new(), Vec::new());
    let mut rows = Vec::new();
    let ctx = |c: &ForecastCase| c.sample.len();
    for (c, p) in cases.iter().zip(preds) {
        let Prediction::Values(v) = p else {
            return usage("the checkpoint is a classifier; forecasting needs a predictor");
        };
        let dec = decode_case(c, &v, scaler, fs.target);
        for (h, (row, t)) in dec.iter().zip(&c.truth).enumerate() {
            for (d, (a, b)) in row.iter().zip(t).enumerate() {
                pred.push(*a);
                truth.push(*b);
                persist.push(c.last[d]);
                rows.push((c.sample.id.clone(), ctx(c) + h, d, *b, *a, c.last[d]));
            }
        }
    }
    let rmse = metrics::rmse(&pred, &truth)?;
    let persistence_rmse = metrics::rmse(&persist, &truth)?;
    Ok(ForecastScore {
        rmse,
        persistence_rmse,
        ratio: metrics::ratio(rmse, persistence_rmse).ok(),
        rows,
    })
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, PhmmModel, InputRecord)> {
    let rec = input_record(path)?;
    let ck = Checkpoint::load(path)?;
    let model = ck.to_model()?;
    Ok((ck, model, rec))
}

fn check_dim(ds: &SeriesDataset, ck: &Checkpoint) -> Result<()> {
    if ds.dim != ck.config.input_dim {
        return usage(format!(
            "dimension mismatch: the data has {} channels, the checkpoint expects {}",
            ds.dim, ck.config.input_dim
        ));
    }
    Ok(())
}

fn data_settings(args: &DataArgs) -> CsvSchema {
    let d = CsvSchema::default();
    CsvSchema {
        id_col: args.id_col.clone().unwrap_or(d.id_col),
        time_col: match args.time_col.as_deref() {
            Some("") => None,
            Some(t) => Some(t.to_string()),
            None => d.time_col,
        },
        value_cols: args.value_cols.clone().unwrap_or_default(),
        label_col: args.label_col.clone().or(d.label_col),
        split_col: args.split_col.clone().or(d.split_col),
    }
}

pub fn eval(cmd: &EvalCmd, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let mut out = OutputDir::new(&cmd.out.out, cmd.out.overwrite)?;
    let (ck, model, ck_rec) = load_checkpoint(&cmd.checkpoint)?;
    let schema = data_settings(&cmd.data);
    let (ds, mut inputs) = load_dataset(&cmd.data, &schema, cmd.data.format, &ck.task)?;
    inputs.insert(0, ck_rec);
    check_dim(&ds, &ck)?;
    let picked = select(&ds, cmd.split)?;
    let split = format!("{:?}", cmd.split).to_lowercase();

    let (report, summary) = match &ck.task {
        Task::Classification { class_names } => {
            let mut samples = picked;
            if let Some(sc) = &ck.scaler {
                for s in &mut samples {
                    s.values.iter_mut().for_each(|v| *v = sc.apply(v));
                }
            }
            let preds = predict_all(&model, &samples)?;
            let mut csv = String::from("id,label,predicted");
            for n in class_names {
                csv.push_str(&format!(",p_{n}"));
            }
            csv.push('\n');
            let (mut hat, mut truth) = (Vec::new(), Vec::new());
            for (s, p) in samples.iter().zip(&preds) {
                let Prediction::Class { label, probs } = p else {
                    return usage("the checkpoint is a predictor; classification needs a classifier");
                };
                let c = s
                    .class()
                    .ok_or_else(|| CliError::Usage(format!("series {} has no label", s.id)))?;
                hat.push(*label);
                truth.push(c);
                csv.push_str(&format!("{},{},{}", s.id, class_names[c], class_names[*label]));
                for q in probs {
                    csv.push_str(&format!(",{q}"));
                }
                csv.push('\n');
            }
            out.add("predictions.csv", csv);
            let acc = metrics::accuracy(&hat, &truth)?;
            let mpce = metrics::mpce(&[1.0 - acc], &[class_names.len()])?;
            let report = json!({
                "task": "classification",
                "split": split,
                "n": samples.len(),
                "num_classes": class_names.len(),
                "accuracy": acc,
                "error_rate": 1.0 - acc,
                "mpce": mpce,
            });
            (report, format!("accuracy {acc:.4} on {} series", samples.len()))
        }
        Task::Forecast { .. } => {
            let fs = ck
                .forecast
                .ok_or_else(|| CliError::Usage("the checkpoint carries no forecast settings".into()))?;
            let mut cases = forecast_cases(&picked, fs.horizon, fs.context, fs.input, fs.target)?;
            let scaler = ck.scaler.clone().unwrap_or_else(|| identity_scaler(ds.dim));
            scale_cases(&mut cases, &scaler, fs.target);
            let score = score_forecasts(&model, &cases, &scaler, &fs)?;
            let mut csv = String::from("id,time,dim,truth,forecast,persistence\n");
            for (id, t, d, y, f, p) in &score.rows {
                csv.push_str(&format!("{id},{t},{d},{y},{f},{p}\n"));
            }
            out.add("predictions.csv", csv);
            let report = json!({
                "task": "forecast",
                "split": split,
                "n": cases.len(),
                "horizon": fs.horizon,
                "rmse": score.rmse,
                "persistence_rmse": score.persistence_rmse,
                "ratio": score.ratio,
            });
            let ratio = score.ratio.map_or("N/A".to_string(), |r| format!("{r:.4}"));
            (report, format!("rmse {:.4}, ratio to persistence {ratio} on {} series", score.rmse, cases.len()))
        }
    };
    out.add("metrics.json", to_json(&report));
    let cfg = json!({ "checkpoint": cmd.checkpoint.display().to_string(), "split": split, "csv": schema });
    let dir = out.commit("eval", argv, &cfg, &inputs, elapsed(started, cmd.out.timing))?;
    Ok(format!("{summary} -> {}", dir.display()))
}

pub fn forecast(cmd: &ForecastCmd, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let mut out = OutputDir::new(&cmd.out.out, cmd.out.overwrite)?;
    let (ck, model, ck_rec) = load_checkpoint(&cmd.checkpoint)?;
    let Some(fs) = ck.forecast else {
        return usage("forecasting needs a predictor checkpoint trained with --horizon");
    };
    let schema = data_settings(&cmd.data);
    let (ds, mut inputs) = load_dataset(&cmd.data, &schema, cmd.data.format, &ck.task)?;
    inputs.insert(0, ck_rec);
    check_dim(&ds, &ck)?;
    let picked = select(&ds, cmd.split)?;
    let context = cmd.context.or(fs.context);
    let mut cases = context_cases(&picked, context, fs.input)?;
    let scaler = ck.scaler.clone().unwrap_or_else(|| identity_scaler(ds.dim));
    scale_cases(&mut cases, &scaler, fs.target);
    let samples: Vec<Sample> = cases.iter().map(|c| c.sample.clone()).collect();
    let preds = predict_all(&model, &samples)?;
    let mut csv = String::from("id,time");
    for d in 0..ds.dim {
        csv.push_str(&format!(",v{d}"));
    }
    csv.push('\n');
    for (c, p) in cases.iter().zip(preds) {
        let Prediction::Values(v) = p else {
            return usage("the checkpoint is a classifier; forecasting needs a predictor");
        };
        for (h, row) in decode_case(c, &v, &scaler, fs.target).iter().enumerate() {
            csv.push_str(&format!("{},{}", c.sample.id, c.sample.len() + h));
            for x in row {
                csv.push_str(&format!(",{x}"));
            }
            csv.push('\n');
        }
    }
    out.add("forecasts.csv", csv);
    let cfg = json!({
        "checkpoint": cmd.checkpoint.display().to_string(),
        "split": format!("{:?}", cmd.split).to_lowercase(),
        "context": context,
        "csv": schema,
    });
    let dir = out.commit("forecast", argv, &cfg, &inputs, elapsed(started, cmd.out.timing))?;
    Ok(format!("forecast {} steps for {} series -> {}", fs.horizon, cases.len(), dir.display()))
}

pub fn ablate(cmd: &AblateCmd, rc: RunConfig, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let mut out = OutputDir::new(&cmd.out.out, cmd.out.overwrite)?;
    if cmd.k_list.is_empty() || cmd.m_list.is_empty() || cmd.k_list.iter().chain(&cmd.m_list).any(|&v| v == 0) {
        return usage("--k-list and --m-list need positive entries");
    }
    let (ds, inputs) = load_dataset(&cmd.data, &rc.data.csv, rc.data.format, &data_task(&rc))?;
    let test = ds.split_owned(Split::Test);
    if test.is_empty() {
        return usage("ablation scores the test split, which is empty");
    }
    let metric = if rc.forecast.is_some() { "ratio" } else { "accuracy" };
    let mut grid = String::from("layers");
    for k in &cmd.k_list {
        grid.push_str(&format!(",k={k}"));
    }
    grid.push('\n');
    let mut cells = String::new();
    for &m in &cmd.m_list {
        grid.push_str(&format!("m={m}"));
        for &k in &cmd.k_list {
            let mut cell = rc.clone();
            cell.model.k = k;
            cell.model.m = m;
            let fitted = fit(&ds, &cell, cmd.out.timing)?;
            let value = score_test(&fitted, &test)?;
            let shown = value.map_or("N/A".to_string(), |v| format!("{v}"));
            grid.push_str(&format!(",{shown}"));
            let last = fitted.log.records.last().expect("the log holds the epoch-0 record");
            cells.push_str(
                &(serde_json::to_string(&json!({ "k": k, "m": m, "metric": metric, "value": value, "final_elbo": last.elbo }))
                    .expect("cells serialize")
                    + "\n"),
            );
        }
        grid.push('\n');
    }
    out.add("grid.csv", grid.clone());
    out.add("cells.jsonl", cells);
    let cfg = json!({ "run": rc, "k_list": cmd.k_list, "m_list": cmd.m_list });
    let dir = out.commit("ablate", argv, &cfg, &inputs, elapsed(started, cmd.out.timing))?;
    Ok(format!("{metric} grid ({} × {}) -> {}\n{}", cmd.m_list.len(), cmd.k_list.len(), dir.display(), grid.trim_end()))
}

/// Test accuracy for a classifier, RMSE ratio to persistence for a predictor.
fn score_test(f: &Fitted, test: &[Sample]) -> Result<Option<f64>> {
    match &f.forecast {
        None => {
            let mut samples = test.to_vec();
            if let Some(sc) = &f.scaler {
                for s in &mut samples {
                    s.values.iter_mut().for_each(|v| *v = sc.apply(v));
                }
            }
            let preds = predict_all(&f.model, &samples)?;
            let mut hat = Vec::with_capacity(preds.len());
            let mut truth = Vec::with_capacity(preds.len());
            for (s, p) in samples.iter().zip(&preds) {
                let (Prediction::Class { label, .. }, Some(c)) = (p, s.class()) else {
                    return usage(format!("series {} has no label", s.id));
                };
                hat.push(*label);
                truth.push(c);
            }
            Ok(Some(metrics::accuracy(&hat, &truth)?))
        }
        Some(fs) => {
            let dim = f.model.config().input_dim;
            let mut cases = forecast_cases(test, fs.horizon, fs.context, fs.input, fs.target)?;
            let scaler = f.scaler.clone().unwrap_or_else(|| identity_scaler(dim));
            scale_cases(&mut cases, &scaler, fs.target);
            Ok(score_forecasts(&f.model, &cases, &scaler, fs)?.ratio)
        }
    }
}

pub fn stats(cmd: &StatsCmd, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let mut out = OutputDir::new(&cmd.out.out, cmd.out.overwrite)?;
    let rec = input_record(&cmd.results)?;
    let text = std::fs::read_to_string(&cmd.results)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", cmd.results.display())))?;
    let grid = ResultsMatrix::from_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", cmd.results.display())))?;
    let reference = match &cmd.reference {
        Some(r) => r.clone(),
        None if grid.method_index("PHMM").is_some() => "PHMM".into(),
        None => grid.methods.last().cloned().unwrap_or_default(),
    };
    let rule = match cmd.tie_rule {
        TieChoice::Dense => TieRule::Dense,
        TieChoice::Average => TieRule::Average,
    };
    let report = metrics::stats_report(&grid, &reference, rule)?;
    let na = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x}"));
    let mut csv = String::from("method,avg_rank,wins_ties,wilcoxon_statistic,wilcoxon_p,wilcoxon_holm_p\n");
    for (j, m) in report.methods.iter().enumerate() {
        let w = report.wilcoxon[j];
        csv.push_str(&format!(
            "{m},{},{},{},{},{}\n",
            report.avg_rank[j],
            report.wins_ties[j],
            na(w.map(|t| t.statistic)),
            na(w.map(|t| t.p_value)),
            na(report.wilcoxon_holm[j])
        ));
    }
    out.add("report.json", to_json(&report));
    out.add("summary.csv", csv);
    let r = grid.method_index(&reference).expect("stats_report checked the reference");
    let summary = format!(
        "{reference}: average rank {:.3}, wins/ties {}, Friedman p {}",
        report.avg_rank[r],
        report.wins_ties[r],
        na(report.friedman.map(|f| f.p_value))
    );
    let cfg = json!({ "reference": reference, "tie_rule": rule });
    let dir = out.commit("stats", argv, &cfg, &[rec], elapsed(started, cmd.out.timing))?;
    Ok(format!("{summary} -> {}", dir.display()))
}

pub fn synth(cmd: &SynthCmd, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let mut out = OutputDir::new(&cmd.out.out, cmd.out.overwrite)?;
    let mut inputs = Vec::new();
    let mut spec = match (&cmd.preset, &cmd.spec) {
        (Some(name), _) => SynthSpec::preset(name, 0)
            .ok_or_else(|| CliError::Usage(format!("unknown preset {name:?} (expected planted|stocklike)")))?,
        (None, Some(path)) => {
            inputs.push(input_record(path)?);
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid spec {}: {e}", path.display())))?
        }
        (None, None) => return usage("pass --preset or --spec"),
    };
    if let Some(seed) = cmd.seed {
        spec.seed = seed;
    }
    let generated = generate_synth(&spec)?;
    let ds = &generated.dataset;
    let mut regimes = String::from("id,time,regime\n");
    for (s, r) in ds.samples.iter().zip(&generated.regimes) {
        for (t, g) in r.iter().enumerate() {
            regimes.push_str(&format!("{},{t},{g}\n", s.id));
        }
    }
    out.add("data.csv", write_csv(ds)?);
    out.add("regimes.csv", regimes);
    out.add("spec.json", to_json(&spec));
    let dir = out.commit("synth", argv, &config_json(&spec), &inputs, elapsed(started, cmd.out.timing))?;
    Ok(format!(
        "{} series of length {} ({} train, {} test) -> {}",
        ds.samples.len(),
        spec.length,
        spec.n_train,
        spec.n_test,
        dir.display()
    ))
}
