use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use serde_json::{json, Map, Value};

use twinscope_core::data::{
    ilpd_like, impute, load_any, parse_ilpd, prepare, save_canonical, synth_generate, to_ilpd_csv, Dataset,
    LabelPolarity, ThresholdRule,
};
use twinscope_core::explain::{explain_instance, pdp};
use twinscope_core::features::{Feature, PatientFeatures, NUM_FEATURES};
use twinscope_core::learners::{
    curve_to_csv, evaluate_model, learning_curve, train_forest, train_logistic, ModelFile, RiskModel,
};
use twinscope_core::reconcile::{propose_revisions, revision_report};
use twinscope_core::rules::{parse_table, DecisionTable, DEFAULT_LIVER_TABLE};
use twinscope_service::{AppState, ServiceConfig};

use crate::config::{sidecar_path, ModelType, RunConfig};
use crate::output;
use crate::{
    Cli, Command, CommonArgs, CurveArgs, ExplainArgs, ForestArgs, GenDataArgs, GenKind, Layout, PdpArgs,
    ReconcileArgs, RulesCommand, ServeArgs, TrainArgs,
};

/// Bad arguments detected after parsing; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli, plain: bool) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::FetchData { url, out } => fetch_data(&url, &out),
        Command::GenData(a) => gen_data(&a, &cfg),
        Command::Train(a) => train(&a, &mut cfg),
        Command::Curve(a) => curve(&a, &mut cfg),
        Command::Explain(a) => explain(&a, &mut cfg, plain),
        Command::Pdp(a) => run_pdp(&a, &mut cfg),
        Command::Rules { command } => rules(&command, plain),
        Command::Reconcile(a) => reconcile(&a, &mut cfg),
        Command::Serve(a) => serve(&a, &mut cfg),
    }
}

fn apply_common(cfg: &mut RunConfig, common: &CommonArgs) -> Result<()> {
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(p) = &common.polarity {
        cfg.polarity = p.parse::<LabelPolarity>().map_err(usage)?;
    }
    Ok(())
}

fn apply_forest(cfg: &mut RunConfig, a: &ForestArgs) {
    if let Some(v) = a.n_trees {
        cfg.forest.n_trees = v;
    }
    if let Some(v) = a.max_depth {
        cfg.forest.max_depth = v;
    }
    if let Some(v) = a.min_samples_leaf {
        cfg.forest.min_samples_leaf = v;
    }
    if let Some(v) = a.features_per_split {
        cfg.forest.features_per_split = v;
    }
    if let Some(v) = a.train_fraction {
        cfg.split.train_fraction = v;
    }
}

/// Prints the effective configuration to stderr and writes it next to each
/// artifact.
fn echo_config(command: &str, inputs: Value, cfg: &Value, artifacts: &[&Path]) -> Result<()> {
    let doc = json!({"command": command, "inputs": inputs, "config": cfg});
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    eprint!("effective config:\n{text}");
    for a in artifacts {
        let p = sidecar_path(a);
        fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_data(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    load_any(path, cfg.polarity).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ModelFile::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

fn fetch_data(url: &str, out: &Path) -> Result<()> {
    eprintln!("fetching {url}");
    let mut resp = ureq::get(url).call().with_context(|| format!("downloading {url}"))?;
    let text = resp.body_mut().read_to_string().context("reading response body")?;
    let ds = parse_ilpd(&text, LabelPolarity::Standard).context("downloaded file is not in the ILPD layout")?;
    if ds.len() != 583 {
        log::warn!("expected 583 records, got {}", ds.len());
    }
    write(out, &text)?;
    println!(
        "wrote {} ({} records, {} positive, {} missing ag_ratio)",
        out.display(),
        ds.len(),
        ds.positives(),
        ds.missing_count(Feature::AgRatio)
    );
    Ok(())
}

fn gen_data(a: &GenDataArgs, cfg: &RunConfig) -> Result<()> {
    let seed = a.seed.unwrap_or(cfg.seed);
    let layout = a.layout.unwrap_or(match a.kind {
        GenKind::IlpdLike => Layout::Ilpd,
        GenKind::Threshold => Layout::Canonical,
    });
    let records = match a.kind {
        GenKind::IlpdLike => ilpd_like(seed),
        GenKind::Threshold => {
            let rule: ThresholdRule = a.rule.parse().map_err(|e| usage(format!("{e}")))?;
            synth_generate(a.n, rule, a.noise, seed)?.records().to_vec()
        }
    };
    match layout {
        Layout::Ilpd => write(&a.out, &to_ilpd_csv(&records))?,
        Layout::Canonical => {
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            save_canonical(&Dataset::new(records.clone())?, &a.out)?
        }
    }
    let inputs = match a.kind {
        GenKind::IlpdLike => json!({"kind": "ilpd-like", "layout": format!("{layout:?}").to_lowercase()}),
        GenKind::Threshold => json!({
            "kind": "threshold", "n": a.n, "rule": a.rule, "noise": a.noise,
            "layout": format!("{layout:?}").to_lowercase()
        }),
    };
    echo_config("gen-data", inputs, &json!({"seed": seed}), &[&a.out])?;
    println!("seed {seed}: wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, cfg: &mut RunConfig) -> Result<()> {
    apply_common(cfg, &a.common)?;
    apply_forest(cfg, &a.forest);
    if let Some(m) = a.model_type {
        cfg.model_type = m;
    }
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    let ds = load_data(&a.data, cfg)?;
    let started = std::time::Instant::now();
    let (train, test) = prepare(&ds, &cfg.split)?;
    let model = match cfg.model_type {
        ModelType::Forest => RiskModel::Forest(train_forest(&train, &cfg.forest)?),
        ModelType::Logistic => RiskModel::Logistic(train_logistic(&train, &cfg.logistic)?),
    };
    let report = evaluate_model(&model, &test, cfg.threshold);
    let elapsed = started.elapsed();
    let file = ModelFile::new(model, train.stats().clone());
    write(&a.out, &file.to_json())?;
    let report_json = serde_json::to_string_pretty(&report)? + "\n";
    let mut artifacts = vec![a.out.as_path()];
    if let Some(p) = &a.report {
        write(p, &report_json)?;
        artifacts.push(p.as_path());
    }
    echo_config("train", json!({"data": a.data}), &serde_json::to_value(&*cfg)?, &artifacts)?;
    println!(
        "seed {}: {} model, train {} / validation {} records",
        cfg.seed,
        file.model.kind(),
        train.len(),
        test.len()
    );
    println!(
        "accuracy {:.4}  auc {:.4}  (tp {} fp {} tn {} fn {})",
        report.accuracy, report.auc, report.confusion.tp, report.confusion.fp, report.confusion.tn, report.confusion.fn_
    );
    eprintln!("trained and evaluated in {:.2?}", elapsed);
    println!("model written to {}", a.out.display());
    Ok(())
}

fn curve(a: &CurveArgs, cfg: &mut RunConfig) -> Result<()> {
    apply_common(cfg, &a.common)?;
    apply_forest(cfg, &a.forest);
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    let ds = load_data(&a.data, cfg)?;
    let points = learning_curve(&ds, &cfg.split, &cfg.forest, &a.fractions)?;
    write(&a.out, &curve_to_csv(&points))?;
    echo_config(
        "curve",
        json!({"data": a.data, "fractions": a.fractions}),
        &serde_json::to_value(&*cfg)?,
        &[&a.out],
    )?;
    print!("seed {}\n{}", cfg.seed, curve_to_csv(&points));
    Ok(())
}

/// Reads a `{feature: number}` JSON object. A missing `ag_ratio` is filled
/// with `fill_ag`; every other feature is required.
pub fn features_from_json(text: &str, fill_ag: Option<f64>) -> Result<PatientFeatures> {
    let v: Value = serde_json::from_str(text).map_err(|e| usage(format!("--features is not JSON: {e}")))?;
    let obj: &Map<String, Value> = v.as_object().ok_or_else(|| usage("--features must be a JSON object"))?;
    let mut dense = [f64::NAN; NUM_FEATURES];
    for (k, val) in obj {
        let f: Feature = k.parse().map_err(|e| usage(format!("{e}")))?;
        let x = val.as_f64().ok_or_else(|| usage(format!("{k} must be a number")))?;
        PatientFeatures::check_value(f, x).map_err(|e| usage(e.to_string()))?;
        dense[f.index()] = x;
    }
    if dense[Feature::AgRatio.index()].is_nan() {
        if let Some(ag) = fill_ag {
            dense[Feature::AgRatio.index()] = ag;
        }
    }
    if let Some(f) = Feature::ALL.iter().find(|f| dense[f.index()].is_nan()) {
        return Err(usage(format!("--features is missing {f}")));
    }
    Ok(PatientFeatures::from_vector(&dense))
}

fn explain(a: &ExplainArgs, cfg: &mut RunConfig, plain: bool) -> Result<()> {
    apply_common(cfg, &a.common)?;
    if let Some(n) = a.samples {
        cfg.surrogate.n_samples = n;
    }
    if a.kernel_width.is_some() {
        cfg.surrogate.kernel_width = a.kernel_width;
    }
    if a.discretize {
        cfg.surrogate.discretize = true;
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    let model = load_model(&a.model)?;
    let median_ag = model.training_stats.get(Feature::AgRatio).median;
    let instance = match (&a.features, &a.data, a.row) {
        (Some(text), _, _) => features_from_json(text, Some(median_ag))?,
        (None, Some(path), Some(row)) => {
            let ds = load_data(path, cfg)?;
            let mut p = ds
                .records()
                .get(row)
                .ok_or_else(|| usage(format!("row {row} is out of range ({} records)", ds.len())))?
                .features;
            if p.ag_ratio.is_none() {
                p.ag_ratio = Some(median_ag);
            }
            p
        }
        _ => return Err(usage("give --features or --data with --row")),
    };
    let e = explain_instance(&model.model, &instance, &model.training_stats, &cfg.surrogate)?;
    let mut artifacts: Vec<&Path> = Vec::new();
    if let Some(p) = &a.csv {
        write(p, &output::explanation_csv(&e))?;
        artifacts.push(p);
    }
    if let Some(p) = &a.json {
        write(p, &(serde_json::to_string_pretty(&e)? + "\n"))?;
        artifacts.push(p);
    }
    echo_config(
        "explain",
        json!({"model": a.model, "data": a.data, "row": a.row, "features": instance}),
        &serde_json::to_value(&*cfg)?,
        &artifacts,
    )?;
    println!("seed {}", cfg.surrogate.seed);
    print!("{}", output::explanation_table(&e, plain));
    Ok(())
}

fn run_pdp(a: &PdpArgs, cfg: &mut RunConfig) -> Result<()> {
    apply_common(cfg, &a.common)?;
    if let Some(g) = a.grid_size {
        cfg.reconcile.grid_size = g;
    }
    let feature: Feature = a.feature.parse().map_err(|e| usage(format!("{e}")))?;
    let model = load_model(&a.model)?;
    let ds = impute(&load_data(&a.data, cfg)?);
    let curve = pdp(&model.model, &ds, feature, cfg.reconcile.grid_size, cfg.reconcile.clip)?;
    let csv = curve.to_csv();
    match &a.out {
        Some(p) => {
            write(p, &csv)?;
            echo_config(
                "pdp",
                json!({"model": a.model, "data": a.data, "feature": feature}),
                &serde_json::to_value(&*cfg)?,
                &[p],
            )?;
            println!("{feature}: range effect {:.4} over {} grid points", curve.range_effect, curve.grid.len());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn load_table(path: &Path) -> Result<DecisionTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_table(&text).with_context(|| format!("in {}", path.display()))
}

fn rules(cmd: &RulesCommand, plain: bool) -> Result<()> {
    match cmd {
        RulesCommand::Check { file } => {
            let t = load_table(file)?;
            eprintln!(
                "{}: table `{}` is valid ({} rows, hit policy {})",
                file.display(),
                t.name,
                t.rows.len(),
                t.hit_policy.as_str()
            );
            print!("{t}");
        }
        RulesCommand::Eval { file, features, json } => {
            let t = load_table(file)?;
            let p = features_from_json(features, None).or_else(|_| {
                // tables only need their own inputs
                let v: Value = serde_json::from_str(features).map_err(|e| usage(format!("--features: {e}")))?;
                sparse_features(&t, &v)
            })?;
            let d = t.evaluate(&p)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&d)?);
            } else {
                print!("{}", output::decision_trace(&t, &d, plain));
            }
        }
    }
    Ok(())
}

/// Builds a record holding only the table's inputs; other fields are zero
/// and never read by evaluation.
fn sparse_features(t: &DecisionTable, v: &Value) -> Result<PatientFeatures> {
    let obj = v.as_object().ok_or_else(|| usage("--features must be a JSON object"))?;
    let mut p = PatientFeatures::from_vector(&[0.0; NUM_FEATURES]);
    for &f in &t.inputs {
        let x = obj
            .get(f.name())
            .and_then(Value::as_f64)
            .ok_or_else(|| usage(format!("--features needs a number for {f}")))?;
        PatientFeatures::check_value(f, x).map_err(|e| usage(e.to_string()))?;
        p.set(f, x);
    }
    Ok(p)
}

fn reconcile(a: &ReconcileArgs, cfg: &mut RunConfig) -> Result<()> {
    apply_common(cfg, &a.common)?;
    if let Some(s) = a.min_relative_shift {
        cfg.reconcile.min_relative_shift = s;
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    let model = load_model(&a.model)?;
    let ds = impute(&load_data(&a.data, cfg)?);
    let table = match &a.rules {
        Some(p) => load_table(p)?,
        None => parse_table(DEFAULT_LIVER_TABLE)?,
    };
    let revisions = propose_revisions(&table, &model.model, &ds, &cfg.reconcile)?;
    let report = revision_report(&revisions);
    let mut artifacts: Vec<&Path> = Vec::new();
    if let Some(p) = &a.out {
        write(p, &report)?;
        artifacts.push(p);
    }
    if let Some(p) = &a.json {
        write(p, &(serde_json::to_string_pretty(&revisions)? + "\n"))?;
        artifacts.push(p);
    }
    echo_config(
        "reconcile",
        json!({"model": a.model, "data": a.data, "rules": a.rules}),
        &serde_json::to_value(&*cfg)?,
        &artifacts,
    )?;
    println!("seed {}: {} revision(s) proposed for table `{}`", cfg.seed, revisions.len(), table.name);
    print!("{report}");
    Ok(())
}

fn serve(a: &ServeArgs, cfg: &mut RunConfig) -> Result<()> {
    apply_common(cfg, &a.common)?;
    let s = &mut cfg.serve;
    if let Some(h) = &a.host {
        s.host = h.clone();
    }
    if let Some(p) = a.port {
        s.port = p;
    }
    if a.model.is_some() {
        s.model = a.model.clone();
    }
    if a.rules.is_some() {
        s.rules = a.rules.clone();
    }
    if let Some(d) = &a.data_dir {
        s.data_dir = d.clone();
    }
    if a.background.is_some() {
        s.background = a.background.clone();
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    let addr: SocketAddr = format!("{}:{}", cfg.serve.host, cfg.serve.port)
        .parse()
        .map_err(|e| usage(format!("bad --host/--port: {e}")))?;
    let service_cfg = ServiceConfig {
        model_path: cfg.serve.model.clone(),
        rules_path: cfg.serve.rules.clone(),
        data_dir: cfg.serve.data_dir.clone(),
        background: cfg.serve.background.clone(),
        token: std::env::var("TWINSCOPE_TOKEN").ok().filter(|t| !t.is_empty()),
        surrogate: cfg.surrogate,
        reconcile: cfg.reconcile,
    };
    echo_config("serve", json!({}), &serde_json::to_value(&*cfg)?, &[])?;
    let state = Arc::new(AppState::load(&service_cfg)?);
    log::info!(
        "model {} rules {} ({} twins, {} pending revisions)",
        state.model_version().unwrap_or("none"),
        state.rules().version,
        state.twins.read().len(),
        state.revisions.lock().pending.len()
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(twinscope_service::serve(state, addr, twinscope_service::shutdown_signal()))
        .map_err(|e| anyhow!("serving on {addr}: {e}"))
}
