use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use triplet_icp::artifact::{file_sha256, load_calibration, load_index, load_model, LoadedModel};
use triplet_icp::dataset::{load_csv, load_csv_with_labels, parse_feature_row, split, CsvSchema, DatasetSplit};
use triplet_icp::evaluation::{
    default_epsilon_grid, evaluate as run_evaluation, render_comparison, EvalOptions, EvalReport,
};
use triplet_icp::icp::{check_epsilon, CalibrationHashes, Decision, InclusionRule, Monitor};
use triplet_icp::index::{EmbeddingIndex, IndexStorage};
use triplet_icp::ncm::NcmKind;
use triplet_icp::neural::MlpModel;
use triplet_icp::training::{self, LossKind, TrainConfig, TrainStatus};
use triplet_icp::Error;

use crate::{CalibrateArgs, CliError, EvaluateArgs, MonitorArgs, ReportArgs, TrainArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("invalid {what} entry {s:?}")))
        })
        .collect()
}

fn parse_ncms(text: &str, k: usize) -> Result<Vec<NcmKind>, CliError> {
    text.split(',')
        .map(|name| NcmKind::parse(name.trim(), k).map_err(|e| usage(e.to_string())))
        .collect()
}

fn rule(strict_gt: bool) -> InclusionRule {
    if strict_gt {
        InclusionRule::StrictlyGreater
    } else {
        InclusionRule::AtLeast
    }
}

fn parse_storage(name: &str) -> Result<IndexStorage, CliError> {
    match name {
        "all" => Ok(IndexStorage::ALL),
        other => NcmKind::parse(other, 1)
            .map(IndexStorage::for_ncm)
            .map_err(|_| usage(format!("unknown index storage {other:?} (all, knn, 1nn, centroid)"))),
    }
}

fn meta<'m>(model: &'m MlpModel, key: &str) -> Result<&'m str, CliError> {
    model
        .metadata
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Artifact(format!("model metadata lacks {key}")).into())
}

fn meta_parse<T: FromStr>(model: &MlpModel, key: &str) -> Result<T, CliError> {
    let raw = meta(model, key)?;
    raw.parse()
        .map_err(|_| Error::Artifact(format!("model metadata {key} = {raw:?} is malformed")).into())
}

/// Recreates the split the model was trained on from its recorded settings.
fn model_split(model: &MlpModel, data: &Path) -> Result<DatasetSplit, CliError> {
    require_file(data, "data file")?;
    let sha = file_sha256(data)?;
    if sha != meta(model, "data.sha256")? {
        return Err(Error::Artifact(format!(
            "data file {} differs from the one the model was trained on",
            data.display()
        ))
        .into());
    }
    let schema = CsvSchema {
        n_features: model.input_dim(),
        has_header: meta_parse(model, "data.header")?,
    };
    let samples = load_csv_with_labels(data, &schema, &model.labels)?;
    let s = split(
        &samples,
        meta_parse(model, "split.test_frac")?,
        meta_parse(model, "split.cal_frac")?,
        meta_parse(model, "split.seed")?,
    )?;
    Ok(if model.normalization.is_some() {
        s.normalize()
    } else {
        s
    })
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    require_file(&a.data, "data file")?;
    let cfg = TrainConfig {
        margin: a.margin,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        anchors_per_iteration: a.anchors_per_iteration,
        batch_size: a.batch_size,
        seed: a.seed,
        loss_kind: if a.baseline {
            LossKind::CrossEntropy
        } else {
            LossKind::Triplet
        },
        hidden: parse_list(&a.hidden, "hidden width")?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    for (name, f) in [("test-frac", a.test_frac), ("cal-frac", a.cal_frac)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(usage(format!("--{name} must be in (0, 1), got {f}")));
        }
    }
    if a.n_features == 0 {
        return Err(usage("--n-features must be positive"));
    }
    let storage = parse_storage(&a.index_storage)?;

    let schema = CsvSchema {
        n_features: a.n_features,
        has_header: a.header,
    };
    let (samples, labels) = load_csv(&a.data, &schema)?;
    let data_sha = file_sha256(&a.data)?;
    let mut data = split(&samples, a.test_frac, a.cal_frac, a.seed)?;
    if !a.no_normalize {
        data = data.normalize();
    }
    println!(
        "split: proper_training {} calibration {} test {}",
        data.proper_training.len(),
        data.calibration.len(),
        data.test.len()
    );

    let outcome = training::train(&data, &cfg)?;
    let mut log_text = String::new();
    for entry in &outcome.log {
        log_text.push_str(&entry.to_string());
        log_text.push('\n');
    }
    print!("{log_text}");
    let status = match outcome.status {
        TrainStatus::Completed => "completed".to_owned(),
        TrainStatus::ConvergedByMining { epoch } => format!("converged_by_mining@{epoch}"),
    };
    println!("status: {status}, skipped anchors: {}", outcome.skipped_anchors);
    if let Some(path) = &a.log {
        fs::write(path, &log_text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }

    let mut model = outcome.model;
    model.labels = labels;
    model.normalization = data.applied_normalization().cloned();
    let extra = [
        ("data.sha256", data_sha),
        ("data.header", a.header.to_string()),
        ("split.seed", a.seed.to_string()),
        ("split.test_frac", a.test_frac.to_string()),
        ("split.cal_frac", a.cal_frac.to_string()),
        ("split.normalize", (!a.no_normalize).to_string()),
        ("train.status", status),
        ("train.skipped_anchors", outcome.skipped_anchors.to_string()),
    ];
    model.metadata.extend(extra.into_iter().map(|(k, v)| (k.to_owned(), v)));
    model.save(&a.model)?;
    let model_sha = file_sha256(&a.model)?;

    let index = EmbeddingIndex::build(&model, &data.proper_training)?.with_storage(storage);
    index.save(&a.index, &model_sha)?;
    println!("model: {}", a.model.display());
    println!("index: {}", a.index.display());
    Ok(())
}

fn load_pair(model: &Path, index: &Path) -> Result<(LoadedModel, triplet_icp::artifact::LoadedIndex), CliError> {
    require_file(model, "model file")?;
    require_file(index, "index file")?;
    let m = load_model(model)?;
    let i = load_index(index, &m)?;
    Ok((m, i))
}

pub fn calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let ncm = NcmKind::parse(&a.ncm, a.k).map_err(|e| usage(e.to_string()))?;
    let (model, index) = load_pair(&a.model, &a.index)?;
    let data = model_split(&model.model, &a.data)?;
    let cal = triplet_icp::icp::calibrate(&model.model, &index.index, ncm, &data.calibration)?;
    cal.save(
        &a.out,
        &CalibrationHashes {
            model_sha256: model.sha256.clone(),
            index_sha256: index.sha256.clone(),
        },
    )?;
    println!("ncm: {ncm}");
    println!("calibration size: {}", cal.len());
    println!("calibration: {}", a.out.display());
    Ok(())
}

pub fn monitor(a: &MonitorArgs) -> Result<(), CliError> {
    check_epsilon(a.epsilon).map_err(|e| usage(e.to_string()))?;
    let expected = a
        .ncm
        .as_deref()
        .map(|n| NcmKind::parse(n, a.k).map_err(|e| usage(e.to_string())))
        .transpose()?;
    require_file(&a.calibration, "calibration file")?;
    let (model, index) = load_pair(&a.model, &a.index)?;
    let cal = load_calibration(&a.calibration, &model, &index)?;
    if let Some(want) = expected {
        if want != cal.ncm() {
            return Err(Error::Artifact(format!(
                "calibration was computed with NCM {} but {want} was requested",
                cal.ncm()
            ))
            .into());
        }
    }
    let monitor = Monitor::new(&model.model, &index.index, &cal, rule(a.strict_gt));

    let reader: Box<dyn BufRead> = if a.input == "-" {
        Box::new(io::stdin().lock())
    } else {
        let path = Path::new(&a.input);
        require_file(path, "input file")?;
        let file = fs::File::open(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Box::new(BufReader::new(file))
    };
    let n_features = model.model.input_dim();
    let mut out = io::stdout().lock();
    let write_err = |e: io::Error| Error::Io {
        path: "<stdout>".into(),
        source: e,
    };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::Io {
            path: a.input.clone().into(),
            source: e,
        })?;
        if (a.header && line_no == 1) || line.trim().is_empty() {
            continue;
        }
        let start = Instant::now();
        let result = parse_feature_row(&line, n_features, line_no).and_then(|x| monitor.decide_raw(&x, a.epsilon));
        let latency_us = start.elapsed().as_secs_f64() * 1e6;
        match result {
            Ok(d) => {
                let label = match d.decision {
                    Decision::Single(l) => model
                        .model
                        .labels
                        .name_of(l)
                        .map_or_else(|| l.to_string(), str::to_owned),
                    _ => "-".to_owned(),
                };
                let mut row = format!("{},{label}", d.decision.code());
                for p in &d.set.p_values {
                    row.push_str(&format!(",{p}"));
                }
                writeln!(out, "{row},{latency_us:.1}").map_err(write_err)?;
            }
            Err(e) if a.fail_fast => return Err(e.into()),
            Err(e) => {
                let msg = e.to_string().replace(['\n', ','], " ");
                writeln!(out, "error,{msg}").map_err(write_err)?;
            }
        }
    }
    out.flush().map_err(write_err)?;
    Ok(())
}

fn architecture_name(model: &MlpModel, taken: &[String]) -> String {
    let base = match model.metadata.get("train.loss_kind").map(String::as_str) {
        Some("cross_entropy") => "baseline",
        _ => "triplet",
    };
    let mut name = base.to_owned();
    let mut n = 2;
    while taken.contains(&name) {
        name = format!("{base}{n}");
        n += 1;
    }
    name
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let grid = match &a.epsilon_grid {
        Some(text) => parse_list::<f64>(text, "epsilon")?,
        None => default_epsilon_grid(),
    };
    if grid.iter().any(|&e| check_epsilon(e).is_err()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--epsilon-grid must be strictly increasing values in (0, 1)"));
    }
    let opts = EvalOptions {
        ncms: parse_ncms(&a.ncm, a.k)?,
        epsilon_grid: grid,
        rule: rule(a.strict_gt),
        ..EvalOptions::default()
    };
    let mut pairs = vec![(a.model.clone(), a.index.clone())];
    if let (Some(m), Some(i)) = (&a.baseline_model, &a.baseline_index) {
        pairs.push((m.clone(), i.clone()));
    }
    let mut reports = Vec::new();
    let mut names = Vec::new();
    for (model_path, index_path) in pairs {
        let (model, index) = load_pair(&model_path, &index_path)?;
        let data = model_split(&model.model, &a.data)?;
        let name = architecture_name(&model.model, &names);
        let report = run_evaluation(&name, &model.model, &index.index, &data, &opts)?;
        for path in report.write_to_dir(&a.out_dir)? {
            println!("wrote {}", path.display());
        }
        names.push(name);
        reports.push(report);
    }
    println!();
    print!("{}", render_comparison(&reports));
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &a.reports {
        require_file(path, "report file")?;
        reports.push(EvalReport::load(path)?);
    }
    if a.key_value {
        for r in &reports {
            print!("{}", r.to_key_value());
        }
    } else {
        print!("{}", render_comparison(&reports));
    }
    Ok(())
}
