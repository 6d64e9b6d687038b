//! Metrics over frozen artifacts: silhouette, accuracies, error and
//! multiple-prediction rates across significance levels, significance-level
//! estimation and runtime/memory accounting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Sample};
use crate::icp::{calibrate, CalibrationScores, InclusionRule, Monitor, PredictionSet};
use crate::index::EmbeddingIndex;
use crate::kdtree::squared_distance;
use crate::ncm::NcmKind;
use crate::neural::{stack_rows, MlpModel};
use crate::{Error, Result};

pub const KNN_CLASSIFIER_K: usize = 15;

/// Silhouette of every point. Points alone in their class get 0, as do
/// points whose intra- and nearest-cluster mean distances are both zero.
pub fn silhouette_samples(points: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    let n = labels.len();
    if points.nrows() != n {
        return Err(Error::Dimension {
            expected: points.nrows(),
            actual: n,
        });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; num_classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::InsufficientData("silhouette needs at least two classes".into()));
    }
    let rows: Vec<&[f64]> = points
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    // sums[i * C + c] = total distance from i to class c.
    let mut sums = vec![0.0; n * num_classes];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(rows[i], rows[j]).sqrt();
            sums[i * num_classes + labels[j]] += d;
            sums[j * num_classes + labels[i]] += d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let own = labels[i];
            if counts[own] < 2 {
                return 0.0;
            }
            let row = &sums[i * num_classes..(i + 1) * num_classes];
            let a = row[own] / (counts[own] - 1) as f64;
            let b = (0..num_classes)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| row[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect())
}

pub fn silhouette(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let s = silhouette_samples(points, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Mean silhouette of a sample set in the model's embedding space.
pub fn embedding_silhouette(model: &MlpModel, samples: &[Sample]) -> Result<f64> {
    let x = stack_rows(samples.iter().map(|s| s.features.as_slice()))?;
    let emb = model.embed_batch(x.view())?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    silhouette(emb.view(), &labels)
}

/// Majority label among the `k` nearest stored embeddings; ties go to the
/// smaller summed distance, then the lower label id.
pub fn knn_vote(index: &EmbeddingIndex, v: &[f64], k: usize) -> Result<usize> {
    let neighbors = index.knn_query(v, k)?;
    let mut votes = vec![(0usize, 0.0f64); index.num_classes()];
    for n in &neighbors {
        votes[n.label].0 += 1;
        votes[n.label].1 += n.distance();
    }
    Ok((0..votes.len())
        .min_by(|&a, &b| {
            votes[b]
                .0
                .cmp(&votes[a].0)
                .then(votes[a].1.total_cmp(&votes[b].1))
                .then(a.cmp(&b))
        })
        .expect("at least one class"))
}

/// k-NN classification accuracy in embedding space.
pub fn accuracy_triplet_knn(model: &MlpModel, index: &EmbeddingIndex, samples: &[Sample], k: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let x = stack_rows(samples.iter().map(|s| s.features.as_slice()))?;
    let emb = model.embed_batch(x.view())?;
    let mut correct = 0usize;
    for (row, s) in emb.rows().into_iter().zip(samples) {
        if knn_vote(index, row.as_slice().expect("standard layout"), k)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax-head classification accuracy.
pub fn accuracy_softmax(model: &MlpModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let x = stack_rows(samples.iter().map(|s| s.features.as_slice()))?;
    let probs = model.classify_batch(x.view())?;
    let correct = probs
        .rows()
        .into_iter()
        .zip(samples)
        .filter(|(p, s)| argmax(p.as_slice().expect("standard layout")) == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Per-label p-values of one labelled input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PValueRow {
    pub p_values: Vec<f64>,
    pub label: usize,
}

impl PValueRow {
    pub fn set(&self, epsilon: f64, rule: InclusionRule) -> PredictionSet {
        PredictionSet::from_p_values(self.p_values.clone(), epsilon, rule)
    }

    fn set_size(&self, epsilon: f64, rule: InclusionRule) -> usize {
        self.p_values.iter().filter(|&&p| rule.includes(p, epsilon)).count()
    }

    fn is_error(&self, epsilon: f64, rule: InclusionRule) -> bool {
        !rule.includes(self.p_values[self.label], epsilon)
    }
}

pub fn p_value_rows(monitor: &Monitor<'_>, samples: &[Sample]) -> Result<Vec<PValueRow>> {
    samples
        .iter()
        .map(|s| {
            Ok(PValueRow {
                p_values: monitor.p_values(&s.features)?,
                label: s.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSeries {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl CurveSeries {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.x_label, self.y_label);
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Point `t` is the number of inputs among the first `t` whose true label is
/// missing from the prediction set.
pub fn cumulative_error_curve(rows: &[PValueRow], epsilon: f64, rule: InclusionRule) -> Result<CurveSeries> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty decision stream".into()));
    }
    let mut errors = 0usize;
    let points = rows
        .iter()
        .enumerate()
        .map(|(t, r)| {
            if r.is_error(epsilon, rule) {
                errors += 1;
            }
            ((t + 1) as f64, errors as f64)
        })
        .collect();
    Ok(CurveSeries {
        x_label: "inputs".into(),
        y_label: format!("cumulative_errors_eps_{epsilon}"),
        points,
    })
}

/// Outcome rates over a labelled set at one significance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    /// True label excluded from the set.
    pub error_rate: f64,
    /// More than one label in the set.
    pub multiples_rate: f64,
    pub empty_rate: f64,
    pub single_rate: f64,
}

pub fn epsilon_row(rows: &[PValueRow], epsilon: f64, rule: InclusionRule) -> EpsilonRow {
    let n = rows.len().max(1) as f64;
    let (mut errors, mut multiples, mut empty, mut single) = (0usize, 0usize, 0usize, 0usize);
    for r in rows {
        if r.is_error(epsilon, rule) {
            errors += 1;
        }
        match r.set_size(epsilon, rule) {
            0 => empty += 1,
            1 => single += 1,
            _ => multiples += 1,
        }
    }
    EpsilonRow {
        epsilon,
        error_rate: errors as f64 / n,
        multiples_rate: multiples as f64 / n,
        empty_rate: empty as f64 / n,
        single_rate: single as f64 / n,
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "epsilon grid must be non-empty and strictly increasing".into(),
        ));
    }
    Ok(())
}

pub fn per_epsilon_table(rows: &[PValueRow], grid: &[f64], rule: InclusionRule) -> Result<Vec<EpsilonRow>> {
    check_grid(grid)?;
    Ok(grid.iter().map(|&e| epsilon_row(rows, e, rule)).collect())
}

/// Error-rate (calibration) and multiples-rate (performance) curves over `grid`.
pub fn calibration_performance_curves(
    rows: &[PValueRow],
    grid: &[f64],
    rule: InclusionRule,
) -> Result<(CurveSeries, CurveSeries)> {
    let table = per_epsilon_table(rows, grid, rule)?;
    let series = |y_label: &str, f: fn(&EpsilonRow) -> f64| CurveSeries {
        x_label: "epsilon".into(),
        y_label: y_label.into(),
        points: table.iter().map(|r| (r.epsilon, f(r))).collect(),
    };
    Ok((
        series("error_rate", |r| r.error_rate),
        series("multiples_rate", |r| r.multiples_rate),
    ))
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub fn default_epsilon_grid() -> Vec<f64> {
    log_grid(0.001, 0.4, 60)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    /// Smallest significance level at which no input has several labels.
    pub epsilon: f64,
    /// Error rate of the same inputs at `epsilon`.
    pub error_rate: f64,
    /// Largest second-highest p-value over the inputs.
    pub max_second_p_value: f64,
}

/// Under `p >= eps` the returned level is the next float above the largest
/// second-highest p-value; under `p > eps` it is that p-value itself.
pub fn estimate_epsilon(rows: &[PValueRow], rule: InclusionRule) -> Result<EpsilonEstimate> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty validation set".into()));
    }
    let second = |p: &[f64]| {
        let mut sorted = p.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.get(1).copied().unwrap_or(0.0)
    };
    let max_second = rows.iter().map(|r| second(&r.p_values)).fold(0.0, f64::max);
    let epsilon = match rule {
        InclusionRule::AtLeast => max_second.next_up(),
        InclusionRule::StrictlyGreater => max_second,
    };
    let error_rate = epsilon_row(rows, epsilon, rule).error_rate;
    Ok(EpsilonEstimate {
        epsilon,
        error_rate,
        max_second_p_value: max_second,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub ncm: NcmKind,
    /// Embedding storage for this NCM's regime.
    pub index_bytes: usize,
    pub model_bytes: usize,
    pub total_bytes: usize,
    pub inputs: usize,
    pub mean_latency_us: f64,
    pub p99_latency_us: f64,
    pub total_seconds: f64,
}

/// Times the embed / score / threshold / decide path over `samples`.
pub fn resource_report(monitor: &Monitor<'_>, samples: &[Sample], epsilon: f64) -> Result<ResourceReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no inputs to time".into()));
    }
    let ncm = monitor.calibration.ncm();
    let index_bytes = monitor.index.memory_bytes(ncm)?;
    let model_bytes = monitor.model.parameter_bytes();
    let start = Instant::now();
    let mut latencies = Vec::with_capacity(samples.len());
    for s in samples {
        let (_, elapsed) = monitor.decide_timed(&s.features, epsilon)?;
        latencies.push(elapsed.as_secs_f64() * 1e6);
    }
    let total_seconds = start.elapsed().as_secs_f64();
    latencies.sort_by(f64::total_cmp);
    let p99_at = ((latencies.len() as f64 * 0.99).ceil() as usize).clamp(1, latencies.len()) - 1;
    Ok(ResourceReport {
        ncm,
        index_bytes,
        model_bytes,
        total_bytes: index_bytes + model_bytes,
        inputs: samples.len(),
        mean_latency_us: latencies.iter().sum::<f64>() / latencies.len() as f64,
        p99_latency_us: latencies[p99_at],
        total_seconds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ncms: Vec<NcmKind>,
    /// k of the embedding k-NN classifier.
    pub classifier_k: usize,
    pub epsilon_grid: Vec<f64>,
    /// Levels for the cumulative error curves.
    pub cumulative_epsilons: Vec<f64>,
    /// Levels reported side by side in the comparison table.
    pub table_epsilons: Vec<f64>,
    pub rule: InclusionRule,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ncms: NcmKind::ALL_DEFAULT.to_vec(),
            classifier_k: KNN_CLASSIFIER_K,
            epsilon_grid: default_epsilon_grid(),
            cumulative_epsilons: vec![0.01, 0.05, 0.1],
            table_epsilons: vec![0.01, 0.05],
            rule: InclusionRule::AtLeast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcmReport {
    pub ncm: NcmKind,
    pub calibration_size: usize,
    /// Estimated on the calibration split, which doubles as validation data.
    pub estimated_epsilon: EpsilonEstimate,
    pub test_error_at_estimated_epsilon: f64,
    pub test_multiples_at_estimated_epsilon: f64,
    pub at_table_epsilons: Vec<EpsilonRow>,
    pub per_epsilon: Vec<EpsilonRow>,
    pub resources: ResourceReport,
    #[serde(skip)]
    pub curves: Vec<(String, CurveSeries)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub architecture: String,
    pub silhouette_train: f64,
    pub silhouette_validation: f64,
    pub accuracy_knn_train: f64,
    pub accuracy_knn_test: f64,
    pub accuracy_softmax_train: Option<f64>,
    pub accuracy_softmax_test: Option<f64>,
    pub ncms: Vec<NcmReport>,
}

/// Runs every metric for one model on its (normalized) split.
pub fn evaluate(
    architecture: &str,
    model: &MlpModel,
    index: &EmbeddingIndex,
    data: &DatasetSplit,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_grid(&opts.epsilon_grid)?;
    let mut ncms = Vec::with_capacity(opts.ncms.len());
    for &ncm in &opts.ncms {
        let cal = calibrate(model, index, ncm, &data.calibration)?;
        ncms.push(evaluate_ncm(model, index, &cal, data, opts)?);
    }
    let (accuracy_softmax_train, accuracy_softmax_test) = if model.is_classifier() {
        (
            Some(accuracy_softmax(model, &data.proper_training)?),
            Some(accuracy_softmax(model, &data.test)?),
        )
    } else {
        (None, None)
    };
    Ok(EvalReport {
        architecture: architecture.to_owned(),
        silhouette_train: embedding_silhouette(model, &data.proper_training)?,
        silhouette_validation: embedding_silhouette(model, &data.calibration)?,
        accuracy_knn_train: accuracy_triplet_knn(model, index, &data.proper_training, opts.classifier_k)?,
        accuracy_knn_test: accuracy_triplet_knn(model, index, &data.test, opts.classifier_k)?,
        accuracy_softmax_train,
        accuracy_softmax_test,
        ncms,
    })
}

pub fn evaluate_ncm(
    model: &MlpModel,
    index: &EmbeddingIndex,
    cal: &CalibrationScores,
    data: &DatasetSplit,
    opts: &EvalOptions,
) -> Result<NcmReport> {
    let monitor = Monitor::new(model, index, cal, opts.rule);
    let validation = p_value_rows(&monitor, &data.calibration)?;
    let test = p_value_rows(&monitor, &data.test)?;
    let estimate = estimate_epsilon(&validation, opts.rule)?;
    let at_estimate = epsilon_row(&test, estimate.epsilon, opts.rule);
    let (cal_curve, perf_curve) = calibration_performance_curves(&test, &opts.epsilon_grid, opts.rule)?;
    let name = cal.ncm().name();
    let mut curves = vec![
        (format!("calibration_{name}"), cal_curve),
        (format!("performance_{name}"), perf_curve),
    ];
    for &eps in &opts.cumulative_epsilons {
        curves.push((
            format!("cumulative_error_{name}_eps{eps}"),
            cumulative_error_curve(&test, eps, opts.rule)?,
        ));
    }
    Ok(NcmReport {
        ncm: cal.ncm(),
        calibration_size: cal.len(),
        estimated_epsilon: estimate,
        test_error_at_estimated_epsilon: at_estimate.error_rate,
        test_multiples_at_estimated_epsilon: at_estimate.multiples_rate,
        at_table_epsilons: opts
            .table_epsilons
            .iter()
            .map(|&e| epsilon_row(&test, e, opts.rule))
            .collect(),
        per_epsilon: per_epsilon_table(&test, &opts.epsilon_grid, opts.rule)?,
        resources: resource_report(&monitor, &data.test, 0.05)?,
        curves,
    })
}

impl EvalReport {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Flat `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let a = &self.architecture;
        let mut kv = |k: String, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv(format!("{a}.silhouette_train"), format!("{:.4}", self.silhouette_train));
        kv(
            format!("{a}.silhouette_validation"),
            format!("{:.4}", self.silhouette_validation),
        );
        kv(
            format!("{a}.accuracy_knn_train"),
            format!("{:.4}", self.accuracy_knn_train),
        );
        kv(
            format!("{a}.accuracy_knn_test"),
            format!("{:.4}", self.accuracy_knn_test),
        );
        if let (Some(tr), Some(te)) = (self.accuracy_softmax_train, self.accuracy_softmax_test) {
            kv(format!("{a}.accuracy_softmax_train"), format!("{tr:.4}"));
            kv(format!("{a}.accuracy_softmax_test"), format!("{te:.4}"));
        }
        for n in &self.ncms {
            let p = format!("{a}.{}", n.ncm.name());
            kv(format!("{p}.calibration_size"), n.calibration_size.to_string());
            kv(
                format!("{p}.estimated_epsilon"),
                format!("{:.6}", n.estimated_epsilon.epsilon),
            );
            kv(
                format!("{p}.validation_error_at_estimate"),
                format!("{:.4}", n.estimated_epsilon.error_rate),
            );
            kv(
                format!("{p}.test_error_at_estimate"),
                format!("{:.4}", n.test_error_at_estimated_epsilon),
            );
            for r in &n.at_table_epsilons {
                kv(
                    format!("{p}.eps_{}.error_rate", r.epsilon),
                    format!("{:.4}", r.error_rate),
                );
                kv(
                    format!("{p}.eps_{}.multiples_rate", r.epsilon),
                    format!("{:.4}", r.multiples_rate),
                );
            }
            kv(format!("{p}.memory_bytes"), n.resources.total_bytes.to_string());
            kv(
                format!("{p}.mean_latency_us"),
                format!("{:.1}", n.resources.mean_latency_us),
            );
            kv(
                format!("{p}.p99_latency_us"),
                format!("{:.1}", n.resources.p99_latency_us),
            );
        }
        out
    }

    /// Writes `report.txt`, `report.json` and one CSV per curve into `dir`;
    /// returns the written paths.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let a = &self.architecture;
        let txt = dir.join(format!("report_{a}.txt"));
        fs::write(&txt, self.to_key_value()).map_err(|e| Error::io(&txt, e))?;
        written.push(txt);
        let json = dir.join(format!("report_{a}.json"));
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&json, e))?;
        written.push(json);
        for n in &self.ncms {
            for (name, curve) in &n.curves {
                let path = dir.join(format!("{a}_{name}.csv"));
                curve.write_csv(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn bytes(b: usize) -> String {
    if b >= 1 << 20 {
        format!("{:.2} MB", b as f64 / (1u64 << 20) as f64)
    } else {
        format!("{:.0} kB", b as f64 / 1024.0)
    }
}

/// Side-by-side tables: clustering, classification accuracy, and per-NCM
/// significance / efficiency / resources.
pub fn render_comparison(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Clustering (silhouette)");
    let _ = writeln!(out, "{:<14} {:>10} {:>12}", "embedding", "training", "validation");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<14} {:>10.3} {:>12.3}",
            r.architecture, r.silhouette_train, r.silhouette_validation
        );
    }
    let _ = writeln!(out, "\nClassification accuracy");
    let _ = writeln!(out, "{:<24} {:>10} {:>10}", "classifier", "training", "testing");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>10}",
            format!("{} + k-NN", r.architecture),
            pct(r.accuracy_knn_train),
            pct(r.accuracy_knn_test)
        );
        if let (Some(tr), Some(te)) = (r.accuracy_softmax_train, r.accuracy_softmax_test) {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10}",
                format!("{} + softmax", r.architecture),
                pct(tr),
                pct(te)
            );
        }
    }
    let _ = writeln!(out, "\nConformal monitor (test set; epsilon estimated on validation)");
    let mut header = format!(
        "{:<10} {:<10} {:>9} {:>8} {:>8}",
        "embedding", "ncm", "est.eps", "val.err", "test.err"
    );
    if let Some(first) = reports.first().and_then(|r| r.ncms.first()) {
        for row in &first.at_table_epsilons {
            let _ = write!(
                header,
                " {:>10} {:>10}",
                format!("err@{}", row.epsilon),
                format!("mult@{}", row.epsilon)
            );
        }
    }
    let _ = write!(header, " {:>10} {:>10}", "memory", "time");
    let _ = writeln!(out, "{header}");
    for r in reports {
        for n in &r.ncms {
            let mut line = format!(
                "{:<10} {:<10} {:>9.3} {:>8} {:>8}",
                r.architecture,
                n.ncm.name(),
                n.estimated_epsilon.epsilon,
                pct(n.estimated_epsilon.error_rate),
                pct(n.test_error_at_estimated_epsilon)
            );
            for row in &n.at_table_epsilons {
                let _ = write!(line, " {:>10} {:>10}", pct(row.error_rate), pct(row.multiples_rate));
            }
            let _ = write!(
                line,
                " {:>10} {:>10}",
                bytes(n.resources.total_bytes),
                format!("{:.2}ms", n.resources.mean_latency_us / 1000.0)
            );
            let _ = writeln!(out, "{line}");
        }
    }
    out
}
