//! Inductive conformal prediction: calibration scores, empirical p-values,
//! prediction sets and the three-way monitor decision.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::index::EmbeddingIndex;
use crate::ncm::NcmKind;
use crate::neural::MlpModel;
use crate::{Error, Result};

pub const CALIBRATION_FORMAT: &str = "triplet-icp/calibration";
pub const CALIBRATION_VERSION: u32 = 1;

/// Sorted nonconformity scores of the calibration set under its true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScores {
    ncm: NcmKind,
    scores: Vec<f64>,
}

impl CalibrationScores {
    pub fn new(ncm: NcmKind, mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InsufficientData("calibration set is empty".into()));
        }
        if scores.iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::InvalidArgument("scores must be non-negative numbers".into()));
        }
        scores.sort_by(f64::total_cmp);
        Ok(CalibrationScores { ncm, scores })
    }

    pub fn ncm(&self) -> NcmKind {
        self.ncm
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Fraction of calibration scores `>= score`.
    pub fn p_value(&self, score: f64) -> f64 {
        let below = self.scores.partition_point(|a| *a < score);
        (self.scores.len() - below) as f64 / self.scores.len() as f64
    }

    pub fn to_json(&self, hashes: &CalibrationHashes) -> Result<String> {
        let file = CalibrationFile {
            format: CALIBRATION_FORMAT.into(),
            version: CALIBRATION_VERSION,
            ncm: self.ncm,
            hashes: hashes.clone(),
            size: self.scores.len(),
            scores: self.scores.iter().map(|&s| Score::from(s)).collect(),
        };
        let mut text = serde_json::to_string(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<(Self, CalibrationHashes)> {
        let file: CalibrationFile = serde_json::from_str(text)?;
        if file.format != CALIBRATION_FORMAT {
            return Err(Error::Artifact(format!(
                "not a calibration file (format {:?})",
                file.format
            )));
        }
        if file.version != CALIBRATION_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported calibration version {}",
                file.version
            )));
        }
        if file.scores.len() != file.size {
            return Err(Error::Artifact("calibration size does not match its scores".into()));
        }
        let scores = file.scores.into_iter().map(f64::try_from).collect::<Result<Vec<_>>>()?;
        let cal = CalibrationScores::new(file.ncm, scores).map_err(|e| Error::Artifact(e.to_string()))?;
        Ok((cal, file.hashes))
    }

    pub fn save(&self, path: impl AsRef<Path>, hashes: &CalibrationHashes) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json(hashes)?).map_err(|e| Error::io(path, e))
    }
}

/// Content hashes of the artifacts a calibration was computed against.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationHashes {
    pub model_sha256: String,
    pub index_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    format: String,
    version: u32,
    ncm: NcmKind,
    #[serde(flatten)]
    hashes: CalibrationHashes,
    size: usize,
    scores: Vec<Score>,
}

/// Finite scores as numbers; the unbounded sentinel as the string `"inf"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Score {
    Finite(f64),
    Text(String),
}

impl From<f64> for Score {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Score::Finite(v)
        } else {
            Score::Text("inf".into())
        }
    }
}

impl TryFrom<Score> for f64 {
    type Error = Error;

    fn try_from(s: Score) -> Result<f64> {
        match s {
            Score::Finite(v) => Ok(v),
            Score::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Score::Text(t) => Err(Error::Artifact(format!("bad score {t:?}"))),
        }
    }
}

/// Scores every calibration example (already in model input space) under
/// its true label.
pub fn calibrate(
    model: &MlpModel,
    index: &EmbeddingIndex,
    ncm: NcmKind,
    calibration: &[Sample],
) -> Result<CalibrationScores> {
    ncm.validate()?;
    if !index.storage().supports(ncm) {
        return Err(Error::MissingStructure(match ncm {
            NcmKind::OneNn => "per-class k-d trees",
            _ => "global k-d tree",
        }));
    }
    let mut scores = Vec::with_capacity(calibration.len());
    for s in calibration {
        if s.label >= index.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "calibration label {} is not an index class",
                s.label
            )));
        }
        let v = model.embed(&s.features)?;
        scores.push(ncm.score(index, &v, s.label)?);
    }
    CalibrationScores::new(ncm, scores)
}

/// `p >= epsilon` (default) or the strict `p > epsilon` variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InclusionRule {
    #[default]
    AtLeast,
    StrictlyGreater,
}

impl InclusionRule {
    pub fn includes(&self, p: f64, epsilon: f64) -> bool {
        match self {
            InclusionRule::AtLeast => p >= epsilon,
            InclusionRule::StrictlyGreater => p > epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    /// Included labels, ascending.
    pub labels: Vec<usize>,
    pub p_values: Vec<f64>,
    pub epsilon: f64,
}

impl PredictionSet {
    pub fn from_p_values(p_values: Vec<f64>, epsilon: f64, rule: InclusionRule) -> Self {
        let labels = (0..p_values.len())
            .filter(|&j| rule.includes(p_values[j], epsilon))
            .collect();
        PredictionSet {
            labels,
            p_values,
            epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "epsilon must be in (0, 1), got {epsilon}"
        )))
    }
}

/// p-values of every candidate label for an embedding.
pub fn p_values(cal: &CalibrationScores, index: &EmbeddingIndex, v: &[f64]) -> Result<Vec<f64>> {
    Ok(cal
        .ncm()
        .scores(index, v)?
        .into_iter()
        .map(|s| cal.p_value(s))
        .collect())
}

/// Embeds `x` (model input space) once and thresholds every label's p-value.
pub fn prediction_set(
    cal: &CalibrationScores,
    model: &MlpModel,
    index: &EmbeddingIndex,
    x: &[f64],
    epsilon: f64,
    rule: InclusionRule,
) -> Result<PredictionSet> {
    check_epsilon(epsilon)?;
    let v = model.embed(x)?;
    Ok(PredictionSet::from_p_values(p_values(cal, index, &v)?, epsilon, rule))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    /// No label conforms; possibly out of distribution.
    Empty,
    /// Exactly one label: an assured prediction.
    Single(usize),
    /// Several labels conform at this significance level.
    Reject,
}

impl Decision {
    /// `0`, `1` or `reject`.
    pub fn code(&self) -> &'static str {
        match self {
            Decision::Empty => "0",
            Decision::Single(_) => "1",
            Decision::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorDecision {
    pub decision: Decision,
    pub set: PredictionSet,
}

pub fn monitor(set: PredictionSet) -> MonitorDecision {
    let decision = match set.labels.as_slice() {
        [] => Decision::Empty,
        [only] => Decision::Single(*only),
        _ => Decision::Reject,
    };
    MonitorDecision { decision, set }
}

/// Everything needed at runtime to turn raw sensor rows into decisions.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub model: &'a MlpModel,
    pub index: &'a EmbeddingIndex,
    pub calibration: &'a CalibrationScores,
    pub rule: InclusionRule,
}

impl<'a> Monitor<'a> {
    pub fn new(
        model: &'a MlpModel,
        index: &'a EmbeddingIndex,
        calibration: &'a CalibrationScores,
        rule: InclusionRule,
    ) -> Self {
        Monitor {
            model,
            index,
            calibration,
            rule,
        }
    }

    /// p-values for an input already in model input space.
    pub fn p_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        p_values(self.calibration, self.index, &self.model.embed(x)?)
    }

    /// Decision for an input already in model input space.
    pub fn decide(&self, x: &[f64], epsilon: f64) -> Result<MonitorDecision> {
        prediction_set(self.calibration, self.model, self.index, x, epsilon, self.rule).map(monitor)
    }

    /// Decision for a raw sensor row: applies the model's stored normalization first.
    pub fn decide_raw(&self, raw: &[f64], epsilon: f64) -> Result<MonitorDecision> {
        self.decide(&self.model.prepare_input(raw)?, epsilon)
    }

    /// Decision plus wall-clock latency for the full embed / score / threshold path.
    pub fn decide_timed(&self, x: &[f64], epsilon: f64) -> Result<(MonitorDecision, std::time::Duration)> {
        let start = Instant::now();
        let d = self.decide(x, epsilon)?;
        Ok((d, start.elapsed()))
    }
}
