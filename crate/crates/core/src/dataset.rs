//! Labelled sensor samples: CSV loading, seeded splitting, normalization and
//! a synthetic Gaussian-blob generator for tests.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of ultrasound readings per SCITOS-G5 sample.
pub const SCITOS_FEATURES: usize = 24;

/// Standard deviations below this are treated as 1 during normalization.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Bijection between class names and dense integer ids, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = LabelMap::default();
        for name in names {
            let name = name.into();
            if map.id_of(&name).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate label {name:?}")));
            }
            map.names.push(name);
        }
        Ok(map)
    }

    /// Numeric labels `"0"`, `"1"`, ... for synthetic data.
    pub fn numbered(num_classes: usize) -> Self {
        LabelMap {
            names: (0..num_classes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name_of(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn get_or_insert(&mut self, name: &str) -> usize {
        match self.id_of(name) {
            Some(id) => id,
            None => {
                self.names.push(name.to_owned());
                self.names.len() - 1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub n_features: usize,
    /// Skip the first line.
    pub has_header: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            n_features: SCITOS_FEATURES,
            has_header: false,
        }
    }
}

/// Loads `n_features` floats followed by one label token per row.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Vec<Sample>, LabelMap)> {
    let mut labels = LabelMap::default();
    let samples = read_rows(path.as_ref(), schema, |name| Ok(labels.get_or_insert(name)))?;
    Ok((samples, labels))
}

/// Like [`load_csv`] but against a fixed label map; labels outside it are rejected.
pub fn load_csv_with_labels(path: impl AsRef<Path>, schema: &CsvSchema, labels: &LabelMap) -> Result<Vec<Sample>> {
    read_rows(path.as_ref(), schema, |name| {
        labels.id_of(name).ok_or_else(|| Error::UnknownLabel(name.to_owned()))
    })
}

fn read_rows(path: &Path, schema: &CsvSchema, mut label_id: impl FnMut(&str) -> Result<usize>) -> Result<Vec<Sample>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_rows(text.as_bytes(), schema, &mut label_id)
}

fn parse_rows(
    input: &[u8],
    schema: &CsvSchema,
    label_id: &mut impl FnMut(&str) -> Result<usize>,
) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != schema.n_features + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", schema.n_features + 1, record.len()),
            });
        }
        let features = parse_floats(record.iter().take(schema.n_features), line)?;
        let label = label_id(&record[schema.n_features]).map_err(|e| match e {
            Error::UnknownLabel(name) => Error::Parse {
                line,
                message: format!("unknown label {name:?}"),
            },
            other => other,
        })?;
        samples.push(Sample { features, label });
    }
    Ok(samples)
}

fn parse_floats<'a>(fields: impl Iterator<Item = &'a str>, line: u64) -> Result<Vec<f64>> {
    fields
        .enumerate()
        .map(|(col, field)| {
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("field {} is not a number: {field:?}", col + 1),
            })?;
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::Parse {
                    line,
                    message: format!("field {} is not finite", col + 1),
                })
            }
        })
        .collect()
}

/// Parses one unlabelled input row for the monitor. A trailing label column
/// (`n_features + 1` fields) is accepted and ignored.
pub fn parse_feature_row(row: &str, n_features: usize, line: u64) -> Result<Vec<f64>> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != n_features && fields.len() != n_features + 1 {
        return Err(Error::Parse {
            line,
            message: format!("expected {n_features} fields, found {}", fields.len()),
        });
    }
    parse_floats(fields.into_iter().take(n_features), line)
}

/// Per-feature z-score parameters fitted on the proper-training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Population mean and standard deviation; degenerate columns get std 1.
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InsufficientData("no samples to fit normalization".into()))?;
        let dim = first.features.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            check_dim(dim, s.features.len())?;
            for (m, x) in mean.iter_mut().zip(&s.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(NormalizationStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), features.len())?;
        for ((x, m), s) in features.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
        Ok(())
    }

    pub fn applied(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut out = features.to_vec();
        self.apply(&mut out)?;
        Ok(out)
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}

/// Proper-training / calibration / test partition of one labelled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub proper_training: Vec<Sample>,
    pub calibration: Vec<Sample>,
    pub test: Vec<Sample>,
    pub normalization: NormalizationStats,
    /// Whether `normalization` has been applied to the three sets.
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSizes {
    pub proper_training: usize,
    pub calibration: usize,
    pub test: usize,
}

impl SplitSizes {
    /// `test = floor(n * test_frac)`, `calibration = floor((n - test) * cal_frac)`,
    /// everything else goes to proper training.
    pub fn compute(n: usize, test_frac: f64, cal_frac_of_rest: f64) -> Result<Self> {
        for (name, f) in [("test_frac", test_frac), ("cal_frac", cal_frac_of_rest)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must be in (0, 1), got {f}")));
            }
        }
        let test = (n as f64 * test_frac).floor() as usize;
        let rest = n - test;
        let calibration = (rest as f64 * cal_frac_of_rest).floor() as usize;
        let proper_training = rest - calibration;
        if test == 0 || calibration == 0 || proper_training == 0 {
            return Err(Error::InsufficientData(format!(
                "{n} samples cannot fill every split (test {test}, calibration {calibration}, \
                 proper training {proper_training})"
            )));
        }
        Ok(SplitSizes {
            proper_training,
            calibration,
            test,
        })
    }
}

/// Seeded shuffle, then test slice, calibration slice, proper-training remainder.
pub fn split(samples: &[Sample], test_frac: f64, cal_frac_of_rest: f64, seed: u64) -> Result<DatasetSplit> {
    let sizes = SplitSizes::compute(samples.len(), test_frac, cal_frac_of_rest)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ids: &[usize]| ids.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (test, rest) = order.split_at(sizes.test);
    let (calibration, proper) = rest.split_at(sizes.calibration);
    let proper_training = pick(proper);
    let normalization = NormalizationStats::fit(&proper_training)?;
    Ok(DatasetSplit {
        proper_training,
        calibration: pick(calibration),
        test: pick(test),
        normalization,
        normalized: false,
    })
}

impl DatasetSplit {
    /// Applies the stored proper-training statistics to all three sets.
    /// A split that is already normalized is returned unchanged.
    pub fn normalize(mut self) -> Self {
        if self.normalized {
            return self;
        }
        let stats = self.normalization.clone();
        for s in self
            .proper_training
            .iter_mut()
            .chain(self.calibration.iter_mut())
            .chain(self.test.iter_mut())
        {
            // Every sample was checked against the stats dimension in `fit`
            // or shares the dataset width.
            let _ = stats.apply(&mut s.features);
        }
        self.normalized = true;
        self
    }

    /// Stats to store with a model: the fitted ones for a normalized split,
    /// none otherwise.
    pub fn applied_normalization(&self) -> Option<&NormalizationStats> {
        self.normalized.then_some(&self.normalization)
    }

    pub fn input_dim(&self) -> usize {
        self.normalization.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.proper_training
            .iter()
            .chain(&self.calibration)
            .chain(&self.test)
            .map(|s| s.label + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
}

/// Isotropic Gaussian clusters; class `c` is centred at `separation * e_c`.
/// Samples are emitted class by class.
pub fn gen_blobs(cfg: &BlobConfig) -> Result<Vec<Sample>> {
    if cfg.n_per_class == 0 || cfg.num_classes == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("blob counts must be positive".into()));
    }
    if cfg.num_classes > cfg.dim {
        return Err(Error::InvalidArgument(format!(
            "{} classes need at least {} dimensions",
            cfg.num_classes, cfg.num_classes
        )));
    }
    let noise = Normal::new(0.0, cfg.spread).map_err(|e| Error::InvalidArgument(format!("spread: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_per_class * cfg.num_classes);
    for label in 0..cfg.num_classes {
        for _ in 0..cfg.n_per_class {
            let features = (0..cfg.dim)
                .map(|d| {
                    let centre = if d == label { cfg.separation } else { 0.0 };
                    centre + noise.sample(&mut rng)
                })
                .collect();
            samples.push(Sample { features, label });
        }
    }
    Ok(samples)
}
