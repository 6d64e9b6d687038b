//! Nonconformity measures over an [`EmbeddingIndex`]. Larger is stranger.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::index::EmbeddingIndex;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NcmKind {
    /// Count of the `k` nearest training embeddings labelled differently.
    Knn { k: usize },
    /// Nearest same-class distance over nearest other-class distance.
    OneNn,
    /// Own-centroid distance over nearest other-centroid distance.
    NearestCentroid,
}

impl NcmKind {
    pub const ALL_DEFAULT: [NcmKind; 3] = [NcmKind::Knn { k: DEFAULT_K }, NcmKind::OneNn, NcmKind::NearestCentroid];

    pub fn name(&self) -> &'static str {
        match self {
            NcmKind::Knn { .. } => "knn",
            NcmKind::OneNn => "1nn",
            NcmKind::NearestCentroid => "centroid",
        }
    }

    /// Parses `knn`, `1nn` or `centroid`; `k` applies to `knn` only.
    pub fn parse(name: &str, k: usize) -> Result<Self> {
        let kind = match name {
            "knn" | "k-nn" => NcmKind::Knn { k },
            "1nn" | "1-nn" | "one-nn" => NcmKind::OneNn,
            "centroid" | "nearest-centroid" => NcmKind::NearestCentroid,
            other => return Err(Error::InvalidArgument(format!("unknown NCM {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NcmKind::Knn { k: 0 } => Err(Error::InvalidArgument("k must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Scores of `v` against every candidate label `0..num_classes`.
    pub fn scores(&self, index: &EmbeddingIndex, v: &[f64]) -> Result<Vec<f64>> {
        let c = index.num_classes();
        match *self {
            NcmKind::Knn { k } => {
                let labels: Vec<usize> = index.knn_query(v, k)?.iter().map(|n| n.label).collect();
                Ok((0..c).map(|y| knn_count(&labels, y) as f64).collect())
            }
            NcmKind::OneNn => {
                let same = index.nn_per_class(v)?;
                (0..c)
                    .map(|y| Ok(ratio(same[y], index.nearest_other_class(v, y)?)))
                    .collect()
            }
            NcmKind::NearestCentroid => {
                let d = index.centroid_distances(v)?;
                Ok((0..c).map(|y| ratio(d[y], min_excluding(&d, y))).collect())
            }
        }
    }

    pub fn score(&self, index: &EmbeddingIndex, v: &[f64], y: usize) -> Result<f64> {
        if y >= index.num_classes() {
            return Err(Error::InvalidArgument(format!("label {y} outside the index classes")));
        }
        match *self {
            NcmKind::Knn { k } => Ok(ncm_knn(index, v, y, k)? as f64),
            NcmKind::OneNn => ncm_1nn(index, v, y),
            NcmKind::NearestCentroid => ncm_centroid(index, v, y),
        }
    }
}

impl fmt::Display for NcmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NcmKind::Knn { k } => write!(f, "knn(k={k})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for NcmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NcmKind::parse(s, DEFAULT_K)
    }
}

fn knn_count(neighbor_labels: &[usize], y: usize) -> usize {
    neighbor_labels.iter().filter(|&&l| l != y).count()
}

fn min_excluding(values: &[f64], skip: usize) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min)
}

/// `num / den` with `0 / 0 = 0` and `x / 0 = +inf` for `x > 0`.
pub fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

pub fn ncm_knn(index: &EmbeddingIndex, v: &[f64], y: usize, k: usize) -> Result<usize> {
    let labels: Vec<usize> = index.knn_query(v, k)?.iter().map(|n| n.label).collect();
    Ok(knn_count(&labels, y))
}

pub fn ncm_1nn(index: &EmbeddingIndex, v: &[f64], y: usize) -> Result<f64> {
    let same = index.nn_per_class(v)?;
    let same = *same
        .get(y)
        .ok_or_else(|| Error::InvalidArgument(format!("label {y} outside the index classes")))?;
    Ok(ratio(same, index.nearest_other_class(v, y)?))
}

pub fn ncm_centroid(index: &EmbeddingIndex, v: &[f64], y: usize) -> Result<f64> {
    let d = index.centroid_distances(v)?;
    if y >= d.len() {
        return Err(Error::InvalidArgument(format!("label {y} outside the index classes")));
    }
    Ok(ratio(d[y], min_excluding(&d, y)))
}
