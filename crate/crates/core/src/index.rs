//! Frozen proper-training embeddings: a global k-d tree for k-NN queries,
//! one tree per class for per-class nearest neighbors, and class centroids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::kdtree::{KdTree, Neighbor};
use crate::ncm::NcmKind;
use crate::neural::{stack_rows, MlpModel};
use crate::{Error, Result};

pub const INDEX_FORMAT: &str = "triplet-icp/index";
pub const INDEX_VERSION: u32 = 1;

/// Which search structures an index keeps. Centroids are always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStorage {
    pub global_tree: bool,
    pub per_class_trees: bool,
}

impl IndexStorage {
    pub const ALL: IndexStorage = IndexStorage {
        global_tree: true,
        per_class_trees: true,
    };

    /// The minimal storage regime an NCM needs.
    pub fn for_ncm(ncm: NcmKind) -> Self {
        match ncm {
            NcmKind::Knn { .. } => IndexStorage {
                global_tree: true,
                per_class_trees: false,
            },
            NcmKind::OneNn => IndexStorage::ALL,
            NcmKind::NearestCentroid => IndexStorage {
                global_tree: false,
                per_class_trees: false,
            },
        }
    }

    pub fn supports(&self, ncm: NcmKind) -> bool {
        let need = IndexStorage::for_ncm(ncm);
        (self.global_tree || !need.global_tree) && (self.per_class_trees || !need.per_class_trees)
    }

    fn keeps_points(&self) -> bool {
        self.global_tree || self.per_class_trees
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    num_classes: usize,
    /// Row-major `len x dim` embeddings in insertion order; empty in
    /// centroid-only storage.
    points: Vec<f64>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    global: Option<KdTree>,
    per_class: Option<Vec<KdTree>>,
}

impl EmbeddingIndex {
    /// Embeds every proper-training sample and builds all structures.
    /// The class count is taken from the model's label map when present.
    pub fn build(model: &MlpModel, proper_training: &[Sample]) -> Result<Self> {
        if proper_training.is_empty() {
            return Err(Error::InsufficientData("empty proper-training set".into()));
        }
        let x = stack_rows(proper_training.iter().map(|s| s.features.as_slice()))?;
        let emb = model.embed_batch(x.view())?;
        let labels: Vec<usize> = proper_training.iter().map(|s| s.label).collect();
        let observed = labels.iter().max().map_or(0, |m| m + 1);
        let num_classes = if model.labels.is_empty() {
            observed
        } else {
            model.labels.len()
        };
        let dim = emb.ncols();
        Self::from_embeddings(dim, emb.into_raw_vec_and_offset().0, labels, num_classes)
    }

    /// Builds from raw row-major embeddings. Every class in
    /// `0..num_classes` must appear at least once.
    pub fn from_embeddings(dim: usize, points: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(Error::InsufficientData("index needs at least one point".into()));
        }
        if points.len() != dim * labels.len() {
            return Err(Error::Dimension {
                expected: dim * labels.len(),
                actual: points.len(),
            });
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("embeddings must be finite".into()));
        }
        let mut class_counts = vec![0usize; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::InvalidArgument(format!("label {l} outside 0..{num_classes}")));
            }
            class_counts[l] += 1;
        }
        if let Some(missing) = class_counts.iter().position(|&c| c == 0) {
            return Err(Error::InsufficientData(format!(
                "class {missing} is absent from the proper-training set"
            )));
        }
        let centroids = compute_centroids(dim, &points, &labels, num_classes);
        let mut index = EmbeddingIndex {
            dim,
            num_classes,
            points,
            labels,
            class_counts,
            centroids,
            global: None,
            per_class: None,
        };
        index.build_trees(IndexStorage::ALL);
        Ok(index)
    }

    fn build_trees(&mut self, storage: IndexStorage) {
        let ids: Vec<usize> = (0..self.labels.len()).collect();
        self.global = storage
            .global_tree
            .then(|| KdTree::build(self.dim, &self.points, &ids, &self.labels));
        self.per_class = storage.per_class_trees.then(|| {
            (0..self.num_classes)
                .map(|c| {
                    let members: Vec<usize> = ids.iter().copied().filter(|&i| self.labels[i] == c).collect();
                    let pts: Vec<f64> = members
                        .iter()
                        .flat_map(|&i| self.points[i * self.dim..(i + 1) * self.dim].iter().copied())
                        .collect();
                    KdTree::build(self.dim, &pts, &members, &vec![c; members.len()])
                })
                .collect()
        });
    }

    /// Drops structures not in `storage`. Points are discarded when no tree
    /// remains.
    pub fn with_storage(mut self, storage: IndexStorage) -> Self {
        if !storage.global_tree {
            self.global = None;
        }
        if !storage.per_class_trees {
            self.per_class = None;
        }
        if !storage.keeps_points() {
            self.points = Vec::new();
            self.labels = Vec::new();
        }
        self
    }

    pub fn storage(&self) -> IndexStorage {
        IndexStorage {
            global_tree: self.global.is_some(),
            per_class_trees: self.per_class.is_some(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of stored training embeddings.
    pub fn len(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Stored embeddings and labels (empty in centroid-only storage).
    pub fn points(&self) -> (&[f64], &[usize]) {
        (&self.points, &self.labels)
    }

    fn check_query(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }

    fn global(&self) -> Result<&KdTree> {
        self.global.as_ref().ok_or(Error::MissingStructure("global k-d tree"))
    }

    fn per_class(&self) -> Result<&[KdTree]> {
        self.per_class
            .as_deref()
            .ok_or(Error::MissingStructure("per-class k-d trees"))
    }

    /// Exactly `k` nearest stored embeddings, ascending by distance, ties by
    /// lower insertion index.
    pub fn knn_query(&self, v: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(v)?;
        let tree = self.global()?;
        if k == 0 || k > tree.len() {
            return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={}", tree.len())));
        }
        Ok(tree.nearest(v, k))
    }

    /// Distance from `v` to the nearest stored point of each class.
    pub fn nn_per_class(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_query(v)?;
        Ok(self
            .per_class()?
            .iter()
            .map(|t| t.nearest(v, 1)[0].distance())
            .collect())
    }

    /// Distance from `v` to the nearest stored point whose label is not `label`.
    pub fn nearest_other_class(&self, v: &[f64], label: usize) -> Result<f64> {
        self.check_query(v)?;
        self.global()?
            .nearest_filtered(v, 1, |l| l != label)
            .first()
            .map(Neighbor::distance)
            .ok_or_else(|| Error::InsufficientData("index holds a single class".into()))
    }

    pub fn centroid_distances(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_query(v)?;
        Ok(self
            .centroids
            .iter()
            .map(|c| crate::kdtree::squared_distance(v, c).sqrt())
            .collect())
    }

    /// Bytes of embedding storage the given NCM needs: the global tree for
    /// k-NN, global plus per-class trees for 1-NN, centroids only for the
    /// nearest-centroid measure.
    pub fn memory_bytes(&self, ncm: NcmKind) -> Result<usize> {
        let centroid_bytes = self.num_classes * self.dim * std::mem::size_of::<f64>();
        let global = || self.global().map(KdTree::memory_bytes);
        let per_class = || {
            self.per_class()
                .map(|ts| ts.iter().map(KdTree::memory_bytes).sum::<usize>())
        };
        Ok(match ncm {
            NcmKind::Knn { .. } => global()?,
            NcmKind::OneNn => global()? + per_class()?,
            NcmKind::NearestCentroid => centroid_bytes,
        })
    }

    pub fn to_json(&self, model_sha256: &str) -> Result<String> {
        let storage = self.storage();
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            model_sha256: model_sha256.to_owned(),
            dim: self.dim,
            num_classes: self.num_classes,
            storage,
            class_counts: self.class_counts.clone(),
            centroids: self.centroids.clone(),
            labels: self.labels.clone(),
            points: self.points.chunks(self.dim).map(<[f64]>::to_vec).collect(),
        };
        let mut text = serde_json::to_string(&file)?;
        text.push('\n');
        Ok(text)
    }

    /// Parses an index file, rebuilding its trees. Returns the index and the
    /// model hash it was built against.
    pub fn from_json(text: &str) -> Result<(Self, String)> {
        let file: IndexFile = serde_json::from_str(text)?;
        if file.format != INDEX_FORMAT {
            return Err(Error::Artifact(format!("not an index file (format {:?})", file.format)));
        }
        if file.version != INDEX_VERSION {
            return Err(Error::Artifact(format!("unsupported index version {}", file.version)));
        }
        let corrupt = |what: &str| Error::Artifact(format!("index file is corrupt: {what}"));
        if file.class_counts.len() != file.num_classes || file.centroids.len() != file.num_classes {
            return Err(corrupt("class tables"));
        }
        if file.centroids.iter().any(|c| c.len() != file.dim) {
            return Err(corrupt("centroid width"));
        }
        let index = if file.storage.keeps_points() {
            if file.points.len() != file.labels.len() || file.points.iter().any(|p| p.len() != file.dim) {
                return Err(corrupt("points"));
            }
            let points: Vec<f64> = file.points.into_iter().flatten().collect();
            let full = EmbeddingIndex::from_embeddings(file.dim, points, file.labels, file.num_classes)
                .map_err(|e| Error::Artifact(e.to_string()))?;
            if full.class_counts != file.class_counts {
                return Err(corrupt("class counts"));
            }
            full.with_storage(file.storage)
        } else {
            EmbeddingIndex {
                dim: file.dim,
                num_classes: file.num_classes,
                points: Vec::new(),
                labels: Vec::new(),
                class_counts: file.class_counts,
                centroids: file.centroids,
                global: None,
                per_class: None,
            }
        };
        Ok((index, file.model_sha256))
    }

    pub fn save(&self, path: impl AsRef<Path>, model_sha256: &str) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json(model_sha256)?).map_err(|e| Error::io(path, e))
    }
}

fn compute_centroids(dim: usize, points: &[f64], labels: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, &l) in points.chunks(dim).zip(labels) {
        for (s, v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
        counts[l] += 1;
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    sums
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    model_sha256: String,
    dim: usize,
    num_classes: usize,
    storage: IndexStorage,
    class_counts: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    points: Vec<Vec<f64>>,
}
