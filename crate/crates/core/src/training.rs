//! Triplet loss, hard mining, and the two training loops (triplet network
//! and softmax baseline).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetSplit, Sample};
use crate::neural::{
    embedder_layers, init_model, stack_rows, Activation, Gradients, LayerSpec, MlpModel, EMBEDDING_LAYER,
};
use crate::{Error, Result};

/// Distances below this contribute no gradient through their direction term.
pub const DISTANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Triplet,
    CrossEntropy,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Triplet => "triplet",
            LossKind::CrossEntropy => "cross_entropy",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(LossKind::Triplet),
            "cross_entropy" | "cross-entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::InvalidArgument(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Triplet margin.
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Anchors drawn per mining round.
    pub anchors_per_iteration: usize,
    /// Minibatch size for the softmax baseline.
    pub batch_size: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Widths of FC1..FC4; the last one is the embedding width.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.2,
            learning_rate: 0.01,
            epochs: 200,
            anchors_per_iteration: 128,
            batch_size: 32,
            seed: 0,
            loss_kind: LossKind::Triplet,
            hidden: vec![128, 128, 128, 16],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive")));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.anchors_per_iteration == 0 {
            return bad("anchors_per_iteration");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.hidden.len() != EMBEDDING_LAYER + 1 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "hidden must list {} positive widths",
                EMBEDDING_LAYER + 1
            )));
        }
        Ok(())
    }

    /// Flat key-value record stored in the model file.
    pub fn to_metadata(&self) -> BTreeMap<String, String> {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        [
            ("train.margin", self.margin.to_string()),
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.anchors_per_iteration", self.anchors_per_iteration.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.loss_kind", self.loss_kind.to_string()),
            ("train.hidden", hidden.join(",")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(|a - p| - |a - n| + margin, 0)` with non-squared Euclidean distances,
/// plus its subgradients.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<TripletLoss> {
    let dim = anchor.len();
    for v in [positive, negative] {
        if v.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: v.len(),
            });
        }
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    let d_pos = euclidean(anchor, positive);
    let d_neg = euclidean(anchor, negative);
    let loss = (d_pos - d_neg + margin).max(0.0);
    let mut out = TripletLoss {
        loss,
        grad_anchor: vec![0.0; dim],
        grad_positive: vec![0.0; dim],
        grad_negative: vec![0.0; dim],
    };
    if loss == 0.0 {
        return Ok(out);
    }
    if d_pos > DISTANCE_FLOOR {
        for i in 0..dim {
            let g = (anchor[i] - positive[i]) / d_pos;
            out.grad_anchor[i] += g;
            out.grad_positive[i] -= g;
        }
    }
    if d_neg > DISTANCE_FLOOR {
        for i in 0..dim {
            let g = (anchor[i] - negative[i]) / d_neg;
            out.grad_anchor[i] -= g;
            out.grad_negative[i] += g;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mining {
    pub triplets: Vec<Triplet>,
    /// Anchors whose class has no other member.
    pub skipped_anchors: usize,
}

/// For every anchor: the hardest positive is the farthest same-class point
/// (lowest index on ties), and every other-class point strictly closer to
/// the anchor than it becomes a negative.
pub fn mine_triplets(embeddings: ArrayView2<f64>, labels: &[usize], anchors: &[usize]) -> Result<Mining> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Dimension {
            expected: embeddings.nrows(),
            actual: labels.len(),
        });
    }
    let row = |i: usize| embeddings.row(i);
    let mut mining = Mining::default();
    let mut dist = vec![0.0; labels.len()];
    for &a in anchors {
        if a >= labels.len() {
            return Err(Error::InvalidArgument(format!("anchor {a} out of range")));
        }
        let ea = row(a);
        let ea = ea.as_slice().expect("standard layout");
        let mut positive: Option<(usize, f64)> = None;
        for (j, d) in dist.iter_mut().enumerate() {
            *d = euclidean(ea, row(j).as_slice().expect("standard layout"));
            if j != a && labels[j] == labels[a] && positive.is_none_or(|(_, best)| *d > best) {
                positive = Some((j, *d));
            }
        }
        let Some((p, d_pos)) = positive else {
            mining.skipped_anchors += 1;
            continue;
        };
        for (n, &d) in dist.iter().enumerate() {
            if labels[n] != labels[a] && d < d_pos {
                mining.triplets.push(Triplet {
                    anchor: a,
                    positive: p,
                    negative: n,
                });
            }
        }
    }
    Ok(mining)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Triplets mined (triplet training) or samples seen (softmax) this epoch.
    pub triplets: usize,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} loss {:.6} triplets {}",
            self.epoch, self.mean_loss, self.triplets
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Completed,
    /// An entire epoch mined no triplets.
    ConvergedByMining {
        epoch: usize,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: Vec<EpochLog>,
    pub status: TrainStatus,
    pub skipped_anchors: usize,
}

fn training_matrix(samples: &[Sample]) -> Result<(Array2<f64>, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty proper-training set".into()));
    }
    let x = stack_rows(samples.iter().map(|s| s.features.as_slice()))?;
    Ok((x, samples.iter().map(|s| s.label).collect()))
}

fn check_triplet_classes(labels: &[usize]) -> Result<()> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let usable = counts.values().filter(|&&c| c >= 2).count();
    if usable < 2 || counts.len() < 2 {
        return Err(Error::InsufficientData(
            "triplet training needs at least two classes with two samples each".into(),
        ));
    }
    Ok(())
}

/// Trains the shared triplet branch (FC1-FC4, linear FC4).
///
/// Each epoch walks the proper-training set in a fresh random order, taking
/// `anchors_per_iteration` anchors at a time. For every anchor batch the
/// embeddings of the whole proper-training set are refreshed, triplets are
/// mined, and one SGD step is taken on the mean triplet loss. The three
/// branches share parameters, so per-sample embedding gradients from anchor,
/// positive and negative roles are summed before a single backward pass.
pub fn train_triplet(data: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (x, labels) = training_matrix(&data.proper_training)?;
    check_triplet_classes(&labels)?;
    let mut model = init_model(x.ncols(), &embedder_layers(&cfg.hidden), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut status = TrainStatus::Completed;
    let mut skipped_anchors = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut mined = 0usize;
        for anchors in order.chunks(cfg.anchors_per_iteration) {
            let acts = model.forward_to(x.view(), EMBEDDING_LAYER)?;
            let emb = &acts.pre[EMBEDDING_LAYER];
            let mining = mine_triplets(emb.view(), &labels, anchors)?;
            skipped_anchors += mining.skipped_anchors;
            if mining.triplets.is_empty() {
                continue;
            }
            let (batch_loss, upstream) = accumulate_triplet_gradients(emb, &mining.triplets, cfg.margin)?;
            loss_sum += batch_loss;
            mined += mining.triplets.len();

            let involved: Vec<usize> = (0..n).filter(|&i| upstream.row(i).iter().any(|&g| g != 0.0)).collect();
            if involved.is_empty() {
                continue;
            }
            let grads = if involved.len() == n {
                model.backward(&acts, EMBEDDING_LAYER, upstream.view())?
            } else {
                let sub_grad = upstream.select(Axis(0), &involved);
                model.backward(&acts.select_rows(&involved), EMBEDDING_LAYER, sub_grad.view())?
            };
            model.sgd_step(&grads, cfg.learning_rate)?;
        }
        let mean_loss = if mined > 0 { loss_sum / mined as f64 } else { 0.0 };
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_loss,
            triplets: mined,
        });
        if mined == 0 {
            status = TrainStatus::ConvergedByMining { epoch: epoch + 1 };
            break;
        }
    }
    model.metadata = cfg.to_metadata();
    Ok(TrainOutcome {
        model,
        log,
        status,
        skipped_anchors,
    })
}

/// Sum of triplet losses and the gradient of their mean with respect to each
/// embedding row.
pub fn accumulate_triplet_gradients(
    embeddings: &Array2<f64>,
    triplets: &[Triplet],
    margin: f64,
) -> Result<(f64, Array2<f64>)> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    let (n, dim) = embeddings.dim();
    if let Some(bad) = triplets.iter().find(|t| t.anchor.max(t.positive).max(t.negative) >= n) {
        return Err(Error::InvalidArgument(format!("triplet {bad:?} out of range")));
    }
    let emb = embeddings.as_standard_layout();
    let emb = emb.as_slice().expect("standard layout");
    let mut up = vec![0.0; n * dim];
    let mut loss_sum = 0.0;
    let scale = 1.0 / triplets.len().max(1) as f64;
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    for t in triplets {
        let (a, p, q) = (row(t.anchor), row(t.positive), row(t.negative));
        let d_pos = euclidean(a, p);
        let d_neg = euclidean(a, q);
        let loss = d_pos - d_neg + margin;
        if loss <= 0.0 {
            continue;
        }
        loss_sum += loss;
        // Same per-role subgradients as `triplet_loss`, written in place.
        if d_pos > DISTANCE_FLOOR {
            let s = scale / d_pos;
            for i in 0..dim {
                let g = s * (a[i] - p[i]);
                up[t.anchor * dim + i] += g;
                up[t.positive * dim + i] -= g;
            }
        }
        if d_neg > DISTANCE_FLOOR {
            let s = scale / d_neg;
            for i in 0..dim {
                let g = s * (a[i] - q[i]);
                up[t.anchor * dim + i] -= g;
                up[t.negative * dim + i] += g;
            }
        }
    }
    let upstream = Array2::from_shape_vec((n, dim), up).expect("shape matches buffer");
    Ok((loss_sum, upstream))
}

/// Total (mean) triplet loss for a fixed set of triplets through the shared
/// network; the objective whose gradient one mining round follows.
pub fn mean_triplet_objective(
    model: &MlpModel,
    inputs: ArrayView2<f64>,
    triplets: &[Triplet],
    margin: f64,
) -> Result<f64> {
    let emb = model.embed_batch(inputs)?;
    Ok(accumulate_triplet_gradients(&emb, triplets, margin)?.0 / triplets.len().max(1) as f64)
}

/// Mean softmax cross-entropy of `model` on `samples`.
pub fn cross_entropy(model: &MlpModel, samples: &[Sample]) -> Result<f64> {
    let (x, labels) = training_matrix(samples)?;
    let probs = model.classify_batch(x.view())?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y]].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Summed cross-entropy over the batch and the parameter gradient of its mean.
pub fn cross_entropy_gradients(model: &MlpModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
    if !model.is_classifier() {
        return Err(Error::Model("model does not end in a softmax layer".into()));
    }
    if labels.len() != x.nrows() || labels.is_empty() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    let head = model.layers.len() - 1;
    let acts = model.forward_batch(x)?;
    let probs = acts.output();
    let mut upstream = probs.clone();
    let mut loss_sum = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.ncols() {
            return Err(Error::InvalidArgument(format!("label {y} outside the softmax head")));
        }
        loss_sum -= probs[[r, y]].max(f64::MIN_POSITIVE).ln();
        upstream[[r, y]] -= 1.0;
    }
    upstream *= 1.0 / labels.len() as f64;
    let grads = model.backward(&acts, head, upstream.view())?;
    Ok((loss_sum, grads))
}

/// Minibatch SGD on softmax cross-entropy: FC1-FC4 ReLU plus a softmax head.
pub fn train_classifier(data: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (x, labels) = training_matrix(&data.proper_training)?;
    let num_classes = data.num_classes().max(1);
    let mut specs: Vec<LayerSpec> = cfg
        .hidden
        .iter()
        .map(|&w| LayerSpec::new(w, Activation::Relu))
        .collect();
    specs.push(LayerSpec::new(num_classes, Activation::Softmax));
    let mut model = init_model(x.ncols(), &specs, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (batch_loss, grads) = cross_entropy_gradients(&model, bx.view(), &by)?;
            loss_sum += batch_loss;
            model.sgd_step(&grads, cfg.learning_rate)?;
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / labels.len() as f64,
            triplets: labels.len(),
        });
    }
    let mut cfg = cfg.clone();
    cfg.loss_kind = LossKind::CrossEntropy;
    model.metadata = cfg.to_metadata();
    Ok(TrainOutcome {
        model,
        log,
        status: TrainStatus::Completed,
        skipped_anchors: 0,
    })
}

/// Dispatches on `cfg.loss_kind`.
pub fn train(data: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    match cfg.loss_kind {
        LossKind::Triplet => train_triplet(data, cfg),
        LossKind::CrossEntropy => train_classifier(data, cfg),
    }
}
