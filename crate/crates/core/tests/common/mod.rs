//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triplet_icp::neural::{Activation, MlpModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Sum of squared coordinate differences, accumulated left to right.
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// (id, distance) of the `k` nearest rows by linear scan, ordered by
/// (squared distance, id).
pub fn brute_knn(points: &[f64], dim: usize, query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = points
        .chunks(dim)
        .enumerate()
        .map(|(i, p)| (dist_sq(p, query), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(d, i)| (i, d.sqrt())).collect()
}

pub fn brute_nearest_where(points: &[f64], dim: usize, query: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    points
        .chunks(dim)
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, p)| dist_sq(p, query))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn safe_ratio(num: f64, den: f64) -> f64 {
    match (num == 0.0, den == 0.0) {
        (true, true) => 0.0,
        (false, true) => f64::INFINITY,
        _ => num / den,
    }
}

pub fn brute_knn_ncm(points: &[f64], labels: &[usize], dim: usize, q: &[f64], y: usize, k: usize) -> f64 {
    brute_knn(points, dim, q, k)
        .iter()
        .filter(|(i, _)| labels[*i] != y)
        .count() as f64
}

pub fn brute_1nn_ncm(points: &[f64], labels: &[usize], dim: usize, q: &[f64], y: usize) -> f64 {
    let same = brute_nearest_where(points, dim, q, |i| labels[i] == y);
    let other = brute_nearest_where(points, dim, q, |i| labels[i] != y);
    safe_ratio(same, other)
}

pub fn brute_centroids(points: &[f64], labels: &[usize], dim: usize, classes: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (p, &l) in points.chunks(dim).zip(labels) {
        counts[l] += 1;
        for j in 0..dim {
            sums[l][j] += p[j];
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    sums
}

pub fn brute_centroid_ncm(centroids: &[Vec<f64>], q: &[f64], y: usize) -> f64 {
    let d: Vec<f64> = centroids.iter().map(|c| dist_sq(c, q).sqrt()).collect();
    let other = d
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != y)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    safe_ratio(d[y], other)
}

/// Direct O(n^2) mean silhouette.
pub fn brute_silhouette(points: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let d = |i: usize, j: usize| {
        let a = points.row(i);
        let b = points.row(j);
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let classes: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c && j != i).collect();
            (
                members.iter().map(|&j| d(i, j)).sum::<f64>() / members.len() as f64,
                members.len(),
            )
        };
        let (a, own) = mean_to(labels[i]);
        if own == 0 {
            continue;
        }
        let b = classes
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c).0)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    total / n as f64
}

/// ReLU on/off pattern of every hidden unit for every row, used to skip
/// finite-difference probes that straddle a kink.
pub fn relu_pattern(model: &MlpModel, x: ArrayView2<f64>, last: usize) -> Vec<bool> {
    let acts = model.forward_to(x, last).unwrap();
    model.layers[..=last]
        .iter()
        .zip(&acts.pre)
        .filter(|(l, _)| l.activation == Activation::Relu)
        .flat_map(|(_, z)| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect()
}

pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Relative error with a floor on the denominator for near-zero gradients.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, Copy)]
pub enum Param {
    Weight(usize, usize, usize),
    Bias(usize, usize),
}

pub fn all_params(model: &MlpModel) -> Vec<Param> {
    let mut out = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        let (rows, cols) = layer.weights.dim();
        for r in 0..rows {
            out.extend((0..cols).map(|c| Param::Weight(l, r, c)));
            out.push(Param::Bias(l, r));
        }
    }
    out
}

fn param_mut(model: &mut MlpModel, p: Param) -> &mut f64 {
    match p {
        Param::Weight(l, r, c) => &mut model.layers[l].weights[[r, c]],
        Param::Bias(l, r) => &mut model.layers[l].bias[r],
    }
}

fn grad_of(g: &triplet_icp::neural::Gradients, p: Param) -> f64 {
    match p {
        Param::Weight(l, r, c) => g.weights[l][[r, c]],
        Param::Bias(l, r) => g.biases[l][r],
    }
}

/// Central differences of `objective` against `analytic` over every
/// parameter. Probes whose `pattern` differs between the two sides straddle
/// a kink and are skipped.
pub fn finite_difference_check(
    model: &MlpModel,
    analytic: &triplet_icp::neural::Gradients,
    h: f64,
    objective: impl Fn(&MlpModel) -> f64,
    pattern: impl Fn(&MlpModel) -> Vec<bool>,
) -> FdReport {
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = model.clone();
    for p in all_params(model) {
        let original = *param_mut(&mut probe, p);
        *param_mut(&mut probe, p) = original + h;
        let (f_plus, pat_plus) = (objective(&probe), pattern(&probe));
        *param_mut(&mut probe, p) = original - h;
        let (f_minus, pat_minus) = (objective(&probe), pattern(&probe));
        *param_mut(&mut probe, p) = original;
        if pat_plus != pat_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * h);
        report.max_rel_error = report.max_rel_error.max(rel_error(grad_of(analytic, p), numeric));
        report.checked += 1;
    }
    report
}

pub struct GradientCase {
    pub model: MlpModel,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
}

/// A small random embedder (four layers) with a random batch; every class
/// has at least two rows. With `classifier`, a random softmax head is added.
pub fn gradient_case(seed: u64, classifier: bool) -> GradientCase {
    use triplet_icp::neural::{init_model, LayerSpec};
    let mut r = rng(seed);
    let input = r.random_range(2..6);
    let mut specs: Vec<LayerSpec> = (0..3)
        .map(|_| LayerSpec::new(r.random_range(3..7), Activation::Relu))
        .collect();
    let classes = r.random_range(2..4usize);
    if classifier {
        specs.push(LayerSpec::new(r.random_range(2..5), Activation::Relu));
        specs.push(LayerSpec::new(classes, Activation::Softmax));
    } else {
        specs.push(LayerSpec::new(r.random_range(2..5), Activation::None));
    }
    let mut model = init_model(input, &specs, seed).unwrap();
    for layer in &mut model.layers {
        let (rows, cols) = layer.weights.dim();
        layer.weights = random_matrix(&mut r, rows, cols, 1.0);
        layer.bias = layer.bias.mapv(|_| r.random_range(-0.5..0.5));
    }
    let n = r.random_range(2 * classes..10);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let x = random_matrix(&mut r, n, input, 2.0);
    GradientCase { model, x, labels }
}

/// Objective `sum(upstream * pre[layer])`, whose gradient is exactly what
/// `backward` computes for an upstream on that layer.
pub fn check_pre_layer(case: &GradientCase, layer: usize, seed: u64) -> FdReport {
    let acts = case.model.forward_to(case.x.view(), layer).unwrap();
    let upstream = random_matrix(&mut rng(seed), case.x.nrows(), acts.pre[layer].ncols(), 1.0);
    let analytic = case.model.backward(&acts, layer, upstream.view()).unwrap();
    let objective = |m: &MlpModel| {
        let a = m.forward_to(case.x.view(), layer).unwrap();
        (&a.pre[layer] * &upstream).sum()
    };
    finite_difference_check(&case.model, &analytic, 1e-4, objective, |m| {
        relu_pattern(m, case.x.view(), layer)
    })
}

/// Mean triplet loss over triplets mined with every row as an anchor,
/// differentiated through all three shared branches.
pub fn check_triplet(case: &GradientCase, margin: f64) -> Option<FdReport> {
    use triplet_icp::neural::EMBEDDING_LAYER;
    use triplet_icp::training::{accumulate_triplet_gradients, mean_triplet_objective, mine_triplets};
    let acts = case.model.forward_to(case.x.view(), EMBEDDING_LAYER).unwrap();
    let emb = &acts.pre[EMBEDDING_LAYER];
    let anchors: Vec<usize> = (0..case.labels.len()).collect();
    let triplets = mine_triplets(emb.view(), &case.labels, &anchors).unwrap().triplets;
    if triplets.is_empty() {
        return None;
    }
    let (_, upstream) = accumulate_triplet_gradients(emb, &triplets, margin).unwrap();
    let analytic = case.model.backward(&acts, EMBEDDING_LAYER, upstream.view()).unwrap();
    let objective = |m: &MlpModel| mean_triplet_objective(m, case.x.view(), &triplets, margin).unwrap();
    let pattern = |m: &MlpModel| {
        let mut p = relu_pattern(m, case.x.view(), EMBEDDING_LAYER);
        let e = m.embed_batch(case.x.view()).unwrap();
        let row = |i: usize| e.row(i).to_vec();
        for t in &triplets {
            let (a, pos, neg) = (row(t.anchor), row(t.positive), row(t.negative));
            p.push(dist_sq(&a, &pos).sqrt() - dist_sq(&a, &neg).sqrt() + margin > 0.0);
        }
        p
    };
    Some(finite_difference_check(
        &case.model,
        &analytic,
        1e-4,
        objective,
        pattern,
    ))
}

/// Mean softmax cross-entropy, recomputed from `classify_batch`.
pub fn check_cross_entropy(case: &GradientCase) -> FdReport {
    use triplet_icp::training::cross_entropy_gradients;
    let (_, analytic) = cross_entropy_gradients(&case.model, case.x.view(), &case.labels).unwrap();
    let objective = |m: &MlpModel| {
        let p = m.classify_batch(case.x.view()).unwrap();
        -case
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| p[[i, y]].ln())
            .sum::<f64>()
            / case.labels.len() as f64
    };
    let last = case.model.layers.len() - 1;
    finite_difference_check(&case.model, &analytic, 1e-4, objective, |m| {
        relu_pattern(m, case.x.view(), last)
    })
}

/// Closed-form subgradients of a single triplet loss against central
/// differences of the loss in each input coordinate.
pub fn triplet_input_gradient_error(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    use triplet_icp::training::triplet_loss;
    let tl = triplet_loss(a, p, n, margin).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let parts = [a.to_vec(), p.to_vec(), n.to_vec()];
    let grads = [&tl.grad_anchor, &tl.grad_positive, &tl.grad_negative];
    for role in 0..3 {
        for i in 0..a.len() {
            let eval = |delta: f64| {
                let mut v = parts.clone();
                v[role][i] += delta;
                triplet_loss(&v[0], &v[1], &v[2], margin).unwrap().loss
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_error(grads[role][i], numeric));
        }
    }
    worst
}

pub struct BlobFixture {
    pub model: MlpModel,
    pub index: triplet_icp::index::EmbeddingIndex,
    pub data: triplet_icp::dataset::DatasetSplit,
}

/// Four overlapping Gaussian classes, split 25% test / 30% of the rest for
/// calibration, with a briefly trained triplet embedding.
pub fn blob_fixture(seed: u64) -> BlobFixture {
    blob_fixture_with(seed, 600, 2.5, 8)
}

pub fn blob_fixture_with(seed: u64, n_per_class: usize, separation: f64, epochs: usize) -> BlobFixture {
    use triplet_icp::dataset::{gen_blobs, split, BlobConfig};
    use triplet_icp::training::{train_triplet, TrainConfig};
    let samples = gen_blobs(&BlobConfig {
        n_per_class,
        num_classes: 4,
        dim: 8,
        separation,
        spread: 1.0,
        seed,
    })
    .unwrap();
    let data = split(&samples, 0.25, 0.3, seed).unwrap().normalize();
    let cfg = TrainConfig {
        epochs,
        hidden: vec![32, 32, 32, 8],
        seed,
        ..TrainConfig::default()
    };
    let model = train_triplet(&data, &cfg).unwrap().model;
    let index = triplet_icp::index::EmbeddingIndex::build(&model, &data.proper_training).unwrap();
    BlobFixture { model, index, data }
}
