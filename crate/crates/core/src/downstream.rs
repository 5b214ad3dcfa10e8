//! Transfer to downstream tasks: node and graph embeddings from a trained
//! encoder, linear probing ("freeze") and end-to-end fine-tuning ("full")
//! under k-fold cross validation, and top-k similarity search.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ShapeError;
use crate::gin::{encode, forward, glorot_limit, EncoderError, GinParams, PreparedInstance};
use crate::graph::{Graph, GraphError};
use crate::optim::{adam_step, clip_gradients, AdamConfig, AdamState, LrSchedule};
use crate::sampler::{augment, RwrConfig, SamplerError};
use crate::seeding::{self, purpose};
use crate::tensor::{dot, Tensor};

/// Whole graphs above this size must be evaluated via sampled subgraphs.
pub const DEFAULT_GRAPH_CAP: usize = 512;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid labels: {0}")]
    Labels(String),
    #[error("folds must be >= 2, got {0}")]
    TooFewFolds(usize),
    #[error("{samples} labeled samples cannot be split into {folds} folds")]
    FewerSamplesThanFolds { samples: usize, folds: usize },
    #[error("graph is empty")]
    EmptyGraph,
    #[error("graph has {vertices} vertices, above the whole-graph cap of {cap}; embed sampled subgraphs instead (node mode)")]
    GraphTooLarge { vertices: usize, cap: usize },
    #[error("ground-truth pair list is empty")]
    EmptyTruth,
    #[error("k must satisfy 1 <= k <= {max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

impl From<ShapeError> for DownstreamError {
    fn from(e: ShapeError) -> Self {
        DownstreamError::Encoder(e.into())
    }
}

/// Vertices of one graph with class labels `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledNodes {
    pub graph: Graph,
    labels: Vec<(usize, usize)>,
    classes: usize,
}

fn class_count(labels: impl Iterator<Item = usize> + Clone) -> Result<usize, DownstreamError> {
    let present: BTreeSet<usize> = labels.collect();
    let classes = present.iter().next_back().map_or(0, |m| m + 1);
    if present.len() != classes {
        return Err(DownstreamError::Labels(format!(
            "class ids must be contiguous from 0; found {present:?}"
        )));
    }
    Ok(classes)
}

impl LabeledNodes {
    pub fn new(graph: Graph, labels: Vec<(usize, usize)>) -> Result<Self, DownstreamError> {
        let mut seen = BTreeSet::new();
        for &(v, _) in &labels {
            if v >= graph.num_vertices() {
                return Err(DownstreamError::Labels(format!(
                    "vertex {v} out of range for graph with {} vertices",
                    graph.num_vertices()
                )));
            }
            if !seen.insert(v) {
                return Err(DownstreamError::Labels(format!("vertex {v} labeled twice")));
            }
        }
        let classes = class_count(labels.iter().map(|&(_, c)| c))?;
        Ok(Self { graph, labels, classes })
    }

    pub fn labels(&self) -> &[(usize, usize)] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn vertices(&self) -> Vec<usize> {
        self.labels.iter().map(|&(v, _)| v).collect()
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.labels.iter().map(|&(_, c)| c).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub graphs: Vec<Graph>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl GraphDataset {
    pub fn new(graphs: Vec<Graph>, labels: Vec<usize>) -> Result<Self, DownstreamError> {
        if graphs.len() != labels.len() {
            return Err(DownstreamError::Labels(format!(
                "{} graphs but {} labels",
                graphs.len(),
                labels.len()
            )));
        }
        let classes = class_count(labels.iter().copied())?;
        Ok(Self { graphs, labels, classes })
    }
}

// ---------------------------------------------------------------------------
// File formats

fn parse_usize(token: Option<&str>, line: usize, what: &str) -> Result<usize, DownstreamError> {
    let token = token.ok_or_else(|| DownstreamError::Parse {
        line,
        message: format!("missing {what}"),
    })?;
    token.parse().map_err(|_| DownstreamError::Parse {
        line,
        message: format!("invalid {what} {token:?}"),
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then(|| (i + 1, t.split_whitespace().collect()))
    })
}

fn parse_pairs(text: &str, first: &str, second: &str) -> Result<Vec<(usize, usize)>, DownstreamError> {
    data_lines(text)
        .map(|(line, fields)| {
            if fields.len() != 2 {
                return Err(DownstreamError::Parse {
                    line,
                    message: format!("expected \"<{first}> <{second}>\", got {} fields", fields.len()),
                });
            }
            Ok((
                parse_usize(Some(fields[0]), line, first)?,
                parse_usize(Some(fields[1]), line, second)?,
            ))
        })
        .collect()
}

/// Lines `<vertex_id> <class_id>`.
pub fn parse_labels(text: &str) -> Result<Vec<(usize, usize)>, DownstreamError> {
    parse_pairs(text, "vertex_id", "class_id")
}

/// Lines `<u> <v>` pairing a vertex of the first graph with its match in the second.
pub fn parse_truth(text: &str) -> Result<Vec<(usize, usize)>, DownstreamError> {
    parse_pairs(text, "u", "v")
}

/// Records `g <graph_id> <class_id> <n> <m>` followed by `m` lines `<u> <v>`.
pub fn parse_graph_set(text: &str) -> Result<GraphDataset, DownstreamError> {
    let mut lines = data_lines(text);
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    while let Some((line, fields)) = lines.next() {
        if fields.first() != Some(&"g") || fields.len() != 5 {
            return Err(DownstreamError::Parse {
                line,
                message: "expected record header \"g <graph_id> <class_id> <n> <m>\"".into(),
            });
        }
        let _graph_id = parse_usize(Some(fields[1]), line, "graph_id")?;
        let class = parse_usize(Some(fields[2]), line, "class_id")?;
        let n = parse_usize(Some(fields[3]), line, "vertex count")?;
        let m = parse_usize(Some(fields[4]), line, "edge count")?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let (eline, ef) = lines.next().ok_or_else(|| DownstreamError::Parse {
                line,
                message: format!("record declares {m} edges but the file ends early"),
            })?;
            if ef.len() != 2 {
                return Err(DownstreamError::Parse {
                    line: eline,
                    message: "expected \"<u> <v>\"".into(),
                });
            }
            let u = parse_usize(Some(ef[0]), eline, "u")?;
            let v = parse_usize(Some(ef[1]), eline, "v")?;
            if u >= n || v >= n {
                return Err(DownstreamError::Parse {
                    line: eline,
                    message: format!("edge ({u}, {v}) out of range for {n} vertices"),
                });
            }
            edges.push((u, v));
        }
        graphs.push(Graph::from_edges(n, edges)?);
        labels.push(class);
    }
    GraphDataset::new(graphs, labels)
}

/// Inverse of [`parse_graph_set`].
pub fn format_graph_set(data: &GraphDataset) -> String {
    let mut out = String::new();
    for (i, (g, c)) in data.graphs.iter().zip(&data.labels).enumerate() {
        out.push_str(&format!("g {i} {c} {} {}\n", g.num_vertices(), g.num_edges()));
        for (u, v) in g.edges() {
            out.push_str(&format!("{u} {v}\n"));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Embedding

fn node_instance(
    params: &GinParams,
    g: &Graph,
    v: usize,
    rwr: &RwrConfig,
) -> Result<PreparedInstance, DownstreamError> {
    let mut rng = seeding::stream(rwr.seed, &[purpose::NODE_EMBED, v as u64]);
    let aug = augment(g, v, rwr, &mut rng)?;
    Ok(PreparedInstance::from_subgraph(&aug, &params.config)?)
}

fn graph_instance(params: &GinParams, g: &Graph, cap: usize) -> Result<PreparedInstance, DownstreamError> {
    if g.num_vertices() == 0 {
        return Err(DownstreamError::EmptyGraph);
    }
    if g.num_vertices() > cap {
        return Err(DownstreamError::GraphTooLarge {
            vertices: g.num_vertices(),
            cap,
        });
    }
    // The whole graph is the instance; vertex 0 carries the ego flag.
    Ok(PreparedInstance::from_graph(g, &params.config)?)
}

fn embed_instance(params: &GinParams, inst: &PreparedInstance) -> Result<Vec<f64>, DownstreamError> {
    let mut unused = seeding::stream(0, &[purpose::EVAL]);
    Ok(encode(params, inst, false, &mut unused)?.graph_rep)
}

/// One deterministic augmentation per vertex (seeded by `rwr.seed` and the
/// vertex id), encoded in evaluation mode. Rows are unit vectors.
pub fn embed_nodes(
    params: &GinParams,
    g: &Graph,
    vertices: &[usize],
    rwr: &RwrConfig,
) -> Result<Tensor, DownstreamError> {
    let mut out = Tensor::zeros(vertices.len(), params.config.out_dim);
    for (i, &v) in vertices.iter().enumerate() {
        let inst = node_instance(params, g, v, rwr)?;
        out.row_mut(i).copy_from_slice(&embed_instance(params, &inst)?);
    }
    Ok(out)
}

pub fn embed_graph(params: &GinParams, g: &Graph, cap: usize) -> Result<Vec<f64>, DownstreamError> {
    let inst = graph_instance(params, g, cap)?;
    embed_instance(params, &inst)
}

// ---------------------------------------------------------------------------
// Logistic regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2_penalty: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2_penalty: 1e-4,
            epochs: 3000,
            lr: 4.0,
        }
    }
}

/// Multinomial logistic regression head: `logits = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `classes × dim`
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub l2_penalty: f64,
}

impl LinearHead {
    pub fn zeros(classes: usize, dim: usize, l2_penalty: f64) -> Self {
        Self {
            weight: Tensor::zeros(classes, dim),
            bias: vec![0.0; classes],
            l2_penalty,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weight.rows())
            .map(|c| dot(self.weight.row(c), x) + self.bias[c])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Mean cross-entropy plus `(λ/2)‖W‖²`, and its gradient `(dW, db)`.
pub fn logreg_objective(head: &LinearHead, features: &Tensor, labels: &[usize]) -> (f64, Tensor, Vec<f64>) {
    let n = features.rows().max(1) as f64;
    let (classes, dim) = head.weight.shape();
    let mut loss = 0.0;
    let mut dw = Tensor::zeros(classes, dim);
    let mut db = vec![0.0; classes];
    for (i, &y) in labels.iter().enumerate() {
        let x = features.row(i);
        let p = softmax(&head.logits(x));
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for c in 0..classes {
            let r = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
            db[c] += r;
            for (w, xv) in dw.row_mut(c).iter_mut().zip(x) {
                *w += r * xv;
            }
        }
    }
    loss /= n;
    loss += 0.5 * head.l2_penalty * head.weight.sum_squares();
    for (g, w) in dw.data_mut().iter_mut().zip(head.weight.data()) {
        *g += head.l2_penalty * w;
    }
    (loss, dw, db)
}

/// Full-batch gradient descent from a zero initialization; deterministic.
pub fn logreg_fit(features: &Tensor, labels: &[usize], classes: usize, cfg: &LogRegConfig) -> LinearHead {
    assert_eq!(features.rows(), labels.len(), "one label per row");
    let mut head = LinearHead::zeros(classes.max(1), features.cols(), cfg.l2_penalty);
    if labels.is_empty() {
        return head;
    }
    for _ in 0..cfg.epochs {
        let (_, dw, db) = logreg_objective(&head, features, labels);
        for (w, g) in head.weight.data_mut().iter_mut().zip(dw.data()) {
            *w -= cfg.lr * g;
        }
        for (b, g) in head.bias.iter_mut().zip(&db) {
            *b -= cfg.lr * g;
        }
    }
    head
}

pub fn logreg_predict(head: &LinearHead, features: &Tensor) -> Vec<usize> {
    (0..features.rows()).map(|i| argmax(&head.logits(features.row(i)))).collect()
}

// ---------------------------------------------------------------------------
// Cross validation

/// Fold id for every sample. Samples are shuffled within each class and dealt
/// round-robin in class order, so fold sizes differ by at most one and each
/// class is spread as evenly as possible.
pub fn kfold_assignments(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>, DownstreamError> {
    if folds < 2 {
        return Err(DownstreamError::TooFewFolds(folds));
    }
    if labels.len() < folds {
        return Err(DownstreamError::FewerSamplesThanFolds {
            samples: labels.len(),
            folds,
        });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = seeding::stream(seed, &[purpose::FOLDS]);
    let mut order = Vec::with_capacity(labels.len());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut assignment = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneMode {
    Freeze,
    Full,
}

impl std::str::FromStr for FineTuneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "freeze" => Ok(FineTuneMode::Freeze),
            "full" => Ok(FineTuneMode::Full),
            other => Err(format!("unknown mode {other:?} (expected freeze or full)")),
        }
    }
}

/// End-to-end fine-tuning of encoder and linear head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip_norm: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            peak_lr: 0.005,
            warmup_epochs: 3,
            batch_size: 32,
            adam: AdamConfig::default(),
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub folds: usize,
    pub seed: u64,
    pub logreg: LogRegConfig,
    pub finetune: FineTuneConfig,
    pub graph_cap: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            logreg: LogRegConfig::default(),
            finetune: FineTuneConfig::default(),
            graph_cap: DEFAULT_GRAPH_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

impl ClassificationReport {
    fn from_folds(fold_accuracies: Vec<f64>) -> Self {
        let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len().max(1) as f64;
        Self {
            fold_accuracies,
            mean_accuracy,
        }
    }
}

fn split(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}

fn select_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), t.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(t.row(i));
    }
    out
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

fn freeze_cv(features: &Tensor, labels: &[usize], classes: usize, opts: &EvalOptions) -> Result<ClassificationReport, DownstreamError> {
    let assignment = kfold_assignments(labels, opts.folds, opts.seed)?;
    let mut accs = Vec::with_capacity(opts.folds);
    for fold in 0..opts.folds {
        let (train, test) = split(&assignment, fold);
        let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let head = logreg_fit(&select_rows(features, &train), &y_train, classes, &opts.logreg);
        accs.push(accuracy(&logreg_predict(&head, &select_rows(features, &test)), &y_test));
    }
    Ok(ClassificationReport::from_folds(accs))
}

/// Trains a copy of the encoder plus a fresh linear head on `train`, then
/// predicts `test`.
#[allow(clippy::too_many_arguments)]
fn finetune_fold(
    params: &GinParams,
    instances: &[PreparedInstance],
    labels: &[usize],
    classes: usize,
    train: &[usize],
    test: &[usize],
    cfg: &FineTuneConfig,
    seed: u64,
) -> Result<Vec<usize>, DownstreamError> {
    let mut encoder = params.clone();
    let dim = params.config.out_dim;
    let mut init = seeding::stream(seed, &[purpose::FINETUNE, 0]);
    let limit = glorot_limit(dim, classes);
    let mut head_w = Tensor::from_vec(dim, classes, (0..dim * classes).map(|_| init.gen_range(-limit..=limit)).collect());
    let mut head_b = Tensor::zeros(1, classes);

    let batch = cfg.batch_size.max(1);
    let batches_per_epoch = train.len().div_ceil(batch).max(1) as u64;
    let total = (cfg.epochs as u64 * batches_per_epoch).max(1);
    let schedule = LrSchedule {
        peak_lr: cfg.peak_lr,
        warmup_steps: (cfg.warmup_epochs as u64 * batches_per_epoch).clamp(1, total),
        total_steps: total,
    };

    let mut all_params: Vec<Tensor> = encoder.tensors.clone();
    all_params.push(head_w.clone());
    all_params.push(head_b.clone());
    let mut adam = AdamState::new(&all_params);
    let mut order = train.to_vec();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs as u64 {
        let mut shuffle_rng = seeding::stream(seed, &[purpose::FINETUNE, 1, epoch]);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let mut grads: Vec<Tensor> = all_params.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
            for &i in chunk {
                let mut rng = seeding::stream(seed, &[purpose::FINETUNE, 2, step, i as u64]);
                let mut run = forward(&encoder, &instances[i], true, &mut rng)?;
                let w = run.tape.leaf(head_w.clone());
                let b = run.tape.leaf(head_b.clone());
                let logits = run.tape.matmul(run.graph_rep, w)?;
                let logits = run.tape.add_row(logits, b)?;
                let logp = run.tape.log_softmax(logits);
                let mut onehot = Tensor::zeros(1, classes);
                onehot.set(0, labels[i], 1.0);
                let target = run.tape.leaf(onehot);
                let picked = run.tape.hadamard(logp, target)?;
                let total = run.tape.sum(picked);
                let loss = run.tape.scale(total, -1.0 / chunk.len() as f64);
                let mut g = run.tape.backward(loss, Tensor::from_vec(1, 1, vec![1.0]));
                let vars = run.params.iter().copied().chain([w, b]);
                for (acc, var) in grads.iter_mut().zip(vars) {
                    if let Some(d) = g.take(var) {
                        acc.add_assign(&d);
                    }
                }
            }
            clip_gradients(&mut grads, cfg.clip_norm);
            adam_step(&mut all_params, &grads, &mut adam, schedule.lr_at(step), &cfg.adam);
            let n = encoder.tensors.len();
            encoder.tensors.clone_from_slice(&all_params[..n]);
            head_w = all_params[n].clone();
            head_b = all_params[n + 1].clone();
            step += 1;
        }
    }

    let mut unused = seeding::stream(0, &[purpose::EVAL]);
    test.iter()
        .map(|&i| {
            let rep = encode(&encoder, &instances[i], false, &mut unused)?.graph_rep;
            let logits = Tensor::row_vector(&rep).matmul(&head_w);
            let scores: Vec<f64> = logits.data().iter().zip(head_b.data()).map(|(a, b)| a + b).collect();
            Ok(argmax(&scores))
        })
        .collect()
}

fn full_cv(
    params: &GinParams,
    instances: &[PreparedInstance],
    labels: &[usize],
    classes: usize,
    opts: &EvalOptions,
) -> Result<ClassificationReport, DownstreamError> {
    let assignment = kfold_assignments(labels, opts.folds, opts.seed)?;
    let mut accs = Vec::with_capacity(opts.folds);
    for fold in 0..opts.folds {
        let (train, test) = split(&assignment, fold);
        let seed = seeding::derive_seed(opts.seed, &[fold as u64]);
        let pred = finetune_fold(params, instances, labels, classes, &train, &test, &opts.finetune, seed)?;
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        accs.push(accuracy(&pred, &truth));
    }
    Ok(ClassificationReport::from_folds(accs))
}

fn classify(
    params: &GinParams,
    instances: Vec<PreparedInstance>,
    labels: &[usize],
    classes: usize,
    mode: FineTuneMode,
    opts: &EvalOptions,
) -> Result<ClassificationReport, DownstreamError> {
    // fail fast on fold errors before any encoding work
    kfold_assignments(labels, opts.folds, opts.seed)?;
    match mode {
        FineTuneMode::Freeze => {
            let mut features = Tensor::zeros(instances.len(), params.config.out_dim);
            for (i, inst) in instances.iter().enumerate() {
                features.row_mut(i).copy_from_slice(&embed_instance(params, inst)?);
            }
            freeze_cv(&features, labels, classes, opts)
        }
        FineTuneMode::Full => full_cv(params, &instances, labels, classes, opts),
    }
}

/// k-fold node classification. Each labeled vertex is represented by one
/// deterministic augmentation of its neighborhood.
pub fn node_classify(
    params: &GinParams,
    data: &LabeledNodes,
    rwr: &RwrConfig,
    mode: FineTuneMode,
    opts: &EvalOptions,
) -> Result<ClassificationReport, DownstreamError> {
    let labels = data.class_ids();
    kfold_assignments(&labels, opts.folds, opts.seed)?;
    let instances = data
        .vertices()
        .into_iter()
        .map(|v| node_instance(params, &data.graph, v, rwr))
        .collect::<Result<Vec<_>, _>>()?;
    classify(params, instances, &labels, data.classes(), mode, opts)
}

/// k-fold graph classification on whole graphs.
pub fn graph_classify(
    params: &GinParams,
    data: &GraphDataset,
    mode: FineTuneMode,
    opts: &EvalOptions,
) -> Result<ClassificationReport, DownstreamError> {
    kfold_assignments(&data.labels, opts.folds, opts.seed)?;
    let instances = data
        .graphs
        .iter()
        .map(|g| graph_instance(params, g, opts.graph_cap))
        .collect::<Result<Vec<_>, _>>()?;
    classify(params, instances, &data.labels, data.classes, mode, opts)
}

// ---------------------------------------------------------------------------
// Similarity search

/// Fraction of `(u, v)` pairs for which `v` is among the `k` rows of
/// `targets` with the largest inner product against row `u` of `queries`.
/// Ties rank the lower vertex id first.
pub fn hits_at_k(queries: &Tensor, targets: &Tensor, truth: &[(usize, usize)], k: usize) -> Result<f64, DownstreamError> {
    if truth.is_empty() {
        return Err(DownstreamError::EmptyTruth);
    }
    if k == 0 || k > targets.rows() {
        return Err(DownstreamError::InvalidK { k, max: targets.rows() });
    }
    let mut hits = 0;
    for &(u, v) in truth {
        if u >= queries.rows() || v >= targets.rows() {
            return Err(DownstreamError::Labels(format!("truth pair ({u}, {v}) out of range")));
        }
        let q = queries.row(u);
        let s_v = dot(q, targets.row(v));
        let ahead = (0..targets.rows())
            .filter(|&w| {
                let s = dot(q, targets.row(w));
                s > s_v || (s == s_v && w < v)
            })
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// HITS@k of matching vertices of `g1` to vertices of `g2` by embedding
/// inner product (evaluated from `g1` to `g2`).
pub fn top_k_similarity(
    params: &GinParams,
    g1: &Graph,
    g2: &Graph,
    truth: &[(usize, usize)],
    k: usize,
    rwr: &RwrConfig,
) -> Result<f64, DownstreamError> {
    if truth.is_empty() {
        return Err(DownstreamError::EmptyTruth);
    }
    if k == 0 || k > g2.num_vertices() {
        return Err(DownstreamError::InvalidK {
            k,
            max: g2.num_vertices(),
        });
    }
    let e1 = embed_nodes(params, g1, &(0..g1.num_vertices()).collect::<Vec<_>>(), rwr)?;
    let e2 = embed_nodes(params, g2, &(0..g2.num_vertices()).collect::<Vec<_>>(), rwr)?;
    hits_at_k(&e1, &e2, truth, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kfold_partition_properties() {
        let labels: Vec<usize> = (0..47).map(|i| i % 3).collect();
        let a = kfold_assignments(&labels, 10, 3).unwrap();
        let mut sizes = [0usize; 10];
        for &f in &a {
            sizes[f] += 1;
        }
        let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(mx - mn <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 47);
        assert_eq!(a, kfold_assignments(&labels, 10, 3).unwrap());
        assert!(matches!(kfold_assignments(&labels, 1, 0), Err(DownstreamError::TooFewFolds(1))));
        assert!(matches!(
            kfold_assignments(&labels[..5], 10, 0),
            Err(DownstreamError::FewerSamplesThanFolds { .. })
        ));
    }

    #[test]
    fn logreg_separable_toy() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let y = [0, 1, 0, 1];
        let head = logreg_fit(&x, &y, 2, &LogRegConfig::default());
        assert_eq!(logreg_predict(&head, &x), y.to_vec());
    }

    #[test]
    fn logreg_single_class_constant() {
        let x = Tensor::from_rows(&[vec![0.3, 0.1], vec![-1.0, 2.0], vec![0.0, -0.5]]);
        let head = logreg_fit(&x, &[1, 1, 1], 3, &LogRegConfig::default());
        let probe = Tensor::from_rows(&[vec![5.0, -5.0], vec![-3.0, 0.2]]);
        assert_eq!(logreg_predict(&head, &probe), vec![1, 1]);
    }

    #[test]
    fn label_validation() {
        let g = Graph::empty(4);
        assert!(LabeledNodes::new(g.clone(), vec![(0, 0), (1, 2)]).is_err());
        assert!(LabeledNodes::new(g.clone(), vec![(0, 0), (9, 1)]).is_err());
        assert!(LabeledNodes::new(g.clone(), vec![(0, 0), (0, 1)]).is_err());
        let ok = LabeledNodes::new(g, vec![(3, 1), (0, 0)]).unwrap();
        assert_eq!(ok.classes(), 2);
    }

    #[test]
    fn parse_formats() {
        assert_eq!(parse_labels("# c\n0 1\n2\t0\n").unwrap(), vec![(0, 1), (2, 0)]);
        assert!(matches!(parse_labels("0 1\n3\n"), Err(DownstreamError::Parse { line: 2, .. })));
        assert!(matches!(parse_truth("0 x"), Err(DownstreamError::Parse { line: 1, .. })));

        let text = "g 0 1 3 2\n0 1\n1 2\ng 1 0 2 1\n0 1\n";
        let data = parse_graph_set(text).unwrap();
        assert_eq!(data.graphs.len(), 2);
        assert_eq!(data.labels, vec![1, 0]);
        assert_eq!(data.graphs[0].num_edges(), 2);
        assert_eq!(parse_graph_set(&format_graph_set(&data)).unwrap(), data);

        assert!(parse_graph_set("g 0 0 2 2\n0 1\n").is_err());
        assert!(parse_graph_set("g 0 0 2 1\n0 5\n").is_err());
        assert!(parse_graph_set("0 1\n").is_err());
    }

    #[test]
    fn hits_edge_cases() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let truth = [(0, 0), (1, 1), (2, 2)];
        assert_eq!(hits_at_k(&e, &e, &truth, 1).unwrap(), 1.0);
        assert_eq!(hits_at_k(&e, &e, &truth, 3).unwrap(), 1.0);
        assert!(matches!(hits_at_k(&e, &e, &[], 1), Err(DownstreamError::EmptyTruth)));
        assert!(matches!(hits_at_k(&e, &e, &truth, 0), Err(DownstreamError::InvalidK { .. })));
        assert!(matches!(hits_at_k(&e, &e, &truth, 4), Err(DownstreamError::InvalidK { .. })));
        // ties favor lower ids: all-equal targets put vertex 0 first
        let flat = Tensor::from_rows(&vec![vec![1.0, 0.0]; 3]);
        assert_eq!(hits_at_k(&flat, &flat, &[(0, 0), (0, 2)], 1).unwrap(), 0.5);
    }
}
