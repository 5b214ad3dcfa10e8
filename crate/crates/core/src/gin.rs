//! Graph isomorphism network encoder.
//!
//! Each layer computes `h ← relu(MLP(h + Σ_{u∈N(v)} h_u))` with a two-layer
//! MLP (`Linear → ReLU → Dropout → Linear`). The graph representation is the
//! mean of the final vertex states, passed through a linear projection and
//! L2-normalized.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ShapeError, Tape, Var};
use crate::graph::Graph;
use crate::sampler::AugmentedSubgraph;
use crate::seeding::{self, purpose};
use crate::spectral::{vertex_features, EigenError, FeatureLayout};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("feature width {actual} does not match encoder input width {expected}")]
    InputWidth { expected: usize, actual: usize },
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GinConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub positional_dim: usize,
    pub degree_buckets: usize,
    pub dropout: f64,
}

impl Default for GinConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            hidden_dim: 64,
            out_dim: 64,
            positional_dim: 32,
            degree_buckets: 16,
            dropout: 0.5,
        }
    }
}

impl GinConfig {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            positional_dim: self.positional_dim,
            degree_buckets: self.degree_buckets,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layout().width()
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.num_layers == 0 {
            return Err(EncoderError::Config("num_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.out_dim == 0 || self.positional_dim == 0 || self.degree_buckets == 0 {
            return Err(EncoderError::Config("all dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// `(name, rows, cols)` for every parameter tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        for l in 0..self.num_layers {
            let fan_in = if l == 0 { self.input_dim() } else { self.hidden_dim };
            shapes.push((format!("layer{l}.w1"), fan_in, self.hidden_dim));
            shapes.push((format!("layer{l}.b1"), 1, self.hidden_dim));
            shapes.push((format!("layer{l}.w2"), self.hidden_dim, self.hidden_dim));
            shapes.push((format!("layer{l}.b2"), 1, self.hidden_dim));
        }
        shapes.push(("proj.w".into(), self.hidden_dim, self.out_dim));
        shapes.push(("proj.b".into(), 1, self.out_dim));
        shapes
    }
}

/// Encoder weights; tensors are stored in [`GinConfig::parameter_shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GinParams {
    pub config: GinConfig,
    pub tensors: Vec<Tensor>,
}

impl GinParams {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(config: GinConfig, seed: u64) -> Self {
        let mut rng = seeding::stream(seed, &[purpose::INIT_PARAMS]);
        let tensors = config
            .parameter_shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                if name.ends_with(".b1") || name.ends_with(".b2") || name.ends_with(".b") {
                    Tensor::zeros(rows, cols)
                } else {
                    let limit = glorot_limit(rows, cols);
                    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
                    Tensor::from_vec(rows, cols, data)
                }
            })
            .collect();
        Self { config, tensors }
    }

    pub fn names(&self) -> Vec<String> {
        self.config.parameter_shapes().into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Adjacency plus assembled vertex features, ready for encoding.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub graph: Rc<Graph>,
    pub features: Tensor,
}

impl PreparedInstance {
    pub fn new(graph: Graph, features: Tensor) -> Self {
        Self {
            graph: Rc::new(graph),
            features,
        }
    }

    pub fn from_subgraph(s: &AugmentedSubgraph, config: &GinConfig) -> Result<Self, EncoderError> {
        Self::from_graph(&s.graph, config)
    }

    /// Treats `g` as an anonymized instance with ego vertex 0.
    pub fn from_graph(g: &Graph, config: &GinConfig) -> Result<Self, EncoderError> {
        let features = vertex_features(g, config.layout())?;
        Ok(Self::new(g.clone(), features))
    }
}

/// Encoder forward pass recorded on a tape.
pub struct TapedEncoding {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub features: Var,
    pub node_reps: Var,
    pub graph_rep: Var,
}

impl TapedEncoding {
    pub fn graph_rep(&self) -> &[f64] {
        self.tape.value(self.graph_rep).data()
    }

    /// Parameter gradients for an upstream gradient on the graph representation.
    pub fn backward(&self, upstream: &[f64]) -> Vec<Tensor> {
        let seed = Tensor::row_vector(upstream);
        let mut grads = self.tape.backward(self.graph_rep, seed);
        self.params
            .iter()
            .map(|&p| {
                grads.take(p).unwrap_or_else(|| {
                    let (r, c) = self.tape.value(p).shape();
                    Tensor::zeros(r, c)
                })
            })
            .collect()
    }
}

pub fn forward<R: Rng + ?Sized>(
    params: &GinParams,
    inst: &PreparedInstance,
    train: bool,
    rng: &mut R,
) -> Result<TapedEncoding, EncoderError> {
    let cfg = &params.config;
    if inst.features.cols() != cfg.input_dim() {
        return Err(EncoderError::InputWidth {
            expected: cfg.input_dim(),
            actual: inst.features.cols(),
        });
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let features = tape.leaf(inst.features.clone());

    let mut h = features;
    for l in 0..cfg.num_layers {
        let [w1, b1, w2, b2] = [vars[4 * l], vars[4 * l + 1], vars[4 * l + 2], vars[4 * l + 3]];
        let agg = tape.propagate(h, inst.graph.clone())?;
        let z = tape.matmul(agg, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z);
        let z = tape.dropout(z, cfg.dropout, train, rng);
        let z = tape.matmul(z, w2)?;
        let z = tape.add_row(z, b2)?;
        h = tape.relu(z);
    }
    let node_reps = h;
    let pooled = tape.mean_rows(node_reps);
    let n = vars.len();
    let projected = tape.matmul(pooled, vars[n - 2])?;
    let projected = tape.add_row(projected, vars[n - 1])?;
    let graph_rep = tape.l2_normalize_rows(projected);
    Ok(TapedEncoding {
        tape,
        params: vars,
        features,
        node_reps,
        graph_rep,
    })
}

#[derive(Debug, Clone)]
pub struct Encoding {
    pub node_reps: Tensor,
    pub graph_rep: Vec<f64>,
}

pub fn encode<R: Rng + ?Sized>(
    params: &GinParams,
    inst: &PreparedInstance,
    train: bool,
    rng: &mut R,
) -> Result<Encoding, EncoderError> {
    let run = forward(params, inst, train, rng)?;
    Ok(Encoding {
        node_reps: run.tape.value(run.node_reps).clone(),
        graph_rep: run.graph_rep().to_vec(),
    })
}

/// Gradients of `⟨upstream, graph_rep⟩` with respect to every parameter.
pub fn encode_with_grads<R: Rng + ?Sized>(
    params: &GinParams,
    inst: &PreparedInstance,
    upstream: &[f64],
    train: bool,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<Tensor>), EncoderError> {
    let run = forward(params, inst, train, rng)?;
    let grads = run.backward(upstream);
    Ok((run.graph_rep().to_vec(), grads))
}
