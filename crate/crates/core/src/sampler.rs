//! Subgraph augmentation: random walk with restart, induction and anonymization.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, Subgraph};
use crate::seeding::{self, purpose};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("ego vertex {0} is not part of the subgraph")]
    EgoNotInSubgraph(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwrConfig {
    pub restart_prob: f64,
    pub max_set_size: usize,
    pub step_budget: usize,
    pub seed: u64,
}

impl Default for RwrConfig {
    fn default() -> Self {
        Self {
            restart_prob: 0.8,
            max_set_size: 128,
            step_budget: 4 * 128,
            seed: 0,
        }
    }
}

impl RwrConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(0.0..=1.0).contains(&self.restart_prob) {
            return Err(SamplerError::Config(format!(
                "restart_prob must lie in [0, 1], got {}",
                self.restart_prob
            )));
        }
        if self.max_set_size == 0 {
            return Err(SamplerError::Config("max_set_size must be >= 1".into()));
        }
        if self.step_budget == 0 {
            return Err(SamplerError::Config("step_budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where an instance came from: corpus graph index and original vertex id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub graph_index: usize,
    pub vertex: usize,
}

/// An anonymized subgraph whose ego vertex is always local id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedSubgraph {
    pub graph: Graph,
    pub source: Provenance,
}

impl AugmentedSubgraph {
    pub const EGO: usize = 0;

    pub fn num_vertices(&self) -> usize {
        self.graph.num_vertices()
    }
}

/// Query/key instance pairs; `queries[i]` and `positive_keys[i]` share provenance.
#[derive(Debug, Clone)]
pub struct ContrastBatch {
    pub queries: Vec<AugmentedSubgraph>,
    pub positive_keys: Vec<AugmentedSubgraph>,
}

impl ContrastBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Vertices visited by a restarting random walk from `start`, ascending.
pub fn rwr_visit_set<R: Rng + ?Sized>(
    g: &Graph,
    start: usize,
    cfg: &RwrConfig,
    rng: &mut R,
) -> Vec<usize> {
    let mut visited = BTreeSet::from([start]);
    let mut current = start;
    for _ in 0..cfg.step_budget {
        if visited.len() >= cfg.max_set_size {
            break;
        }
        let nbrs = g.neighbors(current);
        // An isolated current vertex forces a restart.
        if nbrs.is_empty() || rng.gen::<f64>() < cfg.restart_prob {
            current = start;
        } else {
            current = nbrs[rng.gen_range(0..nbrs.len())] as usize;
            visited.insert(current);
        }
    }
    visited.into_iter().collect()
}

/// Relabels `sub` so that `ego` becomes vertex 0 and the others follow in
/// ascending original-id order.
pub fn anonymize(sub: &Subgraph, ego: usize) -> Result<AugmentedSubgraph, SamplerError> {
    let ego_local = sub.local_id(ego).ok_or(SamplerError::EgoNotInSubgraph(ego))?;
    // origin is ascending, so shifting everything before the ego up by one
    // keeps the remaining vertices in ascending original order.
    let perm: Vec<usize> = (0..sub.graph.num_vertices())
        .map(|i| match i.cmp(&ego_local) {
            std::cmp::Ordering::Less => i + 1,
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Greater => i,
        })
        .collect();
    Ok(AugmentedSubgraph {
        graph: sub.graph.relabel(&perm),
        source: Provenance {
            graph_index: 0,
            vertex: ego,
        },
    })
}

/// One augmentation of the ego network of `v`.
pub fn augment<R: Rng + ?Sized>(
    g: &Graph,
    v: usize,
    cfg: &RwrConfig,
    rng: &mut R,
) -> Result<AugmentedSubgraph, SamplerError> {
    if v >= g.num_vertices() {
        return Err(GraphError::VertexOutOfRange {
            vertex: v,
            num_vertices: g.num_vertices(),
        }
        .into());
    }
    let set = rwr_visit_set(g, v, cfg, rng);
    let sub = g.induced_subgraph(&set)?;
    anonymize(&sub, v)
}

/// Picks corpus vertices uniformly, i.e. graphs in proportion to their size.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    cumulative: Vec<usize>,
}

impl CorpusIndex {
    pub fn new(corpus: &[Graph]) -> Result<Self, SamplerError> {
        let mut cumulative = Vec::with_capacity(corpus.len());
        let mut total = 0;
        for g in corpus {
            total += g.num_vertices();
            cumulative.push(total);
        }
        if total == 0 {
            return Err(SamplerError::EmptyCorpus);
        }
        Ok(Self { cumulative })
    }

    pub fn total_vertices(&self) -> usize {
        *self.cumulative.last().unwrap_or(&0)
    }

    pub fn locate(&self, global: usize) -> Provenance {
        let graph_index = self.cumulative.partition_point(|&c| c <= global);
        let start = if graph_index == 0 {
            0
        } else {
            self.cumulative[graph_index - 1]
        };
        Provenance {
            graph_index,
            vertex: global - start,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Provenance {
        self.locate(rng.gen_range(0..self.total_vertices()))
    }
}

/// Two independent augmentations of the instance in slot `slot` of step `step`.
pub fn sample_pair(
    corpus: &[Graph],
    index: &CorpusIndex,
    cfg: &RwrConfig,
    step: u64,
    slot: u64,
) -> Result<(AugmentedSubgraph, AugmentedSubgraph), SamplerError> {
    let mut pick = seeding::stream(cfg.seed, &[purpose::BATCH_VERTEX, step, slot]);
    let source = index.sample(&mut pick);
    let g = &corpus[source.graph_index];
    let mut q_rng = seeding::stream(cfg.seed, &[purpose::AUGMENT_QUERY, step, slot]);
    let mut k_rng = seeding::stream(cfg.seed, &[purpose::AUGMENT_KEY, step, slot]);
    let mut q = augment(g, source.vertex, cfg, &mut q_rng)?;
    let mut k = augment(g, source.vertex, cfg, &mut k_rng)?;
    q.source = source;
    k.source = source;
    Ok((q, k))
}

/// Assembles the batch for training step `step`; each slot draws from its own
/// stream derived from `(cfg.seed, step, slot)`.
pub fn make_batch(
    corpus: &[Graph],
    batch_size: usize,
    cfg: &RwrConfig,
    step: u64,
) -> Result<ContrastBatch, SamplerError> {
    cfg.validate()?;
    if batch_size == 0 {
        return Err(SamplerError::Config("batch_size must be >= 1".into()));
    }
    let index = CorpusIndex::new(corpus)?;
    let mut queries = Vec::with_capacity(batch_size);
    let mut positive_keys = Vec::with_capacity(batch_size);
    for slot in 0..batch_size as u64 {
        let (q, k) = sample_pair(corpus, &index, cfg, step, slot)?;
        queries.push(q);
        positive_keys.push(k);
    }
    Ok(ContrastBatch {
        queries,
        positive_keys,
    })
}
