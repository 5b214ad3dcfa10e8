//! Immutable undirected graphs in compressed adjacency form.
//!
//! Vertex ids are dense integers `0..n`. Each vertex owns a sorted, duplicate
//! free slice of the neighbor array; the adjacency is symmetric and contains
//! no self-loops.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no edges")]
    NoEdges,
    #[error("vertex set is empty")]
    EmptyVertexSet,
    #[error("vertex {vertex} out of range for graph with {num_vertices} vertices")]
    VertexOutOfRange { vertex: usize, num_vertices: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl Graph {
    /// Builds a graph over `num_vertices` vertices. Self-loops are dropped and
    /// duplicate (or mirrored) edges collapse into one undirected edge.
    pub fn from_edges<I>(num_vertices: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut directed = Vec::new();
        for (u, v) in edges {
            for w in [u, v] {
                if w >= num_vertices {
                    return Err(GraphError::VertexOutOfRange {
                        vertex: w,
                        num_vertices,
                    });
                }
            }
            if u != v {
                directed.push((u as u32, v as u32));
                directed.push((v as u32, u as u32));
            }
        }
        directed.sort_unstable();
        directed.dedup();

        let mut offsets = vec![0usize; num_vertices + 1];
        for &(u, _) in &directed {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..num_vertices {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = directed.into_iter().map(|(_, v)| v).collect();
        Ok(Self { offsets, neighbors })
    }

    /// Graph with `num_vertices` vertices and no edges.
    pub fn empty(num_vertices: usize) -> Self {
        Self {
            offsets: vec![0; num_vertices + 1],
            neighbors: Vec::new(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_vertices()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_vertices() && self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_vertices()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .map(|&v| v as usize)
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    fn check_vertex(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.num_vertices() {
            return Err(GraphError::VertexOutOfRange {
                vertex: v,
                num_vertices: self.num_vertices(),
            });
        }
        Ok(())
    }

    /// Subgraph induced by `vertices`. Local ids follow ascending original id.
    pub fn induced_subgraph(&self, vertices: &[usize]) -> Result<Subgraph, GraphError> {
        if vertices.is_empty() {
            return Err(GraphError::EmptyVertexSet);
        }
        let mut origin: Vec<usize> = vertices.to_vec();
        origin.sort_unstable();
        origin.dedup();
        for &v in &origin {
            self.check_vertex(v)?;
        }

        let mut edges = Vec::new();
        for (i, &u) in origin.iter().enumerate() {
            for &w in self.neighbors(u) {
                let w = w as usize;
                if w > u {
                    if let Ok(j) = origin.binary_search(&w) {
                        edges.push((i, j));
                    }
                }
            }
        }
        let graph = Graph::from_edges(origin.len(), edges)?;
        Ok(Subgraph { graph, origin })
    }

    /// Vertices within shortest-path distance `radius` of `center`, ascending.
    pub fn bfs_ball(&self, center: usize, radius: usize) -> Result<Vec<usize>, GraphError> {
        self.check_vertex(center)?;
        let mut dist = vec![usize::MAX; self.num_vertices()];
        dist[center] = 0;
        let mut queue = VecDeque::from([center]);
        let mut ball = vec![center];
        while let Some(u) = queue.pop_front() {
            if dist[u] == radius {
                continue;
            }
            for &w in self.neighbors(u) {
                let w = w as usize;
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    ball.push(w);
                    queue.push_back(w);
                }
            }
        }
        ball.sort_unstable();
        Ok(ball)
    }

    /// The r-ego network of `center`: the subgraph induced by its radius-`radius` ball.
    pub fn r_ego_network(&self, center: usize, radius: usize) -> Result<Subgraph, GraphError> {
        let ball = self.bfs_ball(center, radius)?;
        self.induced_subgraph(&ball)
    }

    /// Returns the graph with vertex `v` renamed to `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.num_vertices(), "permutation length");
        Graph::from_edges(
            self.num_vertices(),
            self.edges().map(|(u, v)| (perm[u], perm[v])),
        )
        .expect("permutation keeps ids in range")
    }
}

/// An induced subgraph together with the original id of each local vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub graph: Graph,
    pub origin: Vec<usize>,
}

impl Subgraph {
    pub fn local_id(&self, original: usize) -> Option<usize> {
        self.origin.binary_search(&original).ok()
    }
}

/// Outcome of parsing an edge list.
#[derive(Debug, Clone)]
pub struct EdgeListLoad {
    pub graph: Graph,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

/// Parses whitespace separated `u v` pairs, one per line; `#` starts a comment line.
pub fn parse_edge_list(text: &str) -> Result<EdgeListLoad, GraphError> {
    let mut raw = Vec::new();
    let mut max_id = None::<usize>;
    let mut self_loops = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut next_id = |what: &str| -> Result<usize, GraphError> {
            let token = fields.next().ok_or_else(|| GraphError::Parse {
                line: line_no,
                message: format!("missing {what} vertex"),
            })?;
            token.parse::<usize>().map_err(|_| GraphError::Parse {
                line: line_no,
                message: format!("invalid vertex id {token:?}"),
            })
        };
        let u = next_id("source")?;
        let v = next_id("target")?;
        if let Some(extra) = fields.next() {
            return Err(GraphError::Parse {
                line: line_no,
                message: format!("unexpected token {extra:?}"),
            });
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        if u == v {
            self_loops += 1;
        } else {
            raw.push((u, v));
        }
    }
    if raw.is_empty() {
        return Err(GraphError::NoEdges);
    }
    let n = max_id.map_or(0, |m| m + 1);
    let total = raw.len();
    let graph = Graph::from_edges(n, raw)?;
    Ok(EdgeListLoad {
        duplicates_dropped: total - graph.num_edges(),
        self_loops_dropped: self_loops,
        graph,
    })
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<EdgeListLoad, GraphError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_edge_list(&text)
}
