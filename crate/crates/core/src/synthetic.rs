//! Synthetic graph families with distinct local structure, used as a desk
//! scale pre-training corpus and for transfer probes.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::downstream::{GraphDataset, LabeledNodes};
use crate::graph::Graph;
use crate::seeding::{self, purpose};

pub fn path(n: usize) -> Graph {
    Graph::from_edges(n, (1..n).map(|i| (i - 1, i))).expect("valid path")
}

pub fn cycle(n: usize) -> Graph {
    assert!(n >= 3, "cycle needs at least 3 vertices");
    Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n))).expect("valid cycle")
}

/// Star with center 0 and `leaves` leaves.
pub fn star(leaves: usize) -> Graph {
    Graph::from_edges(leaves + 1, (1..=leaves).map(|i| (0, i))).expect("valid star")
}

pub fn complete(n: usize) -> Graph {
    Graph::from_edges(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)))).expect("valid clique")
}

/// Two `clique`-cliques joined by a path with `bridge` intermediate vertices.
pub fn barbell(clique: usize, bridge: usize) -> Graph {
    let n = 2 * clique + bridge;
    let mut edges = Vec::new();
    for offset in [0, clique + bridge] {
        for u in 0..clique {
            for v in u + 1..clique {
                edges.push((offset + u, offset + v));
            }
        }
    }
    // chain: last vertex of clique A, bridge vertices, first vertex of clique B
    let chain: Vec<usize> = std::iter::once(clique - 1)
        .chain(clique..clique + bridge)
        .chain(std::iter::once(clique + bridge))
        .collect();
    edges.extend(chain.windows(2).map(|w| (w[0], w[1])));
    Graph::from_edges(n, edges).expect("valid barbell")
}

pub fn grid(rows: usize, cols: usize) -> Graph {
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    Graph::from_edges(rows * cols, edges).expect("valid grid")
}

/// Disjoint union; returns the union and the id offset of each part.
pub fn disjoint_union(parts: &[Graph]) -> (Graph, Vec<usize>) {
    let mut offsets = Vec::with_capacity(parts.len());
    let mut edges = Vec::new();
    let mut n = 0;
    for g in parts {
        offsets.push(n);
        edges.extend(g.edges().map(|(u, v)| (u + n, v + n)));
        n += g.num_vertices();
    }
    (Graph::from_edges(n, edges).expect("valid union"), offsets)
}

/// Randomly renames the vertices of `g`.
pub fn shuffle_vertices<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Graph {
    let mut perm: Vec<usize> = (0..g.num_vertices()).collect();
    perm.shuffle(rng);
    g.relabel(&perm)
}

/// Pre-training corpus: `per_family` cycles (10–30 vertices), stars
/// (4–40 leaves), barbells (cliques of 3–8, bridges of 1–6) and grids
/// (3–8 per side).
pub fn pretrain_corpus(seed: u64, per_family: usize) -> Vec<Graph> {
    let mut rng = seeding::stream(seed, &[purpose::SYNTHETIC, 0]);
    let mut corpus = Vec::with_capacity(4 * per_family);
    for _ in 0..per_family {
        corpus.push(cycle(rng.gen_range(10..=30)));
        corpus.push(star(rng.gen_range(4..=40)));
        corpus.push(barbell(rng.gen_range(3..=8), rng.gen_range(1..=6)));
        corpus.push(grid(rng.gen_range(3..=8), rng.gen_range(3..=8)));
    }
    corpus
}

pub const ROLE_CYCLE_MEMBER: usize = 0;
pub const ROLE_STAR_CENTER: usize = 1;
pub const ROLE_STAR_LEAF: usize = 2;

/// Structural-role probe: a disjoint union of cycles and stars (vertex ids
/// shuffled), with `per_class` labeled cycle members, star centers and star
/// leaves.
pub fn role_dataset(seed: u64, per_class: usize) -> LabeledNodes {
    let mut rng = seeding::stream(seed, &[purpose::SYNTHETIC, 1]);
    let mut parts = Vec::new();
    let mut roles: Vec<Vec<usize>> = vec![Vec::new(); 3];
    let mut n = 0;
    // every star contributes its center and one leaf
    for _ in 0..per_class {
        let leaves = rng.gen_range(3..=12);
        roles[ROLE_STAR_CENTER].push(n);
        roles[ROLE_STAR_LEAF].push(n + rng.gen_range(1..=leaves));
        parts.push(star(leaves));
        n += leaves + 1;
    }
    let mut cycle_vertices = Vec::new();
    while cycle_vertices.len() < per_class {
        let len = rng.gen_range(10..=30);
        cycle_vertices.extend(n..n + len);
        parts.push(cycle(len));
        n += len;
    }
    cycle_vertices.shuffle(&mut rng);
    roles[ROLE_CYCLE_MEMBER] = cycle_vertices[..per_class].to_vec();

    let (union, _) = disjoint_union(&parts);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let graph = union.relabel(&perm);
    let mut labels: Vec<(usize, usize)> = roles
        .iter()
        .enumerate()
        .flat_map(|(class, vs)| vs.iter().map(move |&v| (v, class)))
        .map(|(v, class)| (perm[v], class))
        .collect();
    labels.sort_unstable();
    LabeledNodes::new(graph, labels).expect("roles are valid")
}

/// Graph classification probe: `per_class` cycles (label 0) and stars
/// (label 1), each with shuffled vertex ids.
pub fn two_family_dataset(seed: u64, per_class: usize) -> GraphDataset {
    let mut rng = seeding::stream(seed, &[purpose::SYNTHETIC, 2]);
    let mut graphs = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        let c = cycle(rng.gen_range(10..=30));
        graphs.push(shuffle_vertices(&c, &mut rng));
        labels.push(0);
        let s = star(rng.gen_range(9..=29));
        graphs.push(shuffle_vertices(&s, &mut rng));
        labels.push(1);
    }
    GraphDataset::new(graphs, labels).expect("labels align")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_shapes() {
        assert_eq!(cycle(5).degrees(), vec![2; 5]);
        assert_eq!(star(4).degrees(), vec![4, 1, 1, 1, 1]);
        assert_eq!(path(3).degrees(), vec![1, 2, 1]);
        let b = barbell(3, 2);
        assert_eq!(b.num_vertices(), 8);
        assert_eq!(b.num_edges(), 3 + 3 + 3);
        assert_eq!(b.degrees(), vec![2, 2, 3, 2, 2, 3, 2, 2]);
        let b0 = barbell(3, 0);
        assert_eq!(b0.num_edges(), 7);
        let g = grid(3, 4);
        assert_eq!(g.num_edges(), 3 * 3 + 2 * 4);
        assert_eq!(complete(4).num_edges(), 6);
    }

    #[test]
    fn corpus_is_deterministic() {
        assert_eq!(pretrain_corpus(3, 2), pretrain_corpus(3, 2));
        assert_eq!(pretrain_corpus(3, 2).len(), 8);
    }

    #[test]
    fn role_dataset_balanced_and_correct() {
        let data = role_dataset(5, 20);
        let mut counts = [0; 3];
        for &(v, class) in data.labels() {
            counts[class] += 1;
            let d = data.graph.degree(v);
            match class {
                ROLE_CYCLE_MEMBER => assert_eq!(d, 2),
                ROLE_STAR_CENTER => assert!(d >= 3),
                _ => assert_eq!(d, 1),
            }
        }
        assert_eq!(counts, [20, 20, 20]);
    }

    #[test]
    fn two_family_counts() {
        let data = two_family_dataset(1, 10);
        assert_eq!(data.graphs.len(), 20);
        assert_eq!(data.labels.iter().filter(|&&l| l == 1).count(), 10);
    }
}
