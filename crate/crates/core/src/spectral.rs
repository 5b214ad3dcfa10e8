//! Symmetric eigendecomposition by cyclic Jacobi rotations, normalized
//! Laplacians, and the per-vertex encoder input features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::tensor::Tensor;

pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum EigenError {
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("expected {expected} entries for order {order}, got {actual}")]
    BadLength {
        order: usize,
        expected: usize,
        actual: usize,
    },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NotConverged { sweeps: usize, off: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn new(order: usize, entries: Vec<f64>) -> Result<Self, EigenError> {
        if entries.len() != order * order {
            return Err(EigenError::BadLength {
                order,
                expected: order * order,
                actual: entries.len(),
            });
        }
        for i in 0..order {
            for j in i + 1..order {
                let gap = (entries[i * order + j] - entries[j * order + i]).abs();
                if !(gap <= SYMMETRY_TOLERANCE) {
                    return Err(EigenError::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        Ok(Self { order, entries })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.order + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Ascending eigenvalues with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// `order × order`; column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: Tensor,
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigensolver. Sweeps until the off-diagonal Frobenius norm
/// drops below `OFF_DIAGONAL_TOLERANCE · max(1, ‖A‖_F)`.
pub fn symmetric_eig(m: &SymmetricMatrix) -> Result<EigenDecomposition, EigenError> {
    let n = m.order;
    let mut a = m.entries.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let tol = OFF_DIAGONAL_TOLERANCE * scale;

    let mut sweeps = 0;
    let mut off = off_diagonal_norm(&a, n);
    while off >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(EigenError::NotConverged { sweeps, off });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        off = off_diagonal_norm(&a, n);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Tensor::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v[row * n + src]);
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// `I − D^{-1/2} A D^{-1/2}`, with all-zero rows and columns for isolated vertices.
pub fn normalized_laplacian(g: &Graph) -> SymmetricMatrix {
    let n = g.num_vertices();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
        .collect();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        if g.degree(i) > 0 {
            entries[i * n + i] = 1.0;
        }
        for &j in g.neighbors(i) {
            let j = j as usize;
            entries[i * n + j] = -inv_sqrt[i] * inv_sqrt[j];
        }
    }
    SymmetricMatrix { order: n, entries }
}

/// `D − A`.
pub fn combinatorial_laplacian(g: &Graph) -> SymmetricMatrix {
    let n = g.num_vertices();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = g.degree(i) as f64;
        for &j in g.neighbors(i) {
            entries[i * n + j as usize] = -1.0;
        }
    }
    SymmetricMatrix { order: n, entries }
}

/// Flips the sign of every column so its largest-magnitude entry (first on
/// ties) is positive.
pub fn fix_signs(vectors: &mut Tensor) {
    for c in 0..vectors.cols() {
        let mut best = 0.0f64;
        let mut best_val = 0.0;
        for r in 0..vectors.rows() {
            let x = vectors.get(r, c);
            if x.abs() > best {
                best = x.abs();
                best_val = x;
            }
        }
        if best_val < 0.0 {
            for r in 0..vectors.rows() {
                vectors.set(r, c, -vectors.get(r, c));
            }
        }
    }
}

/// `n × dim` matrix whose columns are the eigenvectors of the `dim` smallest
/// normalized-Laplacian eigenvalues; zero-padded when `n < dim`.
pub fn positional_embedding(g: &Graph, dim: usize) -> Result<Tensor, EigenError> {
    let n = g.num_vertices();
    let mut eig = symmetric_eig(&normalized_laplacian(g))?;
    fix_signs(&mut eig.eigenvectors);
    let mut out = Tensor::zeros(n, dim);
    for r in 0..n {
        for c in 0..dim.min(n) {
            out.set(r, c, eig.eigenvectors.get(r, c));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub positional_dim: usize,
    pub degree_buckets: usize,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.positional_dim + self.degree_buckets + 1
    }
}

/// `[positional | degree one-hot | ego indicator]` for an anonymized subgraph
/// whose ego is vertex 0. Degrees at or above the last bucket are clamped.
pub fn vertex_features(g: &Graph, layout: FeatureLayout) -> Result<Tensor, EigenError> {
    let n = g.num_vertices();
    let pos = positional_embedding(g, layout.positional_dim)?;
    let width = layout.width();
    let mut out = Tensor::zeros(n, width);
    for r in 0..n {
        out.row_mut(r)[..layout.positional_dim].copy_from_slice(pos.row(r));
        if layout.degree_buckets > 0 {
            let bucket = g.degree(r).min(layout.degree_buckets - 1);
            out.set(r, layout.positional_dim + bucket, 1.0);
        }
    }
    if n > 0 {
        out.set(0, width - 1, 1.0);
    }
    Ok(out)
}
