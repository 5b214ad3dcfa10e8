//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as it is evaluated. [`Tape::backward`]
//! walks the record in reverse, accumulating adjoints for every node that the
//! chosen output depends on.

use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

use crate::graph::Graph;
use crate::tensor::{dot, Tensor};

/// Guards `l2_normalize_rows` against division by a vanishing norm.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
pub struct ShapeError {
    pub op: &'static str,
    pub lhs: (usize, usize),
    pub rhs: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    SumRows(Var),
    MeanRows(Var),
    Sum(Var),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    L2NormalizeRows(Var, Vec<f64>),
    LogSoftmax(Var),
    Propagate(Var, Rc<Graph>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check(op: &'static str, ok: bool, lhs: (usize, usize), rhs: (usize, usize)) -> Result<(), ShapeError> {
    if ok {
        Ok(())
    } else {
        Err(ShapeError { op, lhs, rhs })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        check("matmul", sa.1 == sb.0, sa, sb)?;
        let out = self.value(a).matmul(self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        check("add", sa == sb, sa, sb)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, ShapeError> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        check("add_row", sb.0 == 1 && sa.1 == sb.1, sa, sb)?;
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..sa.0 {
            for (x, y) in out.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        check("hadamard", sa == sb, sa, sb)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Tensor::from_vec(sa.0, sa.1, data), Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scaled(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Column sums: `n × c → 1 × c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = column_sums(self.value(a));
        self.push(out, Op::SumRows(a))
    }

    /// Column means: `n × c → 1 × c`. An empty input yields zeros.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows().max(1) as f64;
        let out = column_sums(self.value(a)).scaled(1.0 / n);
        self.push(out, Op::MeanRows(a))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Propagates NaN (`f64::max` would silently turn it into zero).
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.push(out, Op::Relu(a))
    }

    /// Inverted dropout. Identity when `train` is off or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !train || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data);
        self.push(out, Op::Dropout(a, mask))
    }

    /// Stacks inputs vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            check("concat_rows", v.cols() == cols, (rows, cols), v.shape())?;
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec())))
    }

    /// Maps each row `x` to `x / max(‖x‖₂, NORM_FLOOR)`.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = v.clone();
        let mut norms = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let n = dot(v.row(r), v.row(r)).sqrt().max(NORM_FLOOR);
            norms.push(n);
            for x in out.row_mut(r) {
                *x /= n;
            }
        }
        self.push(out, Op::L2NormalizeRows(a, norms))
    }

    /// Row-wise log-softmax, stabilized by subtracting the row maximum.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = v.clone();
        for r in 0..v.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// GIN aggregation with ε = 0: row `v` becomes `h_v + Σ_{u ∈ N(v)} h_u`.
    pub fn propagate(&mut self, a: Var, graph: Rc<Graph>) -> Result<Var, ShapeError> {
        let sa = self.value(a).shape();
        check("propagate", sa.0 == graph.num_vertices(), sa, (graph.num_vertices(), sa.1))?;
        let out = propagate_values(self.value(a), &graph);
        Ok(self.push(out, Op::Propagate(a, graph)))
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape as the output).
    pub fn backward(&self, output: Var, seed: Tensor) -> Gradients {
        assert_eq!(self.value(output).shape(), seed.shape(), "backward seed shape");
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut grads, *bias, column_sums(&g));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Hadamard(a, b) => {
                    let da = elementwise(&g, self.value(*b), |x, y| x * y);
                    let db = elementwise(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scaled(*s)),
                Op::SumRows(a) => {
                    let rows = self.value(*a).rows();
                    accumulate(&mut grads, *a, broadcast_rows(&g, rows));
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows();
                    let d = broadcast_rows(&g, rows).scaled(1.0 / rows.max(1) as f64);
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor::from_vec(r, c, vec![g.data()[0]; r * c]));
                }
                Op::Relu(a) => {
                    let d = elementwise(&g, self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                    accumulate(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), data));
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let slice = g.data()[start * c..(start + r) * c].to_vec();
                        accumulate(&mut grads, *p, Tensor::from_vec(r, c, slice));
                        start += r;
                    }
                }
                Op::L2NormalizeRows(a, norms) => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        // Below the floor the map is a plain scaling.
                        let proj = if n > NORM_FLOOR { dot(yr, g.row(r)) } else { 0.0 };
                        for (dx, &yv) in d.row_mut(r).iter_mut().zip(yr) {
                            *dx = (*dx - yv * proj) / n;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for r in 0..y.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (dx, &yv) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                            *dx -= yv.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                // I + A is symmetric, so the adjoint is the same aggregation.
                Op::Propagate(a, graph) => accumulate(&mut grads, *a, propagate_values(&g, graph)),
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of a leaf; `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, x) in out.iter_mut().zip(t.row(r)) {
            *o += x;
        }
    }
    Tensor::from_vec(1, t.cols(), out)
}

fn broadcast_rows(row: &Tensor, rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * row.cols());
    for _ in 0..rows {
        data.extend_from_slice(row.data());
    }
    Tensor::from_vec(rows, row.cols(), data)
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn propagate_values(h: &Tensor, graph: &Graph) -> Tensor {
    let mut out = h.clone();
    for v in 0..graph.num_vertices() {
        for &u in graph.neighbors(v) {
            let src = h.row(u as usize);
            for (o, x) in out.row_mut(v).iter_mut().zip(src) {
                *o += x;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks the adjoint of a unary op against central differences. The
    /// scalar objective is `Σ w ⊙ f(x)` for a fixed random weight `w`.
    fn fd_check_unary(build: impl Fn(&mut Tape, Var) -> Var, x0: &Tensor, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objective = |x: &Tensor, w: Option<&Tensor>| -> (f64, Tensor, Tensor) {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let y = build(&mut tape, xv);
            let w = w.cloned().unwrap_or_else(|| Tensor::zeros(1, 1));
            let wv = tape.leaf(w.clone());
            let prod = tape.hadamard(y, wv).unwrap();
            let s = tape.sum(prod);
            let val = tape.value(s).data()[0];
            let grads = tape.backward(s, Tensor::from_vec(1, 1, vec![1.0]));
            (val, grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols())), w)
        };
        let out_shape = {
            let mut tape = Tape::new();
            let xv = tape.leaf(x0.clone());
            let y = build(&mut tape, xv);
            tape.value(y).shape()
        };
        let w = random(out_shape.0, out_shape.1, &mut rng);
        let (_, analytic, _) = objective(x0, Some(&w));
        let h = 1e-5;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let fd = (objective(&xp, Some(&w)).0 - objective(&xm, Some(&w)).0) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
            assert!(rel < 1e-5 || (fd - a).abs() < 1e-9, "entry {i}: fd {fd} analytic {a} rel {rel}");
        }
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(&[-1.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let g = tape.backward(y, Tensor::row_vector(&[5.0, 7.0]));
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 7.0]);
    }

    #[test]
    fn l2_normalize_unit_row_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(&[0.6, 0.8]));
        let y = tape.l2_normalize_rows(x);
        assert!(tape.value(y).max_abs_diff(tape.value(x)) < 1e-15);
    }

    #[test]
    fn l2_normalize_zero_row_is_finite() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(1, 3));
        let y = tape.l2_normalize_rows(x);
        assert_eq!(tape.value(y).data(), &[0.0; 3]);
        let g = tape.backward(y, Tensor::row_vector(&[1.0, 1.0, 1.0]));
        assert!(g.get(x).unwrap().is_finite());
    }

    #[test]
    fn dropout_identity_when_off() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(&[1.0, 2.0, 3.0]));
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng), x);
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng), x);
        let y = tape.dropout(x, 0.5, true, &mut rng);
        for (a, b) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!(*a == 0.0 || (*a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.leaf(Tensor::zeros(3, 3));
        assert!(tape.add(a, c).is_err());
        assert!(tape.add_row(a, c).is_err());
        let g = Rc::new(Graph::empty(4));
        assert!(tape.propagate(a, g).is_err());
    }

    #[test]
    fn unary_adjoints_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = random(4, 3, &mut rng);
        fd_check_unary(|t, v| t.relu(v), &x, 1);
        fd_check_unary(|t, v| t.scale(v, -1.7), &x, 2);
        fd_check_unary(|t, v| t.sum_rows(v), &x, 3);
        fd_check_unary(|t, v| t.mean_rows(v), &x, 4);
        fd_check_unary(|t, v| t.sum(v), &x, 5);
        fd_check_unary(|t, v| t.l2_normalize_rows(v), &x, 6);
        fd_check_unary(|t, v| t.log_softmax(v), &x, 7);
        let path = Rc::new(Graph::from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap());
        fd_check_unary(move |t, v| t.propagate(v, path.clone()).unwrap(), &x, 8);
        // fixed dropout mask via a fixed seed per evaluation
        fd_check_unary(
            |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(11);
                t.dropout(v, 0.5, true, &mut r)
            },
            &x,
            9,
        );
    }

    #[test]
    fn binary_adjoints_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(4, 3, &mut rng);
        let other = random(3, 5, &mut rng);
        let same = random(4, 3, &mut rng);
        let bias = random(1, 3, &mut rng);
        let (o, s, b) = (other.clone(), same.clone(), bias.clone());
        fd_check_unary(move |t, v| {
            let w = t.leaf(o.clone());
            t.matmul(v, w).unwrap()
        }, &x, 10);
        let xt = x.clone();
        fd_check_unary(move |t, v| {
            let a = t.leaf(xt.clone());
            t.matmul(a, v).unwrap()
        }, &other, 11);
        fd_check_unary(move |t, v| {
            let w = t.leaf(s.clone());
            t.add(v, w).unwrap()
        }, &x, 12);
        let s2 = same.clone();
        fd_check_unary(move |t, v| {
            let w = t.leaf(s2.clone());
            t.hadamard(v, w).unwrap()
        }, &x, 13);
        fd_check_unary(move |t, v| {
            let w = t.leaf(b.clone());
            t.add_row(v, w).unwrap()
        }, &x, 14);
        let xr = x.clone();
        fd_check_unary(move |t, v| {
            let a = t.leaf(xr.clone());
            t.add_row(a, v).unwrap()
        }, &bias, 15);
        let s3 = same.clone();
        fd_check_unary(move |t, v| {
            let w = t.leaf(s3.clone());
            t.concat_rows(&[w, v, w]).unwrap()
        }, &x, 16);
    }
}
