//! InfoNCE and the two dictionary mechanisms: in-batch negatives (E2E) and
//! a momentum-updated key encoder feeding a FIFO queue of keys (MoCo).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gin::GinParams;
use crate::tensor::{dot, l2_norm, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum ContrastError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("end-to-end contrast needs at least 2 instances per batch, got {0}")]
    BatchTooSmall(usize),
    #[error("batch of {batch} keys exceeds queue capacity {capacity}")]
    BatchExceedsQueue { batch: usize, capacity: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid contrast configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    E2e,
    Moco,
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "e2e" => Ok(Mechanism::E2e),
            "moco" => Ok(Mechanism::Moco),
            other => Err(format!("unknown mechanism {other:?} (expected e2e or moco)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub temperature: f64,
    pub dictionary_size: usize,
    pub momentum: f64,
    pub mechanism: Mechanism,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            dictionary_size: 16_384,
            momentum: 0.999,
            mechanism: Mechanism::Moco,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<(), ContrastError> {
        if !(self.temperature > 0.0) {
            return Err(ContrastError::Temperature(self.temperature));
        }
        if self.dictionary_size == 0 {
            return Err(ContrastError::Config("dictionary_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ContrastError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_q: Vec<f64>,
    pub grad_k_plus: Vec<f64>,
    /// One row per negative.
    pub grad_negatives: Tensor,
}

/// Softmax of `logits` and the log of its normalizer, computed stably.
fn softmax_with_lse(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / z).collect(), m + z.ln())
}

/// `−log( exp(q·k₊/τ) / Σ_{i=0..K} exp(q·kᵢ/τ) )` where the sum runs over the
/// positive and every negative row.
pub fn infonce(q: &[f64], k_plus: &[f64], negatives: &Tensor, tau: f64) -> Result<InfoNceOutput, ContrastError> {
    if !(tau > 0.0) {
        return Err(ContrastError::Temperature(tau));
    }
    let d = q.len();
    if k_plus.len() != d || (negatives.rows() > 0 && negatives.cols() != d) {
        return Err(ContrastError::Dimension(format!(
            "query {d}, positive {}, negatives {}",
            k_plus.len(),
            negatives.cols()
        )));
    }
    let mut logits = Vec::with_capacity(negatives.rows() + 1);
    logits.push(dot(q, k_plus) / tau);
    for r in 0..negatives.rows() {
        logits.push(dot(q, negatives.row(r)) / tau);
    }
    let (probs, lse) = softmax_with_lse(&logits);
    let loss = lse - logits[0];

    // dL/dlogit_j = p_j − [j = 0]
    let coef_pos = (probs[0] - 1.0) / tau;
    let mut grad_q: Vec<f64> = k_plus.iter().map(|k| coef_pos * k).collect();
    let grad_k_plus: Vec<f64> = q.iter().map(|x| coef_pos * x).collect();
    let mut grad_negatives = Tensor::zeros(negatives.rows(), d);
    for r in 0..negatives.rows() {
        let coef = probs[r + 1] / tau;
        for (g, k) in grad_q.iter_mut().zip(negatives.row(r)) {
            *g += coef * k;
        }
        for (g, x) in grad_negatives.row_mut(r).iter_mut().zip(q) {
            *g = coef * x;
        }
    }
    Ok(InfoNceOutput {
        loss,
        grad_q,
        grad_k_plus,
        grad_negatives,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub grad_queries: Tensor,
    /// Absent under MoCo: keys are not differentiated.
    pub grad_keys: Option<Tensor>,
    /// Per-row losses, useful for diagnostics.
    pub row_losses: Vec<f64>,
}

fn check_pair(queries: &Tensor, keys: &Tensor) -> Result<(), ContrastError> {
    if queries.shape() != keys.shape() {
        return Err(ContrastError::Dimension(format!(
            "queries {:?} vs keys {:?}",
            queries.shape(),
            keys.shape()
        )));
    }
    Ok(())
}

/// In-batch contrast: row `i` of `keys` is the positive for query `i`; the
/// other `B − 1` keys are its negatives. Loss is the mean over rows.
pub fn e2e_step(queries: &Tensor, keys: &Tensor, tau: f64) -> Result<BatchLoss, ContrastError> {
    check_pair(queries, keys)?;
    if !(tau > 0.0) {
        return Err(ContrastError::Temperature(tau));
    }
    let b = queries.rows();
    if b < 2 {
        return Err(ContrastError::BatchTooSmall(b));
    }
    let d = queries.cols();
    let logits = queries.matmul_t(keys).scaled(1.0 / tau);
    let mut grad_logits = Tensor::zeros(b, b);
    let mut row_losses = Vec::with_capacity(b);
    for i in 0..b {
        let (probs, lse) = softmax_with_lse(logits.row(i));
        row_losses.push(lse - logits.get(i, i));
        let row = grad_logits.row_mut(i);
        for (j, p) in probs.into_iter().enumerate() {
            row[j] = (p - if i == j { 1.0 } else { 0.0 }) / (b as f64 * tau);
        }
    }
    let grad_queries = grad_logits.matmul(keys);
    let grad_keys = grad_logits.t_matmul(queries);
    debug_assert_eq!(grad_queries.shape(), (b, d));
    Ok(BatchLoss {
        loss: row_losses.iter().sum::<f64>() / b as f64,
        grad_queries,
        grad_keys: Some(grad_keys),
        row_losses,
    })
}

/// Fixed-capacity FIFO of unit-norm keys.
#[derive(Debug, Clone, PartialEq)]
pub struct MocoQueue {
    storage: Tensor,
    write_ptr: usize,
    filled: usize,
}

impl MocoQueue {
    /// Queue of `capacity` random unit vectors.
    pub fn random<R: Rng + ?Sized>(capacity: usize, dim: usize, rng: &mut R) -> Self {
        let mut storage = Tensor::zeros(capacity, dim);
        for r in 0..capacity {
            let row = storage.row_mut(r);
            for x in row.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let n = l2_norm(row).max(f64::MIN_POSITIVE);
            row.iter_mut().for_each(|x| *x /= n);
        }
        Self {
            storage,
            write_ptr: 0,
            filled: capacity,
        }
    }

    pub fn from_parts(storage: Tensor, write_ptr: usize, filled: usize) -> Result<Self, ContrastError> {
        if write_ptr >= storage.rows().max(1) || filled > storage.rows() {
            return Err(ContrastError::Config(format!(
                "queue pointer {write_ptr} / fill {filled} invalid for capacity {}",
                storage.rows()
            )));
        }
        Ok(Self {
            storage,
            write_ptr,
            filled,
        })
    }

    pub fn capacity(&self) -> usize {
        self.storage.rows()
    }

    pub fn dim(&self) -> usize {
        self.storage.cols()
    }

    pub fn write_ptr(&self) -> usize {
        self.write_ptr
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn storage(&self) -> &Tensor {
        &self.storage
    }

    /// Overwrites the oldest rows with `keys`, wrapping around.
    pub fn enqueue(&mut self, keys: &Tensor) -> Result<(), ContrastError> {
        if keys.cols() != self.dim() {
            return Err(ContrastError::Dimension(format!(
                "key width {} vs queue width {}",
                keys.cols(),
                self.dim()
            )));
        }
        if keys.rows() > self.capacity() {
            return Err(ContrastError::BatchExceedsQueue {
                batch: keys.rows(),
                capacity: self.capacity(),
            });
        }
        for r in 0..keys.rows() {
            let ptr = self.write_ptr;
            self.storage.row_mut(ptr).copy_from_slice(keys.row(r));
            self.write_ptr = (ptr + 1) % self.capacity();
        }
        self.filled = (self.filled + keys.rows()).min(self.capacity());
        Ok(())
    }

    /// Rows from oldest to newest.
    pub fn ordered_rows(&self) -> Vec<Vec<f64>> {
        let k = self.capacity();
        let start = if self.filled < k { 0 } else { self.write_ptr };
        (0..self.filled).map(|i| self.storage.row((start + i) % k).to_vec()).collect()
    }
}

/// MoCo loss against every queue row, then enqueue `keys`. The queue and the
/// keys receive no gradient.
pub fn moco_step(queries: &Tensor, keys: &Tensor, queue: &mut MocoQueue, tau: f64) -> Result<BatchLoss, ContrastError> {
    check_pair(queries, keys)?;
    if queries.rows() > queue.capacity() {
        return Err(ContrastError::BatchExceedsQueue {
            batch: queries.rows(),
            capacity: queue.capacity(),
        });
    }
    if queries.cols() != queue.dim() {
        return Err(ContrastError::Dimension(format!(
            "representation width {} vs queue width {}",
            queries.cols(),
            queue.dim()
        )));
    }
    let b = queries.rows();
    let mut grad_queries = Tensor::zeros(b, queries.cols());
    let mut row_losses = Vec::with_capacity(b);
    for i in 0..b {
        let out = infonce(queries.row(i), keys.row(i), queue.storage(), tau)?;
        row_losses.push(out.loss);
        for (g, x) in grad_queries.row_mut(i).iter_mut().zip(&out.grad_q) {
            *g = x / b as f64;
        }
    }
    queue.enqueue(keys)?;
    Ok(BatchLoss {
        loss: row_losses.iter().sum::<f64>() / b.max(1) as f64,
        grad_queries,
        grad_keys: None,
        row_losses,
    })
}

/// Query and key encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub query: GinParams,
    pub key: GinParams,
}

impl EncoderPair {
    /// Key encoder starts as an exact copy of the query encoder.
    pub fn new(query: GinParams) -> Self {
        Self {
            key: query.clone(),
            query,
        }
    }

    /// `θ_k ← m θ_k + (1 − m) θ_q`
    pub fn momentum_update(&mut self, m: f64) {
        if m == 0.0 {
            self.key = self.query.clone();
            return;
        }
        // Written as a step towards θ_q so that θ_k = θ_q is an exact fixed point.
        for (k, q) in self.key.tensors.iter_mut().zip(&self.query.tensors) {
            for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
                *kv += (1.0 - m) * (qv - *kv);
            }
        }
    }

    /// Euclidean distance between the two parameter sets.
    pub fn distance(&self) -> f64 {
        self.key
            .tensors
            .iter()
            .zip(&self.query.tensors)
            .map(|(k, q)| {
                k.data()
                    .iter()
                    .zip(q.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gin::GinConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn uniform_logits_give_log_k_plus_one() {
        let q = basis(3, 0);
        let negs = Tensor::from_rows(&vec![basis(3, 0); 9]);
        let out = infonce(&q, &q, &negs, 0.07).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_negatives_zero_loss() {
        let q = basis(2, 1);
        let out = infonce(&q, &basis(2, 0), &Tensor::zeros(0, 2), 0.5).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn orthogonal_negatives_closed_form() {
        let q = basis(3, 0);
        let negs = Tensor::from_rows(&[basis(3, 1), basis(3, 2)]);
        let out = infonce(&q, &q, &negs, 1.0).unwrap();
        let want = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((out.loss - want).abs() < 1e-12);
        assert!((want - 0.551444).abs() < 1e-6);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let q = basis(2, 0);
        assert_eq!(
            infonce(&q, &q, &Tensor::zeros(0, 2), 0.0).unwrap_err(),
            ContrastError::Temperature(0.0)
        );
    }

    #[test]
    fn e2e_two_rows_closed_form() {
        let q = Tensor::from_rows(&[basis(2, 0), basis(2, 1)]);
        let out = e2e_step(&q, &q, 1.0).unwrap();
        let want = (1.0 + 1.0 / std::f64::consts::E).ln();
        for l in &out.row_losses {
            assert!((l - want).abs() < 1e-12);
        }
        assert!((want - 0.31326).abs() < 1e-5);
        assert!(e2e_step(&Tensor::zeros(1, 2), &Tensor::zeros(1, 2), 1.0).is_err());
    }

    #[test]
    fn e2e_identical_rows_log_b() {
        let row = vec![0.6, 0.8];
        let q = Tensor::from_rows(&vec![row; 5]);
        let out = e2e_step(&q, &q, 0.07).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn queue_fifo_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut queue = MocoQueue::random(4, 2, &mut rng);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let a = i as f64 * 0.3;
                vec![a.cos(), a.sin()]
            })
            .collect();
        queue.enqueue(&Tensor::from_rows(&rows[..2])).unwrap();
        queue.enqueue(&Tensor::from_rows(&rows[2..4])).unwrap();
        queue.enqueue(&Tensor::from_rows(&rows[4..6])).unwrap();
        assert_eq!(queue.ordered_rows(), rows[2..6].to_vec());
        assert_eq!(queue.write_ptr(), 2);
        assert!(queue.enqueue(&Tensor::zeros(5, 2)).is_err());
    }

    #[test]
    fn moco_rejects_batch_larger_than_queue() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut queue = MocoQueue::random(2, 2, &mut rng);
        let q = Tensor::from_rows(&[basis(2, 0), basis(2, 0), basis(2, 1)]);
        assert!(matches!(
            moco_step(&q, &q, &mut queue, 0.07),
            Err(ContrastError::BatchExceedsQueue { .. })
        ));
    }

    #[test]
    fn moco_orthogonal_queue_closed_form() {
        let d = 8;
        let k = 5;
        let negs: Vec<Vec<f64>> = (1..=k).map(|i| basis(d, i)).collect();
        let mut queue = MocoQueue::from_parts(Tensor::from_rows(&negs), 0, k).unwrap();
        let q = Tensor::from_rows(&[basis(d, 0)]);
        let out = moco_step(&q, &q, &mut queue, 0.07).unwrap();
        let e = (1.0f64 / 0.07).exp();
        let want = -(e / (e + k as f64)).ln();
        assert!((out.loss - want).abs() < 1e-12);
        assert!(out.grad_keys.is_none());
        assert_eq!(queue.storage().row(0), basis(d, 0).as_slice());
    }

    #[test]
    fn momentum_update_cases() {
        let cfg = GinConfig {
            num_layers: 1,
            hidden_dim: 3,
            out_dim: 2,
            positional_dim: 2,
            degree_buckets: 2,
            dropout: 0.0,
        };
        let mut pair = EncoderPair::new(GinParams::init(cfg, 1));
        pair.momentum_update(0.9);
        assert_eq!(pair.key, pair.query);
        pair.key = GinParams::init(cfg, 2);
        pair.momentum_update(0.0);
        assert_eq!(pair.key, pair.query);
    }

    #[test]
    fn queue_random_rows_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let queue = MocoQueue::random(16, 64, &mut rng);
        for r in 0..16 {
            assert!((l2_norm(queue.storage().row(r)) - 1.0).abs() < 1e-12);
        }
    }
}
