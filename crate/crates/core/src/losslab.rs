//! Ranking losses with analytic gradients, and a toy encoder to study them.
//!
//! Three losses are covered:
//!
//! * in-batch multiple-negatives ranking loss over a `B x B` similarity
//!   matrix whose diagonal holds the matched pairs,
//!   `L = -(1/B) sum_i log softmax(scale * S_i)_i`;
//! * binary cross-entropy on raw logits, in the stable form
//!   `max(x, 0) - x*y + ln(1 + e^-|x|)`;
//! * mean squared error between cosine similarities and targets.
//!
//! [`toy_train`] fits a linear bag-of-tokens encoder with either the ranking
//! loss or the cosine loss with every target at 1, and records how diagonal
//! and off-diagonal similarities evolve. With positives only, nothing stops
//! the encoder from making every pair similar; the in-batch loss pushes
//! non-matching pairs apart.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Square similarity matrix, row `i` = query `i`, column `j` = document `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    size: usize,
    data: Vec<f64>,
}

impl SimMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::Parameter(format!("similarity matrix must be square ({size} rows)")));
        }
        Self::from_flat(size, rows.concat())
    }

    /// Row-major constructor.
    pub fn from_flat(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::Parameter(format!(
                "{} entries cannot form a {size}x{size} matrix",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("similarity matrix has non-finite entries".into()));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    /// Mean of diagonal entries and mean of off-diagonal entries.
    pub fn diag_offdiag_means(&self) -> (f64, f64) {
        let n = self.size;
        let diag: f64 = (0..n).map(|i| self.get(i, i)).sum();
        let total: f64 = self.data.iter().sum();
        let off = if n > 1 { (total - diag) / (n * (n - 1)) as f64 } else { 0.0 };
        (diag / n.max(1) as f64, off)
    }
}

/// A loss value and its gradient, shaped like the input (row-major for
/// matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-batch multiple-negatives ranking loss and its gradient w.r.t. `sim`.
pub fn mnrl_loss(sim: &SimMatrix, scale: f64) -> Result<LossReport> {
    let b = sim.size();
    if b == 0 {
        return Err(Error::Parameter("batch must contain at least one pair".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut gradient = vec![0.0; b * b];
    for i in 0..b {
        let row = sim.row(i);
        let lse = log_sum_exp(row.iter().map(|s| scale * s));
        loss += lse - scale * row[i];
        for j in 0..b {
            let softmax = (scale * row[j] - lse).exp();
            let indicator = if i == j { 1.0 } else { 0.0 };
            gradient[i * b + j] = scale * (softmax - indicator) * inv_b;
        }
    }
    Ok(LossReport { loss: loss * inv_b, gradient })
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits; gradient `(sigmoid(x) - y) / len`.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> Result<LossReport> {
    if logits.len() != labels.len() {
        return Err(Error::Parameter(format!("{} logits but {} labels", logits.len(), labels.len())));
    }
    if logits.is_empty() {
        return Err(Error::Parameter("no logits".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Parameter(format!("labels must be 0 or 1, got {y}")));
    }
    let inv_n = 1.0 / logits.len() as f64;
    let mut loss = 0.0;
    let mut gradient = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(labels) {
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        gradient.push((sigmoid(x) - y) * inv_n);
    }
    Ok(LossReport { loss: loss * inv_n, gradient })
}

/// Mean squared error between similarities and targets.
pub fn cosine_mse_loss(sims: &[f64], targets: &[f64]) -> Result<LossReport> {
    if sims.len() != targets.len() {
        return Err(Error::Parameter(format!("{} similarities but {} targets", sims.len(), targets.len())));
    }
    if sims.is_empty() {
        return Err(Error::Parameter("no similarities".into()));
    }
    let inv_n = 1.0 / sims.len() as f64;
    let loss = sims.iter().zip(targets).map(|(s, t)| (s - t) * (s - t)).sum::<f64>() * inv_n;
    let gradient = sims.iter().zip(targets).map(|(s, t)| 2.0 * (s - t) * inv_n).collect();
    Ok(LossReport { loss, gradient })
}

/// Central-difference gradient estimate of `f` at `x`.
pub fn finite_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// In-batch ranking loss.
    Mnrl,
    /// Cosine MSE on matched pairs with every target 1.
    CosineMse,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mnrl" => Ok(LossKind::Mnrl),
            "cosine_mse" | "cosine" => Ok(LossKind::CosineMse),
            other => Err(Error::Parameter(format!("unknown loss `{other}`"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mnrl => "mnrl",
            LossKind::CosineMse => "cosine_mse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Similarity scale for the ranking loss.
    pub scale: f64,
}

impl Default for ToyConfig {
    /// Learning rate and batch size of a full-size bi-encoder fine-tune;
    /// toy runs normally override both (see [`ToyConfig::demo`]).
    fn default() -> Self {
        Self { dim: 16, learning_rate: 4e-5, epochs: 11, batch_size: 64, seed: 42, scale: 20.0 }
    }
}

impl ToyConfig {
    /// Settings used by [`demo_pairs`] experiments.
    pub fn demo() -> Self {
        Self { dim: 16, learning_rate: 0.05, epochs: 200, batch_size: 8, seed: 42, scale: 20.0 }
    }
}

/// Linear bag-of-tokens encoder: a text's embedding is the sum of its
/// tokens' weight rows. Unknown tokens are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    vocab: BTreeMap<String, usize>,
    dim: usize,
    weights: Vec<f64>,
}

impl ToyEmbedder {
    /// Vocabulary from every token in `pairs`, weights uniform in
    /// `[-1, 1) / sqrt(dim)`.
    pub fn init(pairs: &[(Vec<String>, Vec<String>)], dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be >= 1".into()));
        }
        let mut vocab = BTreeMap::new();
        for (q, d) in pairs {
            for t in q.iter().chain(d) {
                let next = vocab.len();
                vocab.entry(t.clone()).or_insert(next);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = 1.0 / (dim as f64).sqrt();
        let weights = (0..vocab.len() * dim).map(|_| rng.random_range(-1.0..1.0) * amp).collect();
        Ok(Self { vocab, dim, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.vocab.get(t).copied()).collect()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for id in self.token_ids(tokens) {
            for (acc, w) in v.iter_mut().zip(&self.weights[id * self.dim..(id + 1) * self.dim]) {
                *acc += w;
            }
        }
        v
    }

    pub fn similarity(&self, a: &[String], b: &[String]) -> f64 {
        cos_parts(&self.encode(a), &self.encode(b)).0
    }

    /// Cosine similarity of every query against every document.
    pub fn sim_matrix(&self, pairs: &[(Vec<String>, Vec<String>)]) -> SimMatrix {
        let q: Vec<_> = pairs.iter().map(|(t, _)| self.encode(t)).collect();
        let d: Vec<_> = pairs.iter().map(|(_, t)| self.encode(t)).collect();
        let data = q.iter().flat_map(|a| d.iter().map(|b| cos_parts(a, b).0)).collect();
        SimMatrix { size: pairs.len(), data }
    }

    /// Loss on one batch and its gradient w.r.t. the weights.
    pub fn batch_loss(&self, batch: &[&(Vec<String>, Vec<String>)], kind: LossKind, scale: f64) -> Result<LossReport> {
        let n = batch.len();
        let q: Vec<Vec<f64>> = batch.iter().map(|(t, _)| self.encode(t)).collect();
        let d: Vec<Vec<f64>> = batch.iter().map(|(_, t)| self.encode(t)).collect();

        // dL/dS for every (query, document) cell
        let (loss, cell_grad) = match kind {
            LossKind::Mnrl => {
                let data: Vec<f64> = q.iter().flat_map(|a| d.iter().map(|b| cos_parts(a, b).0)).collect();
                if data.iter().any(|s| !s.is_finite()) {
                    // overflowed weights; the trainer reports this as divergence
                    return Ok(LossReport { loss: f64::NAN, gradient: vec![f64::NAN; self.weights.len()] });
                }
                let report = mnrl_loss(&SimMatrix::from_flat(n, data)?, scale)?;
                (report.loss, report.gradient)
            }
            LossKind::CosineMse => {
                let sims: Vec<f64> = (0..n).map(|i| cos_parts(&q[i], &d[i]).0).collect();
                let report = cosine_mse_loss(&sims, &vec![1.0; n])?;
                let mut g = vec![0.0; n * n];
                for (i, gi) in report.gradient.into_iter().enumerate() {
                    g[i * n + i] = gi;
                }
                (report.loss, g)
            }
        };

        let mut grad_q = vec![vec![0.0; self.dim]; n];
        let mut grad_d = vec![vec![0.0; self.dim]; n];
        for i in 0..n {
            for j in 0..n {
                let g = cell_grad[i * n + j];
                if g == 0.0 {
                    continue;
                }
                let (_, da, db) = cos_parts(&q[i], &d[j]);
                axpy(&mut grad_q[i], g, &da);
                axpy(&mut grad_d[j], g, &db);
            }
        }

        let mut gradient = vec![0.0; self.weights.len()];
        for (k, (qt, dt)) in batch.iter().enumerate() {
            for id in self.token_ids(qt) {
                axpy(&mut gradient[id * self.dim..(id + 1) * self.dim], 1.0, &grad_q[k]);
            }
            for id in self.token_ids(dt) {
                axpy(&mut gradient[id * self.dim..(id + 1) * self.dim], 1.0, &grad_d[k]);
            }
        }
        Ok(LossReport { loss, gradient })
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Cosine of `a` and `b` with its gradients w.r.t. each. Zero vectors give
/// zero similarity and zero gradient.
fn cos_parts(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let c = dot / (na * nb);
    let da = a.iter().zip(b).map(|(x, y)| y / (na * nb) - c * x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x / (na * nb) - c * y / (nb * nb)).collect();
    (c, da, db)
}

/// Similarity statistics after one epoch (epoch 0 is the initial state).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Loss over the full training set as a single batch.
    pub loss: f64,
    pub diag_mean: f64,
    pub offdiag_mean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub embedder: ToyEmbedder,
    pub trace: Vec<EpochTrace>,
}

impl TrainOutcome {
    pub fn final_gap(&self) -> f64 {
        let last = self.trace.last().expect("trace has the initial entry");
        last.diag_mean - last.offdiag_mean
    }
}

fn snapshot(
    embedder: &ToyEmbedder,
    pairs: &[(Vec<String>, Vec<String>)],
    kind: LossKind,
    cfg: &ToyConfig,
    epoch: usize,
) -> Result<EpochTrace> {
    let all: Vec<_> = pairs.iter().collect();
    let loss = embedder.batch_loss(&all, kind, cfg.scale)?.loss;
    let (diag_mean, offdiag_mean) = embedder.sim_matrix(pairs).diag_offdiag_means();
    Ok(EpochTrace { epoch, loss, diag_mean, offdiag_mean })
}

/// Plain mini-batch gradient descent on the toy encoder.
pub fn toy_train(pairs: &[(Vec<String>, Vec<String>)], kind: LossKind, cfg: &ToyConfig) -> Result<TrainOutcome> {
    if kind == LossKind::Mnrl && pairs.len() < 2 {
        return Err(Error::Parameter("in-batch ranking loss needs at least 2 pairs".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Parameter("no training pairs".into()));
    }
    if cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::Parameter("batch_size and learning_rate must be positive".into()));
    }
    let mut embedder = ToyEmbedder::init(pairs, cfg.dim, cfg.seed)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = vec![snapshot(&embedder, pairs, kind, cfg, 0)?];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &pairs[i]).collect();
            let report = embedder.batch_loss(&batch, kind, cfg.scale)?;
            if !report.loss.is_finite() || report.gradient.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss: report.loss });
            }
            axpy(&mut embedder.weights, -cfg.learning_rate, &report.gradient);
        }
        let entry = snapshot(&embedder, pairs, kind, cfg, epoch)?;
        if !entry.loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: entry.loss });
        }
        trace.push(entry);
    }
    Ok(TrainOutcome { embedder, trace })
}

/// Eight query/document pairs. Each pair has its own topic vocabulary,
/// disjoint from every other pair's; all texts also share a few boilerplate
/// legal tokens.
pub fn demo_pairs() -> Vec<(Vec<String>, Vec<String>)> {
    const SHARED: [&str; 3] = ["theo", "quy_định", "luật"];
    (0..8)
        .map(|i| {
            let topic = |k: &str| format!("t{i}_{k}");
            let mut q: Vec<String> = SHARED.iter().map(|s| (*s).to_owned()).collect();
            let mut d = q.clone();
            q.extend([topic("a"), topic("b"), topic("q")]);
            d.extend([topic("a"), topic("b"), topic("d1"), topic("d2")]);
            (q, d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnrl_single_pair_is_zero() {
        let sim = SimMatrix::from_rows(&[vec![0.3]]).unwrap();
        let r = mnrl_loss(&sim, 20.0).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.gradient, [0.0]);
    }

    #[test]
    fn mnrl_identity_closed_form() {
        let sim = SimMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = mnrl_loss(&sim, 20.0).unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        assert!((r.loss - expected).abs() < 1e-12);
        assert!((r.loss - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn mnrl_rejects_bad_input() {
        assert!(SimMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0]]).is_err());
        assert!(SimMatrix::from_flat(2, vec![0.0; 3]).is_err());
        let sim = SimMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(mnrl_loss(&sim, 0.0).is_err());
        assert!(mnrl_loss(&SimMatrix::from_flat(0, vec![]).unwrap(), 20.0).is_err());
    }

    #[test]
    fn bce_reference_points() {
        let r = bce_with_logits(&[0.0], &[1.0]).unwrap();
        assert!((r.loss - 2f64.ln()).abs() < 1e-15);
        assert!((r.gradient[0] + 0.5).abs() < 1e-15);

        let r = bce_with_logits(&[9f64.ln()], &[0.0]).unwrap();
        assert!((r.gradient[0] - 0.9).abs() < 1e-12);
        let r = bce_with_logits(&[-(9f64.ln())], &[0.0]).unwrap();
        assert!((r.gradient[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bce_extreme_logits_stay_finite() {
        let r = bce_with_logits(&[800.0, -800.0], &[0.0, 1.0]).unwrap();
        assert!((r.loss - 800.0).abs() < 1e-9);
        assert!(r.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bce_rejects_bad_labels() {
        assert!(bce_with_logits(&[0.0], &[0.5]).is_err());
        assert!(bce_with_logits(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn cosine_mse_values() {
        let r = cosine_mse_loss(&[0.2, -0.4], &[0.2, -0.4]).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.gradient, [0.0, 0.0]);
        let r = cosine_mse_loss(&[0.5], &[1.0]).unwrap();
        assert_eq!(r.loss, 0.25);
        assert_eq!(r.gradient, [-1.0]);
        assert!(cosine_mse_loss(&[0.5], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn finite_diff_polynomial() {
        let g = finite_diff(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn toy_gradient_matches_finite_difference() {
        let pairs = demo_pairs();
        let cfg = ToyConfig { dim: 4, ..ToyConfig::demo() };
        let emb = ToyEmbedder::init(&pairs[..4], cfg.dim, 5).unwrap();
        let batch: Vec<_> = pairs[..4].iter().collect();
        for kind in [LossKind::Mnrl, LossKind::CosineMse] {
            let analytic = emb.batch_loss(&batch, kind, 5.0).unwrap().gradient;
            let numeric = finite_diff(
                |w| {
                    let mut e = emb.clone();
                    e.weights_mut().copy_from_slice(w);
                    e.batch_loss(&batch, kind, 5.0).unwrap().loss
                },
                emb.weights(),
                1e-6,
            );
            let max_err = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
            assert!(max_err < 1e-6, "{kind}: {max_err}");
        }
    }

    #[test]
    fn toy_train_preconditions() {
        let pairs = demo_pairs();
        assert!(matches!(toy_train(&pairs[..1], LossKind::Mnrl, &ToyConfig::demo()), Err(Error::Parameter(_))));
        assert!(toy_train(&pairs[..1], LossKind::CosineMse, &ToyConfig { epochs: 2, ..ToyConfig::demo() }).is_ok());
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = ToyConfig { learning_rate: 1e300, epochs: 5, ..ToyConfig::demo() };
        match toy_train(&demo_pairs(), LossKind::Mnrl, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trace_has_initial_entry() {
        let cfg = ToyConfig { epochs: 3, ..ToyConfig::demo() };
        let out = toy_train(&demo_pairs(), LossKind::Mnrl, &cfg).unwrap();
        assert_eq!(out.trace.iter().map(|t| t.epoch).collect::<Vec<_>>(), [0, 1, 2, 3]);
    }

    #[test]
    fn demo_separates_under_mnrl_and_collapses_under_mse() {
        let pairs = demo_pairs();
        let cfg = ToyConfig::demo();
        let mnrl = toy_train(&pairs, LossKind::Mnrl, &cfg).unwrap();
        let mse = toy_train(&pairs, LossKind::CosineMse, &cfg).unwrap();
        let last = mnrl.trace.last().unwrap();
        assert!(last.diag_mean > last.offdiag_mean);
        assert!(mnrl.final_gap() > mse.final_gap());
        let tail = &mse.trace[mse.trace.len() - 50..];
        assert!(tail.windows(2).all(|w| w[1].offdiag_mean > w[0].offdiag_mean));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = (usize, Vec<f64>)> {
            (2usize..6).prop_flat_map(|b| (Just(b), prop::collection::vec(-1.0f64..1.0, b * b)))
        }

        proptest! {
            #[test]
            fn mnrl_row_shift_invariant((b, flat) in matrix(), row in 0usize..6, shift in -2.0f64..2.0) {
                let row = row % b;
                let base = mnrl_loss(&SimMatrix::from_flat(b, flat.clone()).unwrap(), 20.0).unwrap().loss;
                let mut shifted = flat;
                for v in &mut shifted[row * b..(row + 1) * b] {
                    *v += shift;
                }
                let moved = mnrl_loss(&SimMatrix::from_flat(b, shifted).unwrap(), 20.0).unwrap().loss;
                prop_assert!((base - moved).abs() < 1e-9);
            }

            #[test]
            fn mnrl_gradient_matches_numeric((b, flat) in matrix()) {
                let analytic = mnrl_loss(&SimMatrix::from_flat(b, flat.clone()).unwrap(), 20.0).unwrap().gradient;
                let numeric = finite_diff(
                    |x| mnrl_loss(&SimMatrix::from_flat(b, x.to_vec()).unwrap(), 20.0).unwrap().loss,
                    &flat,
                    1e-5,
                );
                for (a, n) in analytic.iter().zip(&numeric) {
                    prop_assert!((a - n).abs() <= 1e-5 * (1.0 + n.abs()));
                }
            }

            #[test]
            fn bce_gradient_matches_numeric(xs in prop::collection::vec((-8.0f64..8.0, any::<bool>()), 1..10)) {
                let logits: Vec<f64> = xs.iter().map(|p| p.0).collect();
                let labels: Vec<f64> = xs.iter().map(|p| if p.1 { 1.0 } else { 0.0 }).collect();
                let analytic = bce_with_logits(&logits, &labels).unwrap().gradient;
                let numeric = finite_diff(|x| bce_with_logits(x, &labels).unwrap().loss, &logits, 1e-5);
                for (a, n) in analytic.iter().zip(&numeric) {
                    prop_assert!((a - n).abs() <= 1e-5 * (1.0 + n.abs()));
                }
            }

            #[test]
            fn negative_gradient_grows_with_logit(x in -30.0f64..30.0, dx in 1e-3f64..5.0) {
                let g = |x: f64| bce_with_logits(&[x], &[0.0]).unwrap().gradient[0];
                prop_assert!(g(x + dx) > g(x));
            }

            #[test]
            fn cosine_mse_gradient_matches_numeric(xs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..10)) {
                let sims: Vec<f64> = xs.iter().map(|p| p.0).collect();
                let targets: Vec<f64> = xs.iter().map(|p| p.1).collect();
                let analytic = cosine_mse_loss(&sims, &targets).unwrap().gradient;
                let numeric = finite_diff(|x| cosine_mse_loss(x, &targets).unwrap().loss, &sims, 1e-5);
                for (a, n) in analytic.iter().zip(&numeric) {
                    prop_assert!((a - n).abs() <= 1e-8);
                }
            }
        }
    }
}
