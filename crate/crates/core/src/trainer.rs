//! Bi-encoder fine-tuning of a shared linear projection head over frozen
//! embeddings.
//!
//! The objective is the mean squared error between the graded label and the
//! cosine of the projected query and document:
//!
//! ```text
//! L = (1/N) Σ_i (y_i − cos(h(q_i), h(d_i)))²,   h(x) = W x + b
//! ```
//!
//! The same head `h` is applied on both sides, so each pair contributes two
//! terms to the gradient. Optimization is AdamW with linear warmup followed
//! by linear decay.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LabelMap, TrainPair};
use crate::dense::{dot, l2_norm, DenseIndex, EmbeddingMatrix};
use crate::metrics::{self, Qrels};
use crate::{Error, Result};

/// Linear map `x ↦ W x + b` shared by queries and documents.
///
/// Parameters are stored flat: the `dim_out × dim_in` weights in row-major
/// order, followed by the bias when present. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    dim_in: usize,
    dim_out: usize,
    has_bias: bool,
    params: Vec<f64>,
}

impl ProjectionHead {
    pub fn identity(dim: usize, bias: bool) -> Self {
        let mut params = vec![0.0; dim * dim + if bias { dim } else { 0 }];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        ProjectionHead {
            dim_in: dim,
            dim_out: dim,
            has_bias: bias,
            params,
        }
    }

    /// Weights drawn from U(−a, a) with a = 1/√dim_in; bias starts at zero.
    pub fn uniform(dim_in: usize, dim_out: usize, bias: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (dim_in as f64).sqrt();
        let mut params: Vec<f64> = (0..dim_in * dim_out).map(|_| rng.gen_range(-a..a)).collect();
        if bias {
            params.extend(std::iter::repeat_n(0.0, dim_out));
        }
        ProjectionHead {
            dim_in,
            dim_out,
            has_bias: bias,
            params,
        }
    }

    pub fn from_parts(dim_in: usize, dim_out: usize, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::InvalidArgument("projection dimensions must be > 0".into()));
        }
        if weights.len() != dim_in * dim_out {
            return Err(Error::DimMismatch {
                expected: dim_in * dim_out,
                got: weights.len(),
            });
        }
        let has_bias = bias.is_some();
        let mut params = weights;
        if let Some(b) = bias {
            if b.len() != dim_out {
                return Err(Error::DimMismatch {
                    expected: dim_out,
                    got: b.len(),
                });
            }
            params.extend(b);
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection head parameter".into()));
        }
        Ok(ProjectionHead {
            dim_in,
            dim_out,
            has_bias,
            params,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn has_bias(&self) -> bool {
        self.has_bias
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.dim_in * self.dim_out]
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.has_bias.then(|| &self.params[self.dim_in * self.dim_out..])
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim_in);
        let w = self.weights();
        let mut out: Vec<f64> = w.chunks_exact(self.dim_in).map(|row| dot(row, x)).collect();
        if let Some(b) = self.bias() {
            out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        out
    }

    /// Parameters as little-endian f32, the checkpoint payload.
    fn payload(&self) -> Vec<u8> {
        self.params.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect()
    }

    /// SHA-256 (hex) of the f32 checkpoint payload.
    pub fn checksum(&self) -> String {
        hex(&Sha256::digest(self.payload()))
    }

    /// Writes a checkpoint: one JSON header line, then one line of base64
    /// little-endian f32 parameters (weights row-major, then bias).
    pub fn save(&self, path: &Path, seed: u64, config: Option<&TrainConfig>) -> Result<()> {
        let header = CheckpointHeader {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            bias: self.has_bias,
            seed,
            config: config.cloned(),
            checksum: self.checksum(),
        };
        let mut out = serde_json::to_vec(&header).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.push(b'\n');
        out.extend(base64::engine::general_purpose::STANDARD.encode(self.payload()).bytes());
        out.push(b'\n');
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()
                .map_err(|e| Error::io(path, e))?
                .ok_or_else(|| Error::Format(format!("checkpoint missing {what}")))
        };
        let header_line = next("header")?;
        let header: CheckpointHeader = serde_json::from_str(&header_line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: 1,
            source,
        })?;
        let payload = base64::engine::general_purpose::STANDARD
            .decode(next("payload")?.trim())
            .map_err(|e| Error::Format(format!("checkpoint payload: {e}")))?;
        let n = header.dim_in * header.dim_out + if header.bias { header.dim_out } else { 0 };
        if payload.len() != 4 * n {
            return Err(Error::Format(format!(
                "checkpoint payload has {} bytes, expected {}",
                payload.len(),
                4 * n
            )));
        }
        let params: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let split = header.dim_in * header.dim_out;
        let bias = header.bias.then(|| params[split..].to_vec());
        let head = Self::from_parts(header.dim_in, header.dim_out, params[..split].to_vec(), bias)?;
        if head.checksum() != header.checksum {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        Ok((head, header))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dim_in: usize,
    pub dim_out: usize,
    pub bias: bool,
    pub seed: u64,
    #[serde(default)]
    pub config: Option<TrainConfig>,
    pub checksum: String,
}

/// One training example: frozen query and document embeddings with a label.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub query: &'a [f64],
    pub doc: &'a [f64],
    pub label: f64,
}

struct Projected {
    u: Vec<f64>,
    v: Vec<f64>,
    nu: f64,
    nv: f64,
    cos: f64,
}

fn project(head: &ProjectionHead, s: &Sample, index: usize) -> Result<Projected> {
    if s.query.len() != head.dim_in || s.doc.len() != head.dim_in {
        return Err(Error::DimMismatch {
            expected: head.dim_in,
            got: if s.query.len() != head.dim_in { s.query.len() } else { s.doc.len() },
        });
    }
    let u = head.forward(s.query);
    let v = head.forward(s.doc);
    let (nu, nv) = (l2_norm(&u), l2_norm(&v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm(format!("projected vector of batch item {index}")));
    }
    let cos = dot(&u, &v) / (nu * nv);
    Ok(Projected { u, v, nu, nv, cos })
}

fn check_batch(batch: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some((i, s)) = batch.iter().enumerate().find(|(_, s)| !(0.0..=1.0).contains(&s.label)) {
        return Err(Error::InvalidArgument(format!("label {} of batch item {i} outside [0, 1]", s.label)));
    }
    Ok(())
}

/// Mean squared error between labels and projected cosines.
pub fn loss(head: &ProjectionHead, batch: &[Sample]) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let p = project(head, s, i)?;
        total += (s.label - p.cos).powi(2);
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`loss`] with respect to every head parameter.
pub fn loss_grad(head: &ProjectionHead, batch: &[Sample]) -> Result<Vec<f64>> {
    loss_and_grad(head, batch).map(|(_, g)| g)
}

pub fn loss_and_grad(head: &ProjectionHead, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    check_batch(batch)?;
    let n = batch.len() as f64;
    let (din, dout) = (head.dim_in, head.dim_out);
    let mut grad = vec![0.0; head.params.len()];
    let mut total = 0.0;
    let mut gu = vec![0.0; dout];
    let mut gv = vec![0.0; dout];
    for (i, s) in batch.iter().enumerate() {
        let p = project(head, s, i)?;
        let residual = s.label - p.cos;
        total += residual * residual;
        let g = -2.0 * residual / n;
        if g == 0.0 {
            continue;
        }
        // ∂cos/∂u = v/(|u||v|) − cos·u/|u|², and symmetrically for v.
        let inv = 1.0 / (p.nu * p.nv);
        let (cu, cv) = (p.cos / (p.nu * p.nu), p.cos / (p.nv * p.nv));
        for o in 0..dout {
            gu[o] = g * (p.v[o] * inv - cu * p.u[o]);
            gv[o] = g * (p.u[o] * inv - cv * p.v[o]);
        }
        for o in 0..dout {
            let row = &mut grad[o * din..(o + 1) * din];
            for ((w, &q), &d) in row.iter_mut().zip(s.query).zip(s.doc) {
                *w += gu[o] * q + gv[o] * d;
            }
        }
        if head.has_bias {
            let b = &mut grad[din * dout..];
            for o in 0..dout {
                b[o] += gu[o] + gv[o];
            }
        }
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// Identity when the head is square, uniform otherwise.
    #[default]
    Auto,
    Identity,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of total optimizer steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub label_map: LabelMap,
    pub init: HeadInit,
    pub bias: bool,
    /// Output dimension; defaults to the input dimension.
    pub dim_out: Option<usize>,
    /// Depth of the dense search used for validation MRR.
    pub validation_top_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 32,
            learning_rate: 4e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            label_map: LabelMap::default(),
            init: HeadInit::Auto,
            bias: false,
            dim_out: None,
            validation_top_k: 100,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup fraction must be in [0, 1], got {}", self.warmup_fraction));
        }
        if self.weight_decay < 0.0 || self.validation_top_k == 0 {
            return bad("weight_decay must be >= 0 and validation_top_k >= 1".into());
        }
        Ok(())
    }

    /// Learning rate for 0-based optimizer step `step` out of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_fraction * total as f64).ceil() as usize;
        if step < warmup {
            self.learning_rate * (step + 1) as f64 / warmup as f64
        } else if total > warmup {
            self.learning_rate * (total - step) as f64 / (total - warmup) as f64
        } else {
            self.learning_rate
        }
    }
}

/// AdamW with decoupled weight decay. Decay is not applied to the bias.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(n_params: usize, config: &TrainConfig) -> Self {
        AdamW {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            weight_decay: config.weight_decay,
        }
    }

    pub fn step(&mut self, head: &mut ProjectionHead, grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let n_weights = head.dim_in * head.dim_out;
        for (i, (p, &g)) in head.params.iter_mut().zip(grad).enumerate() {
            if i < n_weights {
                *p *= 1.0 - lr * self.weight_decay;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Held-out queries for per-epoch monitoring.
#[derive(Debug, Clone, Default)]
pub struct ValidationSet {
    pub query_ids: Vec<String>,
    pub pairs: Vec<TrainPair>,
    pub qrels: Qrels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_mrr: f64,
}

fn resolve<'a>(
    pairs: &'a [TrainPair],
    queries: &'a EmbeddingMatrix,
    debunks: &'a EmbeddingMatrix,
) -> Result<Vec<Sample<'a>>> {
    pairs
        .iter()
        .map(|p| {
            let query = queries.get(&p.query_id).ok_or_else(|| Error::DanglingId {
                kind: "query embedding",
                id: p.query_id.clone(),
            })?;
            let doc = debunks.get(&p.debunk_id).ok_or_else(|| Error::DanglingId {
                kind: "debunk embedding",
                id: p.debunk_id.clone(),
            })?;
            Ok(Sample {
                query,
                doc,
                label: p.label,
            })
        })
        .collect()
}

/// Mean loss over `samples` in fixed chunks, so the reduction order does not
/// depend on the caller.
fn full_loss(head: &ProjectionHead, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        total += loss(head, chunk)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// MRR of dense retrieval over the validation queries with the head applied
/// to both sides.
pub fn validation_mrr(
    head: &ProjectionHead,
    queries: &EmbeddingMatrix,
    debunks: &EmbeddingMatrix,
    validation: &ValidationSet,
    top_k: usize,
) -> Result<f64> {
    if validation.query_ids.is_empty() {
        return Ok(0.0);
    }
    let index = DenseIndex::new(crate::dense::apply_projection(debunks, head)?);
    let mut runs = Vec::with_capacity(validation.query_ids.len());
    for qid in &validation.query_ids {
        let v = queries.get(qid).ok_or_else(|| Error::DanglingId {
            kind: "query embedding",
            id: qid.clone(),
        })?;
        let mut ranked = index.search(&head.forward(v), top_k)?.ranked;
        ranked.query_id = qid.clone();
        runs.push(ranked);
    }
    metrics::mrr(&runs, &validation.qrels)
}

/// Trains a projection head on `pairs`.
///
/// Deterministic for a fixed config: the head is initialised from the seed,
/// the pair order is reshuffled each epoch from one seeded stream, and all
/// reductions run sequentially. Each [`LossReport`] records the full-pass
/// training loss and validation metrics after the epoch's updates.
pub fn train(
    query_emb: &EmbeddingMatrix,
    debunk_emb: &EmbeddingMatrix,
    pairs: &[TrainPair],
    config: &TrainConfig,
    validation: &ValidationSet,
) -> Result<(ProjectionHead, Vec<LossReport>)> {
    config.validate()?;
    if query_emb.dim() != debunk_emb.dim() {
        return Err(Error::DimMismatch {
            expected: query_emb.dim(),
            got: debunk_emb.dim(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let dim_in = query_emb.dim();
    let dim_out = config.dim_out.unwrap_or(dim_in);
    let mut head = match (config.init, dim_in == dim_out) {
        (HeadInit::Auto | HeadInit::Identity, true) => ProjectionHead::identity(dim_in, config.bias),
        (HeadInit::Identity, false) => {
            return Err(Error::InvalidArgument(format!(
                "identity init needs a square head, got {dim_in} -> {dim_out}"
            )))
        }
        _ => ProjectionHead::uniform(dim_in, dim_out, config.bias, config.seed),
    };

    let samples = resolve(pairs, query_emb, debunk_emb)?;
    let val_samples = resolve(&validation.pairs, query_emb, debunk_emb)?;
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut opt = AdamW::new(head.params.len(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        let n = order.len();
        crate::corpus::partial_shuffle(&mut order, n, &mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (l, grad) = loss_and_grad(&head, &batch)?;
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, step {step}")));
            }
            opt.step(&mut head, &grad, config.lr_at(step, total_steps));
            step += 1;
        }
        let train_loss = full_loss(&head, &samples)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss after epoch {epoch}")));
        }
        let report = LossReport {
            epoch,
            train_loss,
            validation_loss: full_loss(&head, &val_samples)?,
            validation_mrr: validation_mrr(&head, query_emb, debunk_emb, validation, config.validation_top_k)?,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, validation loss {:.6}, validation MRR {:.4}",
            report.train_loss,
            report.validation_loss,
            report.validation_mrr
        );
        reports.push(report);
    }
    Ok((head, reports))
}

pub fn write_training_log(path: &Path, reports: &[LossReport]) -> Result<()> {
    crate::io::write_jsonl(path, reports)
}
