//! In-context transformer that reads a labelled context table and predicts
//! fair outcomes for query rows, plus its prior-fitting loop and checkpoint
//! format.
//!
//! Every table row becomes one token. Feature slot 0 always holds the
//! protected attribute (encoded as -1/+1); slots `1..=m` hold the
//! z-normalized features; the remaining slots are padding. A slot is
//! embedded from its value and a presence flag, so padding contributes
//! exactly zero. Context tokens add a label embedding, query tokens a learned
//! "missing label" embedding. Context rows attend to context rows and query
//! rows attend to context rows only.

use std::fs;
use std::io::Read;
use std::path::Path;

use numcore::{clip_grad_norm, sigmoid, Adam, AdamConfig, Graph, InputShape, LrSchedule, NodeId, ParamSet, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_file, Dataset};
use crate::error::{Error, Result};
use crate::exec::{map_range, ExecMode};
use crate::prior::{sample_pair, PriorRanges};
use crate::rng::{rng_for, stream_seed};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FAIRPFN1";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Normalized feature values are clipped to this magnitude.
pub const VALUE_CLIP: f64 = 10.0;
const LN_EPS: f64 = 1e-5;
const PROB_CLAMP: f64 = 1e-12;

/// Which labels the query loss is computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    #[default]
    Fair,
    Biased,
}

impl TargetMode {
    /// Method id under which a model trained in this mode is reported.
    pub fn method_id(self) -> &'static str {
        match self {
            TargetMode::Fair => "fairpfn",
            TargetMode::Biased => "pfn-unfair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ff_width: usize,
    /// Protected slot plus the maximum feature count.
    pub max_slots: usize,
    pub context_fraction: (f64, f64),
    pub target_mode: TargetMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            heads: 4,
            width: 128,
            ff_width: 256,
            max_slots: 11,
            context_fraction: (0.3, 0.8),
            target_mode: TargetMode::Fair,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.width == 0 || self.ff_width == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.max_slots < 3 {
            return Err(Error::InvalidConfig(format!("max_slots {} < 3", self.max_slots)));
        }
        let (lo, hi) = self.context_fraction;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!("context fraction ({lo}, {hi}) outside (0, 1)")));
        }
        Ok(())
    }

    pub fn max_features(&self) -> usize {
        self.max_slots - 1
    }

    fn token_width(&self) -> usize {
        2 * self.max_slots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub datasets_per_step: usize,
    pub base_lr: f64,
    pub floor_lr: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub prior: PriorRanges,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 8000,
            datasets_per_step: 8,
            base_lr: 5e-4,
            floor_lr: 1e-5,
            warmup_frac: 0.05,
            grad_clip: 1.0,
            seed: 0,
            prior: PriorRanges {
                n_samples: (100, 500),
                ..PriorRanges::default()
            },
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.datasets_per_step == 0 {
            return Err(Error::InvalidConfig("datasets per step must be >= 1".into()));
        }
        if !(self.base_lr > 0.0 && self.floor_lr >= 0.0 && self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig("learning rates and clip must be positive".into()));
        }
        if self.prior.n_features.1 > self.model.max_features() {
            return Err(Error::InvalidConfig(format!(
                "prior draws up to {} features but the model has {} feature slots",
                self.prior.n_features.1,
                self.model.max_features()
            )));
        }
        self.prior.validate()?;
        self.model.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            schedule: LrSchedule {
                base_lr: self.base_lr,
                floor_lr: self.floor_lr,
                total_steps: self.steps,
                warmup_frac: self.warmup_frac,
            },
            ..AdamConfig::default()
        }
    }
}

/// Rows of a table without labels.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub groups: &'a [u8],
    pub features: &'a Tensor,
}

impl<'a> Rows<'a> {
    pub fn of(dataset: &'a Dataset) -> Self {
        Rows {
            groups: &dataset.groups,
            features: &dataset.features,
        }
    }
}

/// Model inputs for one table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    /// `n_ctx x 2 * max_slots`: slot values then presence flags.
    pub context: Tensor,
    /// `n_ctx x 2` one-hot labels.
    pub context_labels: Tensor,
    pub query: Tensor,
    /// Per-feature normalization statistics from the context rows.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl EncodedBatch {
    pub fn n_context(&self) -> usize {
        self.context.rows()
    }

    pub fn n_query(&self) -> usize {
        self.query.rows()
    }

    /// Whether token `from` may attend to token `to`, with context tokens
    /// numbered first.
    pub fn attends(&self, from: usize, to: usize) -> bool {
        let total = self.n_context() + self.n_query();
        from < total && to < self.n_context()
    }
}

fn column_stats(features: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = features.rows() as f64;
    (0..features.cols())
        .map(|j| {
            let col = features.column_values(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 && sd.is_finite() { sd } else { 1.0 })
        })
        .unzip()
}

fn tokens(config: &ModelConfig, rows: Rows<'_>, mean: &[f64], sd: &[f64]) -> Tensor {
    let s = config.max_slots;
    let m = rows.features.cols();
    let mut out = Tensor::zeros(&[rows.groups.len(), 2 * s]);
    for i in 0..rows.groups.len() {
        let row = out.row_mut(i);
        row[0] = if rows.groups[i] == 1 { 1.0 } else { -1.0 };
        row[s] = 1.0;
        for j in 0..m {
            let z = (rows.features.get(i, j) - mean[j]) / sd[j];
            row[1 + j] = z.clamp(-VALUE_CLIP, VALUE_CLIP);
            row[s + 1 + j] = 1.0;
        }
    }
    out
}

/// Encodes a labelled context and an unlabelled query.
pub fn encode_parts(config: &ModelConfig, context: Rows<'_>, labels: &[u8], query: Rows<'_>) -> Result<EncodedBatch> {
    let (mc, mq) = (context.features.cols(), query.features.cols());
    if mc != mq {
        return Err(Error::FeatureMismatch { context: mc, query: mq });
    }
    if mc > config.max_features() {
        return Err(Error::TooManyFeatures {
            features: mc,
            max: config.max_features(),
        });
    }
    let n_ctx = context.groups.len();
    if n_ctx == 0 || context.features.rows() != n_ctx || labels.len() != n_ctx {
        return Err(Error::InvalidData(format!(
            "context has {n_ctx} groups, {} feature rows, {} labels",
            context.features.rows(),
            labels.len()
        )));
    }
    if query.features.rows() != query.groups.len() {
        return Err(Error::InvalidData("query groups and features disagree in length".into()));
    }
    let (mean, sd) = column_stats(context.features);
    let mut onehot = Tensor::zeros(&[n_ctx, 2]);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, usize::from(y == 1), 1.0);
    }
    Ok(EncodedBatch {
        context: tokens(config, context, &mean, &sd),
        context_labels: onehot,
        query: tokens(config, query, &mean, &sd),
        mean,
        sd,
    })
}

/// Encodes the given context and query rows of one dataset.
pub fn encode(dataset: &Dataset, context_rows: &[usize], query_rows: &[usize], config: &ModelConfig) -> Result<EncodedBatch> {
    let ctx = dataset.select(context_rows);
    let qry = dataset.select(query_rows);
    encode_parts(config, Rows::of(&ctx), &ctx.labels, Rows::of(&qry))
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce(probabilities: &[f64], labels: &[u8]) -> Result<f64> {
    if probabilities.len() != labels.len() || labels.is_empty() {
        return Err(Error::InvalidData(format!(
            "bce: {} probabilities vs {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Parameter names and shapes in declared (serialization) order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, t) = (config.width, config.ff_width, config.token_width());
    let mut out = vec![
        ("embed.w".to_string(), vec![t, d]),
        ("embed.b".to_string(), vec![1, d]),
        ("label.w".to_string(), vec![2, d]),
        ("missing".to_string(), vec![1, d]),
    ];
    for l in 0..config.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        out.extend([
            (p("ln1.g"), vec![1, d]),
            (p("ln1.b"), vec![1, d]),
            (p("wq"), vec![d, d]),
            (p("wk"), vec![d, d]),
            (p("wv"), vec![d, d]),
            (p("wo"), vec![d, d]),
            (p("ln2.g"), vec![1, d]),
            (p("ln2.b"), vec![1, d]),
            (p("ff1.w"), vec![d, f]),
            (p("ff1.b"), vec![1, f]),
            (p("ff2.w"), vec![f, d]),
            (p("ff2.b"), vec![1, d]),
        ]);
    }
    out.extend([
        ("final.g".to_string(), vec![1, d]),
        ("final.b".to_string(), vec![1, d]),
        ("head.w".to_string(), vec![d, 1]),
        ("head.b".to_string(), vec![1, 1]),
    ]);
    out
}

fn init_params(config: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = rng_for(seed);
    let residual_scale = 1.0 / (2.0 * config.layers as f64).sqrt();
    let mut params = ParamSet::new();
    for (name, shape) in param_layout(config) {
        let numel: usize = shape.iter().product();
        let suffix = name.rsplit('.').next().unwrap_or("");
        let data = if suffix == "g" {
            vec![1.0; numel]
        } else if suffix == "b" {
            vec![0.0; numel]
        } else {
            let mut std = 1.0 / (shape[0] as f64).sqrt();
            if name.ends_with("wo") || name.ends_with("ff2.w") {
                std *= residual_scale;
            }
            if name == "head.w" || name == "missing" || name == "label.w" {
                std = 0.02_f64.max(std * 0.1);
            }
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..numel).map(|_| normal.sample(&mut rng)).collect()
        };
        params.add(name, Tensor::new(shape, data).expect("layout shape"));
    }
    params
}

/// Graph handles for one network instance.
struct Net {
    graph: Graph,
    logits: NodeId,
}

/// Transformer weights and architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct FairPfn {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl FairPfn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<FairPfn> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(FairPfn { config, params })
    }

    /// Wraps loaded weights after checking them against the layout.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<FairPfn> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::InvalidData(format!(
                "expected {} weight tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, tensor)) in layout.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != tensor.shape() {
                return Err(Error::InvalidData(format!(
                    "weight {pname} {:?} does not match layout entry {name} {shape:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(FairPfn { config, params })
    }

    fn param(&self, g: &mut Graph, name: &str) -> NodeId {
        // Layout is checked on construction, so every name resolves.
        let id = self.params.id_of(name).expect("parameter in layout");
        g.param(id)
    }

    fn attention(&self, g: &mut Graph, q: NodeId, k: NodeId, v: NodeId) -> NodeId {
        let dh = self.config.width / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<NodeId> = (0..self.config.heads)
            .map(|h| {
                let (a, b) = (h * dh, (h + 1) * dh);
                let qh = g.col_slice(q, a, b);
                let kh = g.col_slice(k, a, b);
                let vh = g.col_slice(v, a, b);
                let scores = g.matmul_nt(qh, kh);
                let scores = g.scale(scores, scale);
                let weights = g.softmax_rows(scores);
                g.matmul(weights, vh)
            })
            .collect();
        if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(heads)
        }
    }

    fn layer_norm(&self, g: &mut Graph, x: NodeId, prefix: &str) -> NodeId {
        let gain = self.param(g, &format!("{prefix}.g"));
        let bias = self.param(g, &format!("{prefix}.b"));
        g.layer_norm(x, gain, bias, LN_EPS)
    }

    fn feed_forward(&self, g: &mut Graph, x: NodeId, l: usize) -> NodeId {
        let z = self.layer_norm(g, x, &format!("layer{l}.ln2"));
        let w1 = self.param(g, &format!("layer{l}.ff1.w"));
        let b1 = self.param(g, &format!("layer{l}.ff1.b"));
        let w2 = self.param(g, &format!("layer{l}.ff2.w"));
        let b2 = self.param(g, &format!("layer{l}.ff2.b"));
        let h = g.matmul(z, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let h = g.matmul(h, w2);
        let h = g.add_row(h, b2);
        g.add(x, h)
    }

    /// Inputs: context tokens, context one-hot labels, query tokens and,
    /// when `with_loss`, query targets (`n_q x 1`).
    fn build(&self, with_loss: bool) -> Net {
        let t = self.config.token_width();
        let mut g = Graph::new();
        let xc = g.input(InputShape::cols(t));
        let yc = g.input(InputShape::cols(2));
        let xq = g.input(InputShape::cols(t));
        let targets = with_loss.then(|| g.input(InputShape::cols(1)));

        let we = self.param(&mut g, "embed.w");
        let be = self.param(&mut g, "embed.b");
        let wl = self.param(&mut g, "label.w");
        let miss = self.param(&mut g, "missing");
        let ec = g.matmul(xc, we);
        let ec = g.add_row(ec, be);
        let lc = g.matmul(yc, wl);
        let mut hc = g.add(ec, lc);
        let eq = g.matmul(xq, we);
        let eq = g.add_row(eq, be);
        let mut hq = g.add_row(eq, miss);

        for l in 0..self.config.layers {
            let zc = self.layer_norm(&mut g, hc, &format!("layer{l}.ln1"));
            let zq = self.layer_norm(&mut g, hq, &format!("layer{l}.ln1"));
            let wq = self.param(&mut g, &format!("layer{l}.wq"));
            let wk = self.param(&mut g, &format!("layer{l}.wk"));
            let wv = self.param(&mut g, &format!("layer{l}.wv"));
            let wo = self.param(&mut g, &format!("layer{l}.wo"));
            let k = g.matmul(zc, wk);
            let v = g.matmul(zc, wv);
            let qc = g.matmul(zc, wq);
            let qq = g.matmul(zq, wq);
            let ac = self.attention(&mut g, qc, k, v);
            let aq = self.attention(&mut g, qq, k, v);
            let ac = g.matmul(ac, wo);
            let aq = g.matmul(aq, wo);
            hc = g.add(hc, ac);
            hq = g.add(hq, aq);
            // Context tokens after the last layer feed nothing.
            if l + 1 < self.config.layers {
                hc = self.feed_forward(&mut g, hc, l);
            }
            hq = self.feed_forward(&mut g, hq, l);
        }
        let z = self.layer_norm(&mut g, hq, "final");
        let wh = self.param(&mut g, "head.w");
        let bh = self.param(&mut g, "head.b");
        let logits = g.matmul(z, wh);
        let logits = g.add_row(logits, bh);
        if let Some(targets) = targets {
            g.bce_with_logits(logits, targets);
        }
        Net { graph: g, logits }
    }

    /// Query-row logits for an encoded batch.
    pub fn logits(&self, batch: &EncodedBatch) -> Result<Vec<f64>> {
        if batch.n_query() == 0 {
            return Ok(Vec::new());
        }
        let mut net = self.build(false);
        let out = net.graph.forward(
            &self.params,
            &[batch.context.clone(), batch.context_labels.clone(), batch.query.clone()],
        )?;
        debug_assert_eq!(net.logits.index() + 1, net.graph.len());
        Ok(out.into_data())
    }

    /// Probability of a positive outcome for every query row.
    pub fn predict(&self, context: Rows<'_>, labels: &[u8], query: Rows<'_>) -> Result<Vec<f64>> {
        let batch = encode_parts(&self.config, context, labels, query)?;
        let positives = labels.iter().filter(|&&y| y == 1).count();
        if positives == 0 || positives == labels.len() {
            let rate = (positives as f64 + 1.0) / (labels.len() as f64 + 2.0);
            return Ok(vec![rate; batch.n_query()]);
        }
        Ok(self
            .logits(&batch)?
            .into_iter()
            .map(|z| sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect())
    }

    /// Predicts several query tables against one context in a single pass.
    /// Query rows never attend to each other, so this equals calling
    /// `predict` per table.
    pub fn predict_many(&self, context: Rows<'_>, labels: &[u8], queries: &[Rows<'_>]) -> Result<Vec<Vec<f64>>> {
        let m = context.features.cols();
        let mut groups = Vec::new();
        let mut data = Vec::new();
        for q in queries {
            if q.features.cols() != m {
                return Err(Error::FeatureMismatch {
                    context: m,
                    query: q.features.cols(),
                });
            }
            groups.extend_from_slice(q.groups);
            data.extend_from_slice(q.features.data());
        }
        let stacked = Tensor::matrix(groups.len(), m, data)?;
        let all = self.predict(context, labels, Rows { groups: &groups, features: &stacked })?;
        let mut out = Vec::with_capacity(queries.len());
        let mut start = 0;
        for q in queries {
            out.push(all[start..start + q.groups.len()].to_vec());
            start += q.groups.len();
        }
        Ok(out)
    }

    /// Loss and parameter gradients for one batch against `targets`.
    pub fn loss_and_grads(&self, batch: &EncodedBatch, targets: &[u8]) -> Result<(f64, Vec<Tensor>)> {
        if targets.len() != batch.n_query() || targets.is_empty() {
            return Err(Error::InvalidData(format!(
                "{} targets for {} query rows",
                targets.len(),
                batch.n_query()
            )));
        }
        let mut net = self.build(true);
        let y = Tensor::column(targets.iter().map(|&t| f64::from(t)).collect());
        let loss = net.graph.forward(
            &self.params,
            &[batch.context.clone(), batch.context_labels.clone(), batch.query.clone(), y],
        )?;
        let grads = net.graph.backward(&Tensor::scalar(1.0))?;
        Ok((loss.data()[0], grads.into_params()))
    }

    /// SHA-256 over the little-endian weight blob.
    pub fn weight_hash(&self) -> String {
        crate::data::sha256_hex(&weight_blob(&self.params))
    }
}

fn weight_blob(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.numel() * 8);
    for t in params.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub method_id: String,
    pub steps: u64,
    pub seed: u64,
    pub train: TrainConfig,
    /// Mean query loss per step (`NaN` never appears; skipped steps are omitted).
    pub losses: Vec<f64>,
    pub skipped_datasets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub model: FairPfn,
    pub meta: TrainMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weight blob.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub metadata: TrainMeta,
    pub weights: Vec<WeightEntry>,
}

impl CheckpointHeader {
    fn blob_len(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.shape.iter().product::<usize>() * 8)
            .sum()
    }
}

impl Checkpoint {
    fn header(&self) -> CheckpointHeader {
        let mut offset = 0;
        let weights = self
            .model
            .params
            .iter()
            .map(|(name, t)| {
                let entry = WeightEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len() * 8;
                entry
            })
            .collect();
        CheckpointHeader {
            version: self.version,
            config: self.model.config.clone(),
            metadata: self.meta.clone(),
            weights,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let len = u32::try_from(header.len()).map_err(|_| Error::InvalidData("checkpoint header too large".into()))?;
        let mut out = Vec::with_capacity(12 + header.len() + self.model.params.numel() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&weight_blob(&self.model.params));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let (header, start) = parse_header(bytes)?;
        let blob = &bytes[start..];
        let expected = header.blob_len();
        if blob.len() != expected {
            return Err(Error::Corrupt {
                expected,
                actual: blob.len(),
            });
        }
        let mut params = ParamSet::new();
        for w in &header.weights {
            let numel: usize = w.shape.iter().product();
            let end = w.offset + numel * 8;
            if end > blob.len() {
                return Err(Error::Corrupt {
                    expected: end,
                    actual: blob.len(),
                });
            }
            let data = blob[w.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.add(w.name.clone(), Tensor::new(w.shape.clone(), data)?);
        }
        Ok(Checkpoint {
            version: header.version,
            model: FairPfn::from_params(header.config, params)?,
            meta: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e.to_string()))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Reads only the header, leaving the weight blob untouched.
    pub fn inspect(path: &Path) -> Result<CheckpointHeader> {
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e.to_string()))?;
        let mut prefix = [0u8; 12];
        file.read_exact(&mut prefix).map_err(|_| Error::Corrupt {
            expected: 12,
            actual: 0,
        })?;
        let len = check_prefix(&prefix)?;
        let mut header = vec![0u8; len];
        file.read_exact(&mut header).map_err(|e| Error::io(path, e.to_string()))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        check_version(header.version)?;
        Ok(header)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(crate::data::sha256_hex(&self.to_bytes()?))
    }
}

fn check_prefix(prefix: &[u8]) -> Result<usize> {
    if &prefix[..8] != CHECKPOINT_MAGIC {
        return Err(Error::InvalidData("not a checkpoint file (bad magic)".into()));
    }
    Ok(u32::from_le_bytes(prefix[8..12].try_into().expect("4 bytes")) as usize)
}

fn check_version(version: u32) -> Result<()> {
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnknownVersion(version));
    }
    Ok(())
}

fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 12 {
        return Err(Error::Corrupt {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let len = check_prefix(&bytes[..12])?;
    let end = 12 + len;
    if bytes.len() < end {
        return Err(Error::Corrupt {
            expected: end,
            actual: bytes.len(),
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..end])?;
    check_version(header.version)?;
    Ok((header, end))
}

/// One training example drawn from the prior.
#[derive(Debug, Clone)]
pub struct PriorTask {
    pub batch: EncodedBatch,
    pub targets: Vec<u8>,
}

/// Samples a dataset pair, splits its rows into context and query and
/// encodes the biased context with observed labels. Targets are the fair
/// or observed labels of the query rows.
pub fn prior_task(seed: u64, prior: &PriorRanges, config: &ModelConfig) -> Result<PriorTask> {
    let (_, pair) = sample_pair(seed, prior)?;
    let n = pair.biased.n();
    let mut rng = rng_for(stream_seed(seed, 0x5eed));
    let (lo, hi) = config.context_fraction;
    let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let n_ctx = ((frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (ctx, qry) = perm.split_at(n_ctx);
    let batch = encode(&pair.biased, ctx, qry, config)?;
    let source = match config.target_mode {
        TargetMode::Fair => &pair.fair.labels,
        TargetMode::Biased => &pair.biased.labels,
    };
    let targets = qry.iter().map(|&r| source[r]).collect();
    Ok(PriorTask { batch, targets })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    /// Mean query loss over the step's usable datasets.
    pub loss: f64,
    pub lr: f64,
    pub skipped: usize,
}

/// Trains a fresh model on datasets drawn from the prior.
pub fn prior_fit(config: &TrainConfig, mode: ExecMode, mut on_step: impl FnMut(&StepLog, &FairPfn)) -> Result<Checkpoint> {
    config.validate()?;
    let mut model = FairPfn::new(config.model.clone(), stream_seed(config.seed, u64::MAX))?;
    let mut adam = Adam::new(config.adam(), &model.params);
    let planned = config.steps as usize * config.datasets_per_step;
    let max_skipped = (planned / 100).max(1);
    let mut skipped = 0;
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let b = config.datasets_per_step;
        let results = map_range(mode, b, |k| {
            let seed = stream_seed(config.seed, step * b as u64 + k as u64);
            let task = prior_task(seed, &config.prior, &config.model)?;
            model.loss_and_grads(&task.batch, &task.targets)
        });
        let mut total: Option<Vec<Tensor>> = None;
        let mut loss_sum = 0.0;
        let mut used = 0usize;
        let mut step_skipped = 0;
        for r in results {
            match r {
                Ok((loss, grads)) if loss.is_finite() && grads.iter().all(Tensor::is_finite) => {
                    loss_sum += loss;
                    used += 1;
                    match total.as_mut() {
                        None => total = Some(grads),
                        Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                    }
                }
                Ok(_) | Err(Error::Num(_)) => step_skipped += 1,
                Err(e) => return Err(e),
            }
        }
        skipped += step_skipped;
        if skipped > max_skipped {
            return Err(Error::InvalidData(format!(
                "{skipped} of {planned} training datasets had non-finite loss; aborting"
            )));
        }
        let lr = adam.current_lr();
        if let Some(mut grads) = total {
            for g in &mut grads {
                g.scale_in_place(1.0 / used as f64);
            }
            clip_grad_norm(&mut grads, config.grad_clip);
            adam.step(&mut model.params, &grads)?;
            losses.push(loss_sum / used as f64);
        }
        on_step(
            &StepLog {
                step,
                loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
                lr,
                skipped: step_skipped,
            },
            &model,
        );
    }
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        meta: TrainMeta {
            method_id: config.model.target_mode.method_id().into(),
            steps: config.steps,
            seed: config.seed,
            train: config.clone(),
            losses,
            skipped_datasets: skipped,
        },
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            width: 8,
            ff_width: 12,
            max_slots: 5,
            ..ModelConfig::default()
        }
    }

    fn toy(n: usize, m: usize, seed: u64) -> (Vec<u8>, Tensor, Vec<u8>) {
        let mut rng = rng_for(seed);
        let groups = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let x = Tensor::matrix(n, m, (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        (groups, x, y)
    }

    #[test]
    fn normalization_uses_context_stats() {
        let cfg = small();
        let x = Tensor::matrix(2, 1, vec![3.0, 7.0]).unwrap();
        let q = Tensor::matrix(1, 1, vec![7.0]).unwrap();
        let b = encode_parts(&cfg, Rows { groups: &[0, 1], features: &x }, &[0, 1], Rows { groups: &[1], features: &q }).unwrap();
        assert_eq!(b.mean, vec![5.0]);
        assert_eq!(b.sd, vec![2.0]);
        assert_eq!(b.query.get(0, 1), 1.0);
        assert_eq!(b.query.get(0, 0), 1.0);
        // Padding slots: value 0 and presence 0.
        for s in 2..cfg.max_slots {
            assert_eq!(b.query.get(0, s), 0.0);
            assert_eq!(b.query.get(0, cfg.max_slots + s), 0.0);
        }
        assert!(b.attends(2, 1) && !b.attends(0, 2) && !b.attends(2, 2));
    }

    #[test]
    fn constant_column_gets_unit_sd() {
        let x = Tensor::matrix(3, 1, vec![4.0; 3]).unwrap();
        let b = encode_parts(&small(), Rows { groups: &[0, 1, 0], features: &x }, &[0, 1, 1], Rows { groups: &[0, 1, 0], features: &x }).unwrap();
        assert_eq!(b.sd, vec![1.0]);
        assert!(b.query.is_finite());
    }

    #[test]
    fn feature_limits_enforced() {
        let cfg = small();
        let (g, x, y) = toy(6, 5, 1);
        assert!(matches!(
            encode_parts(&cfg, Rows { groups: &g, features: &x }, &y, Rows { groups: &g, features: &x }),
            Err(Error::TooManyFeatures { features: 5, max: 4 })
        ));
        let (g2, x2, _) = toy(3, 2, 2);
        let (g3, x3, y3) = toy(6, 3, 3);
        assert!(matches!(
            encode_parts(&cfg, Rows { groups: &g3, features: &x3 }, &y3, Rows { groups: &g2, features: &x2 }),
            Err(Error::FeatureMismatch { context: 3, query: 2 })
        ));
    }

    #[test]
    fn bce_known_values() {
        assert!(bce(&[1.0, 0.0], &[1, 0]).unwrap() < 1e-11);
        assert!((bce(&[0.5; 4], &[1, 0, 0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce(&[0.5], &[1, 0]).is_err());
    }

    #[test]
    fn single_class_context_falls_back() {
        let m = FairPfn::new(small(), 3).unwrap();
        let (g, x, _) = toy(8, 3, 4);
        let p = m.predict(Rows { groups: &g, features: &x }, &[1; 8], Rows { groups: &g, features: &x }).unwrap();
        assert!(p.iter().all(|&v| v == 0.9));
    }

    #[test]
    fn outputs_are_probabilities_with_right_length() {
        let m = FairPfn::new(small(), 5).unwrap();
        let (g, x, y) = toy(10, 3, 6);
        let (gq, xq, _) = toy(7, 3, 7);
        let p = m.predict(Rows { groups: &g, features: &x }, &y, Rows { groups: &gq, features: &xq }).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let model = FairPfn::new(small(), 9).unwrap();
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            meta: TrainMeta {
                method_id: "fairpfn".into(),
                steps: 0,
                seed: 9,
                train: TrainConfig::default(),
                losses: vec![],
                skipped_datasets: 0,
            },
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let cut = &bytes[..bytes.len() - 16];
        match Checkpoint::from_bytes(cut) {
            Err(Error::Corrupt { expected, actual }) => assert_eq!(expected, actual + 16),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }
}
