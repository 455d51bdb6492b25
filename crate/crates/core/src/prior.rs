//! Random MLP-shaped structural causal models with one exogenous binary
//! protected input, and paired biased/fair datasets drawn from them.
//!
//! Every hidden node computes `act((P ⊙ W)^T x) + σ ε`. The fair variant of a
//! model drops every outgoing edge of the protected input, so the protected
//! attribute's influence on all descendants is replaced by noise alone. Both
//! variants consume the same exogenous draws, which makes the fair label of a
//! row the counterfactual ground truth for that same individual.

use std::path::Path;
use std::sync::Arc;

use numcore::{matmul, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{binarize, quantile, sha256_hex, write_file, Dataset, DatasetMeta, Mode};
use crate::error::{Error, Result};
use crate::rng::{log_uniform, log_uniform_int, rng_for, stream_seed};

/// Magnitude beyond which a node value counts as overflow.
pub const VALUE_LIMIT: f64 = 1e6;
/// Bound on the protected attribute's real values.
pub const PROTECTED_CLAMP: f64 = 4.0;
/// Smallest allowed minority-class share before the threshold is redrawn.
pub const MIN_CLASS_SHARE: f64 = 0.05;
const THRESHOLD_RETRIES: usize = 5;
const SCM_RETRIES: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub layer: usize,
    pub index: usize,
}

/// Sampling ranges for the prior. Integer ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorRanges {
    pub hidden_depth: (usize, usize),
    pub hidden_width: (usize, usize),
    /// Non-protected exogenous inputs.
    pub exogenous_inputs: (usize, usize),
    pub n_features: (usize, usize),
    /// Edge keep-probability, drawn log-uniformly.
    pub keep_prob: (f64, f64),
    /// Per-model noise level, drawn log-uniformly.
    pub noise_scale: (f64, f64),
    /// Multiplier on the protected input's outgoing weights, log-uniform.
    pub protected_gain: (f64, f64),
    pub group1_prob: (f64, f64),
    pub label_quantile: (f64, f64),
    /// Sample count, drawn log-uniformly.
    pub n_samples: (usize, usize),
}

impl Default for PriorRanges {
    fn default() -> Self {
        PriorRanges {
            hidden_depth: (2, 5),
            hidden_width: (4, 32),
            exogenous_inputs: (2, 8),
            n_features: (2, 10),
            keep_prob: (0.1, 1.0),
            noise_scale: (0.01, 1.0),
            protected_gain: (0.1, 10.0),
            group1_prob: (0.1, 0.9),
            label_quantile: (0.3, 0.7),
            n_samples: (100, 1000),
        }
    }
}

impl PriorRanges {
    pub fn validate(&self) -> Result<()> {
        let int_ranges = [
            ("hidden_depth", self.hidden_depth),
            ("hidden_width", self.hidden_width),
            ("exogenous_inputs", self.exogenous_inputs),
            ("n_features", self.n_features),
            ("n_samples", self.n_samples),
        ];
        for (name, (lo, hi)) in int_ranges {
            if lo > hi {
                return Err(Error::InvalidConfig(format!("{name}: min {lo} > max {hi}")));
            }
        }
        let real_ranges = [
            ("keep_prob", self.keep_prob),
            ("noise_scale", self.noise_scale),
            ("protected_gain", self.protected_gain),
            ("group1_prob", self.group1_prob),
            ("label_quantile", self.label_quantile),
        ];
        for (name, (lo, hi)) in real_ranges {
            if !(lo <= hi) || lo <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name}: invalid range ({lo}, {hi})")));
            }
        }
        if self.hidden_depth.1 < 2 {
            return Err(Error::InvalidConfig(format!(
                "hidden_depth max {} cannot yield the two hidden layers features are drawn from",
                self.hidden_depth.1
            )));
        }
        if self.keep_prob.1 > 1.0 || self.group1_prob.1 >= 1.0 || self.label_quantile.1 >= 1.0 {
            return Err(Error::InvalidConfig("probabilities must lie in (0, 1)".into()));
        }
        if self.hidden_width.0 == 0 || self.n_features.0 == 0 || self.n_samples.0 < 16 {
            return Err(Error::InvalidConfig("widths, feature count and n must be positive (n >= 16)".into()));
        }
        Ok(())
    }
}

/// A sampled structural causal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    /// `[inputs, hidden..., outputs]`
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` is `layer_sizes[l] x layer_sizes[l + 1]`.
    pub weights: Vec<Tensor>,
    /// Edge masks, same layout as `weights`, entries 0 or 1.
    pub masks: Vec<Vec<u8>>,
    /// Activation of layer `l + 1`.
    pub activations: Vec<Activation>,
    /// Noise scale per node, layer by layer; input entries are unused.
    pub noise_scales: Vec<Vec<f64>>,
    pub protected_input: usize,
    /// Real values `(a0, a1)` of the protected input.
    pub protected_values: (f64, f64),
    pub group1_prob: f64,
    pub feature_nodes: Vec<NodeRef>,
    pub target_node: NodeRef,
    pub label_quantile: f64,
    pub keep_prob: f64,
}

impl ScmSpec {
    pub fn node_count(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Column offset of each layer in a [`NoiseDraw`].
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layer_sizes.len());
        let mut acc = 0;
        for &w in &self.layer_sizes {
            offsets.push(acc);
            acc += w;
        }
        offsets
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        sha256_hex(&json)[..16].to_string()
    }

    /// True when every outgoing edge of the protected input is absent.
    pub fn protected_is_disconnected(&self) -> bool {
        let w = &self.weights[0];
        let row = self.protected_input;
        (0..w.cols()).all(|j| w.get(row, j) == 0.0 || self.masks[0][row * w.cols() + j] == 0)
    }

    /// Checks structural invariants of the spec.
    pub fn validate(&self) -> Result<()> {
        let layers = self.layer_sizes.len();
        if layers < 4 {
            return Err(Error::InvalidConfig("need input, two hidden layers and output".into()));
        }
        if self.weights.len() != layers - 1 || self.masks.len() != layers - 1 || self.activations.len() != layers - 1 {
            return Err(Error::InvalidConfig("per-layer vectors have wrong length".into()));
        }
        for l in 0..layers - 1 {
            if self.weights[l].shape() != [self.layer_sizes[l], self.layer_sizes[l + 1]] {
                return Err(Error::InvalidConfig(format!("weight {l} has shape {:?}", self.weights[l].shape())));
            }
            if self.masks[l].len() != self.weights[l].len() || self.masks[l].iter().any(|&m| m > 1) {
                return Err(Error::InvalidConfig(format!("mask {l} malformed")));
            }
        }
        if self.noise_scales.iter().flatten().any(|&s| s < 0.0) {
            return Err(Error::InvalidConfig("negative noise scale".into()));
        }
        if self.protected_input >= self.layer_sizes[0] {
            return Err(Error::InvalidConfig("protected input out of range".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.feature_nodes {
            if f.layer < 2 || f.layer >= layers || f.index >= self.layer_sizes[f.layer] || !seen.insert(*f) {
                return Err(Error::InvalidConfig(format!("bad feature node {f:?}")));
            }
        }
        if self.target_node.layer != layers - 1 {
            return Err(Error::InvalidConfig("target must be an output node".into()));
        }
        Ok(())
    }
}

/// Exogenous standard-normal draws (one column per node) plus group ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub groups: Vec<u8>,
    /// `n x node_count`
    pub z: Tensor,
}

impl NoiseDraw {
    pub fn sample(spec: &ScmSpec, n: usize, seed: u64) -> NoiseDraw {
        let mut rng = rng_for(seed);
        let groups = (0..n).map(|_| u8::from(rng.random::<f64>() < spec.group1_prob)).collect();
        let k = spec.node_count();
        let z = (0..n * k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        NoiseDraw {
            groups,
            z: Tensor::matrix(n, k, z).expect("noise dims"),
        }
    }

    pub fn n(&self) -> usize {
        self.groups.len()
    }

    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.groups.len() + self.z.len() * 8);
        bytes.extend_from_slice(&self.groups);
        for v in self.z.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sha256_hex(&bytes)[..16].to_string()
    }

    pub fn csv_string(&self) -> String {
        let mut out = String::from("group");
        for j in 0..self.z.cols() {
            out.push_str(&format!(",z{j}"));
        }
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&self.groups[i].to_string());
            for v in self.z.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<NoiseDraw> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.to_string()))?;
        let k = reader.headers().map_err(|e| Error::io(path, e.to_string()))?.len() - 1;
        let mut groups = Vec::new();
        let mut z = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::io(path, e.to_string()))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::InvalidData(format!("bad noise value {s:?}")));
            groups.push(parse(&rec[0])? as u8);
            for j in 1..=k {
                z.push(parse(&rec[j])?);
            }
        }
        let n = groups.len();
        Ok(NoiseDraw {
            groups,
            z: Tensor::matrix(n, k, z)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub biased: Dataset,
    pub fair: Dataset,
    pub noise: Arc<NoiseDraw>,
}

/// Draws an SCM from the prior.
pub fn sample_scm(seed: u64, ranges: &PriorRanges) -> Result<ScmSpec> {
    ranges.validate()?;
    let mut rng = rng_for(seed);
    let depth = rng.random_range(ranges.hidden_depth.0.max(2)..=ranges.hidden_depth.1);
    let n_exo = rng.random_range(ranges.exogenous_inputs.0..=ranges.exogenous_inputs.1);
    let mut layer_sizes = vec![n_exo + 1];
    for _ in 0..depth {
        layer_sizes.push(rng.random_range(ranges.hidden_width.0..=ranges.hidden_width.1));
    }
    layer_sizes.push(1);

    let keep_prob = log_uniform(&mut rng, ranges.keep_prob.0, ranges.keep_prob.1);
    let noise_level = log_uniform(&mut rng, ranges.noise_scale.0, ranges.noise_scale.1);
    let protected_gain = log_uniform(&mut rng, ranges.protected_gain.0, ranges.protected_gain.1);
    let protected_input = rng.random_range(0..layer_sizes[0]);

    let mut weights = Vec::new();
    let mut masks = Vec::new();
    let mut activations = Vec::new();
    for l in 0..layer_sizes.len() - 1 {
        let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let scale = 1.0 / (fan_in as f64 * keep_prob).sqrt();
        let mut w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        if l == 0 {
            for j in 0..fan_out {
                w[protected_input * fan_out + j] *= protected_gain;
            }
        }
        let mut mask: Vec<u8> = (0..fan_in * fan_out)
            .map(|_| u8::from(rng.random::<f64>() < keep_prob))
            .collect();
        // Every node keeps at least one incoming edge.
        for j in 0..fan_out {
            if (0..fan_in).all(|i| mask[i * fan_out + j] == 0) {
                mask[rng.random_range(0..fan_in) * fan_out + j] = 1;
            }
        }
        weights.push(Tensor::matrix(fan_in, fan_out, w)?);
        masks.push(mask);
        activations.push(match rng.random_range(0..3) {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            _ => Activation::Relu,
        });
    }
    let noise_scales = layer_sizes
        .iter()
        .enumerate()
        .map(|(l, &w)| {
            (0..w)
                .map(|_| if l == 0 { 1.0 } else { noise_level * rng.random_range(0.5..1.5) })
                .collect()
        })
        .collect();

    let draw_protected = |rng: &mut crate::rng::SimRng| {
        rng.sample::<f64, _>(StandardNormal).clamp(-PROTECTED_CLAMP, PROTECTED_CLAMP)
    };
    let protected_values = (draw_protected(&mut rng), draw_protected(&mut rng));
    let group1_prob = rng.random_range(ranges.group1_prob.0..=ranges.group1_prob.1);

    let mut candidates: Vec<NodeRef> = (2..=depth)
        .flat_map(|layer| (0..layer_sizes[layer]).map(move |index| NodeRef { layer, index }))
        .collect();
    candidates.shuffle(&mut rng);
    let m = rng
        .random_range(ranges.n_features.0..=ranges.n_features.1)
        .min(candidates.len());
    let feature_nodes = candidates[..m].to_vec();
    let label_quantile = rng.random_range(ranges.label_quantile.0..=ranges.label_quantile.1);

    let spec = ScmSpec {
        target_node: NodeRef {
            layer: layer_sizes.len() - 1,
            index: 0,
        },
        layer_sizes,
        weights,
        masks,
        activations,
        noise_scales,
        protected_input,
        protected_values,
        group1_prob,
        feature_nodes,
        label_quantile,
        keep_prob,
    };
    spec.validate()?;
    Ok(spec)
}

/// Node values of every layer (`n x width` each). With `protected_active`
/// off, every edge out of the protected input carries zero weight.
pub fn scm_forward(spec: &ScmSpec, groups: &[u8], noise: &NoiseDraw, protected_active: bool) -> Result<Vec<Tensor>> {
    let n = groups.len();
    if n == 0 || noise.n() != n || noise.z.cols() != spec.node_count() {
        return Err(Error::InvalidData(format!(
            "noise is {}x{}, expected {n}x{}",
            noise.n(),
            noise.z.cols(),
            spec.node_count()
        )));
    }
    let offsets = spec.layer_offsets();
    let width0 = spec.layer_sizes[0];
    let (a0, a1) = spec.protected_values;
    let mut input = Tensor::zeros(&[n, width0]);
    for i in 0..n {
        let z = noise.z.row(i);
        let row = input.row_mut(i);
        row.copy_from_slice(&z[..width0]);
        row[spec.protected_input] = match (protected_active, groups[i]) {
            (false, _) => 0.0,
            (true, 0) => a0,
            (true, _) => a1,
        };
    }
    let mut layers = vec![input];
    for l in 0..spec.weights.len() {
        let mut w = spec.weights[l].clone();
        for (v, &m) in w.data_mut().iter_mut().zip(&spec.masks[l]) {
            if m == 0 {
                *v = 0.0;
            }
        }
        if l == 0 && !protected_active {
            w.row_mut(spec.protected_input).iter_mut().for_each(|v| *v = 0.0);
        }
        let mut h = matmul(&layers[l], &w)?;
        let act = spec.activations[l];
        let off = offsets[l + 1];
        let scales = &spec.noise_scales[l + 1];
        for i in 0..n {
            let z = &noise.z.row(i)[off..off + scales.len()];
            for (j, v) in h.row_mut(i).iter_mut().enumerate() {
                *v = act.apply(*v) + scales[j] * z[j];
                if !v.is_finite() || v.abs() > VALUE_LIMIT {
                    return Err(Error::Overflow(format!("layer {} node {j} row {i}", l + 1)));
                }
            }
        }
        layers.push(h);
    }
    Ok(layers)
}

fn observables(spec: &ScmSpec, layers: &[Tensor]) -> (Tensor, Vec<f64>) {
    let n = layers[0].rows();
    let m = spec.feature_nodes.len();
    let mut x = Tensor::zeros(&[n, m]);
    for i in 0..n {
        for (j, f) in spec.feature_nodes.iter().enumerate() {
            x.set(i, j, layers[f.layer].get(i, f.index));
        }
    }
    let t = spec.target_node;
    let y = (0..n).map(|i| layers[t.layer].get(i, t.index)).collect();
    (x, y)
}

fn minority_share(labels: &[u8]) -> f64 {
    let ones = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
    ones.min(1.0 - ones)
}

/// Builds a dataset from a forward pass with a fixed label threshold.
fn build_dataset(
    spec: &ScmSpec,
    noise: &NoiseDraw,
    groups: &[u8],
    mode: Mode,
    threshold: f64,
    seed: u64,
    id: String,
) -> Result<Dataset> {
    let layers = scm_forward(spec, groups, noise, mode == Mode::Biased)?;
    let (features, target) = observables(spec, &layers);
    let labels = binarize(&target, threshold);
    let degenerate = minority_share(&labels) < MIN_CLASS_SHARE;
    Ok(Dataset {
        id,
        groups: groups.to_vec(),
        features,
        labels,
        target,
        meta: DatasetMeta {
            seed,
            scm_hash: spec.hash(),
            a0: spec.protected_values.0,
            a1: spec.protected_values.1,
            twin_of: None,
            noise_file: None,
            threshold,
            mode,
            noise_fingerprint: Some(noise.fingerprint()),
            degenerate_labels: degenerate,
        },
    })
}

/// Generates a biased/fair pair sharing one noise draw.
pub fn generate_pair(spec: &ScmSpec, n: usize, seed: u64) -> Result<DatasetPair> {
    if n < 16 {
        return Err(Error::InvalidConfig(format!("need n >= 16, got {n}")));
    }
    let noise = NoiseDraw::sample(spec, n, stream_seed(seed, 0));
    let biased_layers = scm_forward(spec, &noise.groups, &noise, true)?;
    let (_, y_cont) = observables(spec, &biased_layers);

    let mut rng = rng_for(stream_seed(seed, 1));
    let mut q = spec.label_quantile;
    let mut threshold = quantile(&y_cont, q);
    let mut tries = 0;
    while minority_share(&binarize(&y_cont, threshold)) < MIN_CLASS_SHARE {
        tries += 1;
        if tries > THRESHOLD_RETRIES {
            return Err(Error::DegenerateLabels(format!(
                "scm {}: one class below {MIN_CLASS_SHARE} after {THRESHOLD_RETRIES} thresholds",
                spec.hash()
            )));
        }
        q = rng.random_range(0.3..0.7);
        threshold = quantile(&y_cont, q);
    }

    let stem = format!("prior-{seed:016x}");
    let biased = build_dataset(spec, &noise, &noise.groups, Mode::Biased, threshold, seed, format!("{stem}.biased"))?;
    let mut fair = build_dataset(spec, &noise, &noise.groups, Mode::Fair, threshold, seed, format!("{stem}.fair"))?;
    fair.meta.twin_of = Some(biased.id.clone());
    Ok(DatasetPair {
        biased,
        fair,
        noise: Arc::new(noise),
    })
}

/// Samples SCMs until one yields a valid pair; `n` is drawn from the ranges.
pub fn sample_pair(seed: u64, ranges: &PriorRanges) -> Result<(ScmSpec, DatasetPair)> {
    ranges.validate()?;
    let mut last_err = None;
    for attempt in 0..SCM_RETRIES {
        let s = stream_seed(seed, attempt);
        let spec = sample_scm(s, ranges)?;
        let n = log_uniform_int(&mut rng_for(stream_seed(s, 7)), ranges.n_samples.0, ranges.n_samples.1);
        match generate_pair(&spec, n, s) {
            Ok(pair) => return Ok((spec, pair)),
            Err(e @ (Error::Overflow(_) | Error::DegenerateLabels(_))) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::InvalidConfig("no valid SCM".into())))
}

/// Re-generates `dataset` with every row's protected group flipped and the
/// same exogenous draws.
pub fn counterfactual_replay(spec: &ScmSpec, dataset: &Dataset, noise: &NoiseDraw) -> Result<Dataset> {
    let expected = dataset
        .meta
        .noise_fingerprint
        .as_deref()
        .ok_or_else(|| Error::MissingNoise(format!("{} has no noise record", dataset.id)))?;
    if noise.n() != dataset.n() || noise.fingerprint() != expected {
        return Err(Error::MissingNoise(format!("noise does not match {}", dataset.id)));
    }
    let flipped: Vec<u8> = dataset.groups.iter().map(|&g| 1 - g).collect();
    let id = match dataset.id.strip_suffix(".cf") {
        Some(orig) => orig.to_string(),
        None => format!("{}.cf", dataset.id),
    };
    let mut twin = build_dataset(spec, noise, &flipped, dataset.meta.mode, dataset.meta.threshold, dataset.meta.seed, id)?;
    twin.meta.twin_of = if dataset.id.ends_with(".cf") { None } else { Some(dataset.id.clone()) };
    Ok(twin)
}

/// Writes the pair's two datasets and the noise record under `dir`.
pub fn write_pair(pair: &DatasetPair, dir: &Path) -> Result<()> {
    let noise_name = format!("{}.noise.csv", pair.biased.id.trim_end_matches(".biased"));
    write_file(&dir.join(&noise_name), pair.noise.csv_string().as_bytes())?;
    for ds in [&pair.biased, &pair.fair] {
        let mut ds = ds.clone();
        ds.meta.noise_file = Some(noise_name.clone());
        ds.write(&dir.join(format!("{}.csv", ds.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Input (protected, u) -> hidden1 (2) -> hidden2 (2) -> output (1), all identity.
    pub(crate) fn hand_spec(w_protected: f64) -> ScmSpec {
        let w0 = Tensor::matrix(2, 2, vec![w_protected, 0.0, 0.5, 1.0]).unwrap();
        let w1 = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let w2 = Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap();
        ScmSpec {
            layer_sizes: vec![2, 2, 2, 1],
            weights: vec![w0, w1, w2],
            masks: vec![vec![1; 4], vec![1; 4], vec![1; 2]],
            activations: vec![Activation::Identity; 3],
            noise_scales: vec![vec![1.0, 1.0], vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5]],
            protected_input: 0,
            protected_values: (-1.0, 2.0),
            group1_prob: 0.5,
            feature_nodes: vec![NodeRef { layer: 2, index: 0 }, NodeRef { layer: 2, index: 1 }],
            target_node: NodeRef { layer: 3, index: 0 },
            label_quantile: 0.5,
            keep_prob: 1.0,
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = PriorRanges::default();
        assert_eq!(sample_scm(11, &r).unwrap(), sample_scm(11, &r).unwrap());
        assert_ne!(sample_scm(11, &r).unwrap(), sample_scm(12, &r).unwrap());
    }

    #[test]
    fn shallow_ranges_rejected() {
        let r = PriorRanges {
            hidden_depth: (1, 1),
            ..PriorRanges::default()
        };
        assert!(matches!(sample_scm(0, &r), Err(Error::InvalidConfig(_))));
        let r = PriorRanges {
            hidden_width: (10, 4),
            ..PriorRanges::default()
        };
        assert!(matches!(sample_scm(0, &r), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_weights_give_pure_noise() {
        let mut spec = hand_spec(1.0);
        for w in &mut spec.weights {
            w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let noise = NoiseDraw::sample(&spec, 5, 3);
        let layers = scm_forward(&spec, &noise.groups, &noise, true).unwrap();
        let offsets = spec.layer_offsets();
        for l in 1..4 {
            for i in 0..5 {
                for j in 0..spec.layer_sizes[l] {
                    let expected = spec.noise_scales[l][j] * noise.z.get(i, offsets[l] + j);
                    assert_eq!(layers[l].get(i, j), expected);
                }
            }
        }
    }

    #[test]
    fn fair_forward_ignores_groups() {
        let spec = sample_scm(5, &PriorRanges::default()).unwrap();
        let noise = NoiseDraw::sample(&spec, 20, 1);
        let zeros = scm_forward(&spec, &[0; 20], &noise, false).unwrap();
        let ones = scm_forward(&spec, &[1; 20], &noise, false).unwrap();
        assert_eq!(zeros, ones);
    }

    #[test]
    fn hand_built_forward() {
        let spec = hand_spec(1.5);
        let noise = NoiseDraw::sample(&spec, 4, 8);
        let layers = scm_forward(&spec, &noise.groups, &noise, true).unwrap();
        for i in 0..4 {
            let z = noise.z.row(i);
            let a = if noise.groups[i] == 1 { 2.0 } else { -1.0 };
            let u = z[1];
            let h1 = [1.5 * a + 0.5 * u + 0.1 * z[2], 1.0 * u + 0.2 * z[3]];
            let h2 = [h1[0] + 0.3 * z[4], 2.0 * h1[1] + 0.4 * z[5]];
            let y = h2[0] - h2[1] + 0.5 * z[6];
            assert!((layers[1].get(i, 0) - h1[0]).abs() < 1e-12);
            assert!((layers[2].get(i, 1) - h2[1]).abs() < 1e-12);
            assert!((layers[3].get(i, 0) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_protected_gives_identical_pair() {
        let pair = generate_pair(&hand_spec(0.0), 64, 4).unwrap();
        assert!(pair.biased.same_observables(&pair.fair));
    }

    #[test]
    fn pair_shares_noise_and_threshold() {
        let spec = sample_scm(21, &PriorRanges::default()).unwrap();
        let pair = generate_pair(&spec, 200, 21).unwrap();
        assert_eq!(pair.biased.meta.noise_fingerprint, pair.fair.meta.noise_fingerprint);
        assert_eq!(pair.biased.meta.noise_fingerprint.as_deref(), Some(pair.noise.fingerprint().as_str()));
        assert_eq!(pair.biased.groups, pair.fair.groups);
        assert_eq!(pair.biased.meta.threshold, pair.fair.meta.threshold);
        assert!(generate_pair(&spec, 8, 0).is_err());
    }

    #[test]
    fn replay_is_an_involution() {
        let spec = hand_spec(1.5);
        let pair = generate_pair(&spec, 50, 2).unwrap();
        let twin = counterfactual_replay(&spec, &pair.biased, &pair.noise).unwrap();
        assert_eq!(twin.meta.twin_of.as_deref(), Some(pair.biased.id.as_str()));
        let back = counterfactual_replay(&spec, &twin, &pair.noise).unwrap();
        assert!(back.same_observables(&pair.biased));
        assert_eq!(back.target, pair.biased.target);
        assert_eq!(back.id, pair.biased.id);
    }

    #[test]
    fn replay_shift_is_closed_form() {
        // Feature x1 = h2[0] = w_A * a + 0.5 u + noise, so a flip moves it by w_A (a1 - a0).
        let spec = hand_spec(1.5);
        let pair = generate_pair(&spec, 40, 6).unwrap();
        let twin = counterfactual_replay(&spec, &pair.biased, &pair.noise).unwrap();
        for i in 0..40 {
            let sign = if pair.biased.groups[i] == 0 { 1.0 } else { -1.0 };
            let delta = twin.features.get(i, 0) - pair.biased.features.get(i, 0);
            assert!((delta - sign * 1.5 * 3.0).abs() < 1e-12);
            assert_eq!(twin.features.get(i, 1), pair.biased.features.get(i, 1));
        }
    }

    #[test]
    fn replay_requires_matching_noise() {
        let spec = hand_spec(1.5);
        let pair = generate_pair(&spec, 40, 6).unwrap();
        let other = NoiseDraw::sample(&spec, 40, 99);
        assert!(matches!(
            counterfactual_replay(&spec, &pair.biased, &other),
            Err(Error::MissingNoise(_))
        ));
        let mut stripped = pair.biased.clone();
        stripped.meta.noise_fingerprint = None;
        assert!(matches!(
            counterfactual_replay(&spec, &stripped, &pair.noise),
            Err(Error::MissingNoise(_))
        ));
    }

    #[test]
    fn pair_files_written() {
        let spec = hand_spec(1.0);
        let pair = generate_pair(&spec, 30, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_pair(&pair, dir.path()).unwrap();
        let stem = pair.biased.id.trim_end_matches(".biased");
        let noise = NoiseDraw::read_csv(&dir.path().join(format!("{stem}.noise.csv"))).unwrap();
        assert_eq!(noise, *pair.noise);
        let back = Dataset::read(&dir.path().join(format!("{}.csv", pair.fair.id))).unwrap();
        assert!(back.same_observables(&pair.fair));
        assert_eq!(back.meta.twin_of.as_deref(), Some(pair.biased.id.as_str()));
    }
}
