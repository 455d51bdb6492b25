//! Real-world tables over declared causal graphs: ingestion, additive-noise
//! model fitting with bagged regression trees, inferred noise terms and
//! counterfactual twins by residual replay.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use numcore::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::casebench::FairInfo;
use crate::data::{binarize, quantile, Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::exec::{map_collect, ExecMode};
use crate::rng::{rng_for, stream_seed};

pub const GRAPH_VERSION: u32 = 1;
/// Tag for the binary-node counterfactual approximation.
pub const BINARY_CF_METHOD: &str = "anm-prob-residual";
const MISSING_TOKENS: [&str; 4] = ["", "?", "NA", "nan"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Continuous,
    Binary,
    /// String-valued; encoded as the index of the value in sorted order.
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<String>,
    pub kind: NodeKind,
    /// Alternative header names for this column.
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraphSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    pub protected: String,
    pub target: String,
    /// Raw protected values mapped to groups 0 and 1; other values are dropped.
    #[serde(default)]
    pub protected_groups: Option<[Vec<String>; 2]>,
    /// Raw values of a binary node that count as 1.
    #[serde(default)]
    pub positive_values: BTreeMap<String, Vec<String>>,
    /// Quantile at which a continuous target is binarized.
    #[serde(default)]
    pub target_quantile: Option<f64>,
    /// When set, the CSV header must contain exactly these columns.
    #[serde(default)]
    pub expected_columns: Option<Vec<String>>,
}

fn default_version() -> u32 {
    GRAPH_VERSION
}

impl CausalGraphSpec {
    pub fn load(path: &Path) -> Result<CausalGraphSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e.to_string()))?;
        let spec: CausalGraphSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != GRAPH_VERSION {
            return Err(Error::InvalidConfig(format!("graph config version {}", self.version)));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate node {}", n.name)));
            }
        }
        for n in &self.nodes {
            for p in &n.parents {
                if self.node(p).is_none() {
                    return Err(Error::InvalidConfig(format!("{}: unknown parent {p}", n.name)));
                }
            }
        }
        let protected = self
            .node(&self.protected)
            .ok_or_else(|| Error::InvalidConfig(format!("protected node {} not declared", self.protected)))?;
        if !protected.parents.is_empty() {
            return Err(Error::InvalidConfig(format!("protected node {} must have no parents", self.protected)));
        }
        if self.node(&self.target).is_none() {
            return Err(Error::InvalidConfig(format!("target node {} not declared", self.target)));
        }
        if self.nodes.iter().any(|n| n.parents.contains(&self.target)) {
            return Err(Error::InvalidConfig(format!("target {} must have no children", self.target)));
        }
        self.topo_order().map(|_| ())
    }

    /// Node names with every parent before its children; errors on a cycle.
    pub fn topo_order(&self) -> Result<Vec<String>> {
        let mut indegree: HashMap<&str, usize> = self.nodes.iter().map(|n| (n.name.as_str(), n.parents.len())).collect();
        let mut ready: Vec<&str> = self.nodes.iter().filter(|n| n.parents.is_empty()).map(|n| n.name.as_str()).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(next) = ready.first().copied() {
            ready.remove(0);
            order.push(next.to_string());
            for child in self.nodes.iter().filter(|c| c.parents.iter().any(|p| p == next)) {
                let d = indegree.get_mut(child.name.as_str()).expect("declared node");
                *d -= 1;
                if *d == 0 {
                    ready.push(child.name.as_str());
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::InvalidConfig(format!("graph {} has a cycle", self.name)));
        }
        Ok(order)
    }

    /// Descendants of `node` (excluding itself).
    pub fn descendants(&self, node: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut frontier = vec![node.to_string()];
        while let Some(cur) = frontier.pop() {
            for child in self.nodes.iter().filter(|c| c.parents.contains(&cur)) {
                if !out.contains(&child.name) {
                    out.push(child.name.clone());
                    frontier.push(child.name.clone());
                }
            }
        }
        out
    }

    /// Feature columns in topological order: every node except the
    /// protected attribute and the target.
    pub fn feature_nodes(&self) -> Result<Vec<String>> {
        Ok(self
            .topo_order()?
            .into_iter()
            .filter(|n| *n != self.protected && *n != self.target)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub rows_kept: usize,
}

/// A table of numeric node values, one column per graph node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub columns: BTreeMap<String, Vec<f64>>,
    /// Continuous-target binarization threshold, if any.
    pub target_threshold: Option<f64>,
}

impl NodeTable {
    pub fn n(&self) -> usize {
        self.columns.values().next().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&Vec<f64>> {
        self.columns
            .get(name)
            .ok_or_else(|| Error::InvalidData(format!("no column {name}")))
    }
}

/// Reads a CSV release into node columns, dropping rows with missing or
/// unmapped values.
pub fn ingest_table(graph: &CausalGraphSpec, csv_path: &Path) -> Result<(NodeTable, IngestReport)> {
    graph.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| Error::io(csv_path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::io(csv_path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if let Some(expected) = &graph.expected_columns {
        let missing: Vec<&String> = expected.iter().filter(|c| !header.contains(c)).collect();
        let extra: Vec<&String> = header.iter().filter(|c| !expected.contains(c)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::InvalidData(format!("columns differ: missing {missing:?}, extra {extra:?}")));
        }
    }
    let mut index = BTreeMap::new();
    let mut missing = Vec::new();
    for node in &graph.nodes {
        let pos = std::iter::once(&node.name)
            .chain(&node.aliases)
            .find_map(|name| header.iter().position(|h| h == name));
        match pos {
            Some(p) => {
                index.insert(node.name.clone(), p);
            }
            None => missing.push(node.name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: missing columns {missing:?} (header {header:?})",
            csv_path.display()
        )));
    }

    let mut raw: BTreeMap<String, Vec<String>> = graph.nodes.iter().map(|n| (n.name.clone(), Vec::new())).collect();
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::io(csv_path, e.to_string()))?;
        rows_read += 1;
        let values: Option<Vec<(&String, &str)>> = index
            .iter()
            .map(|(name, &p)| rec.get(p).filter(|v| !MISSING_TOKENS.contains(v)).map(|v| (name, v)))
            .collect();
        let Some(values) = values else {
            rows_dropped += 1;
            continue;
        };
        if let Some(groups) = &graph.protected_groups {
            let a = values.iter().find(|(n, _)| **n == graph.protected).expect("protected column").1;
            if !groups.iter().any(|g| g.iter().any(|v| v == a)) {
                rows_dropped += 1;
                continue;
            }
        }
        for (name, v) in values {
            raw.get_mut(name).expect("node column").push(v.to_string());
        }
    }

    let mut columns = BTreeMap::new();
    for node in &graph.nodes {
        let vals = &raw[&node.name];
        let col = if node.name == graph.protected {
            match &graph.protected_groups {
                Some(groups) => vals.iter().map(|v| f64::from(u8::from(groups[1].contains(v)))).collect(),
                None => parse_binary(&node.name, vals, graph.positive_values.get(&node.name))?,
            }
        } else {
            match node.kind {
                NodeKind::Continuous => parse_numeric(&node.name, vals)?,
                NodeKind::Binary => parse_binary(&node.name, vals, graph.positive_values.get(&node.name))?,
                NodeKind::Categorical => {
                    let mut levels: Vec<&String> = vals.iter().collect();
                    levels.sort();
                    levels.dedup();
                    vals.iter()
                        .map(|v| levels.binary_search(&v).expect("level present") as f64)
                        .collect()
                }
            }
        };
        columns.insert(node.name.clone(), col);
    }
    let target_threshold = match (graph.node(&graph.target).map(|n| n.kind), graph.target_quantile) {
        (Some(NodeKind::Binary), _) => None,
        (_, q) => {
            let col = &columns[&graph.target];
            if col.is_empty() {
                None
            } else {
                Some(quantile(col, q.unwrap_or(0.5)))
            }
        }
    };
    let kept = rows_read - rows_dropped;
    Ok((
        NodeTable { columns, target_threshold },
        IngestReport {
            rows_read,
            rows_dropped,
            rows_kept: kept,
        },
    ))
}

fn parse_numeric(name: &str, vals: &[String]) -> Result<Vec<f64>> {
    vals.iter()
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidData(format!("{name}: non-numeric value {v:?}")))
        })
        .collect()
}

fn parse_binary(name: &str, vals: &[String], positive: Option<&Vec<String>>) -> Result<Vec<f64>> {
    vals.iter()
        .map(|v| match positive {
            Some(pos) => Ok(f64::from(u8::from(pos.iter().any(|p| p == v)))),
            None => match v.parse::<f64>() {
                Ok(x) if x == 0.0 || x == 1.0 => Ok(x),
                _ => Err(Error::InvalidData(format!("{name}: value {v:?} is not 0/1"))),
            },
        })
        .collect()
}

/// Dataset view of a node table: `A`, feature nodes in topological order, `y`.
pub fn table_dataset(graph: &CausalGraphSpec, table: &NodeTable, id: &str) -> Result<Dataset> {
    let feats = graph.feature_nodes()?;
    let n = table.n();
    let cols: Vec<&Vec<f64>> = feats.iter().map(|f| table.column(f)).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(n * feats.len());
    for i in 0..n {
        data.extend(cols.iter().map(|c| c[i]));
    }
    let target = table.column(&graph.target)?;
    let labels = match table.target_threshold {
        Some(t) => binarize(target, t),
        None => target.iter().map(|&v| u8::from(v >= 0.5)).collect(),
    };
    let ds = Dataset {
        id: id.to_string(),
        groups: table.column(&graph.protected)?.iter().map(|&v| u8::from(v == 1.0)).collect(),
        features: Tensor::matrix(n, feats.len(), data)?,
        labels,
        target: target.clone(),
        meta: DatasetMeta {
            a0: 0.0,
            a1: 1.0,
            threshold: table.target_threshold.unwrap_or(0.5),
            ..DatasetMeta::default()
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Reads a dataset release with its graph config.
pub fn ingest(graph: &CausalGraphSpec, csv_path: &Path) -> Result<(Dataset, NodeTable, IngestReport)> {
    let (table, report) = ingest_table(graph, csv_path)?;
    let ds = table_dataset(graph, &table, &graph.name)?;
    Ok((ds, table, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 50,
            max_depth: 4,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// Greedy least-squares tree on the rows in `sample`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], sample: &[usize], max_depth: usize, min_leaf: usize) -> RegressionTree {
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow(x, y, sample.to_vec(), max_depth, min_leaf.max(1));
        tree
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[f64], rows: Vec<usize>, depth: usize, min_leaf: usize) -> usize {
        let id = self.nodes.len();
        let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len().max(1) as f64;
        self.nodes.push(TreeNode::Leaf(mean));
        if depth == 0 || rows.len() < 2 * min_leaf {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, y, &rows, min_leaf) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[feature][i] <= threshold);
        let left = self.grow(x, y, l, depth - 1, min_leaf);
        let right = self.grow(x, y, r, depth - 1, min_leaf);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Best variance-reducing split over all features, if any improves.
fn best_split(x: &[Vec<f64>], y: &[f64], rows: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = rows.len() as f64;
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = rows.to_vec();
    for (f, col) in x.iter().enumerate() {
        sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut left_sum = 0.0;
        for k in 0..sorted.len() - 1 {
            left_sum += y[sorted[k]];
            let nl = (k + 1) as f64;
            if k + 1 < min_leaf || sorted.len() - k - 1 < min_leaf || col[sorted[k]] == col[sorted[k + 1]] {
                continue;
            }
            // Maximizing this is minimizing the children's squared error.
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl);
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, f, 0.5 * (col[sorted[k]] + col[sorted[k + 1]])));
            }
        }
    }
    let (score, f, t) = best?;
    (score > total * total / n + 1e-12).then_some((f, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<RegressionTree>,
    /// Predicts the training mean; set when the parents carry no variation.
    pub constant: Option<f64>,
}

impl Forest {
    /// Bagged regression trees; `x` is column-major (one `Vec` per parent).
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Forest {
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n.max(1) as f64;
        let varies = x.iter().any(|c| c.iter().any(|&v| v != c[0]));
        if !varies || n < 2 {
            return Forest {
                trees: Vec::new(),
                constant: Some(mean),
            };
        }
        let trees = (0..cfg.trees)
            .map(|t| {
                let mut rng = rng_for(stream_seed(cfg.seed, t as u64));
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                RegressionTree::fit(x, y, &sample, cfg.max_depth, cfg.min_leaf)
            })
            .collect();
        Forest { trees, constant: None }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let n = x.first().map_or(0, Vec::len);
        if let Some(c) = self.constant {
            return vec![c; n];
        }
        let mut row = vec![0.0; x.len()];
        (0..n)
            .map(|i| {
                for (r, col) in row.iter_mut().zip(x) {
                    *r = col[i];
                }
                self.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedAnm {
    pub graph: CausalGraphSpec,
    pub order: Vec<String>,
    /// Regressor per non-root node.
    pub regressors: BTreeMap<String, Forest>,
    /// `observed - regressor(parents)` per non-root node.
    pub residuals: BTreeMap<String, Vec<f64>>,
    pub observed: NodeTable,
}

fn parent_columns(graph: &CausalGraphSpec, node: &str, values: &BTreeMap<String, Vec<f64>>) -> Vec<Vec<f64>> {
    graph
        .node(node)
        .map(|n| n.parents.iter().map(|p| values[p].clone()).collect())
        .unwrap_or_default()
}

/// Fits every non-root node on its parents.
pub fn fit_anm(graph: &CausalGraphSpec, table: &NodeTable, cfg: &ForestConfig, mode: ExecMode) -> Result<FittedAnm> {
    graph.validate()?;
    for n in &graph.nodes {
        table.column(&n.name)?;
    }
    let order = graph.topo_order()?;
    let non_root: Vec<&NodeSpec> = order
        .iter()
        .filter_map(|name| graph.node(name))
        .filter(|n| !n.parents.is_empty())
        .collect();
    let fits = map_collect(mode, &non_root, |node| {
        let x = parent_columns(graph, &node.name, &table.columns);
        let y = &table.columns[&node.name];
        let node_cfg = ForestConfig {
            seed: stream_seed(cfg.seed, fxhash(&node.name)),
            ..*cfg
        };
        let forest = Forest::fit(&x, y, &node_cfg);
        let pred = forest.predict(&x);
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(o, p)| o - p).collect();
        (node.name.clone(), forest, resid)
    });
    let mut regressors = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    for (name, forest, resid) in fits {
        regressors.insert(name.clone(), forest);
        residuals.insert(name, resid);
    }
    Ok(FittedAnm {
        graph: graph.clone(),
        order,
        regressors,
        residuals,
        observed: table.clone(),
    })
}

/// Stable 64-bit hash of a node name, for per-node seeds.
fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Noise columns `eps_<node>` for every non-root node except the target.
pub fn compute_noise(fitted: &FittedAnm) -> FairInfo {
    FairInfo {
        columns: fitted
            .order
            .iter()
            .filter(|n| **n != fitted.graph.target)
            .filter_map(|n| fitted.residuals.get(n).map(|r| (format!("eps_{n}"), r.clone())))
            .collect(),
        y_fair: Vec::new(),
    }
}

/// Re-propagates every node from the given protected values and the stored
/// residuals. Binary nodes add their residual in probability space, clamp
/// to `[0, 1]` and re-threshold at 0.5.
pub fn replay(fitted: &FittedAnm, protected: &[f64]) -> Result<BTreeMap<String, Vec<f64>>> {
    let g = &fitted.graph;
    if protected.len() != fitted.observed.n() {
        return Err(Error::InvalidData("replay: protected column length differs".into()));
    }
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for name in &fitted.order {
        let node = g.node(name).expect("ordered node");
        let col = if *name == g.protected {
            protected.to_vec()
        } else if node.parents.is_empty() {
            fitted.observed.columns[name].clone()
        } else {
            let x = parent_columns(g, name, &values);
            let pred = fitted.regressors[name].predict(&x);
            let resid = &fitted.residuals[name];
            match node.kind {
                NodeKind::Binary => pred
                    .iter()
                    .zip(resid)
                    .map(|(p, r)| f64::from(u8::from((p + r).clamp(0.0, 1.0) >= 0.5)))
                    .collect(),
                _ => pred.iter().zip(resid).map(|(p, r)| p + r).collect(),
            }
        };
        values.insert(name.clone(), col);
    }
    Ok(values)
}

/// Dataset with every row's protected value flipped and descendants
/// re-propagated.
pub fn counterfactual_twin(fitted: &FittedAnm, dataset: &Dataset) -> Result<Dataset> {
    let flipped: Vec<f64> = fitted.observed.column(&fitted.graph.protected)?.iter().map(|v| 1.0 - v).collect();
    let values = replay(fitted, &flipped)?;
    let table = NodeTable {
        columns: values,
        target_threshold: fitted.observed.target_threshold,
    };
    let mut twin = table_dataset(&fitted.graph, &table, &format!("{}.twin", dataset.id))?;
    twin.meta = DatasetMeta {
        twin_of: Some(dataset.id.clone()),
        ..dataset.meta.clone()
    };
    Ok(twin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_graph() -> CausalGraphSpec {
        serde_json::from_value(serde_json::json!({
            "name": "chain",
            "nodes": [
                {"name": "A", "kind": "binary"},
                {"name": "M", "parents": ["A"], "kind": "continuous"},
                {"name": "Y", "parents": ["M"], "kind": "continuous"}
            ],
            "protected": "A",
            "target": "Y"
        }))
        .unwrap()
    }

    #[test]
    fn cycle_rejected() {
        let mut g = chain_graph();
        g.nodes[1].parents.push("Y".into());
        g.target = "M".into();
        assert!(g.validate().is_err());
        let mut g = chain_graph();
        g.nodes[0].parents.push("M".into());
        assert!(g.validate().is_err());
    }

    #[test]
    fn topo_and_descendants() {
        let g = chain_graph();
        assert_eq!(g.topo_order().unwrap(), ["A", "M", "Y"]);
        assert_eq!(g.descendants("A"), ["M", "Y"]);
        assert_eq!(g.feature_nodes().unwrap(), ["M"]);
    }

    #[test]
    fn tree_fits_step_function_exactly() {
        let x = vec![(0..100).map(|i| i as f64).collect::<Vec<_>>()];
        let y: Vec<f64> = (0..100).map(|i| if i < 37 { 1.0 } else { 4.0 }).collect();
        let rows: Vec<usize> = (0..100).collect();
        let t = RegressionTree::fit(&x, &y, &rows, 4, 1);
        for i in 0..100 {
            assert_eq!(t.predict_row(&[i as f64]), y[i]);
        }
    }

    #[test]
    fn constant_parents_fall_back_to_mean() {
        let f = Forest::fit(&[vec![2.0; 5]], &[1.0, 2.0, 3.0, 4.0, 5.0], &ForestConfig::default());
        assert_eq!(f.constant, Some(3.0));
    }
}
