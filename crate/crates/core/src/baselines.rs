//! Baseline predictors: trivial scorers, feature-subset oracles, logistic
//! regression with and without the protected attribute, and an
//! exponentiated-gradient reduction for demographic parity.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use numcore::{sigmoid, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::casebench::{CaseId, FairInfo};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::PredictionSet;
use crate::rng::{rng_for, stream_seed};

pub const L2_PENALTY: f64 = 1e-4;
pub const MAX_COEF_NORM: f64 = 50.0;
const NEWTON_ITERS: usize = 100;
const NEWTON_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Unfair,
    Unaware,
    Constant,
    Random,
    #[serde(rename = "level1")]
    LevelOne,
    #[serde(rename = "level2")]
    LevelTwo,
    #[serde(rename = "level3")]
    LevelThree,
    Egr,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 8] = [
        BaselineKind::Unfair,
        BaselineKind::Unaware,
        BaselineKind::Constant,
        BaselineKind::Random,
        BaselineKind::LevelOne,
        BaselineKind::LevelTwo,
        BaselineKind::LevelThree,
        BaselineKind::Egr,
    ];

    pub fn method_id(self) -> &'static str {
        match self {
            BaselineKind::Unfair => "unfair",
            BaselineKind::Unaware => "unaware",
            BaselineKind::Constant => "constant",
            BaselineKind::Random => "random",
            BaselineKind::LevelOne => "level1",
            BaselineKind::LevelTwo => "level2",
            BaselineKind::LevelThree => "level3",
            BaselineKind::Egr => "egr",
        }
    }

    /// Level of a Level-k kind.
    pub fn level(self) -> Option<u8> {
        match self {
            BaselineKind::LevelOne => Some(1),
            BaselineKind::LevelTwo => Some(2),
            BaselineKind::LevelThree => Some(3),
            _ => None,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method_id())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.method_id() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown baseline {s:?}")))
    }
}

/// Where an evaluation task comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    Case(CaseId),
    RealWorld,
}

impl Setting {
    pub fn label(self) -> &'static str {
        match self {
            Setting::Case(c) => c.as_str(),
            Setting::RealWorld => "real",
        }
    }
}

/// Level-k applicability: level 1 on the direct and indirect cases, level 2
/// also on `level2`, level 3 also on `level3` and real-world data.
pub fn applicable(kind: BaselineKind, setting: Setting) -> bool {
    let Some(level) = kind.level() else {
        return true;
    };
    match setting {
        Setting::Case(CaseId::Direct | CaseId::Indirect) => true,
        Setting::Case(CaseId::LevelTwo) => level >= 2,
        Setting::Case(CaseId::LevelThree) | Setting::RealWorld => level >= 3,
        Setting::Case(CaseId::Biased | CaseId::LevelOne) => false,
    }
}

/// Oracle column prefixes a Level-k fit may use.
fn level_prefixes(level: u8) -> &'static [&'static str] {
    match level {
        1 => &["nd_"],
        2 => &["nd_", "u_"],
        _ => &["nd_", "u_", "eps_"],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgrConfig {
    /// Allowed demographic-parity gap.
    pub slack: f64,
    pub max_iter: usize,
    /// Bound on the multiplier mass.
    pub bound: f64,
    pub eta: f64,
}

impl Default for EgrConfig {
    fn default() -> Self {
        EgrConfig {
            slack: 0.05,
            max_iter: 50,
            bound: 100.0,
            eta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub egr: EgrConfig,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineSpec {
            kind,
            egr: EgrConfig::default(),
        }
    }
}

/// L2-regularized logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub intercept: f64,
    /// Coefficients on the standardized features.
    pub coef: Vec<f64>,
    /// Coefficient norm hit the clip (perfectly or nearly separable data).
    pub separated: bool,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn decision(&self, features: &Tensor) -> Vec<f64> {
        (0..features.rows())
            .map(|i| {
                let row = features.row(i);
                self.intercept
                    + row
                        .iter()
                        .zip(&self.coef)
                        .enumerate()
                        .map(|(j, (x, b))| b * (x - self.mean[j]) / self.sd[j])
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, features: &Tensor) -> Vec<f64> {
        self.decision(features).into_iter().map(sigmoid).collect()
    }
}

fn weighted_objective(z: &[f64], labels: &[u8], w: &[f64], total_w: f64, beta: &DVector<f64>) -> f64 {
    let nll: f64 = z
        .iter()
        .zip(labels)
        .zip(w)
        .map(|((&z, &y), &wi)| {
            // log(1 + e^z) - y z, computed stably.
            let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            wi * (sp - f64::from(y) * z)
        })
        .sum();
    let penalty: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    nll / total_w + 0.5 * L2_PENALTY * penalty
}

/// Fits weighted logistic regression by Newton's method with backtracking.
/// `weights` defaults to all ones.
pub fn logistic_fit(features: &Tensor, labels: &[u8], weights: Option<&[f64]>) -> Result<LogisticModel> {
    let (n, m) = (features.rows(), features.cols());
    if n < 2 || labels.len() != n {
        return Err(Error::InvalidData(format!("logistic fit: {n} rows, {} labels", labels.len())));
    }
    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    if w.len() != n || w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidData("logistic fit: weights must be finite and non-negative".into()));
    }
    let total_w: f64 = w.iter().sum();
    let pos_w: f64 = w.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(v, _)| v).sum();
    if !(pos_w > 0.0 && pos_w < total_w) {
        return Err(Error::DegenerateLabels("logistic fit needs weight on both classes".into()));
    }

    let mut mean = vec![0.0; m];
    let mut sd = vec![1.0; m];
    for j in 0..m {
        let mu = (0..n).map(|i| w[i] * features.get(i, j)).sum::<f64>() / total_w;
        let var = (0..n).map(|i| w[i] * (features.get(i, j) - mu).powi(2)).sum::<f64>() / total_w;
        mean[j] = mu;
        if var.sqrt() > 1e-12 {
            sd[j] = var.sqrt();
        }
    }
    let design = DMatrix::from_fn(n, m + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (features.get(i, j - 1) - mean[j - 1]) / sd[j - 1]
        }
    });

    let rate = pos_w / total_w;
    let mut beta = DVector::zeros(m + 1);
    beta[0] = (rate / (1.0 - rate)).ln();
    let mut z: Vec<f64> = (&design * &beta).iter().copied().collect();
    let mut obj = weighted_objective(&z, labels, w, total_w, &beta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..NEWTON_ITERS {
        iterations = it + 1;
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_fn(n, |i, _| w[i] * (p[i] - f64::from(labels[i])) / total_w);
        let mut grad = design.transpose() * &resid;
        let mut scaled = design.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[i] * p[i] * (1.0 - p[i]) / total_w;
        }
        let mut hess = design.transpose() * scaled;
        for j in 0..=m {
            let reg = if j == 0 { 1e-12 } else { L2_PENALTY };
            if j > 0 {
                grad[j] += L2_PENALTY * beta[j];
            }
            hess[(j, j)] += reg;
        }
        let Some(chol) = hess.cholesky() else {
            return Err(Error::InvalidData("logistic fit: singular Hessian".into()));
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &beta - &step * t;
            let zc: Vec<f64> = (&design * &cand).iter().copied().collect();
            let oc = weighted_objective(&zc, labels, w, total_w, &cand);
            if oc <= obj + 1e-4 * t * -grad.dot(&step) || oc <= obj {
                beta = cand;
                z = zc;
                obj = oc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.amax() * t < NEWTON_TOL || grad.amax() < NEWTON_TOL {
            converged = true;
            break;
        }
    }

    let norm = beta.iter().skip(1).map(|b| b * b).sum::<f64>().sqrt();
    // A perfect linear split means the unpenalized optimum sits at infinity.
    let perfect = (0..n).filter(|&i| w[i] > 0.0).all(|i| (z[i] > 0.0) == (labels[i] == 1));
    let separated = norm > MAX_COEF_NORM || perfect;
    if norm > MAX_COEF_NORM {
        let s = MAX_COEF_NORM / norm;
        for j in 1..=m {
            beta[j] *= s;
        }
    }
    Ok(LogisticModel {
        mean,
        sd,
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
        separated,
        converged,
        iterations,
    })
}

/// Weighted mixture of logistic scorers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedClassifier {
    pub members: Vec<(f64, LogisticModel)>,
    /// Duality gap fell below half the slack.
    pub converged: bool,
    pub iterations: usize,
    pub duality_gap: f64,
}

impl RandomizedClassifier {
    pub fn predict(&self, features: &Tensor) -> Vec<f64> {
        let mut out = vec![0.0; features.rows()];
        for (w, member) in &self.members {
            for (o, p) in out.iter_mut().zip(member.predict(features)) {
                *o += w * p;
            }
        }
        out
    }
}

/// One exponentiated-gradient step on the multiplier logits.
pub fn multiplier_update(theta: [f64; 2], violation: [f64; 2], eta: f64) -> [f64; 2] {
    [theta[0] + eta * violation[0], theta[1] + eta * violation[1]]
}

fn multipliers(theta: [f64; 2], bound: f64) -> [f64; 2] {
    let e = [theta[0].exp(), theta[1].exp()];
    let z = 1.0 + e[0] + e[1];
    [bound * e[0] / z, bound * e[1] / z]
}

/// Group-mean difference `mean(s | A=1) - mean(s | A=0)`.
fn parity(scores: &[f64], groups: &[u8]) -> f64 {
    let mut sums = [0.0; 2];
    let mut counts = [0.0; 2];
    for (&s, &g) in scores.iter().zip(groups) {
        sums[usize::from(g == 1)] += s;
        counts[usize::from(g == 1)] += 1.0;
    }
    sums[1] / counts[1] - sums[0] / counts[0]
}

fn expected_error(scores: &[f64], labels: &[u8]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y == 1 { 1.0 - p } else { p })
        .sum::<f64>()
        / labels.len() as f64
}

/// Demographic-parity constrained fit by the exponentiated-gradient
/// reduction. Members are soft logistic scorers; the result averages all
/// best responses up to the iterate with the smallest duality gap.
pub fn egr_fit(features: &Tensor, labels: &[u8], groups: &[u8], cfg: &EgrConfig) -> Result<RandomizedClassifier> {
    let n = labels.len();
    if features.rows() != n || groups.len() != n {
        return Err(Error::InvalidData("egr: inconsistent lengths".into()));
    }
    let n1 = groups.iter().filter(|&&g| g == 1).count() as f64;
    let n0 = n as f64 - n1;
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::InvalidData("egr: needs both protected groups".into()));
    }
    let nf = n as f64;
    let signed: Vec<f64> = groups.iter().map(|&g| if g == 1 { nf / n1 } else { -nf / n0 }).collect();

    // Best response to a net multiplier `mu` on (m1 - m0): a cost-sensitive
    // relabel-and-reweight logistic fit.
    let best_response = |mu: f64| -> Result<(LogisticModel, Vec<f64>)> {
        let cost: Vec<f64> = labels
            .iter()
            .zip(&signed)
            .map(|(&y, &s)| (1.0 - 2.0 * f64::from(y)) + mu * s)
            .collect();
        let relabel: Vec<u8> = cost.iter().map(|&c| u8::from(c < 0.0)).collect();
        let weights: Vec<f64> = cost.iter().map(|c| c.abs()).collect();
        let pos: f64 = weights.iter().zip(&relabel).filter(|(_, &y)| y == 1).map(|(w, _)| w).sum();
        let total: f64 = weights.iter().sum();
        let model = if pos <= 1e-12 * total || pos >= total * (1.0 - 1e-12) {
            // One-sided costs: a constant scorer is the best response.
            let p: f64 = if pos > 0.5 * total { 1.0 - 1e-9 } else { 1e-9 };
            LogisticModel {
                mean: vec![0.0; features.cols()],
                sd: vec![1.0; features.cols()],
                intercept: (p / (1.0 - p)).ln(),
                coef: vec![0.0; features.cols()],
                separated: false,
                converged: true,
                iterations: 0,
            }
        } else {
            logistic_fit(features, &relabel, Some(&weights))?
        };
        let scores = model.predict(features);
        Ok((model, scores))
    };
    let lagrangian = |scores: &[f64], lambda: [f64; 2]| {
        let gap = parity(scores, groups);
        expected_error(scores, labels) + lambda[0] * (gap - cfg.slack) + lambda[1] * (-gap - cfg.slack)
    };

    let mut theta = [0.0; 2];
    let mut lambda_sum = [0.0; 2];
    let mut members: Vec<LogisticModel> = Vec::new();
    let mut avg_scores = vec![0.0; n];
    let mut best: Option<(f64, usize)> = None;
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iter {
        iterations = t;
        let lambda = multipliers(theta, cfg.bound);
        lambda_sum[0] += lambda[0];
        lambda_sum[1] += lambda[1];
        let (model, scores) = best_response(lambda[0] - lambda[1])?;
        members.push(model);
        let k = members.len() as f64;
        for (a, s) in avg_scores.iter_mut().zip(&scores) {
            *a += (s - *a) / k;
        }

        let gap = parity(&avg_scores, groups);
        let violation = [gap - cfg.slack, -gap - cfg.slack];
        theta = multiplier_update(theta, violation, cfg.eta);

        let lambda_avg = [lambda_sum[0] / k, lambda_sum[1] / k];
        let upper = expected_error(&avg_scores, labels) + cfg.bound * violation[0].max(violation[1]).max(0.0);
        let (_, br_scores) = best_response(lambda_avg[0] - lambda_avg[1])?;
        let lower = lagrangian(&br_scores, lambda_avg).min(lagrangian(&avg_scores, lambda_avg));
        let duality_gap = (upper - lower).max(0.0);
        if best.is_none_or(|(g, _)| duality_gap < g) {
            best = Some((duality_gap, members.len()));
        }
        if duality_gap < cfg.slack / 2.0 {
            converged = true;
            break;
        }
    }
    let (duality_gap, keep) = best.expect("at least one iteration");
    members.truncate(keep);
    let w = 1.0 / keep as f64;
    Ok(RandomizedClassifier {
        members: members.into_iter().map(|m| (w, m)).collect(),
        converged,
        iterations,
        duality_gap,
    })
}

/// A factual table, its twins and oracle columns, with a train/test split.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub dataset_id: String,
    pub setting: Setting,
    pub factual: Dataset,
    pub twin: Dataset,
    pub direct: Option<Dataset>,
    pub indirect: Option<Dataset>,
    /// Oracle columns over all rows of `factual`; unchanged by the flip.
    pub oracle: FairInfo,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded half/half split that keeps both classes in the training half
/// whenever the table has both.
pub fn split_rows(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed));
    let test = idx.split_off(n / 2);
    let mut train = idx;
    let mut test = test;
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

impl EvalTask {
    pub fn new(
        dataset_id: String,
        setting: Setting,
        factual: Dataset,
        twin: Dataset,
        direct: Option<Dataset>,
        indirect: Option<Dataset>,
        oracle: FairInfo,
        seed: u64,
    ) -> Result<EvalTask> {
        let n = factual.n();
        let others = [Some(&twin), direct.as_ref(), indirect.as_ref()];
        if others.iter().flatten().any(|d| d.n() != n || d.n_features() != factual.n_features()) {
            return Err(Error::InvalidData(format!("{dataset_id}: twin shape differs from factual")));
        }
        if oracle.columns.iter().any(|(_, v)| v.len() != n) || (!oracle.y_fair.is_empty() && oracle.y_fair.len() != n) {
            return Err(Error::InvalidData(format!("{dataset_id}: oracle length differs from factual")));
        }
        let (train, test) = split_rows(n, seed);
        Ok(EvalTask {
            dataset_id,
            setting,
            factual,
            twin,
            direct,
            indirect,
            oracle,
            train,
            test,
        })
    }

    /// Test-row tables in order factual, twin, direct, indirect.
    fn test_tables(&self) -> Vec<Option<Dataset>> {
        vec![
            Some(self.factual.select(&self.test)),
            Some(self.twin.select(&self.test)),
            self.direct.as_ref().map(|d| d.select(&self.test)),
            self.indirect.as_ref().map(|d| d.select(&self.test)),
        ]
    }

    /// Assembles a prediction set from per-table test scores.
    pub fn prediction_set(&self, mut scores: impl FnMut(&Dataset) -> Result<Vec<f64>>) -> Result<PredictionSet> {
        let tables = self.test_tables();
        let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(4);
        for t in &tables {
            out.push(t.as_ref().map(&mut scores).transpose()?);
        }
        let factual = tables[0].as_ref().expect("factual table");
        let y_fair = (!self.oracle.y_fair.is_empty()).then(|| self.test.iter().map(|&r| self.oracle.y_fair[r]).collect());
        let mut out = out.into_iter();
        Ok(PredictionSet {
            factual: out.next().flatten().expect("factual scores"),
            twin: out.next().flatten().expect("twin scores"),
            direct: out.next().flatten(),
            indirect: out.next().flatten(),
            labels: factual.labels.clone(),
            fair_labels: y_fair,
            groups: factual.groups.clone(),
        })
    }

    pub fn train_table(&self) -> Dataset {
        self.factual.select(&self.train)
    }

    fn oracle_matrix(&self, level: u8, rows: &[usize]) -> Option<Tensor> {
        let prefixes = level_prefixes(level);
        let names: Vec<&str> = self
            .oracle
            .columns
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
            .collect();
        if names.is_empty() {
            return None;
        }
        let full = self.oracle.matrix(&names)?;
        Some(full.select_rows(rows))
    }
}

/// `[A, X]` with the protected group as a 0/1 column.
pub fn with_protected(dataset: &Dataset) -> Tensor {
    let (n, m) = (dataset.n(), dataset.n_features());
    let mut out = Tensor::zeros(&[n, m + 1]);
    for i in 0..n {
        let row = out.row_mut(i);
        row[0] = f64::from(dataset.groups[i]);
        row[1..].copy_from_slice(dataset.features.row(i));
    }
    out
}

/// Fits a baseline on the training rows and scores the test rows of the
/// factual table and every twin. `Ok(None)` marks a kind that does not apply
/// to this task.
pub fn fit_predict(spec: &BaselineSpec, task: &EvalTask, seed: u64) -> Result<Option<PredictionSet>> {
    if !applicable(spec.kind, task.setting) {
        return Ok(None);
    }
    let train = task.train_table();
    let set = match spec.kind {
        BaselineKind::Constant => {
            let rate = train.label_rate();
            task.prediction_set(|d| Ok(vec![rate; d.n()]))?
        }
        BaselineKind::Random => {
            let mut table = 0u64;
            task.prediction_set(|d| {
                let mut rng = rng_for(stream_seed(seed, table));
                table += 1;
                Ok((0..d.n()).map(|_| rng.random::<f64>()).collect())
            })?
        }
        BaselineKind::Unfair => {
            let model = logistic_fit(&with_protected(&train), &train.labels, None)?;
            task.prediction_set(|d| Ok(model.predict(&with_protected(d))))?
        }
        BaselineKind::Unaware => {
            let model = logistic_fit(&train.features, &train.labels, None)?;
            task.prediction_set(|d| Ok(model.predict(&d.features)))?
        }
        BaselineKind::Egr => {
            let model = egr_fit(&with_protected(&train), &train.labels, &train.groups, &spec.egr)?;
            task.prediction_set(|d| Ok(model.predict(&with_protected(d))))?
        }
        BaselineKind::LevelOne | BaselineKind::LevelTwo | BaselineKind::LevelThree => {
            let level = spec.kind.level().expect("level kind");
            let (Some(x_train), Some(x_test)) = (task.oracle_matrix(level, &task.train), task.oracle_matrix(level, &task.test)) else {
                return Ok(None);
            };
            let model = logistic_fit(&x_train, &train.labels, None)?;
            // Oracle columns are the same on the factual table and its twins.
            let scores = model.predict(&x_test);
            task.prediction_set(|_| Ok(scores.clone()))?
        }
    };
    Ok(Some(set))
}
