//! Causal-effect, error and parity metrics over a predictor's scores on
//! factual data and its twins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.is_empty() {
        return Err(Error::InvalidData(format!("{what}: empty input")));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidData(format!("{what}: lengths {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Auc {
    pub value: f64,
    /// Set when one class is missing; `value` is then 0.5.
    pub degenerate: bool,
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, ties
/// resolved with midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<Auc> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidData(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(Auc {
            value: 0.5,
            degenerate: true,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += midrank * positives as f64;
        start = end;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(Auc {
        value: u / (p * q),
        degenerate: false,
    })
}

/// Total causal effect of the protected attribute on the scores,
/// `|E[score | do(A=1)] - E[score | do(A=0)]|`, read off factual/twin pairs:
/// a group-0 row's twin is its `do(A=1)` outcome and vice versa.
pub fn tce(factual: &[f64], twin: &[f64], groups: &[u8]) -> Result<f64> {
    check_pair(factual, twin, "tce")?;
    if groups.len() != factual.len() {
        return Err(Error::InvalidData(format!("tce: {} groups for {} scores", groups.len(), factual.len())));
    }
    let contrast: f64 = twin
        .iter()
        .zip(factual)
        .zip(groups)
        .map(|((t, f), &g)| if g == 0 { t - f } else { f - t })
        .sum();
    Ok((contrast / factual.len() as f64).abs())
}

/// Direct and indirect effects from the path-specific twins; an absent twin
/// yields `None`, never zero.
pub fn de_ie(
    factual: &[f64],
    direct_twin: Option<&[f64]>,
    indirect_twin: Option<&[f64]>,
    groups: &[u8],
) -> Result<(Option<f64>, Option<f64>)> {
    let de = direct_twin.map(|d| tce(factual, d, groups)).transpose()?;
    let ie = indirect_twin.map(|d| tce(factual, d, groups)).transpose()?;
    Ok((de, ie))
}

/// Mean absolute difference between factual and twin predictions.
pub fn cf_mae(factual: &[f64], twin: &[f64]) -> Result<f64> {
    check_pair(factual, twin, "cf_mae")?;
    let total: f64 = twin.iter().zip(factual).map(|(t, f)| (t - f).abs()).sum();
    Ok(total / factual.len() as f64)
}

/// `|mean score in group 1 - mean score in group 0|`.
pub fn dp_gap(scores: &[f64], groups: &[u8]) -> Result<f64> {
    if scores.len() != groups.len() {
        return Err(Error::InvalidData(format!(
            "dp_gap: {} scores vs {} groups",
            scores.len(),
            groups.len()
        )));
    }
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (&s, &g) in scores.iter().zip(groups) {
        let g = usize::from(g == 1);
        sums[g] += s;
        counts[g] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::InvalidData("dp_gap: needs both groups".into()));
    }
    Ok((sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64).abs())
}

/// A predictor's scores on one evaluation instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub factual: Vec<f64>,
    pub twin: Vec<f64>,
    pub direct: Option<Vec<f64>>,
    pub indirect: Option<Vec<f64>>,
    pub labels: Vec<u8>,
    pub fair_labels: Option<Vec<u8>>,
    pub groups: Vec<u8>,
}

impl PredictionSet {
    pub fn validate(&self) -> Result<()> {
        let n = self.factual.len();
        let mut lens = vec![self.twin.len(), self.labels.len(), self.groups.len()];
        lens.extend(self.direct.as_ref().map(Vec::len));
        lens.extend(self.indirect.as_ref().map(Vec::len));
        lens.extend(self.fair_labels.as_ref().map(Vec::len));
        if n == 0 || lens.iter().any(|&l| l != n) {
            return Err(Error::InvalidData(format!("prediction arrays disagree in length: {n} vs {lens:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub dataset_id: String,
    pub case: String,
    pub method: String,
    pub seed: u64,
    pub tce: f64,
    pub de: Option<f64>,
    pub ie: Option<f64>,
    /// 1 - AUC against observed labels.
    pub error: f64,
    pub auc_degenerate: bool,
    /// 1 - AUC against fair labels, when known.
    pub error_fair: Option<f64>,
    pub cf_mae: f64,
    pub dp_gap: f64,
}

pub const METRIC_NAMES: [&str; 7] = ["tce", "de", "ie", "error", "error_fair", "cf_mae", "dp_gap"];

impl EffectReport {
    pub fn compute(set: &PredictionSet, dataset_id: &str, case: &str, method: &str, seed: u64) -> Result<EffectReport> {
        set.validate()?;
        let (de, ie) = de_ie(&set.factual, set.direct.as_deref(), set.indirect.as_deref(), &set.groups)?;
        let a = auc(&set.factual, &set.labels)?;
        let error_fair = set
            .fair_labels
            .as_ref()
            .map(|y| auc(&set.factual, y).map(|a| 1.0 - a.value))
            .transpose()?;
        let dp = if set.groups.contains(&0) && set.groups.contains(&1) {
            dp_gap(&set.factual, &set.groups)?
        } else {
            0.0
        };
        Ok(EffectReport {
            dataset_id: dataset_id.into(),
            case: case.into(),
            method: method.into(),
            seed,
            tce: tce(&set.factual, &set.twin, &set.groups)?,
            de,
            ie,
            error: 1.0 - a.value,
            auc_degenerate: a.degenerate,
            error_fair,
            cf_mae: cf_mae(&set.factual, &set.twin)?,
            dp_gap: dp,
        })
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "tce" => Some(self.tce),
            "de" => self.de,
            "ie" => self.ie,
            "error" => Some(self.error),
            "error_fair" => self.error_fair,
            "cf_mae" => Some(self.cf_mae),
            "dp_gap" => Some(self.dp_gap),
            _ => None,
        }
    }

    /// One long-format row per metric.
    pub fn rows(&self, run_id: &str) -> Vec<ResultRow> {
        METRIC_NAMES
            .iter()
            .map(|&m| ResultRow {
                run_id: run_id.into(),
                dataset_id: self.dataset_id.clone(),
                case: self.case.clone(),
                method: self.method.clone(),
                metric: m.into(),
                value: self.metric(m),
                seed: self.seed,
            })
            .collect()
    }
}

pub const RESULTS_HEADER: &str = "run_id,dataset_id,case,method,metric,value,seed";

/// A row of the results CSV; `value == None` is written as `n/a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub dataset_id: String,
    pub case: String,
    pub method: String,
    pub metric: String,
    pub value: Option<f64>,
    pub seed: u64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let value = self.value.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{}",
            self.run_id, self.dataset_id, self.case, self.method, self.metric, value, self.seed
        )
    }

    pub fn parse(line: &str) -> Result<ResultRow> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 7 {
            return Err(Error::InvalidData(format!("expected 7 fields: {line:?}")));
        }
        let value = match f[5] {
            "n/a" => None,
            v => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("bad value {v:?} in {line:?}")))?,
            ),
        };
        let seed = f[6]
            .parse()
            .map_err(|_| Error::InvalidData(format!("bad seed {:?} in {line:?}", f[6])))?;
        Ok(ResultRow {
            run_id: f[0].into(),
            dataset_id: f[1].into(),
            case: f[2].into(),
            method: f[3].into(),
            metric: f[4].into(),
            value,
            seed,
        })
    }
}
