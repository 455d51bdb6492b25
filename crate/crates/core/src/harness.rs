//! Evaluation sweeps over methods and datasets, the results file, and
//! reports (aggregates, Pareto fronts, plot data) recomputable from it.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_predict, BaselineKind, BaselineSpec, EgrConfig, EvalTask, Setting};
use crate::casebench::{load_instance, CaseId, CaseStudyInstance, Manifest};
use crate::error::{Error, Result};
use crate::exec::{map_collect, ExecMode};
use crate::metrics::{EffectReport, ResultRow, METRIC_NAMES, RESULTS_HEADER};
use crate::model::{Checkpoint, FairPfn, Rows};
use crate::rng::stream_seed;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_SCHEMA_VERSION: u32 = 1;
/// Share of instances that may be skipped before an evaluation fails.
pub const MAX_SKIP_SHARE: f64 = 0.05;

/// A method under evaluation.
#[derive(Debug, Clone)]
pub enum Method {
    Baseline(BaselineSpec),
    /// A trained in-context model reported under `id`.
    Pfn { id: String, model: Box<FairPfn> },
}

impl Method {
    pub fn id(&self) -> &str {
        match self {
            Method::Baseline(spec) => spec.kind.method_id(),
            Method::Pfn { id, .. } => id,
        }
    }

    pub fn baseline(kind: BaselineKind) -> Method {
        Method::Baseline(BaselineSpec::new(kind))
    }
}

/// Largest context handed to an in-context model; bigger training splits are
/// subsampled.
pub const MAX_CONTEXT: usize = 1000;
/// Query rows scored per forward pass.
pub const QUERY_CHUNK: usize = 2048;

/// Scores a task with a trained model: the training rows of the factual table
/// (at most `MAX_CONTEXT`, seeded subsample) form the context, every test
/// table is a query.
pub fn pfn_predictions(model: &FairPfn, task: &EvalTask, seed: u64) -> Result<crate::metrics::PredictionSet> {
    let mut train = task.train_table();
    if train.n() > MAX_CONTEXT {
        use rand::seq::index::sample;
        let mut rows = sample(&mut crate::rng::rng_for(seed), train.n(), MAX_CONTEXT).into_vec();
        rows.sort_unstable();
        train = train.select(&rows);
    }
    task.prediction_set(|table| {
        let mut out = Vec::with_capacity(table.n());
        let mut start = 0;
        while start < table.n() {
            let end = (start + QUERY_CHUNK).min(table.n());
            let rows: Vec<usize> = (start..end).collect();
            let chunk = table.select(&rows);
            out.extend(model.predict(Rows::of(&train), &train.labels, Rows::of(&chunk))?);
            start = end;
        }
        Ok(out)
    })
}

/// Runs one method on one task; `None` when the method does not apply.
pub fn evaluate_method(method: &Method, task: &EvalTask, seed: u64) -> Result<Option<EffectReport>> {
    let set = match method {
        Method::Baseline(spec) => fit_predict(spec, task, seed)?,
        Method::Pfn { model, .. } => Some(pfn_predictions(model, task, seed)?),
    };
    set.map(|s| EffectReport::compute(&s, &task.dataset_id, task.setting.label(), method.id(), seed))
        .transpose()
}

/// Evaluation task for a case-study instance.
pub fn case_task(instance: &CaseStudyInstance, seed: u64) -> Result<EvalTask> {
    EvalTask::new(
        instance.id().to_string(),
        Setting::Case(instance.config.case),
        instance.factual.clone(),
        instance.twin.clone(),
        Some(instance.direct_twin.clone()),
        Some(instance.indirect_twin.clone()),
        instance.fair_info.clone(),
        stream_seed(seed, instance.config.seed),
    )
}

/// Per-(task, method) outcome, in input order.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub dataset_id: String,
    pub case: String,
    pub reports: Vec<(String, Option<EffectReport>)>,
}

impl TaskOutcome {
    pub fn rows(&self, run_id: &str, seed: u64) -> Vec<ResultRow> {
        let mut out = Vec::new();
        for (method, report) in &self.reports {
            match report {
                Some(r) => out.extend(r.rows(run_id)),
                None => out.extend(METRIC_NAMES.iter().map(|m| ResultRow {
                    run_id: run_id.into(),
                    dataset_id: self.dataset_id.clone(),
                    case: self.case.clone(),
                    method: method.clone(),
                    metric: (*m).into(),
                    value: None,
                    seed,
                })),
            }
        }
        out
    }
}

/// Evaluates every method on every task.
pub fn evaluate_tasks(tasks: &[EvalTask], methods: &[Method], seed: u64, mode: ExecMode) -> Result<Vec<TaskOutcome>> {
    map_collect(mode, tasks, |task| {
        let reports = methods
            .iter()
            .map(|m| Ok((m.id().to_string(), evaluate_method(m, task, seed)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskOutcome {
            dataset_id: task.dataset_id.clone(),
            case: task.setting.label().to_string(),
            reports,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub schema_version: u32,
    pub tool_version: String,
    pub bench_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub unfair_checkpoint: Option<PathBuf>,
    pub methods: Vec<String>,
    pub cases: Vec<CaseId>,
    pub seed: u64,
    pub run_id: String,
    pub egr: EgrConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            schema_version: RUN_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            bench_dir: PathBuf::from("bench"),
            checkpoint: None,
            unfair_checkpoint: None,
            methods: DEFAULT_BASELINES.iter().map(|m| m.to_string()).collect(),
            cases: CaseId::ALL.to_vec(),
            seed: 0,
            run_id: String::new(),
            egr: EgrConfig::default(),
        }
    }
}

/// Baselines evaluated when no method list is given.
pub const DEFAULT_BASELINES: [&str; 8] = ["unfair", "unaware", "constant", "random", "level1", "level2", "level3", "egr"];

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub outcomes: Vec<TaskOutcome>,
    pub skipped: Vec<(String, String)>,
    pub total: usize,
}

/// Loads the benchmark instances of the configured cases, skipping (and
/// reporting) any whose files are missing.
pub fn load_tasks(cfg: &EvalConfig, mode: ExecMode) -> Result<(Vec<EvalTask>, Vec<(String, String)>, usize)> {
    let manifest = Manifest::read(&cfg.bench_dir)?;
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| cfg.cases.contains(&e.case))
        .cloned()
        .collect();
    let loaded = map_collect(mode, &entries, |e| {
        load_instance(&cfg.bench_dir, e).and_then(|inst| case_task(&inst, cfg.seed))
    });
    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    for (entry, r) in entries.iter().zip(loaded) {
        match r {
            Ok(t) => tasks.push(t),
            Err(e @ (Error::Io { .. } | Error::InvalidData(_))) => {
                log::warn!("skipping {}: {e}", entry.id);
                skipped.push((entry.id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let total = entries.len();
    if total > 0 && skipped.len() as f64 > MAX_SKIP_SHARE * total as f64 {
        return Err(Error::InvalidData(format!(
            "{} of {total} instances could not be loaded",
            skipped.len()
        )));
    }
    Ok((tasks, skipped, total))
}

/// Builds the method list named in the config.
pub fn resolve_methods(cfg: &EvalConfig) -> Result<Vec<Method>> {
    cfg.methods
        .iter()
        .map(|name| match name.as_str() {
            "fairpfn" | "pfn-unfair" => {
                let path = if name == "fairpfn" { &cfg.checkpoint } else { &cfg.unfair_checkpoint };
                let path = path
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig(format!("method {name} needs a checkpoint")))?;
                let ck = Checkpoint::load(path)?;
                Ok(Method::Pfn {
                    id: name.clone(),
                    model: Box::new(ck.model),
                })
            }
            other => {
                let kind: BaselineKind = other.parse()?;
                Ok(Method::Baseline(BaselineSpec { kind, egr: cfg.egr }))
            }
        })
        .collect()
}

pub fn run_eval(cfg: &EvalConfig, mode: ExecMode) -> Result<EvalSummary> {
    let methods = resolve_methods(cfg)?;
    let (tasks, skipped, total) = load_tasks(cfg, mode)?;
    let outcomes = evaluate_tasks(&tasks, &methods, cfg.seed, mode)?;
    Ok(EvalSummary {
        outcomes,
        skipped,
        total,
    })
}

/// Appends rows to a results file, writing the header when it is new.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e.to_string()))?;
    }
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e.to_string()))?;
    let mut text = String::new();
    if fresh {
        text.push_str(RESULTS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e.to_string()))
}

/// Parses a results file; every malformed line is listed in the error.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e.to_string()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        other => {
            return Err(Error::InvalidData(format!(
                "{}: expected header {RESULTS_HEADER:?}, found {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match ResultRow::parse(line) {
            Ok(r) => rows.push(r),
            Err(e) => bad.push(format!("line {}: {e}", i + 2)),
        }
    }
    if !bad.is_empty() {
        return Err(Error::InvalidData(format!("malformed result rows:\n{}", bad.join("\n"))));
    }
    Ok(rows)
}

/// Median via linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub case: String,
    pub method: String,
    pub metric: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub count: usize,
    pub not_applicable: usize,
}

pub const AGGREGATE_HEADER: &str = "case,method,metric,median,q25,q75,count,not_applicable";

impl Aggregate {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.case, self.method, self.metric, self.median, self.q25, self.q75, self.count, self.not_applicable
        )
    }
}

/// Median and IQR per (case, method, metric), ignoring `n/a` values.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let entry = groups
            .entry((r.case.clone(), r.method.clone(), r.metric.clone()))
            .or_default();
        match r.value {
            Some(v) => entry.0.push(v),
            None => entry.1 += 1,
        }
    }
    groups
        .into_iter()
        .map(|((case, method, metric), (mut values, na))| {
            values.sort_by(f64::total_cmp);
            Aggregate {
                case,
                method,
                metric,
                median: percentile(&values, 0.5),
                q25: percentile(&values, 0.25),
                q75: percentile(&values, 0.75),
                count: values.len(),
                not_applicable: na,
            }
        })
        .collect()
}

pub fn aggregates_csv(aggs: &[Aggregate]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for a in aggs {
        out.push_str(&a.csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub method: String,
    pub effect: f64,
    pub error: f64,
    pub on_front: bool,
}

/// Marks points not dominated by any other (`<=` in both coordinates and
/// `<` in at least one).
pub fn pareto_front(points: &[(String, f64, f64)]) -> Vec<ParetoPoint> {
    points
        .iter()
        .map(|(m, e, r)| {
            let dominated = points
                .iter()
                .any(|(_, e2, r2)| e2 <= e && r2 <= r && (e2 < e || r2 < r));
            ParetoPoint {
                method: m.clone(),
                effect: *e,
                error: *r,
                on_front: !dominated,
            }
        })
        .collect()
}

/// Per-case Pareto front on median (`effect_metric`, `error`).
pub fn pareto_by_case(aggs: &[Aggregate], effect_metric: &str) -> BTreeMap<String, Vec<ParetoPoint>> {
    let lookup: BTreeMap<(&str, &str, &str), f64> = aggs
        .iter()
        .map(|a| ((a.case.as_str(), a.method.as_str(), a.metric.as_str()), a.median))
        .collect();
    let mut out = BTreeMap::new();
    let cases: Vec<&str> = {
        let mut c: Vec<&str> = aggs.iter().map(|a| a.case.as_str()).collect();
        c.dedup();
        c
    };
    for case in cases {
        let methods: Vec<&str> = {
            let mut m: Vec<&str> = aggs.iter().filter(|a| a.case == case).map(|a| a.method.as_str()).collect();
            m.sort_unstable();
            m.dedup();
            m
        };
        let points: Vec<(String, f64, f64)> = methods
            .into_iter()
            .filter_map(|m| {
                let e = *lookup.get(&(case, m, effect_metric))?;
                let r = *lookup.get(&(case, m, "error"))?;
                (e.is_finite() && r.is_finite()).then(|| (m.to_string(), e, r))
            })
            .collect();
        out.insert(case.to_string(), pareto_front(&points));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub dataset_id: String,
    pub method: String,
    pub sigma: Option<f64>,
    pub w_a: Option<f64>,
    pub tce: Option<f64>,
    pub error: Option<f64>,
}

/// Per-instance (effect, error) points with noise level, grouped by case.
pub fn plot_data(rows: &[ResultRow], manifest: Option<&Manifest>) -> BTreeMap<String, Vec<PlotPoint>> {
    let meta: BTreeMap<&str, (f64, f64)> = manifest
        .map(|m| m.entries.iter().map(|e| (e.id.as_str(), (e.sigma, e.w_a))).collect())
        .unwrap_or_default();
    let mut points: BTreeMap<(String, String, String), PlotPoint> = BTreeMap::new();
    for r in rows {
        let p = points
            .entry((r.case.clone(), r.method.clone(), r.dataset_id.clone()))
            .or_insert_with(|| PlotPoint {
                dataset_id: r.dataset_id.clone(),
                method: r.method.clone(),
                sigma: meta.get(r.dataset_id.as_str()).map(|m| m.0),
                w_a: meta.get(r.dataset_id.as_str()).map(|m| m.1),
                tce: None,
                error: None,
            });
        match r.metric.as_str() {
            "tce" => p.tce = r.value,
            "error" => p.error = r.value,
            _ => {}
        }
    }
    let mut out: BTreeMap<String, Vec<PlotPoint>> = BTreeMap::new();
    for ((case, _, _), p) in points {
        out.entry(case).or_default().push(p);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| {
            a.sigma
                .unwrap_or(0.0)
                .total_cmp(&b.sigma.unwrap_or(0.0))
                .then_with(|| a.method.cmp(&b.method))
                .then_with(|| a.dataset_id.cmp(&b.dataset_id))
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub results: PathBuf,
    pub bench_dir: Option<PathBuf>,
    pub rows: usize,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub aggregates: Vec<Aggregate>,
    pub pareto: BTreeMap<String, Vec<ParetoPoint>>,
    pub plot: BTreeMap<String, Vec<PlotPoint>>,
    pub manifest: ReportManifest,
}

pub fn build_report(results: &Path, bench_dir: Option<&Path>) -> Result<ReportBundle> {
    let rows = read_results(results)?;
    let manifest = bench_dir.map(Manifest::read).transpose()?;
    let aggregates = aggregate(&rows);
    Ok(ReportBundle {
        pareto: pareto_by_case(&aggregates, "tce"),
        plot: plot_data(&rows, manifest.as_ref()),
        aggregates,
        manifest: ReportManifest {
            schema_version: RUN_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            results: results.to_path_buf(),
            bench_dir: bench_dir.map(Path::to_path_buf),
            rows: rows.len(),
            files: ["aggregates.csv", "pareto.json", "plot_data.json", "report_manifest.json"]
                .map(String::from)
                .to_vec(),
        },
    })
}

pub fn write_report(bundle: &ReportBundle, dir: &Path) -> Result<()> {
    let w = |name: &str, bytes: Vec<u8>| crate::data::write_file(&dir.join(name), &bytes);
    w("aggregates.csv", aggregates_csv(&bundle.aggregates).into_bytes())?;
    w("pareto.json", serde_json::to_vec_pretty(&bundle.pareto)?)?;
    w("plot_data.json", serde_json::to_vec_pretty(&bundle.plot)?)?;
    w("report_manifest.json", serde_json::to_vec_pretty(&bundle.manifest)?)?;
    Ok(())
}

/// Recomputes aggregates from the raw results and compares them with the
/// written aggregate file byte for byte.
pub fn verify_report(results: &Path, dir: &Path) -> Result<()> {
    let expected = aggregates_csv(&aggregate(&read_results(results)?));
    let path = dir.join("aggregates.csv");
    let written = fs::read_to_string(&path).map_err(|e| Error::io(&path, e.to_string()))?;
    if written != expected {
        return Err(Error::InvalidData(format!(
            "{} does not match aggregates recomputed from {}",
            path.display(),
            results.display()
        )));
    }
    Ok(())
}
