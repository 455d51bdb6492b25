//! `fairpfn` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 acceptance threshold failure under `--assert`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairpfn::baselines::{EvalTask, Setting};
use fairpfn::casebench::{generate_suite, CaseId, SuiteConfig};
use fairpfn::data::sha256_hex;
use fairpfn::harness::{
    append_results, build_report, evaluate_tasks, median, resolve_methods, run_eval, verify_report, write_report,
    EvalConfig, RUN_SCHEMA_VERSION, TOOL_VERSION,
};
use fairpfn::metrics::ResultRow;
use fairpfn::model::{prior_fit, TargetMode, TrainConfig};
use fairpfn::prior::{sample_pair, write_pair, PriorRanges};
use fairpfn::realworld::{compute_noise, counterfactual_twin, fit_anm, ingest, CausalGraphSpec, ForestConfig, BINARY_CF_METHOD};
use fairpfn::rng::stream_seed;
use fairpfn::{Error, ExecMode};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "fairpfn", version, about = "Counterfactually fair in-context prediction toolkit")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (file for `train`, directory otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file with configuration overrides; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Check acceptance thresholds and exit with code 4 on failure.
    #[arg(long = "assert", global = true)]
    check: bool,
    /// Execution mode for data-parallel work.
    #[arg(long, global = true, value_enum, default_value_t = Exec::Parallel)]
    exec: Exec,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Exec {
    Sequential,
    Parallel,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Prior-fit a model and write a checkpoint.
    Train(TrainArgs),
    /// Generate the case-study benchmark suite.
    Bench(BenchArgs),
    /// Evaluate methods on a benchmark and append rows to results.csv.
    Eval(EvalArgs),
    /// Aggregate a results file into tables, Pareto fronts and plot data.
    Report(ReportArgs),
    /// Prior utilities.
    #[command(subcommand)]
    Prior(PriorCommand),
    /// Real-world additive-noise models.
    #[command(subcommand)]
    Realworld(RealworldCommand),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    datasets_per_step: Option<usize>,
    #[arg(long, value_enum)]
    target_mode: Option<Mode>,
    #[arg(long)]
    lr: Option<f64>,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 50)]
    log_every: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Fair,
    Biased,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated case list.
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<String>>,
    /// Instances per case.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    unfair_checkpoint: Option<PathBuf>,
    /// Comma-separated method ids.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<String>>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    results: Option<PathBuf>,
    /// Benchmark directory, for noise levels in the plot data.
    #[arg(long)]
    bench: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum PriorCommand {
    /// Write sampled biased/fair dataset pairs with their noise records.
    Sample {
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
}

#[derive(Subcommand, Debug)]
enum RealworldCommand {
    /// Fit an additive-noise model, export noise terms and a twin, and
    /// evaluate methods on the result.
    Fit {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        trees: usize,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "unfair,unaware,constant,random,level3,egr")]
        methods: Vec<String>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Assert(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("bad configuration JSON: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(CliError::Assert(m)) => {
            eprintln!("acceptance check failed: {m}");
            ExitCode::from(4)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let mode = match cli.exec {
        Exec::Sequential => ExecMode::Sequential,
        Exec::Parallel => ExecMode::Parallel,
    };
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a, mode),
        Command::Bench(a) => cmd_bench(cli, a, mode),
        Command::Eval(a) => cmd_eval(cli, a, mode),
        Command::Report(a) => cmd_report(cli, a),
        Command::Prior(PriorCommand::Sample { count }) => cmd_prior_sample(cli, *count),
        Command::Realworld(RealworldCommand::Fit {
            graph,
            data,
            trees,
            depth,
            checkpoint,
            methods,
        }) => cmd_realworld_fit(cli, graph, data, *trees, *depth, checkpoint.as_deref(), methods, mode),
    }
}

/// Reads `--config` into `T`, falling back to defaults.
fn load_config<T: serde::de::DeserializeOwned + Default>(cli: &Cli) -> CliResult<T> {
    match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(T::default()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn refuse_existing(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::Data(Error::Exists(path.display().to_string()).to_string()));
    }
    Ok(())
}

fn parse_cases(list: &[String]) -> CliResult<Vec<CaseId>> {
    list.iter()
        .map(|c| c.parse::<CaseId>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

fn cmd_train(cli: &Cli, a: &TrainArgs, mode: ExecMode) -> CliResult<()> {
    let mut cfg: TrainConfig = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(b) = a.datasets_per_step {
        cfg.datasets_per_step = b;
    }
    if let Some(lr) = a.lr {
        cfg.base_lr = lr;
    }
    if let Some(m) = a.target_mode {
        cfg.model.target_mode = match m {
            Mode::Fair => TargetMode::Fair,
            Mode::Biased => TargetMode::Biased,
        };
    }
    cfg.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("fairpfn.fpfn"));
    refuse_existing(&out, cli.force)?;
    write_json(
        &out.with_extension("config.json"),
        &json!({"schema_version": RUN_SCHEMA_VERSION, "tool_version": TOOL_VERSION, "train": cfg}),
    )?;
    let start = Instant::now();
    let every = a.log_every.max(1);
    let ck = prior_fit(&cfg, mode, |log, _| {
        if log.step % every == 0 || log.step + 1 == cfg.steps {
            eprintln!(
                "step {:>6}  loss {:.4}  lr {:.2e}  skipped {}  {:.0}s",
                log.step,
                log.loss,
                log.lr,
                log.skipped,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    ck.save(&out)?;
    let losses: String = ck.meta.losses.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")).collect();
    fs::write(out.with_extension("loss.csv"), format!("step,loss\n{losses}"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!("checkpoint {} sha256 {}", out.display(), ck.hash()?);
    println!("method {}", ck.meta.method_id);
    if cli.check {
        let l = &ck.meta.losses;
        let k = 10.min(l.len() / 2).max(1);
        let first = l.iter().take(k).sum::<f64>() / k as f64;
        let last = l.iter().rev().take(k).sum::<f64>() / k as f64;
        if !(last < first) {
            return Err(CliError::Assert(format!("loss did not decrease ({first:.4} -> {last:.4})")));
        }
        println!("PASS loss trend {first:.4} -> {last:.4}");
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs, mode: ExecMode) -> CliResult<()> {
    let mut cfg: SuiteConfig = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.count {
        cfg.count_per_case = c;
    }
    if let Some(cases) = &a.cases {
        cfg.cases = parse_cases(cases)?;
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("bench"));
    let manifest = generate_suite(&dir, &cfg, cli.force, mode)?;
    write_json(
        &dir.join("config.json"),
        &json!({"schema_version": RUN_SCHEMA_VERSION, "tool_version": TOOL_VERSION, "bench": cfg}),
    )?;
    println!("{} instances in {}", manifest.entries.len(), dir.display());
    println!("manifest sha256 {}", manifest.hash());
    Ok(())
}

/// Per-case acceptance comparison of the fair model against baselines.
fn check_eval(rows: &[ResultRow]) -> Result<Vec<String>, Vec<String>> {
    let mut values: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.value {
            values.entry((&r.case, &r.method, &r.metric)).or_default().push(v);
        }
    }
    let med = |case: &str, method: &str, metric: &str| values.get(&(case, method, metric)).map(|v| median(v));
    let mut cases: Vec<&str> = rows.iter().map(|r| r.case.as_str()).collect();
    cases.sort_unstable();
    cases.dedup();
    let (mut pass, mut fail) = (Vec::new(), Vec::new());
    for case in cases {
        let Some(fair_tce) = med(case, "fairpfn", "tce") else { continue };
        if let Some(unfair_tce) = med(case, "unfair", "tce") {
            let line = format!("{case}: median TCE fairpfn {fair_tce:.4} vs unfair {unfair_tce:.4}");
            if fair_tce <= 0.5 * unfair_tce { pass.push(line) } else { fail.push(line) }
        }
        let fair_mae = med(case, "fairpfn", "cf_mae").unwrap_or(f64::NAN);
        for other in ["unfair", "random"] {
            if let Some(m) = med(case, other, "cf_mae") {
                let line = format!("{case}: median cf_mae fairpfn {fair_mae:.4} vs {other} {m:.4}");
                if fair_mae < m { pass.push(line) } else { fail.push(line) }
            }
        }
    }
    if fail.is_empty() { Ok(pass) } else { Err(fail) }
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, mode: ExecMode) -> CliResult<()> {
    let mut cfg: EvalConfig = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = &a.bench {
        cfg.bench_dir = b.clone();
    }
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if a.unfair_checkpoint.is_some() {
        cfg.unfair_checkpoint = a.unfair_checkpoint.clone();
    }
    match &a.methods {
        Some(m) => cfg.methods = m.clone(),
        None if cli.config.is_none() => {
            if cfg.checkpoint.is_some() {
                cfg.methods.insert(0, "fairpfn".into());
            }
            if cfg.unfair_checkpoint.is_some() {
                cfg.methods.insert(1.min(cfg.methods.len()), "pfn-unfair".into());
            }
        }
        None => {}
    }
    if let Some(c) = &a.cases {
        cfg.cases = parse_cases(c)?;
    }
    if let Some(r) = &a.run_id {
        cfg.run_id = r.clone();
    }
    if cfg.run_id.is_empty() {
        let digest = sha256_hex(serde_json::to_string(&cfg)?.as_bytes());
        cfg.run_id = format!("run-{}", &digest[..12]);
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    write_json(&dir.join("config.json"), &cfg)?;
    let summary = run_eval(&cfg, mode)?;
    let rows: Vec<ResultRow> = summary
        .outcomes
        .iter()
        .flat_map(|o| o.rows(&cfg.run_id, cfg.seed))
        .collect();
    let results = dir.join("results.csv");
    append_results(&results, &rows)?;
    if !summary.skipped.is_empty() {
        write_json(&dir.join("skipped.json"), &summary.skipped)?;
    }
    println!(
        "{} rows for {} of {} instances appended to {}",
        rows.len(),
        summary.outcomes.len(),
        summary.total,
        results.display()
    );
    if cli.check {
        match check_eval(&rows) {
            Ok(pass) => pass.iter().for_each(|l| println!("PASS {l}")),
            Err(fail) => return Err(CliError::Assert(fail.join("; "))),
        }
    }
    Ok(())
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> CliResult<()> {
    let results = a.results.clone().unwrap_or_else(|| PathBuf::from("results/results.csv"));
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    let bundle = build_report(&results, a.bench.as_deref())?;
    write_report(&bundle, &dir)?;
    verify_report(&results, &dir)?;
    for (case, points) in &bundle.pareto {
        let front: Vec<&str> = points.iter().filter(|p| p.on_front).map(|p| p.method.as_str()).collect();
        println!("{case}: Pareto front {}", front.join(", "));
    }
    println!("report written to {} (verified)", dir.display());
    Ok(())
}

fn cmd_prior_sample(cli: &Cli, count: usize) -> CliResult<()> {
    let ranges: PriorRanges = load_config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("prior"));
    refuse_existing(&dir.join("config.json"), cli.force)?;
    write_json(
        &dir.join("config.json"),
        &json!({"schema_version": RUN_SCHEMA_VERSION, "tool_version": TOOL_VERSION, "seed": seed, "count": count, "prior": ranges}),
    )?;
    for k in 0..count {
        let (spec, pair) = sample_pair(stream_seed(seed, k as u64), &ranges)?;
        write_pair(&pair, &dir)?;
        write_json(&dir.join(format!("{}.scm.json", pair.biased.id.trim_end_matches(".biased"))), &spec)?;
    }
    println!("{count} dataset pairs written to {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_realworld_fit(
    cli: &Cli,
    graph: &Path,
    data: &Path,
    trees: usize,
    depth: usize,
    checkpoint: Option<&Path>,
    methods: &[String],
    mode: ExecMode,
) -> CliResult<()> {
    let seed = cli.seed.unwrap_or(0);
    let spec = CausalGraphSpec::load(graph)?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("realworld"));
    refuse_existing(&dir.join("config.json"), cli.force)?;
    let forest = ForestConfig {
        trees,
        max_depth: depth,
        seed,
        ..ForestConfig::default()
    };
    write_json(
        &dir.join("config.json"),
        &json!({"schema_version": RUN_SCHEMA_VERSION, "tool_version": TOOL_VERSION, "graph": spec,
                "data": data, "forest": forest, "methods": methods, "checkpoint": checkpoint,
                "binary_counterfactuals": BINARY_CF_METHOD}),
    )?;
    let (dataset, table, report) = ingest(&spec, data)?;
    eprintln!("ingested {} rows ({} dropped)", report.rows_kept, report.rows_dropped);
    let fitted = fit_anm(&spec, &table, &forest, mode)?;
    let noise = compute_noise(&fitted);
    let twin = counterfactual_twin(&fitted, &dataset)?;
    dataset.write(&dir.join(format!("{}.csv", spec.name)))?;
    twin.write(&dir.join(format!("{}.twin.csv", spec.name)))?;
    fs::write(dir.join(format!("{}.noise.csv", spec.name)), noise.csv_string())
        .map_err(|e| CliError::Data(e.to_string()))?;
    let flagged: Vec<&String> = fitted
        .regressors
        .iter()
        .filter(|(_, f)| f.constant.is_some())
        .map(|(n, _)| n)
        .collect();
    write_json(&dir.join("ingest.json"), &json!({"report": report, "constant_regressors": flagged}))?;

    let eval_cfg = EvalConfig {
        checkpoint: checkpoint.map(Path::to_path_buf),
        methods: methods.to_vec(),
        seed,
        ..EvalConfig::default()
    };
    let task = EvalTask::new(spec.name.clone(), Setting::RealWorld, dataset, twin, None, None, noise, seed)?;
    let outcomes = evaluate_tasks(&[task], &resolve_methods(&eval_cfg)?, seed, mode)?;
    let run_id = format!("real-{}-{seed}", spec.name);
    let rows: Vec<ResultRow> = outcomes.iter().flat_map(|o| o.rows(&run_id, seed)).collect();
    append_results(&dir.join("results.csv"), &rows)?;
    for r in rows.iter().filter(|r| r.metric == "tce" || r.metric == "cf_mae") {
        println!(
            "{:<10} {:<7} {}",
            r.method,
            r.metric,
            r.value.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}
