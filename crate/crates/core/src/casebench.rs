//! Six hand-crafted causal case studies with counterfactual and path-specific
//! twins, plus the oracle side information the Level-k baselines fit to.
//!
//! All DGPs take the protected group `A ∈ {0, 1}` and draw every noise term
//! from `N(0, σ²)` (the latent `U` of `level2` is standard normal). Labels
//! threshold `logistic(score)` at its median.
//!
//! | case     | observables                 | score              |
//! |----------|-----------------------------|--------------------|
//! | biased   | X = w·A² + εX               | X + εY             |
//! | direct   | X = εX                      | w·A + X + εY       |
//! | indirect | X1 = ε1, X2 = w·A + ε2      | X1 + X2 + εY       |
//! | level1   | X = w·A + εX                | X + εY             |
//! | level2   | X = w·A + U + εX            | U + εY             |
//! | level3   | X = w·A + εX                | εX + εY            |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use numcore::{sigmoid, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{binarize, quantile, sha256_hex, write_file, Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::exec::{map_range, ExecMode};
use crate::rng::{log_uniform, log_uniform_int, rng_for, stream_seed};

pub const SIGMA_FLOOR: f64 = 1e-3;
pub const W_RANGE: (f64, f64) = (0.1, 10.0);
pub const N_RANGE: (usize, usize) = (100, 1000);
pub const DEFAULT_COUNT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    Biased,
    Direct,
    Indirect,
    #[serde(rename = "level1")]
    LevelOne,
    #[serde(rename = "level2")]
    LevelTwo,
    #[serde(rename = "level3")]
    LevelThree,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        CaseId::Biased,
        CaseId::Direct,
        CaseId::Indirect,
        CaseId::LevelOne,
        CaseId::LevelTwo,
        CaseId::LevelThree,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::Biased => "biased",
            CaseId::Direct => "direct",
            CaseId::Indirect => "indirect",
            CaseId::LevelOne => "level1",
            CaseId::LevelTwo => "level2",
            CaseId::LevelThree => "level3",
        }
    }

    /// Whether the DGP has an edge A -> Y.
    pub fn has_direct_path(self) -> bool {
        self == CaseId::Direct
    }

    /// Whether A reaches Y (or the features) through a mediator.
    pub fn has_mediated_path(self) -> bool {
        self != CaseId::Direct
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            CaseId::Indirect => &["x1", "x2"],
            _ => &["x"],
        }
    }

    /// Oracle columns this case declares (excluding `y_fair`).
    pub fn oracle_columns(self) -> &'static [&'static str] {
        match self {
            CaseId::Direct => &["nd_x"],
            CaseId::Indirect => &["nd_x1"],
            CaseId::LevelTwo => &["u_fair"],
            CaseId::LevelThree => &["eps_x"],
            CaseId::Biased | CaseId::LevelOne => &[],
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown case {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyConfig {
    pub case: CaseId,
    /// Causal weight of the protected attribute.
    pub w_a: f64,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl CaseStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(N_RANGE.0..=N_RANGE.1).contains(&self.n) {
            return Err(Error::InvalidConfig(format!("n = {} outside [100, 1000]", self.n)));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::InvalidConfig(format!("sigma = {} outside (0, 1]", self.sigma)));
        }
        if !self.w_a.is_finite() {
            return Err(Error::InvalidConfig("w_a must be finite".into()));
        }
        Ok(())
    }
}

/// Oracle columns (`nd_*`, `u_*`, `eps_*`) and the fair label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FairInfo {
    pub columns: Vec<(String, Vec<f64>)>,
    pub y_fair: Vec<u8>,
}

impl FairInfo {
    pub fn with_prefix(&self, prefix: &str) -> Vec<&(String, Vec<f64>)> {
        self.columns.iter().filter(|(n, _)| n.starts_with(prefix)).collect()
    }

    /// `n x k` matrix of the named columns, in the given order.
    pub fn matrix(&self, names: &[&str]) -> Option<Tensor> {
        let cols: Vec<&Vec<f64>> = names
            .iter()
            .map(|name| self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v))
            .collect::<Option<_>>()?;
        let n = cols.first().map_or(self.y_fair.len(), |c| c.len());
        let mut data = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            data.extend(cols.iter().map(|c| c[i]));
        }
        Tensor::matrix(n, cols.len(), data).ok()
    }

    pub fn csv_string(&self) -> String {
        let mut header: Vec<&str> = self.columns.iter().map(|(n, _)| n.as_str()).collect();
        header.push("y_fair");
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.y_fair.len() {
            for (_, col) in &self.columns {
                out.push_str(&col[i].to_string());
                out.push(',');
            }
            out.push_str(&self.y_fair[i].to_string());
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<FairInfo> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::io(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.last().map(String::as_str) != Some("y_fair") {
            return Err(Error::InvalidData(format!("{}: last column must be y_fair", path.display())));
        }
        let k = header.len() - 1;
        let mut cols = vec![Vec::new(); k];
        let mut y_fair = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::io(path, e.to_string()))?;
            for j in 0..=k {
                let v: f64 = rec[j]
                    .parse()
                    .map_err(|_| Error::InvalidData(format!("{}: bad value {:?}", path.display(), &rec[j])))?;
                if j == k {
                    y_fair.push(v as u8);
                } else {
                    cols[j].push(v);
                }
            }
        }
        Ok(FairInfo {
            columns: header.into_iter().take(k).zip(cols).collect(),
            y_fair,
        })
    }
}

/// A path-specific twin, or a marker that the DGP has no such path.
#[derive(Debug, Clone, PartialEq)]
pub enum PathTwin {
    Twin(Dataset),
    Absent,
}

#[derive(Debug, Clone)]
pub struct CaseStudyInstance {
    pub config: CaseStudyConfig,
    pub factual: Dataset,
    pub twin: Dataset,
    /// Direct-path twin; a copy of `factual` when the path is absent.
    pub direct_twin: Dataset,
    pub indirect_twin: Dataset,
    pub direct_path_absent: bool,
    pub indirect_path_absent: bool,
    pub fair_info: FairInfo,
    draws: Option<Draws>,
}

impl CaseStudyInstance {
    pub fn id(&self) -> &str {
        &self.factual.id
    }
}

/// Exogenous draws shared by the factual data and every twin.
#[derive(Debug, Clone, PartialEq)]
struct Draws {
    groups: Vec<u8>,
    eps_x: Vec<f64>,
    eps_1: Vec<f64>,
    eps_2: Vec<f64>,
    u: Vec<f64>,
    eps_y: Vec<f64>,
}

impl Draws {
    fn sample(n: usize, sigma: f64, seed: u64) -> Draws {
        let mut rng = rng_for(seed);
        let groups = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let mut normal = |scale: f64| -> Vec<f64> {
            (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let eps_x = normal(sigma);
        let eps_1 = normal(sigma);
        let eps_2 = normal(sigma);
        let u = normal(1.0);
        let eps_y = normal(sigma);
        Draws {
            groups,
            eps_x,
            eps_1,
            eps_2,
            u,
            eps_y,
        }
    }

    fn n(&self) -> usize {
        self.groups.len()
    }
}

/// Observables and pre-squash score given the A values on direct edges
/// (`a_direct`) and on edges into mediators (`a_mediator`).
fn evaluate(case: CaseId, w: f64, d: &Draws, a_direct: &[f64], a_mediator: &[f64]) -> (Tensor, Vec<f64>) {
    let n = d.n();
    let m = case.feature_names().len();
    let mut x = Tensor::zeros(&[n, m]);
    let mut score = vec![0.0; n];
    for i in 0..n {
        let (ad, am) = (a_direct[i], a_mediator[i]);
        match case {
            CaseId::Biased => {
                let xv = w * am * am + d.eps_x[i];
                x.set(i, 0, xv);
                score[i] = xv + d.eps_y[i];
            }
            CaseId::Direct => {
                let xv = d.eps_x[i];
                x.set(i, 0, xv);
                score[i] = w * ad + xv + d.eps_y[i];
            }
            CaseId::Indirect => {
                let x1 = d.eps_1[i];
                let x2 = w * am + d.eps_2[i];
                x.set(i, 0, x1);
                x.set(i, 1, x2);
                score[i] = x1 + x2 + d.eps_y[i];
            }
            CaseId::LevelOne => {
                let xv = w * am + d.eps_x[i];
                x.set(i, 0, xv);
                score[i] = xv + d.eps_y[i];
            }
            CaseId::LevelTwo => {
                let xv = w * am + d.u[i] + d.eps_x[i];
                x.set(i, 0, xv);
                score[i] = d.u[i] + d.eps_y[i];
            }
            CaseId::LevelThree => {
                let xv = w * am + d.eps_x[i];
                x.set(i, 0, xv);
                score[i] = d.eps_x[i] + d.eps_y[i];
            }
        }
    }
    (x, score)
}

fn as_real(groups: &[u8]) -> Vec<f64> {
    groups.iter().map(|&g| g as f64).collect()
}

fn flipped(groups: &[u8]) -> Vec<u8> {
    groups.iter().map(|&g| 1 - g).collect()
}

fn minority_share(labels: &[u8]) -> f64 {
    let ones = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len().max(1) as f64;
    ones.min(1.0 - ones)
}

fn make_dataset(cfg: &CaseStudyConfig, id: String, groups: Vec<u8>, x: Tensor, score: &[f64], threshold: f64) -> Dataset {
    let target: Vec<f64> = score.iter().map(|&s| sigmoid(s)).collect();
    Dataset {
        id,
        groups,
        features: x,
        labels: binarize(&target, threshold),
        target,
        meta: DatasetMeta {
            seed: cfg.seed,
            scm_hash: case_hash(cfg),
            a0: 0.0,
            a1: 1.0,
            threshold,
            ..DatasetMeta::default()
        },
    }
}

fn case_hash(cfg: &CaseStudyConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())[..16].to_string()
}

pub fn instance_id(case: CaseId, index: usize) -> String {
    format!("{}-{index:03}", case.as_str())
}

/// Generates one case-study instance and all of its twins.
pub fn generate_case(config: &CaseStudyConfig) -> Result<CaseStudyInstance> {
    generate_case_with_id(config, format!("{}-s{}", config.case, config.seed))
}

pub fn generate_case_with_id(config: &CaseStudyConfig, id: String) -> Result<CaseStudyInstance> {
    config.validate()?;
    let mut draws = Draws::sample(config.n, config.sigma, stream_seed(config.seed, 0));
    let mut reseeded = false;
    loop {
        let inst = assemble(config, &id, &draws);
        let share = minority_share(&inst.factual.labels);
        if share >= 0.05 {
            return Ok(inst);
        }
        if reseeded {
            return Err(Error::DegenerateLabels(format!("{id}: minority class share {share:.3}")));
        }
        let fresh = Draws::sample(config.n, config.sigma, stream_seed(config.seed, 1));
        draws.eps_y = fresh.eps_y;
        reseeded = true;
    }
}

fn assemble(cfg: &CaseStudyConfig, id: &str, draws: &Draws) -> CaseStudyInstance {
    let case = cfg.case;
    let g = &draws.groups;
    let g_flip = flipped(g);
    let (a, a_flip) = (as_real(g), as_real(&g_flip));

    let (x, score) = evaluate(case, cfg.w_a, draws, &a, &a);
    let threshold = quantile(&score.iter().map(|&s| sigmoid(s)).collect::<Vec<_>>(), 0.5);
    let factual = make_dataset(cfg, id.to_string(), g.clone(), x, &score, threshold);

    let (xt, st) = evaluate(case, cfg.w_a, draws, &a_flip, &a_flip);
    let mut twin = make_dataset(cfg, format!("{id}.twin"), g_flip.clone(), xt, &st, threshold);
    twin.meta.twin_of = Some(id.to_string());

    let materialize = |t: PathTwin, suffix: &str| -> (Dataset, bool) {
        match t {
            PathTwin::Twin(ds) => (ds, false),
            PathTwin::Absent => {
                let mut copy = factual.clone();
                copy.id = format!("{id}.{suffix}");
                copy.meta.twin_of = Some(id.to_string());
                (copy, true)
            }
        }
    };
    let (direct, indirect) = path_twins_from(cfg, id, draws, threshold);
    let (direct_twin, direct_path_absent) = materialize(direct, "direct");
    let (indirect_twin, indirect_path_absent) = materialize(indirect, "indirect");

    // Fair label: the same draws with the protected weight forced to zero.
    let (_, fair_score) = evaluate(case, 0.0, draws, &a, &a);
    let fair_target: Vec<f64> = fair_score.iter().map(|&s| sigmoid(s)).collect();
    let y_fair = binarize(&fair_target, quantile(&fair_target, 0.5));
    let columns = case
        .oracle_columns()
        .iter()
        .map(|&name| {
            let values = match name {
                "nd_x" | "eps_x" => draws.eps_x.clone(),
                "nd_x1" => draws.eps_1.clone(),
                "u_fair" => draws.u.clone(),
                _ => unreachable!("unknown oracle column {name}"),
            };
            (name.to_string(), values)
        })
        .collect();

    CaseStudyInstance {
        config: *cfg,
        factual,
        twin,
        direct_twin,
        indirect_twin,
        direct_path_absent,
        indirect_path_absent,
        fair_info: FairInfo { columns, y_fair },
        draws: Some(draws.clone()),
    }
}

fn path_twins_from(cfg: &CaseStudyConfig, id: &str, draws: &Draws, threshold: f64) -> (PathTwin, PathTwin) {
    let case = cfg.case;
    let g = &draws.groups;
    let g_flip = flipped(g);
    let (a, a_flip) = (as_real(g), as_real(&g_flip));
    let direct = if case.has_direct_path() {
        let (x, s) = evaluate(case, cfg.w_a, draws, &a_flip, &a);
        let mut ds = make_dataset(cfg, format!("{id}.direct"), g_flip.clone(), x, &s, threshold);
        ds.meta.twin_of = Some(id.to_string());
        PathTwin::Twin(ds)
    } else {
        PathTwin::Absent
    };
    let indirect = if case.has_mediated_path() {
        let (x, s) = evaluate(case, cfg.w_a, draws, &a, &a_flip);
        let mut ds = make_dataset(cfg, format!("{id}.indirect"), g.clone(), x, &s, threshold);
        ds.meta.twin_of = Some(id.to_string());
        PathTwin::Twin(ds)
    } else {
        PathTwin::Absent
    };
    (direct, indirect)
}

/// Direct- and indirect-path twins of a generated instance.
pub fn path_twins(instance: &CaseStudyInstance) -> Result<(PathTwin, PathTwin)> {
    let draws = instance
        .draws
        .as_ref()
        .ok_or_else(|| Error::MissingNoise(format!("{} was loaded without its draws", instance.id())))?;
    Ok(path_twins_from(&instance.config, instance.id(), draws, instance.factual.meta.threshold))
}

/// Monte-Carlo total effect of A on the label under `do(A=1)` vs `do(A=0)`,
/// with the threshold fixed at the observational median.
pub fn ground_truth_te(case: CaseId, w_a: f64, sigma: f64, draws: usize, seed: u64) -> f64 {
    let d = Draws::sample(draws, sigma, seed);
    let a = as_real(&d.groups);
    let (_, observed) = evaluate(case, w_a, &d, &a, &a);
    let threshold = quantile(&observed, 0.5);
    let ones = vec![1.0; draws];
    let zeros = vec![0.0; draws];
    let (_, s1) = evaluate(case, w_a, &d, &ones, &ones);
    let (_, s0) = evaluate(case, w_a, &d, &zeros, &zeros);
    let rate = |s: &[f64]| s.iter().filter(|&&v| v > threshold).count() as f64 / draws as f64;
    rate(&s1) - rate(&s0)
}

/// One instance's entry in the suite manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub case: CaseId,
    pub w_a: f64,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub direct_path_absent: bool,
    pub indirect_path_absent: bool,
    /// Role (`factual`, `twin`, `direct`, `indirect`, `oracle`) to relative path.
    pub files: BTreeMap<String, String>,
    /// Relative path to sha256 of its content.
    pub sha256: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub count_per_case: usize,
    pub cases: Vec<CaseId>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e.to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn entries_for(&self, case: CaseId) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.case == case)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub count_per_case: usize,
    pub seed: u64,
    pub cases: Vec<CaseId>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            count_per_case: DEFAULT_COUNT,
            seed: 0,
            cases: CaseId::ALL.to_vec(),
        }
    }
}

/// Config of the `index`-th instance of `case` in a suite.
pub fn suite_instance_config(seed: u64, case: CaseId, index: usize) -> CaseStudyConfig {
    let case_idx = CaseId::ALL.iter().position(|&c| c == case).unwrap_or(0) as u64;
    let s = stream_seed(seed, case_idx * 1_000_003 + index as u64);
    let mut rng = rng_for(stream_seed(s, 99));
    let w_a = log_uniform(&mut rng, W_RANGE.0, W_RANGE.1);
    let n = log_uniform_int(&mut rng, N_RANGE.0, N_RANGE.1);
    // log-uniform on [1e-3, 1), open at the top
    let sigma = log_uniform(&mut rng, SIGMA_FLOOR, 1.0).min(1.0 - f64::EPSILON);
    CaseStudyConfig { case, w_a, n, sigma, seed: s }
}

/// Generates every instance of a suite in memory.
pub fn generate_instances(cfg: &SuiteConfig, mode: ExecMode) -> Result<Vec<CaseStudyInstance>> {
    if cfg.count_per_case == 0 {
        return Err(Error::InvalidConfig("count per case must be >= 1".into()));
    }
    let jobs: Vec<(CaseId, usize)> = cfg
        .cases
        .iter()
        .flat_map(|&c| (0..cfg.count_per_case).map(move |k| (c, k)))
        .collect();
    map_range(mode, jobs.len(), |j| {
        let (case, k) = jobs[j];
        generate_case_with_id(&suite_instance_config(cfg.seed, case, k), instance_id(case, k))
    })
    .into_iter()
    .collect()
}

/// Writes a suite (data, twins, oracle files and `manifest.json`) into `dir`.
pub fn generate_suite(dir: &Path, cfg: &SuiteConfig, overwrite: bool, mode: ExecMode) -> Result<Manifest> {
    if dir.join("manifest.json").exists() && !overwrite {
        return Err(Error::Exists(dir.display().to_string()));
    }
    let instances = generate_instances(cfg, mode)?;
    let mut entries = Vec::with_capacity(instances.len());
    for inst in &instances {
        entries.push(write_instance(dir, inst)?);
    }
    let manifest = Manifest {
        schema_version: crate::data::SCHEMA_VERSION,
        seed: cfg.seed,
        count_per_case: cfg.count_per_case,
        cases: cfg.cases.clone(),
        entries,
    };
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

fn write_instance(dir: &Path, inst: &CaseStudyInstance) -> Result<ManifestEntry> {
    let case = inst.config.case.as_str();
    let stem = inst.id().to_string();
    let mut files = BTreeMap::new();
    let mut hashes = BTreeMap::new();
    let roles: [(&str, &Dataset, String); 4] = [
        ("factual", &inst.factual, format!("{case}/{stem}.csv")),
        ("twin", &inst.twin, format!("{case}/{stem}.twin.csv")),
        ("direct", &inst.direct_twin, format!("{case}/{stem}.direct.csv")),
        ("indirect", &inst.indirect_twin, format!("{case}/{stem}.indirect.csv")),
    ];
    for (role, ds, rel) in roles {
        ds.write(&dir.join(&rel))?;
        hashes.insert(rel.clone(), sha256_hex(ds.csv_string().as_bytes()));
        files.insert(role.to_string(), rel);
    }
    let oracle_rel = format!("{case}/{stem}.oracle.csv");
    let oracle = inst.fair_info.csv_string();
    write_file(&dir.join(&oracle_rel), oracle.as_bytes())?;
    hashes.insert(oracle_rel.clone(), sha256_hex(oracle.as_bytes()));
    files.insert("oracle".to_string(), oracle_rel);
    Ok(ManifestEntry {
        id: stem,
        case: inst.config.case,
        w_a: inst.config.w_a,
        n: inst.config.n,
        sigma: inst.config.sigma,
        seed: inst.config.seed,
        direct_path_absent: inst.direct_path_absent,
        indirect_path_absent: inst.indirect_path_absent,
        files,
        sha256: hashes,
    })
}

/// Loads an instance written by [`generate_suite`]. Loaded instances carry no
/// raw draws, so [`path_twins`] cannot be recomputed from them.
pub fn load_instance(dir: &Path, entry: &ManifestEntry) -> Result<CaseStudyInstance> {
    let path = |role: &str| -> Result<PathBuf> {
        entry
            .files
            .get(role)
            .map(|rel| dir.join(rel))
            .ok_or_else(|| Error::InvalidData(format!("{}: manifest lacks {role} file", entry.id)))
    };
    let read = |role: &str| -> Result<Dataset> {
        let p = path(role)?;
        if !p.exists() {
            return Err(Error::io(&p, "missing file"));
        }
        Dataset::read(&p)
    };
    let mut factual = read("factual")?;
    factual.id = entry.id.clone();
    Ok(CaseStudyInstance {
        config: CaseStudyConfig {
            case: entry.case,
            w_a: entry.w_a,
            n: entry.n,
            sigma: entry.sigma,
            seed: entry.seed,
        },
        factual,
        twin: read("twin")?,
        direct_twin: read("direct")?,
        indirect_twin: read("indirect")?,
        direct_path_absent: entry.direct_path_absent,
        indirect_path_absent: entry.indirect_path_absent,
        fair_info: FairInfo::read_csv(&path("oracle")?)?,
        draws: None,
    })
}
