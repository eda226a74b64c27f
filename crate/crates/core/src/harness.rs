//! Experiment orchestration behind the command-line tool.
//!
//! Every command hashes its configuration (canonical JSON, SHA-256, first 12
//! hex digits) and writes its artifacts into `<root>/<hash>/` with the hash
//! embedded in each file name. `<root>` is the config's `output_dir`, else
//! `$PMLFS_OUTPUT_ROOT`, else `./pmlfs-out`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{inject_candidate_noise, load_dataset, save_dataset, standardize_features, DataFormat, Dataset};
use crate::encoder::{EncoderConfig, ParameterStore};
use crate::error::{PmlError, Result};
use crate::eval::cv::{collect_records, run_cv, write_results_csv, CvConfig, FoldOutcome, MetricsRecord};
use crate::eval::stats::{friedman_from_average_ranks, FriedmanResult, RankTable};
use crate::math::spearman;
use crate::stage1::{write_pseudo_labels, PseudoSidecar, PseudoTargets, Stage1Config, Stage1Trainer};
use crate::stage2::write_trajectory_log;
use crate::verify::{make_synthetic, run_verification, SyntheticSpec, VerificationOptions, VerificationReport};
use crate::{encoder, seed};

pub const OUTPUT_ROOT_ENV: &str = "PMLFS_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    File { path: PathBuf, format: DataFormat },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::File { path, format } => load_dataset(path, *format),
            DataSource::Synthetic(spec) => make_synthetic(spec),
        }
    }

    /// A short name for result rows.
    pub fn default_id(&self) -> String {
        match self {
            DataSource::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            DataSource::Synthetic(s) => format!("synthetic-n{}-d{}-L{}", s.n, s.d, s.labels),
        }
    }
}

/// Parses `n=200,d=20,L=4` with optional `informative`, `label_noise`,
/// `candidate_noise` and `seed` keys.
pub fn parse_synthetic(text: &str) -> Result<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    let mut informative = None;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| PmlError::Config(format!("expected key=value in `{part}`")))?;
        let bad = || PmlError::Config(format!("bad value for `{key}`: `{value}`"));
        match key.trim() {
            "n" => spec.n = value.parse().map_err(|_| bad())?,
            "d" => spec.d = value.parse().map_err(|_| bad())?,
            "L" | "l" | "labels" => spec.labels = value.parse().map_err(|_| bad())?,
            "informative" => informative = Some(value.parse().map_err(|_| bad())?),
            "seed" => spec.seed = value.parse().map_err(|_| bad())?,
            "label_noise" => spec.label_noise = value.parse().map_err(|_| bad())?,
            "candidate_noise" => spec.candidate_noise = value.parse().map_err(|_| bad())?,
            other => return Err(PmlError::Config(format!("unknown synthetic key `{other}`"))),
        }
    }
    spec.informative = informative.unwrap_or(spec.d.min(10));
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub cv: CvConfig,
    /// Output root; not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.cv.validate()
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| PmlError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PmlError::io(format!("reading {}", path.display()), e))?;
        RunConfig::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(&RunConfig {
            output_dir: None,
            ..self.clone()
        })
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(default_output_root)
    }
}

/// Laptop-scale settings: the small residual-MLP encoder and shorter
/// training, otherwise the reference pipeline.
pub fn desk_cv_config() -> CvConfig {
    let mut cv = CvConfig {
        encoder: EncoderConfig::desk(0),
        ..CvConfig::default()
    };
    cv.stage1.lr_disc = 3e-3;
    cv.stage1.lr_pol = 3e-3;
    cv.stage2.lr_fs = 3e-3;
    cv.stage2.epochs = 40;
    cv
}

/// Keys sorted, no whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let digest = Sha256::digest(canonical_json(value)?.as_bytes());
    Ok(hex::encode(&digest[..6]))
}

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("pmlfs-out"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PmlError::io(format!("creating {}", dir.display()), e))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.partial"));
    std::fs::write(&tmp, bytes).map_err(|e| PmlError::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| PmlError::io(format!("renaming into {}", path.display()), e))
}

/// Runs `write` against a private staging directory, then moves every file
/// it produced into `dir`.
fn staged(dir: &Path, tag: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let stage = dir.join(format!(".{tag}.partial"));
    if stage.exists() {
        std::fs::remove_dir_all(&stage).map_err(|e| PmlError::io(format!("clearing {}", stage.display()), e))?;
    }
    create_dir(&stage)?;
    write(&stage)?;
    let entries = std::fs::read_dir(&stage).map_err(|e| PmlError::io(format!("listing {}", stage.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| PmlError::io(format!("listing {}", stage.display()), e))?;
        let to = dir.join(entry.file_name());
        std::fs::rename(entry.path(), &to).map_err(|e| PmlError::io(format!("moving into {}", to.display()), e))?;
    }
    std::fs::remove_dir(&stage).map_err(|e| PmlError::io(format!("removing {}", stage.display()), e))
}

/// Paths of everything a run writes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub hash: String,
    pub dir: PathBuf,
}

impl RunArtifacts {
    pub fn new(root: &Path, hash: &str) -> RunArtifacts {
        RunArtifacts {
            hash: hash.into(),
            dir: root.join(hash),
        }
    }

    fn file(&self, stem: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{stem}-{}.{ext}", self.hash))
    }

    fn fold_file(&self, stem: &str, fold: usize, ext: &str) -> String {
        format!("{stem}-{}-fold{fold}.{ext}", self.hash)
    }

    pub fn config(&self) -> PathBuf {
        self.file("config", "json")
    }

    pub fn results(&self) -> PathBuf {
        self.file("results", "csv")
    }

    pub fn control(&self) -> PathBuf {
        self.file("control", "csv")
    }

    pub fn pseudo(&self, fold: usize) -> PathBuf {
        self.dir.join(self.fold_file("pseudo", fold, "csv"))
    }

    pub fn ranking(&self, fold: usize) -> PathBuf {
        self.dir.join(self.fold_file("ranking", fold, "csv"))
    }

    pub fn checkpoint(&self, fold: usize) -> PathBuf {
        self.dir.join(self.fold_file("checkpoint", fold, "ckpt"))
    }

    pub fn history(&self, fold: usize) -> PathBuf {
        self.dir.join(self.fold_file("history", fold, "json"))
    }

    pub fn trajectories(&self, fold: usize) -> PathBuf {
        self.dir.join(self.fold_file("trajectories", fold, "jsonl"))
    }
}

#[derive(Serialize)]
struct FoldHistory<'a> {
    fold: usize,
    epsilon_pseudo: f64,
    epsilon_baseline: f64,
    stage1: &'a [crate::stage1::EpochStats],
    stage2: &'a [crate::stage2::Stage2Stats],
}

fn write_fold(art: &RunArtifacts, cfg: &RunConfig, o: &FoldOutcome, d: usize) -> Result<()> {
    staged(&art.dir, &format!("fold{}", o.fold), |stage| {
        let at = |p: PathBuf| stage.join(p.file_name().expect("artifact file name"));
        let last = o.stage1_history.last();
        let sidecar = PseudoSidecar {
            config_hash: art.hash.clone(),
            mode: cfg.cv.stage1.mode,
            epochs: cfg.cv.stage1.epochs,
            final_disc_loss: last.map(|e| e.mean_disc_loss),
            final_reward: last.map(|e| e.mean_reward),
        };
        write_pseudo_labels(at(art.pseudo(o.fold)), &o.pseudo, &o.train_indices, &sidecar)?;
        o.ranking.write_csv(at(art.ranking(o.fold)))?;
        o.store.save_checkpoint(at(art.checkpoint(o.fold)), &art.hash)?;
        let history = FoldHistory {
            fold: o.fold,
            epsilon_pseudo: o.epsilon_pseudo,
            epsilon_baseline: o.epsilon_baseline,
            stage1: &o.stage1_history,
            stage2: &o.stage2_history,
        };
        let path = at(art.history(o.fold));
        std::fs::write(&path, serde_json::to_string_pretty(&history)? + "\n")
            .map_err(|e| PmlError::io(format!("writing {}", path.display()), e))?;
        if cfg.cv.record_trajectories {
            write_trajectory_log(at(art.trajectories(o.fold)), d, &o.trajectories)?;
        }
        Ok(())
    })
}

pub struct RunOutput {
    pub artifacts: RunArtifacts,
    pub records: Vec<MetricsRecord>,
    pub folds: Vec<FoldOutcome>,
}

impl RunOutput {
    pub fn control_records(&self) -> Vec<MetricsRecord> {
        self.folds.iter().flat_map(|o| o.control_records.iter().cloned()).collect()
    }
}

fn write_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.partial"));
    write_results_csv(&tmp, records)?;
    std::fs::rename(&tmp, path).map_err(|e| PmlError::io(format!("renaming into {}", path.display()), e))
}

/// Cross-validated two-stage run; writes every artifact under the config hash.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let art = RunArtifacts::new(&cfg.output_root(), &hash);
    let ds = cfg.data.load()?;
    create_dir(&art.dir)?;
    let stored = RunConfig {
        output_dir: None,
        ..cfg.clone()
    };
    write_atomic(&art.config(), stored.to_json()?.as_bytes())?;
    let folds = run_cv(&ds, &cfg.cv)?;
    for o in &folds {
        write_fold(&art, cfg, o, ds.n_features())?;
    }
    let records = collect_records(&folds);
    write_records(&art.results(), &records)?;
    let out = RunOutput {
        artifacts: art,
        records,
        folds,
    };
    if cfg.cv.random_control {
        write_records(&out.artifacts.control(), &out.control_records())?;
    }
    Ok(out)
}

pub const METRICS: [&str; 4] = ["rl", "hl", "ce", "micro_f1"];

pub fn metric_value(r: &MetricsRecord, metric: &str) -> f64 {
    match metric {
        "rl" => r.ranking_loss,
        "hl" => r.hamming_loss,
        "ce" => r.coverage_error,
        "micro_f1" => r.micro_f1,
        "eps_pseudo" => r.epsilon_pseudo,
        other => panic!("unknown metric {other}"),
    }
}

pub fn higher_is_better(metric: &str) -> bool {
    metric == "micro_f1"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub folds: usize,
    /// Fold means keyed by metric.
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub config_hash: String,
    pub points: Vec<CurvePoint>,
    /// Spearman correlation of each fold-mean metric with the budget.
    pub spearman: BTreeMap<String, f64>,
}

pub fn budget_curve(hash: &str, records: &[MetricsRecord]) -> BudgetCurve {
    let mut budgets: Vec<usize> = records.iter().map(|r| r.budget).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let points: Vec<CurvePoint> = budgets
        .iter()
        .map(|&b| {
            let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.budget == b).collect();
            let mut mean = BTreeMap::new();
            let mut std = BTreeMap::new();
            for m in METRICS {
                let v: Vec<f64> = rows.iter().map(|r| metric_value(r, m)).collect();
                let mu = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
                mean.insert(m.to_string(), mu);
                std.insert(m.to_string(), var.sqrt());
            }
            CurvePoint {
                budget: b,
                folds: rows.len(),
                mean,
                std,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.budget as f64).collect();
    let spearman = METRICS
        .iter()
        .map(|m| {
            let ys: Vec<f64> = points.iter().map(|p| p.mean[*m]).collect();
            (m.to_string(), spearman(&xs, &ys))
        })
        .collect();
    BudgetCurve {
        config_hash: hash.into(),
        points,
        spearman,
    }
}

/// Runs the pipeline once per grid entry (all budgets share the trained
/// models) and writes the results plus one curve CSV per metric.
pub fn cmd_budget_curve(cfg: &RunConfig, grid: &[usize]) -> Result<(RunOutput, BudgetCurve)> {
    if grid.is_empty() {
        return Err(PmlError::Config("budget grid is empty".into()));
    }
    let mut cfg = cfg.clone();
    cfg.cv.budgets = grid.to_vec();
    let out = cmd_run(&cfg)?;
    let art = &out.artifacts;
    let curve = budget_curve(&art.hash, &out.records);
    for m in METRICS {
        let mut csv = String::from("budget,folds,mean,std\n");
        for p in &curve.points {
            csv.push_str(&format!("{},{},{},{}\n", p.budget, p.folds, p.mean[m], p.std[m]));
        }
        write_atomic(&art.file(&format!("curve-{m}"), "csv"), csv.as_bytes())?;
    }
    write_atomic(
        &art.file("curve", "json"),
        (serde_json::to_string_pretty(&curve)? + "\n").as_bytes(),
    )?;
    Ok((out, curve))
}

/// Runs every theory oracle, writes `verify-<hash>.json` under `root` and
/// fails with a verification error when any check fails.
pub fn cmd_verify(opts: &VerificationOptions, root: &Path) -> Result<(VerificationReport, PathBuf)> {
    let hash = config_hash(opts)?;
    let dir = root.join(&hash);
    create_dir(&dir)?;
    let report = run_verification(opts)?;
    let path = dir.join(format!("verify-{hash}.json"));
    write_atomic(&path, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    Ok((report, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: String,
    pub higher_is_better: bool,
    pub table: RankTable,
    pub average_ranks: Vec<f64>,
    /// Absent with a single dataset.
    pub friedman: Option<FriedmanResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub metrics: Vec<MetricStats>,
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    method: String,
    dataset: String,
    rl: f64,
    hl: f64,
    ce: f64,
    micro_f1: f64,
}

#[derive(Debug, Deserialize)]
struct ResultRow {
    dataset: String,
    rl: f64,
    hl: f64,
    ce: f64,
    micro_f1: f64,
}

/// `(method, dataset) → [rl, hl, ce, micro_f1]` sums and counts, keeping
/// first-seen order of methods and datasets.
#[derive(Default)]
struct Grid {
    methods: Vec<String>,
    datasets: Vec<String>,
    cells: BTreeMap<(usize, usize), ([f64; 4], usize)>,
}

impl Grid {
    fn add(&mut self, method: &str, dataset: &str, v: [f64; 4]) {
        let index = |list: &mut Vec<String>, key: &str| match list.iter().position(|m| m == key) {
            Some(i) => i,
            None => {
                list.push(key.to_string());
                list.len() - 1
            }
        };
        let key = (index(&mut self.methods, method), index(&mut self.datasets, dataset));
        let cell = self.cells.entry(key).or_insert(([0.0; 4], 0));
        for (s, x) in cell.0.iter_mut().zip(v) {
            *s += x;
        }
        cell.1 += 1;
    }
}

fn read_stats_input(path: &Path, grid: &mut Grid) -> Result<()> {
    let parse_err = |line: usize, e: &dyn std::fmt::Display| PmlError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(0, &e))?;
    let headers = reader.headers().map_err(|e| parse_err(1, &e))?.clone();
    let summary = headers.iter().any(|h| h == "method");
    let needed: &[&str] = if summary {
        &["method", "dataset", "rl", "hl", "ce", "micro_f1"]
    } else {
        &["dataset", "rl", "hl", "ce", "micro_f1"]
    };
    if let Some(missing) = needed.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(parse_err(1, &format!("missing column `{missing}`")));
    }
    let method = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| parse_err(i + 2, &e))?;
        if summary {
            let r: SummaryRow = row.deserialize(Some(&headers)).map_err(|e| parse_err(i + 2, &e))?;
            grid.add(&r.method, &r.dataset, [r.rl, r.hl, r.ce, r.micro_f1]);
        } else {
            let r: ResultRow = row.deserialize(Some(&headers)).map_err(|e| parse_err(i + 2, &e))?;
            grid.add(&method, &r.dataset, [r.rl, r.hl, r.ce, r.micro_f1]);
        }
    }
    Ok(())
}

/// Mid-rank tables and Friedman/Iman–Davenport tests per metric.
///
/// Each input is either a summary CSV (`method,dataset,rl,hl,ce,micro_f1`)
/// or a results CSV whose file stem names the method; repeated cells are
/// averaged.
pub fn stats_from_files(inputs: &[PathBuf]) -> Result<StatsReport> {
    let mut grid = Grid::default();
    for p in inputs {
        read_stats_input(p, &mut grid)?;
    }
    if grid.methods.len() < 2 {
        return Err(PmlError::Config("k ≥ 2 required".into()));
    }
    let (k, n) = (grid.methods.len(), grid.datasets.len());
    let mut metrics = Vec::with_capacity(METRICS.len());
    for (mi, m) in METRICS.iter().enumerate() {
        let mut values = Array2::zeros((n, k));
        for d in 0..n {
            for j in 0..k {
                let (sum, count) = grid.cells.get(&(j, d)).ok_or_else(|| {
                    PmlError::InvalidData(format!(
                        "missing cell: method `{}` on dataset `{}`",
                        grid.methods[j], grid.datasets[d]
                    ))
                })?;
                values[[d, j]] = sum[mi] / *count as f64;
            }
        }
        let table = RankTable::from_values(grid.methods.clone(), grid.datasets.clone(), &values, higher_is_better(m))?;
        let average_ranks = table.average_ranks();
        let friedman = if n >= 2 {
            Some(friedman_from_average_ranks(&average_ranks, n)?)
        } else {
            None
        };
        metrics.push(MetricStats {
            metric: m.to_string(),
            higher_is_better: higher_is_better(m),
            table,
            average_ranks,
            friedman,
        });
    }
    Ok(StatsReport {
        methods: grid.methods,
        datasets: grid.datasets,
        metrics,
    })
}

/// [`stats_from_files`] plus `stats-<hash>.json` and one rank CSV per
/// metric, stamped with a hash of the input bytes.
pub fn cmd_stats(inputs: &[PathBuf], root: &Path) -> Result<(StatsReport, PathBuf)> {
    let report = stats_from_files(inputs)?;
    let mut hasher = Sha256::new();
    for p in inputs {
        let bytes = std::fs::read(p).map_err(|e| PmlError::io(format!("reading {}", p.display()), e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    let hash = hex::encode(&hasher.finalize()[..6]);
    let dir = root.join(&hash);
    create_dir(&dir)?;
    for m in &report.metrics {
        let mut csv = String::from("dataset");
        for name in &report.methods {
            csv.push_str(&format!(",{name}"));
        }
        csv.push('\n');
        for (d, row) in report.datasets.iter().zip(m.table.ranks.rows()) {
            csv.push_str(d);
            for r in row {
                csv.push_str(&format!(",{r}"));
            }
            csv.push('\n');
        }
        csv.push_str("average");
        for r in &m.average_ranks {
            csv.push_str(&format!(",{r}"));
        }
        csv.push('\n');
        write_atomic(&dir.join(format!("ranks-{}-{hash}.csv", m.metric)), csv.as_bytes())?;
    }
    let path = dir.join(format!("stats-{hash}.json"));
    write_atomic(&path, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    Ok((report, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub input: PathBuf,
    pub format: DataFormat,
    pub rate: f64,
    pub seed: u64,
}

/// Writes a copy of the dataset with injected false-positive candidates.
pub fn cmd_noise_inject(cfg: &NoiseConfig, output: Option<&Path>, root: &Path) -> Result<PathBuf> {
    let ds = load_dataset(&cfg.input, cfg.format)?;
    let noisy = inject_candidate_noise(&ds, cfg.rate, seed::derive(cfg.seed, "noise-inject"))?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let hash = config_hash(cfg)?;
            let dir = root.join(&hash);
            create_dir(&dir)?;
            let ext = match cfg.format {
                DataFormat::Csv => "csv",
                DataFormat::SparseLibfmt => "txt",
            };
            dir.join(format!("noisy-{hash}.{ext}"))
        }
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.partial"));
    save_dataset(&noisy, &tmp, cfg.format)?;
    std::fs::rename(&tmp, &path).map_err(|e| PmlError::io(format!("renaming into {}", path.display()), e))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub data: DataSource,
    /// Candidate noise injected first when the data carries truth-only candidates.
    pub noise_rate: f64,
    pub encoder: EncoderConfig,
    pub stage1: Stage1Config,
    /// Export from these weights instead of training.
    pub checkpoint: Option<PathBuf>,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Stage-1 pseudo labels for every row of a standardized dataset, from a
/// checkpoint or from a fresh Stage-1 run on all rows.
pub fn cmd_export_pseudo(cfg: &ExportConfig) -> Result<(PseudoTargets, PathBuf)> {
    cfg.stage1.validate()?;
    let hash = config_hash(&ExportConfig {
        output_dir: None,
        ..cfg.clone()
    })?;
    let mut ds = cfg.data.load()?;
    if ds.candidates_from_truth() && cfg.noise_rate > 0.0 {
        ds = inject_candidate_noise(&ds, cfg.noise_rate, seed::derive(cfg.master_seed, "export/noise"))?;
    }
    let (ds, _) = standardize_features(&ds)?;
    let stage1 = Stage1Config {
        seed: seed::derive(cfg.master_seed, "export/stage1"),
        ..cfg.stage1.clone()
    };
    let (targets, epochs, last) = match &cfg.checkpoint {
        Some(path) => {
            let (store, _) = ParameterStore::load_checkpoint(path)?;
            if store.n_features() != ds.n_features() || store.n_labels() != ds.n_labels() {
                return Err(PmlError::Dimension {
                    expected: store.n_features() + store.n_labels(),
                    actual: ds.n_features() + ds.n_labels(),
                    context: "checkpoint against dataset",
                });
            }
            (crate::stage1::export_pseudo_labels(&store, &ds, &stage1, 0)?, 0, None)
        }
        None => {
            let enc = EncoderConfig {
                seed: seed::derive(cfg.master_seed, "export/encoder"),
                ..cfg.encoder.clone()
            };
            let store = encoder::ParameterStore::new(&enc, ds.n_features(), ds.n_labels())?;
            let mut trainer = Stage1Trainer::new(store, stage1.clone())?;
            trainer.train(&ds)?;
            let last = trainer.history.last().cloned();
            (trainer.export(&ds)?, trainer.epochs_done(), last)
        }
    };
    let dir = cfg.output_dir.clone().unwrap_or_else(default_output_root).join(&hash);
    create_dir(&dir)?;
    let path = dir.join(format!("pseudo-{hash}.csv"));
    let sidecar = PseudoSidecar {
        config_hash: hash.clone(),
        mode: stage1.mode,
        epochs,
        final_disc_loss: last.as_ref().map(|e| e.mean_disc_loss),
        final_reward: last.as_ref().map(|e| e.mean_reward),
    };
    let ids: Vec<usize> = (0..ds.n_instances()).collect();
    staged(&dir, "export", |stage| {
        write_pseudo_labels(stage.join(path.file_name().expect("file name")), &targets, &ids, &sidecar)
    })?;
    Ok((targets, path))
}
