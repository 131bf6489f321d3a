//! Experiment grids: seeded replications of (dataset cell × method), run in a
//! worker pool, persisted incrementally and aggregated to medians.
//!
//! Output directory layout:
//!
//! - `runs.csv`: one row per (cell, method, replication), in grid order;
//! - `summary.csv`: per (cell, method) medians and failure rates;
//! - `w1p_table.csv`: median Pareto-margin W₁, cells × methods;
//! - `manifest.json`: the expanded grid and its fingerprint;
//! - `checkpoints/<run_id>.tfck`: trained models (optional).
//!
//! Every random stream is derived from the base seed and the textual ids of
//! the cell, method and replication, so records do not depend on the worker
//! count or on the order in which runs finish. A rerun over an existing
//! directory keeps the records whose run id is still part of the grid and
//! only trains the missing ones.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;
use tailflow_core::datagen::{fingerprint_str, sample_hickling, Copula, DatasetSpec, Margin, MarginLabel, Splits};
use tailflow_core::flow::{train, Schedule, TrainedModel, TransformMode};
use tailflow_core::metrics::{evaluate, fmt_f64, EvalConfig, MetricsReport};
use tailflow_core::rng::derive_seed;

use crate::checkpoint::save_model;
use crate::config::{EvalSection, TrainSection};
use crate::io::write_file;
use crate::{Error, Result};

/// The data recipe of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellData {
    /// Copula with a leading share of symmetrized-Pareto margins, the rest Gaussian.
    Benchmark { copula: Copula, d: usize, alpha: f64, pareto_fraction: f64 },
    /// Student-t columns plus a last column equal to the second-to-last plus noise.
    Hickling { d: usize, nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub data: CellData,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Cell {
    pub fn d(&self) -> usize {
        match self.data {
            CellData::Benchmark { d, .. } | CellData::Hickling { d, .. } => d,
        }
    }

    /// Stable identifier; also the seed label of the cell.
    pub fn id(&self) -> String {
        let data = match self.data {
            CellData::Benchmark { copula, d, alpha, pareto_fraction } => {
                let c = match copula {
                    Copula::Gaussian { tau } => format!("gaussian(tau={tau})"),
                    Copula::Gumbel { tau } => format!("gumbel(tau={tau})"),
                    Copula::HuslerReiss { rho } => format!("husler_reiss(rho={rho})"),
                    Copula::Iid => "iid".to_string(),
                };
                let frac = if pareto_fraction == 0.7 { String::new() } else { format!("/pareto={pareto_fraction}") };
                format!("{c}/d={d}/alpha={alpha}{frac}")
            }
            CellData::Hickling { d, nu } => format!("hickling(nu={nu})/d={d}"),
        };
        format!("{data}/n={}+{}+{}", self.n_train, self.n_val, self.n_test)
    }

    /// Draw the train / validation / test splits for one replication.
    pub fn generate(&self, seed: u64) -> Result<Splits> {
        match self.data {
            CellData::Benchmark { copula, d, alpha, pareto_fraction } => {
                let share = pareto_fraction * d as f64;
                // Round before taking the ceiling so that 0.7·10 counts as 7.
                let p = if (share - share.round()).abs() < 1e-9 { share.round() } else { share.ceil() } as usize;
                let margins =
                    (0..d).map(|j| if j < p { Margin::SymmetrizedPareto { alpha } } else { Margin::Gaussian }).collect();
                let spec = DatasetSpec {
                    copula,
                    d,
                    margins,
                    n_train: self.n_train,
                    n_val: self.n_val,
                    n_test: self.n_test,
                    seed,
                };
                Ok(spec.generate()?)
            }
            CellData::Hickling { d, nu } => {
                let all = sample_hickling(d, nu, self.n_train + self.n_val + self.n_test, seed)?;
                let mut parts = all.split(&[self.n_train, self.n_val, self.n_test])?.into_iter();
                let mut next = || parts.next().expect("three parts");
                Ok(Splits { train: next(), val: next(), test: next() })
            }
        }
    }
}

/// One generative method: transform mode, schedule and sampler settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Method {
    pub mode: TransformMode,
    pub schedule: Schedule,
    /// Euler steps.
    pub steps: usize,
    /// Clamp bound in transformed space (`+∞` disables clamping).
    pub clamp: f64,
}

impl Method {
    pub fn new(mode: TransformMode) -> Self {
        Method { mode, schedule: Schedule::Linear, steps: 100, clamp: f64::INFINITY }
    }

    pub fn id(&self) -> String {
        format!("{}/{}/K={}/c={}", self.mode.name(), self.schedule.name(), self.steps, fmt_f64(self.clamp))
    }
}

/// A fully expanded experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub name: String,
    pub cells: Vec<Cell>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    pub train: TrainSection,
    /// Metric settings; the metric seed is derived per run.
    pub eval: EvalConfig,
    pub save_checkpoints: bool,
}

/// Training settings used by the desk preset: a smaller network than the
/// paper's so that a replication trains in minutes on one core.
pub fn desk_train() -> TrainSection {
    TrainSection { epochs: 1500, patience: 100, width: 128, depth: 3, embed_pairs: 32, ..TrainSection::default() }
}

impl BenchConfig {
    /// Gumbel τ = 0.5, d ∈ {10, 20}, α ∈ {1.5, 2}, 5 replications, the four
    /// in-repo methods, 5 000 / 1 000 / 5 000 rows.
    pub fn desk() -> Self {
        let mut cells = Vec::new();
        for d in [10, 20] {
            for alpha in [1.5, 2.0] {
                cells.push(Cell {
                    data: CellData::Benchmark { copula: Copula::Gumbel { tau: 0.5 }, d, alpha, pareto_fraction: 0.7 },
                    n_train: 5_000,
                    n_val: 1_000,
                    n_test: 5_000,
                });
            }
        }
        BenchConfig {
            name: "desk".into(),
            cells,
            methods: TransformMode::ALL.into_iter().map(Method::new).collect(),
            replications: 5,
            base_seed: 0,
            train: desk_train(),
            eval: EvalConfig::default(),
            save_checkpoints: true,
        }
    }

    /// The full 144-cell grid: three copulas at three dependence strengths,
    /// d ∈ {10, 20, 50, 100}, α ∈ {1.5, 1.75, 2, 2.5}, 20 replications,
    /// 10 000 / 5 000 / 20 000 rows, paper-size network.
    pub fn paper() -> Self {
        let mut copulas = Vec::new();
        for tau in [0.25, 0.5, 0.75] {
            copulas.push(Copula::Gaussian { tau });
            copulas.push(Copula::Gumbel { tau });
        }
        copulas.extend([0.1, 0.5, 0.9].map(|rho| Copula::HuslerReiss { rho }));
        let mut cells = Vec::new();
        for copula in copulas {
            for d in [10, 20, 50, 100] {
                for alpha in [1.5, 1.75, 2.0, 2.5] {
                    cells.push(Cell {
                        data: CellData::Benchmark { copula, d, alpha, pareto_fraction: 0.7 },
                        n_train: 10_000,
                        n_val: 5_000,
                        n_test: 20_000,
                    });
                }
            }
        }
        BenchConfig {
            name: "paper".into(),
            cells,
            methods: TransformMode::ALL.into_iter().map(Method::new).collect(),
            replications: 20,
            base_seed: 0,
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            save_checkpoints: true,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    /// Data seed of replication `rep` of `cell`, shared by all methods.
    pub fn cell_seed(&self, cell: &Cell, rep: usize) -> u64 {
        derive_seed(self.base_seed, &[fingerprint_str(&cell.id()), rep as u64])
    }

    /// Everything that determines a record, hashed.
    pub fn run_id(&self, cell: &Cell, method: &Method, rep: usize) -> String {
        let key = format!(
            "{}|{}|rep={}|base={}|train={}|eval={},{}",
            cell.id(),
            method.id(),
            rep,
            self.base_seed,
            serde_json::to_string(&self.train).expect("train settings serialize"),
            self.eval.projections,
            self.eval.energy_cap
        );
        format!("{:016x}", fingerprint_str(&key))
    }

    /// Fingerprint of the whole grid.
    pub fn fingerprint(&self) -> String {
        let mut ids = Vec::new();
        for cell in &self.cells {
            for method in &self.methods {
                for rep in 0..self.replications {
                    ids.push(self.run_id(cell, method, rep));
                }
            }
        }
        format!("{:016x}", fingerprint_str(&ids.join(",")))
    }

    pub fn total_runs(&self) -> usize {
        self.cells.len() * self.methods.len() * self.replications
    }
}

/// Outcome of one (cell, method, replication).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub cell: String,
    pub method: String,
    pub replication: usize,
    /// Data seed of the replication.
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
    /// Why the run produced no usable samples, if it did not.
    pub reason: Option<String>,
    pub wall_seconds: f64,
}

const RECORD_PREFIX: [&str; 7] = ["run_id", "cell", "method", "replication", "seed", "epochs", "best_epoch"];
const RECORD_SUFFIX: [&str; 2] = ["reason", "wall_seconds"];

/// Header of `runs.csv`.
pub fn runs_header() -> Vec<&'static str> {
    RECORD_PREFIX.iter().chain(MetricsReport::CSV_HEADER.iter()).chain(RECORD_SUFFIX.iter()).copied().collect()
}

impl RunRecord {
    pub fn csv_fields(&self) -> Vec<String> {
        let mut f = vec![
            self.run_id.clone(),
            self.cell.clone(),
            self.method.clone(),
            self.replication.to_string(),
            self.seed.to_string(),
            self.epochs.to_string(),
            self.best_epoch.to_string(),
        ];
        f.extend(self.metrics.csv_fields());
        f.push(self.reason.clone().unwrap_or_default());
        f.push(format!("{:.3}", self.wall_seconds));
        f
    }

    pub fn from_csv_fields(fields: &[&str]) -> std::result::Result<Self, String> {
        if fields.len() != runs_header().len() {
            return Err(format!("expected {} fields, got {}", runs_header().len(), fields.len()));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| format!("`{s}`: {e}"));
        let m = RECORD_PREFIX.len();
        let k = MetricsReport::CSV_HEADER.len();
        Ok(RunRecord {
            run_id: fields[0].to_string(),
            cell: fields[1].to_string(),
            method: fields[2].to_string(),
            replication: int(fields[3])? as usize,
            seed: int(fields[4])?,
            epochs: int(fields[5])? as usize,
            best_epoch: int(fields[6])? as usize,
            metrics: MetricsReport::from_csv_fields(&fields[m..m + k]).map_err(|e| e.to_string())?,
            reason: Some(fields[m + k].to_string()).filter(|s| !s.is_empty()),
            wall_seconds: fields[m + k + 1].parse().map_err(|e| format!("wall_seconds: {e}"))?,
        })
    }
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Render records as a `runs.csv` document.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = csv_line(&runs_header().iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for r in records {
        out.push_str(&csv_line(&r.csv_fields()));
    }
    out
}

/// Read `runs.csv`; rows that do not parse (for example a line cut short by
/// an interrupted run) are skipped.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let Ok(row) = row else { continue };
        let fields: Vec<&str> = row.iter().collect();
        if let Ok(r) = RunRecord::from_csv_fields(&fields) {
            out.push(r);
        }
    }
    Ok(out)
}

/// Run one method on one replication's data. Failures become records.
fn run_one(
    cfg: &BenchConfig,
    cell: &Cell,
    data: &std::result::Result<Splits, String>,
    method: &Method,
    rep: usize,
    out: &Path,
) -> Result<RunRecord> {
    let start = Instant::now();
    let cell_seed = cfg.cell_seed(cell, rep);
    let run_seed = derive_seed(cell_seed, &[fingerprint_str(&method.id())]);
    let run_id = cfg.run_id(cell, method, rep);
    let labels = || match data {
        Ok(s) => s.test.labels.clone(),
        Err(_) => vec![MarginLabel::Other; cell.d()],
    };
    let mut record = RunRecord {
        run_id: run_id.clone(),
        cell: cell.id(),
        method: method.id(),
        replication: rep,
        seed: cell_seed,
        epochs: 0,
        best_epoch: 0,
        metrics: MetricsReport::diverged(&labels()),
        reason: None,
        wall_seconds: 0.0,
    };
    let attempt = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| -> std::result::Result<_, String> {
        let splits = data.as_ref().map_err(|e| format!("data: {e}"))?;
        let mut tc = cfg.train.to_train_config();
        tc.mode = method.mode;
        tc.schedule = method.schedule;
        tc.seed = derive_seed(run_seed, &[1]);
        if splits.val.n() == 0 {
            tc.patience = None;
        }
        let model = train(&splits.train, Some(&splits.val), &tc).map_err(|e| format!("train: {e}"))?;
        let sample = model.sample(splits.test.n(), method.steps, method.clamp, derive_seed(run_seed, &[2]));
        Ok((model, sample))
    }));
    let model: Option<TrainedModel> = match attempt {
        Err(panic) => {
            let msg = panic.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| panic.downcast_ref::<String>().cloned());
            record.reason = Some(format!("panic: {}", msg.unwrap_or_default()));
            None
        }
        Ok(Err(reason)) => {
            record.reason = Some(reason);
            None
        }
        Ok(Ok((model, sample))) => {
            record.epochs = model.log.len();
            record.best_epoch = model.best_epoch;
            match (sample, data) {
                (Err(e), _) => record.reason = Some(format!("sample: {e}")),
                (Ok(gen), Ok(splits)) => {
                    let ec = EvalConfig { seed: derive_seed(run_seed, &[3]), ..cfg.eval };
                    match evaluate(&gen, &splits.test, &ec) {
                        Ok(m) => {
                            if m.diverged {
                                record.reason = Some("non-finite samples".into());
                            }
                            record.metrics = m;
                        }
                        Err(e) => record.reason = Some(format!("evaluate: {e}")),
                    }
                }
                (Ok(_), Err(_)) => unreachable!("training needs data"),
            }
            Some(model)
        }
    };
    if let (true, Some(model)) = (cfg.save_checkpoints, &model) {
        save_model(out.join("checkpoints").join(format!("{run_id}.tfck")), model)?;
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    name: &'a str,
    fingerprint: String,
    base_seed: u64,
    replications: usize,
    cells: Vec<String>,
    methods: Vec<String>,
    train: &'a TrainSection,
    eval: EvalSection,
    total_runs: usize,
    completed_runs: usize,
    complete: bool,
    version: &'static str,
}

fn write_manifest(cfg: &BenchConfig, out: &Path, completed: usize) -> Result<()> {
    let m = Manifest {
        name: &cfg.name,
        fingerprint: cfg.fingerprint(),
        base_seed: cfg.base_seed,
        replications: cfg.replications,
        cells: cfg.cells.iter().map(Cell::id).collect(),
        methods: cfg.methods.iter().map(Method::id).collect(),
        train: &cfg.train,
        eval: EvalSection { projections: cfg.eval.projections, energy_cap: cfg.eval.energy_cap },
        total_runs: cfg.total_runs(),
        completed_runs: completed,
        complete: completed == cfg.total_runs(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_file(&out.join("manifest.json"), json.as_bytes())
}

/// Run every missing (cell, method, replication) of the grid with `jobs`
/// workers, persisting each record as it completes, then write the canonical
/// `runs.csv`, `summary.csv`, `w1p_table.csv` and `manifest.json`. Returns
/// all records of the grid in grid order.
pub fn run_grid(cfg: &BenchConfig, out: &Path, jobs: usize, progress: &(dyn Fn(&RunRecord) + Sync)) -> Result<Vec<RunRecord>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let runs_path = out.join("runs.csv");
    let mut done: HashMap<String, RunRecord> = HashMap::new();
    if runs_path.exists() {
        for r in read_runs(&runs_path)? {
            done.insert(r.run_id.clone(), r);
        }
    }
    // Work units share one generated dataset across the methods of a replication.
    let mut units = Vec::new();
    for (c, cell) in cfg.cells.iter().enumerate() {
        for rep in 0..cfg.replications {
            let pending: Vec<usize> =
                (0..cfg.methods.len()).filter(|&m| !done.contains_key(&cfg.run_id(cell, &cfg.methods[m], rep))).collect();
            if !pending.is_empty() {
                units.push((c, rep, pending));
            }
        }
    }
    let completed_before = cfg.total_runs() - units.iter().map(|u| u.2.len()).sum::<usize>();
    write_manifest(cfg, out, completed_before)?;
    if !runs_path.exists() {
        write_file(&runs_path, runs_csv(&[]).as_bytes())?;
    }
    let mut file = OpenOptions::new().append(true).open(&runs_path).map_err(|e| Error::io(&runs_path, e))?;

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<RunRecord>>();
    let mut failure = None;
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(units.len().max(1)) {
            let tx = tx.clone();
            let (units, next, stop) = (&units, &next, &stop);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= units.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let (c, rep, ref pending) = units[i];
                let cell = &cfg.cells[c];
                let data = cell.generate(cfg.cell_seed(cell, rep)).map_err(|e| e.to_string());
                for &m in pending {
                    if tx.send(run_one(cfg, cell, &data, &cfg.methods[m], rep, out)).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
        for result in rx {
            match result {
                Ok(record) => {
                    let appended = file.write_all(csv_line(&record.csv_fields()).as_bytes()).and_then(|_| file.flush());
                    if let Err(e) = appended {
                        failure.get_or_insert(Error::io(&runs_path, e));
                        stop.store(true, Ordering::SeqCst);
                    }
                    progress(&record);
                    done.insert(record.run_id.clone(), record);
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    stop.store(true, Ordering::SeqCst);
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let mut records = Vec::with_capacity(cfg.total_runs());
    for cell in &cfg.cells {
        for method in &cfg.methods {
            for rep in 0..cfg.replications {
                let id = cfg.run_id(cell, method, rep);
                records.push(done.remove(&id).expect("every run finished"));
            }
        }
    }
    write_file(&runs_path, runs_csv(&records).as_bytes())?;
    let summary = aggregate(&records);
    write_file(&out.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    write_file(&out.join("w1p_table.csv"), w1p_table(&summary).as_bytes())?;
    write_manifest(cfg, out, records.len())?;
    Ok(records)
}

/// Names of the real-valued metrics that are aggregated.
pub const SUMMARY_METRICS: [&str; 12] = [
    "w1_all",
    "w1_pareto",
    "w1_gauss",
    "hill_err",
    "var99_rel",
    "cvar99_rel",
    "q995_rel",
    "q999_rel",
    "ake",
    "angular_w2",
    "sliced_w",
    "energy",
];

fn metric_values(m: &MetricsReport) -> [Option<f64>; 12] {
    [
        Some(m.w1_all),
        m.w1_pareto,
        m.w1_gauss,
        m.hill_err,
        m.var99_rel,
        m.cvar99_rel,
        m.q995_rel,
        m.q999_rel,
        m.ake,
        m.angular_w2,
        Some(m.sliced_w),
        Some(m.energy),
    ]
}

/// Median with `+∞` (and NaN) ordered last; the middle order statistic for
/// odd counts, the mean of the two middle ones for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Medians and failure rates for one (cell, method).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: String,
    pub method: String,
    pub runs: usize,
    /// Median of each entry of [`SUMMARY_METRICS`] over the runs that report it.
    pub medians: Vec<Option<f64>>,
    pub severe_rate: f64,
    pub catastrophic_rate: f64,
    pub diverged_rate: f64,
}

impl SummaryRow {
    pub fn median_of(&self, metric: &str) -> Option<f64> {
        SUMMARY_METRICS.iter().position(|&m| m == metric).and_then(|i| self.medians[i])
    }
}

/// Group records by (cell, method) in order of first appearance.
pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.cell.clone(), r.method.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let n = rs.len() as f64;
            let medians = (0..SUMMARY_METRICS.len())
                .map(|i| median(&rs.iter().filter_map(|r| metric_values(&r.metrics)[i]).collect::<Vec<_>>()))
                .collect();
            let rate = |f: fn(&MetricsReport) -> bool| rs.iter().filter(|r| f(&r.metrics)).count() as f64 / n;
            SummaryRow {
                cell: key.0,
                method: key.1,
                runs: rs.len(),
                medians,
                severe_rate: rate(|m| m.severe),
                catastrophic_rate: rate(|m| m.catastrophic),
                diverged_rate: rate(|m| m.diverged),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut header: Vec<String> = vec!["cell".into(), "method".into(), "runs".into()];
    header.extend(SUMMARY_METRICS.iter().map(|m| format!("{m}_median")));
    header.extend(["severe_rate", "catastrophic_rate", "diverged_rate"].map(String::from));
    let mut out = csv_line(&header);
    for r in rows {
        let mut f = vec![r.cell.clone(), r.method.clone(), r.runs.to_string()];
        f.extend(r.medians.iter().map(|m| m.map_or_else(|| "NA".to_string(), fmt_f64)));
        f.extend([r.severe_rate, r.catastrophic_rate, r.diverged_rate].map(fmt_f64));
        out.push_str(&csv_line(&f));
    }
    out
}

/// Median Pareto-margin W₁ with cells as rows and methods as columns.
pub fn w1p_table(rows: &[SummaryRow]) -> String {
    let mut cells: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut header = vec!["cell".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    let mut out = csv_line(&header);
    for c in &cells {
        let mut f = vec![c.to_string()];
        for m in &methods {
            let v = rows.iter().find(|r| r.cell == *c && r.method == *m).and_then(|r| r.median_of("w1_pareto"));
            f.push(v.map_or_else(|| "NA".to_string(), fmt_f64));
        }
        out.push_str(&csv_line(&f));
    }
    out
}

/// `runs.csv` text with the wall-clock column removed, for reproducibility checks.
pub fn without_wall_clock(runs_csv: &str) -> String {
    runs_csv
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(reps: usize) -> BenchConfig {
        BenchConfig {
            name: "tiny".into(),
            cells: vec![Cell {
                data: CellData::Benchmark { copula: Copula::Gumbel { tau: 0.5 }, d: 3, alpha: 2.0, pareto_fraction: 0.7 },
                n_train: 120,
                n_val: 40,
                n_test: 80,
            }],
            methods: vec![Method::new(TransformMode::Adaptive), Method { steps: 10, ..Method::new(TransformMode::Identity) }],
            replications: reps,
            base_seed: 3,
            train: TrainSection { epochs: 15, patience: 5, width: 8, depth: 2, embed_pairs: 4, ..TrainSection::default() },
            eval: EvalConfig { projections: 16, ..EvalConfig::default() },
            save_checkpoints: false,
        }
    }

    fn record(cell: &str, method: &str, w1p: f64, severe: bool) -> RunRecord {
        let labels = [MarginLabel::Pareto, MarginLabel::Gaussian];
        let mut metrics = MetricsReport::diverged(&labels);
        metrics.w1_pareto = Some(w1p);
        metrics.severe = severe;
        metrics.catastrophic = w1p > 1.0 && w1p.is_finite();
        metrics.diverged = false;
        RunRecord {
            run_id: format!("{cell}{method}{w1p}"),
            cell: cell.into(),
            method: method.into(),
            replication: 0,
            seed: 0,
            epochs: 1,
            best_epoch: 1,
            metrics,
            reason: None,
            wall_seconds: 0.5,
        }
    }

    #[test]
    fn median_orders_infinity_last() {
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[5.0, f64::INFINITY, 1.0]), Some(5.0));
        assert_eq!(median(&[f64::INFINITY, 2.0, f64::INFINITY]), Some(f64::INFINITY));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn aggregate_groups_and_counts_failures() {
        let rs = vec![
            record("a", "m", 0.2, false),
            record("a", "m", 0.4, true),
            record("a", "m", f64::INFINITY, true),
            record("b", "m", 0.1, false),
        ];
        let rows = aggregate(&rs);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].median_of("w1_pareto"), Some(0.4));
        assert!((rows[0].severe_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rows[0].catastrophic_rate, 0.0);
        assert_eq!(rows[1].median_of("w1_pareto"), Some(0.1));
        assert_eq!(rows[1].median_of("w1_gauss"), Some(f64::INFINITY));
        let single = aggregate(&rs[3..]);
        assert_eq!(single[0].median_of("w1_all"), Some(rs[3].metrics.w1_all));
        let table = w1p_table(&rows);
        assert_eq!(table.lines().nth(1), Some("a,0.4"));
    }

    #[test]
    fn records_round_trip_through_csv() {
        let mut r = record("gumbel(tau=0.5)/d=2", "adaptive/linear/K=100/c=inf", 0.25, false);
        r.reason = Some("train: diverged, at epoch 3".into());
        let text = runs_csv(std::slice::from_ref(&r));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.csv");
        fs::write(&p, format!("{text}truncated,row\n")).unwrap();
        let back = read_runs(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].csv_fields(), r.csv_fields());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let cfg = tiny(3);
        let cell = &cfg.cells[0];
        let seeds: Vec<u64> = (0..3).map(|r| cfg.cell_seed(cell, r)).collect();
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
        assert_eq!(seeds, (0..3).map(|r| tiny(3).cell_seed(cell, r)).collect::<Vec<_>>());
        let ids: Vec<String> = cfg.methods.iter().map(|m| cfg.run_id(cell, m, 0)).collect();
        assert_ne!(ids[0], ids[1]);
    }

    #[test]
    fn grid_is_deterministic_resumable_and_worker_independent() {
        let cfg = tiny(2);
        let a = tempfile::tempdir().unwrap();
        let ra = run_grid(&cfg, a.path(), 1, &|_| {}).unwrap();
        assert_eq!(ra.len(), 4);
        assert_ne!(ra[0].seed, ra[1].seed);
        let runs_a = fs::read_to_string(a.path().join("runs.csv")).unwrap();

        let b = tempfile::tempdir().unwrap();
        run_grid(&cfg, b.path(), 3, &|_| {}).unwrap();
        let runs_b = fs::read_to_string(b.path().join("runs.csv")).unwrap();
        assert_eq!(without_wall_clock(&runs_a), without_wall_clock(&runs_b));

        // Drop one record and rerun: only that run trains again.
        let kept: Vec<&str> = runs_b.lines().take(4).collect();
        fs::write(b.path().join("runs.csv"), kept.join("\n") + "\n").unwrap();
        let count = AtomicUsize::new(0);
        run_grid(&cfg, b.path(), 2, &|_| {
            count.fetch_add(1, Ordering::SeqCst);
        })
        .unwrap();
        assert_eq!(count.load(Ordering::SeqCst), 1);
        let resumed = fs::read_to_string(b.path().join("runs.csv")).unwrap();
        assert_eq!(without_wall_clock(&resumed), without_wall_clock(&runs_a));
        for f in ["summary.csv", "w1p_table.csv", "manifest.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn failures_become_records() {
        // Plain flow matching on α = 0.3 margins blows up without crashing the grid.
        let mut cfg = tiny(1);
        cfg.cells[0].data = CellData::Benchmark { copula: Copula::Gumbel { tau: 0.5 }, d: 3, alpha: 0.3, pareto_fraction: 1.0 };
        cfg.methods = vec![Method::new(TransformMode::Identity)];
        cfg.save_checkpoints = true;
        let dir = tempfile::tempdir().unwrap();
        let rs = run_grid(&cfg, dir.path(), 1, &|_| {}).unwrap();
        assert!(rs[0].metrics.severe && rs[0].metrics.catastrophic, "{:?}", rs[0]);
        assert!(dir.path().join("checkpoints").join(format!("{}.tfck", rs[0].run_id)).exists());

        // A recipe that cannot be sampled is recorded with its reason.
        cfg.cells.push(Cell {
            data: CellData::Benchmark { copula: Copula::Gumbel { tau: 1.5 }, d: 3, alpha: 2.0, pareto_fraction: 0.7 },
            ..cfg.cells[0]
        });
        let rs = run_grid(&cfg, dir.path(), 1, &|_| {}).unwrap();
        assert_eq!(rs.len(), 2);
        assert!(rs[1].reason.as_deref().unwrap().starts_with("data:"), "{:?}", rs[1].reason);
        assert!(rs[1].metrics.diverged);
    }

    #[test]
    fn presets_have_the_documented_shape() {
        let desk = BenchConfig::desk();
        assert_eq!((desk.cells.len(), desk.methods.len(), desk.replications), (4, 4, 5));
        let paper = BenchConfig::paper();
        assert_eq!((paper.cells.len(), paper.replications), (144, 20));
        assert_eq!(paper.train.width, 256);
        assert!(BenchConfig::preset("nope").is_none());
    }
}
