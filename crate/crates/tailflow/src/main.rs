use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use tailflow::bench::{desk_train, BenchConfig, Cell, CellData};
use tailflow::checkpoint::{load_model, save_model};
use tailflow::config::{load_config, TrainSection};
use tailflow::io::{load_sample, save_sample};
use tailflow::verify::verify_all;
use tailflow_core::datagen::Copula;
use tailflow_core::flow::{train, EtaMode, NllConfig, Schedule, TransformMode};
use tailflow_core::metrics::{evaluate, fmt_f64, EvalConfig, MetricsReport};

/// Log-space flow matching for heavy-tailed data.
#[derive(Parser)]
#[command(name = "tailflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write train/val/test CSVs.
    Generate(GenerateArgs),
    /// Train a model on a CSV sample and write a checkpoint.
    Train(TrainArgs),
    /// Draw samples from a trained model.
    Sample(SampleArgs),
    /// Compare a generated sample with a reference sample.
    Evaluate(EvaluateArgs),
    /// Estimate the negative log-likelihood of data under a model.
    Nll(NllArgs),
    /// Run an experiment grid.
    Bench(BenchArgs),
    /// Run the Monte Carlo theory and oracle checks.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CopulaArg {
    Gaussian,
    Gumbel,
    HuslerReiss,
    Iid,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "gumbel")]
    copula: CopulaArg,
    /// Kendall's τ (Gaussian, Gumbel) or ρ (Hüsler–Reiss).
    #[arg(long, default_value_t = 0.5)]
    dep: f64,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Tail index of the Pareto margins.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Generate the Student-t benchmark with this many degrees of freedom instead.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_val: usize,
    #[arg(long, default_value_t = 5000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    Uniform,
    Arcsinh,
    Identity,
}

impl From<ModeArg> for TransformMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Adaptive => TransformMode::Adaptive,
            ModeArg::Uniform => TransformMode::Uniform,
            ModeArg::Arcsinh => TransformMode::Arcsinh,
            ModeArg::Identity => TransformMode::Identity,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Linear,
    VpTrig,
    VpPoly,
    Quadratic,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Linear => Schedule::Linear,
            ScheduleArg::VpTrig => Schedule::VpTrig,
            ScheduleArg::VpPoly => Schedule::VpPoly,
            ScheduleArg::Quadratic => Schedule::Quadratic,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV (with header; labels from its sidecar when present).
    #[arg(long)]
    data: PathBuf,
    /// Validation CSV for early stopping.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// TOML file whose `[train]` table sets the training options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale network instead of the paper-size one.
    #[arg(long)]
    desk: bool,
    #[arg(long, value_enum, default_value = "adaptive")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "linear")]
    schedule: ScheduleArg,
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience (0 disables).
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    embed_pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Euler,
    Ddim,
}

#[derive(Clone, Copy, ValueEnum)]
enum EtaArg {
    Zero,
    Ddpm,
    Max,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Clamp bound in transformed space; `inf` disables clamping.
    #[arg(long, default_value_t = f64::INFINITY)]
    clamp: f64,
    #[arg(long, value_enum, default_value = "euler")]
    sampler: SamplerArg,
    /// Noise level of the DDIM sampler (variance-preserving schedules only).
    #[arg(long, value_enum, default_value = "zero")]
    eta: EtaArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Generated sample CSV.
    #[arg(long)]
    gen: PathBuf,
    /// Reference (held-out) sample CSV; its sidecar supplies the margin labels.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// CSV file to append the metrics row to.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NllArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Built-in grid: `desk` or `paper`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML grid definition.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (defaults to `runs/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => generate(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Sample(a) => sample(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::Nll(a) => nll(a)?,
        Command::Bench(a) => bench(a)?,
        Command::Verify(a) => {
            let report = verify_all(a.seed);
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let data = match a.nu {
        Some(nu) => CellData::Hickling { d: a.d, nu },
        None => {
            let copula = match a.copula {
                CopulaArg::Gaussian => Copula::Gaussian { tau: a.dep },
                CopulaArg::Gumbel => Copula::Gumbel { tau: a.dep },
                CopulaArg::HuslerReiss => Copula::HuslerReiss { rho: a.dep },
                CopulaArg::Iid => Copula::Iid,
            };
            CellData::Benchmark { copula, d: a.d, alpha: a.alpha, pareto_fraction: 0.7 }
        }
    };
    let cell = Cell { data, n_train: a.n_train, n_val: a.n_val, n_test: a.n_test };
    let splits = cell.generate(a.seed)?;
    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let path = a.out.join(format!("{name}.csv"));
        save_sample(&path, part, Some(a.seed))?;
        println!("wrote {} ({}×{})", path.display(), part.n(), part.d());
    }
    Ok(())
}

#[derive(Deserialize)]
struct TrainFile {
    #[serde(default)]
    train: Option<TrainSection>,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut settings = if a.desk { desk_train() } else { TrainSection::default() };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: TrainFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(t) = file.train {
            settings = t;
        }
    }
    settings.epochs = a.epochs.unwrap_or(settings.epochs);
    settings.patience = a.patience.unwrap_or(settings.patience);
    settings.lr = a.lr.unwrap_or(settings.lr);
    settings.width = a.width.unwrap_or(settings.width);
    settings.depth = a.depth.unwrap_or(settings.depth);
    settings.embed_pairs = a.embed_pairs.unwrap_or(settings.embed_pairs);

    let (data, _) = load_sample(&a.data)?;
    let val = a.val.as_ref().map(load_sample).transpose()?.map(|v| v.0);
    let mut cfg = settings.to_train_config();
    cfg.mode = a.mode.into();
    cfg.schedule = a.schedule.into();
    cfg.seed = a.seed;
    if val.is_none() && cfg.patience.is_some() {
        eprintln!("note: no validation data, training for the full {} epochs", cfg.max_epochs);
        cfg.patience = None;
    }
    let model = train(&data, val.as_ref(), &cfg)?;
    save_model(&a.out, &model)?;
    println!("{}", model.describe());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let out = match a.sampler {
        SamplerArg::Euler => model.sample(a.n, a.steps, a.clamp, a.seed)?,
        SamplerArg::Ddim => {
            let eta = match a.eta {
                EtaArg::Zero => EtaMode::Zero,
                EtaArg::Ddpm => EtaMode::DdpmPosterior,
                EtaArg::Max => EtaMode::MaxNoise,
            };
            model.ddim_sample(a.n, a.steps, eta, a.clamp, a.seed)?
        }
    };
    save_sample(&a.out, &out, Some(a.seed))?;
    println!("wrote {} ({}×{})", a.out.display(), out.n(), out.d());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let (gen, _) = load_sample(&a.gen)?;
    let (reference, _) = load_sample(&a.reference)?;
    let report = evaluate(&gen, &reference, &EvalConfig { seed: a.seed, ..EvalConfig::default() })?;
    let fields = report.csv_fields();
    for (name, value) in MetricsReport::CSV_HEADER.iter().zip(&fields) {
        println!("{name} = {value}");
    }
    if let Some(path) = &a.results {
        append_row(path, &a.gen, &a.reference, &fields)?;
    }
    Ok(())
}

fn append_row(path: &Path, gen: &Path, reference: &Path, fields: &[String]) -> Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if fresh {
        let mut header = vec!["gen", "ref"];
        header.extend(MetricsReport::CSV_HEADER);
        w.write_record(&header)?;
    }
    let mut row = vec![gen.display().to_string(), reference.display().to_string()];
    row.extend(fields.iter().cloned());
    w.write_record(&row)?;
    file.write_all(&w.into_inner()?)?;
    Ok(())
}

fn nll(a: NllArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (data, _) = load_sample(&a.data)?;
    let est = model.nll(&data.data, &NllConfig { probes: a.probes, seed: a.seed, ..NllConfig::default() })?;
    println!("nll_per_dim = {}", fmt_f64(est.nll_per_dim));
    println!("rows = {}", est.per_point.len());
    println!("hutchinson_probes = {}", est.hutchinson_probes);
    println!("atol = {} rtol = {}", est.atol, est.rtol);
    println!("solver_steps = {}", est.steps);
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), None) => BenchConfig::preset(p).with_context(|| format!("unknown preset `{p}` (desk, paper)"))?,
        (None, Some(path)) => load_config(path)?,
        (None, None) => BenchConfig::desk(),
        (Some(_), Some(_)) => bail!("--preset and --config are exclusive"),
    };
    if let Some(seed) = a.seed {
        cfg.base_seed = seed;
    }
    let out = a.out.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let total = cfg.total_runs();
    println!("{}: {} cells × {} methods × {} replications = {total} runs → {}", cfg.name, cfg.cells.len(), cfg.methods.len(), cfg.replications, out.display());
    let done = std::sync::atomic::AtomicUsize::new(0);
    let records = tailflow::bench::run_grid(&cfg, &out, jobs, &|r| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        let w1p = r.metrics.w1_pareto.map_or_else(|| "NA".into(), fmt_f64);
        let note = r.reason.as_deref().map(|s| format!(" [{s}]")).unwrap_or_default();
        println!("[{k}] {} {} rep {}: w1_all={} w1_pareto={w1p} epochs={} {:.1}s{note}", r.cell, r.method, r.replication, fmt_f64(r.metrics.w1_all), r.epochs, r.wall_seconds);
    })?;
    let summary = tailflow::bench::aggregate(&records);
    for row in &summary {
        let w1p = row.median_of("w1_pareto").map_or_else(|| "NA".into(), fmt_f64);
        println!("{} {}: median w1_pareto={w1p} severe={:.2} catastrophic={:.2}", row.cell, row.method, row.severe_rate, row.catastrophic_rate);
    }
    Ok(())
}
