//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the lines are always shown.
//! Pass criterion numbers as arguments, or set `ACCEPTANCE_ONLY=1,2,5`, to run
//! a subset; set `ACCEPTANCE_DIR` to keep the benchmark outputs.

use std::f64::consts::{E, PI};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use tailflow::bench::{desk_train, run_grid, without_wall_clock, BenchConfig, Cell, CellData, Method, RunRecord};
use tailflow::checkpoint::load_model;
use tailflow_core::datagen::{Copula, DatasetSpec};
use tailflow_core::evt::{
    default_tail_grid, gating_k, hill_mask, verify_breiman, verify_log_score, verify_potter, verify_power_lemma, TailLaw,
};
use tailflow_core::flow::{
    ddim_sample, euler_sample, initial_noise, latent_nll, EtaMode, GaussianPathField, NllConfig, Schedule, TransformMode,
};
use tailflow_core::metrics::{evaluate, EvalConfig};
use tailflow_core::nn::{NetConfig, VelocityNet};
use tailflow_core::rng::{seeded, standard_normals};
use tailflow_core::transforms::{Family, TransformSpec};
use tailflow_core::Matrix;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

struct Context {
    dir: PathBuf,
}

type Criterion = (usize, &'static str, fn(&Context) -> Outcome);

fn main() -> ExitCode {
    let mut only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if let Ok(list) = std::env::var("ACCEPTANCE_ONLY") {
        only.extend(list.split(',').filter_map(|s| s.trim().parse::<usize>().ok()));
    }
    let keep = std::env::var_os("ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let ctx = Context { dir: keep.unwrap_or_else(|| tmp.path().to_path_buf()) };

    let criteria: [Criterion; 10] = [
        (1, "transform round-trip", transform_round_trip),
        (2, "gradient and JVP correctness", gradients),
        (3, "theory suite", theory_suite),
        (4, "analytic-path validation", analytic_path),
        (5, "Hill gating reproduction", hill_gating),
        (6, "Student-t benchmark, desk scale", hickling_benchmark),
        (7, "main benchmark cell, desk scale", main_cell),
        (8, "clamp inertness", clamp_inertness),
        (9, "solver-step ablation", solver_steps),
        (10, "bench determinism", determinism),
    ];
    let mut all = true;
    for (n, name, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run(&ctx);
        all &= o.passed;
        println!(
            "{} criterion {n} ({name}): {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn transform_round_trip(_: &Context) -> Outcome {
    let m = 4001;
    let mut xs = Vec::with_capacity(2 * m);
    for i in 0..m {
        let x = 10f64.powf(-8.0 + 14.0 * i as f64 / (m - 1) as f64);
        xs.extend([x, -x]);
    }
    let data = Matrix::from_vec(xs.len(), 1, xs.clone()).unwrap();
    let mut worst: f64 = 0.0;
    let mut specs = vec![TransformSpec::identity(1)];
    for family in [Family::SoftLog, Family::Arcsinh] {
        for s2 in [0.0, 0.5, 1.0, 2.0] {
            specs.push(TransformSpec::with_scales(family, vec![s2], 4.0).unwrap());
        }
    }
    for spec in &specs {
        let back = spec.apply_inverse(&spec.apply_forward(&data).unwrap(), f64::INFINITY).unwrap();
        for (a, b) in xs.iter().zip(back.as_slice()) {
            worst = worst.max((a - b).abs() / a.abs());
        }
    }
    outcome(worst <= 1e-12, format!("max relative error {worst:.2e} over {} points × {} transforms (≤ 1e-12)", xs.len(), specs.len()))
}

fn random_net(seed: u64) -> VelocityNet {
    let mut net = VelocityNet::new(NetConfig { d: 3, width: 8, depth: 2, embed_pairs: 4 }, seed);
    let mut rng = seeded(seed ^ 0x5eed);
    let draws = standard_normals(&mut rng, net.params().len());
    for (p, z) in net.params_mut().iter_mut().zip(draws) {
        *p = 0.5 * z;
    }
    net
}

fn random_batch(seed: u64) -> (Matrix, Vec<f64>, Matrix, Matrix) {
    let mut rng = seeded(seed);
    let x = Matrix::from_vec(5, 3, standard_normals(&mut rng, 15)).unwrap();
    let t = (0..5).map(|i| (i as f64 + 0.5) / 5.0).collect();
    let u = Matrix::from_vec(5, 3, standard_normals(&mut rng, 15)).unwrap();
    let v = Matrix::from_vec(5, 3, standard_normals(&mut rng, 15)).unwrap();
    (x, t, u, v)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn gradients(_: &Context) -> Outcome {
    let (mut grad_worst, mut jvp_worst, mut adjoint_worst) = (0f64, 0f64, 0f64);
    for draw in 0..50 {
        let mut net = random_net(1000 + draw);
        let (x, t, target, v) = random_batch(2000 + draw);
        let (_, grad) = net.loss_and_grad(&x, &t, &target).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..grad.len())
            .map(|k| {
                let orig = net.params()[k];
                net.params_mut()[k] = orig + h;
                let lp = net.loss(&x, &t, &target).unwrap();
                net.params_mut()[k] = orig - h;
                let lm = net.loss(&x, &t, &target).unwrap();
                net.params_mut()[k] = orig;
                (lp - lm) / (2.0 * h)
            })
            .collect();
        grad_worst = grad_worst.max(rel_err(&grad, &fd));

        let jv = net.jvp(&x, &t, &v).unwrap();
        let h = 1e-5;
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.add_scaled(h, &v);
        xm.add_scaled(-h, &v);
        let (fp, fm) = (net.forward(&xp, &t).unwrap(), net.forward(&xm, &t).unwrap());
        let fd: Vec<f64> = fp.as_slice().iter().zip(fm.as_slice()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        jvp_worst = jvp_worst.max(rel_err(jv.as_slice(), &fd));

        let jtu = net.vjp(&x, &t, &target).unwrap();
        let lhs: f64 = target.as_slice().iter().zip(jv.as_slice()).map(|(a, b)| a * b).sum();
        let rhs: f64 = jtu.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        adjoint_worst = adjoint_worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    outcome(
        grad_worst <= 1e-4 && jvp_worst <= 1e-4 && adjoint_worst <= 1e-10,
        format!(
            "gradient rel err {grad_worst:.2e}, JVP rel err {jvp_worst:.2e} (≤ 1e-4); ⟨u, Jv⟩ − ⟨Jᵀu, v⟩ {adjoint_worst:.2e} (≤ 1e-10); 50 draws"
        ),
    )
}

fn theory_suite(_: &Context) -> Outcome {
    let mut reports = Vec::new();
    reports.push(verify_power_lemma(0.5, 2.0, 100_000, 1, 0.10).unwrap());
    reports.push(verify_power_lemma(0.5, 0.5, 100_000, 2, 0.10).unwrap());
    reports.push(verify_breiman(2.0, 0.5, 1_000_000, 3, 0.15).unwrap());
    reports.extend(verify_potter(2.0, 0.3, &default_tail_grid(), 1_000_000, 4));
    reports.push(verify_log_score(TailLaw::SoftLogPareto { gamma: 0.5 }, &default_tail_grid(), 1_000_000, 5, 0.3));
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.to_string()).collect();
    let pick = |prefix: &str| {
        reports.iter().filter(|r| r.metric.starts_with(prefix)).map(|r| format!("{:.3} (theory {:.3})", r.estimate, r.theoretical)).collect::<Vec<_>>().join("/")
    };
    outcome(
        failed.is_empty(),
        format!(
            "power lemma {} ±10%; Breiman {} ±15%; Potter on z∈[3,8] {} ±0.3; log-score slope {} ±0.3{}",
            pick("power_lemma"),
            pick("breiman"),
            pick("potter"),
            pick("log_score"),
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join("; ")) }
        ),
    )
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
}

fn analytic_path(_: &Context) -> Outcome {
    let sigma = 2.0;
    let field = GaussianPathField { schedule: Schedule::Linear, variances: vec![sigma * sigma] };
    let x = euler_sample(&field, &initial_noise(100_000, 1, 1), 100).unwrap();
    let (mean, var) = moments(x.as_slice());
    let euler_ok = mean.abs() <= 0.02 && (var - 4.0).abs() <= 0.05 * 4.0;

    let unit = GaussianPathField { schedule: Schedule::Linear, variances: vec![1.0] };
    let (nll, _) = latent_nll(&unit, &initial_noise(20_000, 1, 2), &NllConfig::default()).unwrap();
    let nll = nll.iter().sum::<f64>() / nll.len() as f64;
    let entropy = 0.5 * (2.0 * PI * E).ln();
    let nll_ok = (nll - entropy).abs() <= 0.01;

    let s = 1.5;
    let vp = GaussianPathField { schedule: Schedule::VpTrig, variances: vec![s * s] };
    let y = ddim_sample(&vp, Schedule::VpTrig, &initial_noise(100_000, 1, 3), 500, EtaMode::Zero, 4).unwrap();
    let (_, dvar) = moments(y.as_slice());
    let ddim_ok = (dvar - s * s).abs() <= 0.02 * s * s;
    outcome(
        euler_ok && nll_ok && ddim_ok,
        format!(
            "Euler K=100 mean {mean:.4} (±0.02), var {var:.4} (4 ± 5%); NLL/dim {nll:.4} ({entropy:.4} ± 0.01); DDIM η=0 K=500 var {dvar:.4} ({:.4} ± 2%)",
            s * s
        ),
    )
}

fn hill_gating(_: &Context) -> Outcome {
    let want: Vec<bool> = (0..20).map(|j| j < 14).collect();
    let mut misses = Vec::new();
    for seed in 0..20 {
        let spec = DatasetSpec::benchmark(Copula::Gumbel { tau: 0.5 }, 20, 2.0, (10_000, 0, 0), seed);
        let data = spec.generate().unwrap().train.data;
        for alpha_max in [3.0, 4.0, 5.0] {
            if hill_mask(&data, alpha_max, gating_k(data.rows())).unwrap() != want {
                misses.push(format!("seed {seed} α_max {alpha_max}"));
            }
        }
    }
    outcome(misses.is_empty(), format!("{} of 60 (seed, α_max) masks select exactly the 14 Pareto coordinates{}", 60 - misses.len(), if misses.is_empty() { String::new() } else { format!("; misses: {}", misses.join(", ")) }))
}

fn grid(name: &str, data: CellData, sizes: (usize, usize, usize)) -> BenchConfig {
    BenchConfig {
        name: name.into(),
        cells: vec![Cell { data, n_train: sizes.0, n_val: sizes.1, n_test: sizes.2 }],
        methods: vec![Method::new(TransformMode::Adaptive)],
        replications: 5,
        base_seed: 0,
        train: desk_train(),
        eval: EvalConfig::default(),
        save_checkpoints: true,
    }
}

fn main_grid() -> BenchConfig {
    let data = CellData::Benchmark { copula: Copula::Gumbel { tau: 0.5 }, d: 10, alpha: 2.0, pareto_fraction: 0.7 };
    grid("main-cell", data, (5_000, 1_000, 5_000))
}

/// Run (or resume) the main-cell grid in `dir`.
fn main_records(dir: &Path, jobs: usize) -> Vec<RunRecord> {
    run_grid(&main_grid(), dir, jobs, &|_| {}).expect("main-cell grid")
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
}

fn hickling_benchmark(ctx: &Context) -> Outcome {
    let cfg = grid("student-t", CellData::Hickling { d: 10, nu: 2.0 }, (2_000, 1_000, 2_000));
    let records = run_grid(&cfg, &ctx.dir.join("student-t"), 1, &|_| {}).expect("student-t grid");
    let w1: Vec<f64> = records.iter().map(|r| r.metrics.w1_all).collect();
    let mean = w1.iter().sum::<f64>() / w1.len() as f64;
    let worst = w1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(mean <= 0.35 && worst <= 0.5, format!("W₁ per replication [{}], mean {mean:.3} (≤ 0.35), max {worst:.3} (≤ 0.5)", fmt_list(&w1)))
}

fn main_cell(ctx: &Context) -> Outcome {
    let records = main_records(&ctx.dir.join("main"), 1);
    let w1p: Vec<f64> = records.iter().map(|r| r.metrics.w1_pareto.unwrap_or(f64::INFINITY)).collect();
    let median = tailflow::bench::median(&w1p).unwrap();
    let severe = records.iter().filter(|r| r.metrics.severe).count();
    let over_one = w1p.iter().filter(|&&w| w > 1.0).count();
    outcome(
        median <= 0.31 && severe == 0 && over_one == 0,
        format!("W₁ᴾ per replication [{}], median {median:.3} (≤ 0.31), severe {severe}, W₁ᴾ > 1 in {over_one} runs", fmt_list(&w1p)),
    )
}

fn main_model(ctx: &Context) -> (tailflow_core::flow::TrainedModel, tailflow_core::datagen::Splits) {
    let dir = ctx.dir.join("main");
    main_records(&dir, 1);
    let cfg = main_grid();
    let (cell, method) = (&cfg.cells[0], &cfg.methods[0]);
    let model = load_model(dir.join("checkpoints").join(format!("{}.tfck", cfg.run_id(cell, method, 0)))).expect("checkpoint");
    let splits = cell.generate(cfg.cell_seed(cell, 0)).expect("data");
    (model, splits)
}

fn clamp_inertness(ctx: &Context) -> Outcome {
    let (model, splits) = main_model(ctx);
    let n = splits.test.n();
    let latent = model.sample_latent(n, 100, 77).unwrap();
    let peak = latent.as_slice().iter().fold(0f64, |m, v| m.max(v.abs()));
    let clamped = model.sample(n, 100, 10.0, 77).unwrap();
    let free = model.sample(n, 100, f64::INFINITY, 77).unwrap();
    let identical = clamped.data.as_slice().iter().zip(free.data.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(identical, format!("{n} samples at c=10 and c=∞ bitwise identical: {identical} (largest transformed magnitude {peak:.2})"))
}

fn solver_steps(ctx: &Context) -> Outcome {
    let (model, splits) = main_model(ctx);
    let n = splits.test.n();
    let w1p = |steps| {
        let gen = model.sample(n, steps, f64::INFINITY, 91).unwrap();
        evaluate(&gen, &splits.test, &EvalConfig::default()).unwrap().w1_pareto.unwrap()
    };
    let (coarse, fine) = (w1p(50), w1p(500));
    let change = (coarse - fine).abs() / fine;
    outcome(change <= 0.10, format!("W₁ᴾ {coarse:.4} at K=50 vs {fine:.4} at K=500 with shared noise: {:.1}% (≤ 10%)", 100.0 * change))
}

fn determinism(ctx: &Context) -> Outcome {
    let first = ctx.dir.join("main");
    main_records(&first, 1);
    let second = ctx.dir.join("main-rerun");
    let _ = std::fs::remove_dir_all(&second);
    main_records(&second, 2);
    let read = |d: &Path| std::fs::read_to_string(d.join("runs.csv")).expect("runs.csv");
    let (a, b) = (read(&first), read(&second));
    let same = without_wall_clock(&a) == without_wall_clock(&b);
    let summary_same = std::fs::read(first.join("summary.csv")).ok() == std::fs::read(second.join("summary.csv")).ok();
    outcome(
        same && summary_same,
        format!("fresh rerun with 2 workers: runs.csv identical without wall-clock: {same}; summary.csv identical: {summary_same} ({} rows)", a.lines().count() - 1),
    )
}
