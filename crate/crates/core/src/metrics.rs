//! Two-sample evaluation metrics: marginal Wasserstein distances, tail risk
//! errors, rank dependence, extremal angular structure and energy distance.
//!
//! Every metric that subsamples or draws projections takes an explicit seed,
//! so reports are a pure function of `(gen, ref, seed)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::datagen::{MarginLabel, SampleMatrix};
use crate::evt::{gating_k, hill};
use crate::linalg::sorted;
use crate::rng::{self, Rng};
use crate::{Error, Matrix, Result};

/// Default number of random directions for the sliced distances.
pub const DEFAULT_PROJECTIONS: usize = 512;
/// Row cap for pairwise Kendall τ.
pub const KENDALL_CAP: usize = 5_000;
/// Row cap for the quadratic-cost energy distance.
pub const ENERGY_CAP: usize = 2_000;
/// Overall `W₁` above which a run counts as a severe divergence.
pub const SEVERE_W1: f64 = 1e3;
/// `W₁` over Pareto coordinates above which a run counts as a catastrophic failure.
pub const CATASTROPHIC_W1: f64 = 1.0;

fn subsample(values: &[f64], m: usize, rng: &mut Rng) -> Vec<f64> {
    if values.len() <= m {
        return values.to_vec();
    }
    rng::sample_indices(rng, values.len(), m).into_iter().map(|i| values[i]).collect()
}

fn equal_size_sorted(a: &[f64], b: &[f64], seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty);
    }
    let m = a.len().min(b.len());
    let mut rng = rng::seeded(seed);
    let a = subsample(a, m, &mut rng);
    let b = subsample(b, m, &mut rng);
    Ok((sorted(&a), sorted(&b)))
}

/// Empirical 1-Wasserstein distance: the larger sample is subsampled without
/// replacement to the size of the smaller, then sorted values are matched.
pub fn w1_1d(a: &[f64], b: &[f64], seed: u64) -> Result<f64> {
    let (a, b) = equal_size_sorted(a, b, seed)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Empirical 2-Wasserstein distance with the same matching as [`w1_1d`].
pub fn w2_1d(a: &[f64], b: &[f64], seed: u64) -> Result<f64> {
    let (a, b) = equal_size_sorted(a, b, seed)?;
    Ok(libm::sqrt(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64))
}

/// Linear-interpolation quantile of ascending `sorted` values (the usual
/// "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn var_cvar(sorted: &[f64], level: f64) -> (f64, Option<f64>) {
    let var = quantile_sorted(sorted, level);
    let tail: Vec<f64> = sorted.iter().copied().filter(|&v| v > var).collect();
    let cvar = if tail.is_empty() { None } else { Some(tail.iter().sum::<f64>() / tail.len() as f64) };
    (var, cvar)
}

fn relative_error(gen: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    Ok((gen - reference).abs() / reference.abs())
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", format!("must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Upper-tail value at risk and conditional value at risk of the signed values,
/// as relative errors `|gen − ref| / |ref|`. CVaR is the mean of the values
/// strictly above the VaR.
pub fn risk_metrics(gen: &[f64], reference: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::Empty);
    }
    let (rv, rc) = var_cvar(&sorted(reference), level);
    if rv == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    let rc = rc.ok_or_else(|| Error::invalid("reference", format!("no values above the {level} quantile")))?;
    let (gv, gc) = var_cvar(&sorted(gen), level);
    // A generated sample with a flat upper tail has no exceedances: its CVaR is its VaR.
    let gc = gc.unwrap_or(gv);
    Ok((relative_error(gv, rv)?, relative_error(gc, rc)?))
}

/// Relative error of the upper `p`-quantile of the signed values.
pub fn extreme_quantile_err(gen: &[f64], reference: &[f64], p: f64) -> Result<f64> {
    check_level(p)?;
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::Empty);
    }
    relative_error(quantile_sorted(&sorted(gen), p), quantile_sorted(&sorted(reference), p))
}

// Number of swaps performed by a stable merge sort of `v` (pairs i < j with
// v[i] > v[j]).
fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], &mut buf[..mid]) + count_inversions(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

// Σ t(t−1)/2 over runs of equal values in a sorted sequence.
fn tied_pairs(values: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<f64> = None;
    for v in values {
        if prev == Some(v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Kendall's τ-b in `O(n log n)` (Knight's merge-sort algorithm). Returns 0 if
/// either input is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let mut pairs: Vec<(f64, f64)> = a[..n].iter().copied().zip(b[..n].iter().copied()).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tied_pairs(pairs.iter().map(|p| p.0));
    let mut joint = 0u64;
    let mut run = 0u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            joint += run * (run + 1) / 2;
            run = 0;
        }
    }
    joint += run * (run + 1) / 2;
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = alloc::vec![0.0; n];
    let swaps = count_inversions(&mut ys, &mut buf);
    let n2 = tied_pairs(ys.iter().copied());
    let denom = libm::sqrt((n0 - n1) as f64 * (n0 - n2) as f64);
    if denom == 0.0 {
        return 0.0;
    }
    let concordant_minus_discordant = n0 as f64 - n1 as f64 - n2 as f64 + joint as f64 - 2.0 * swaps as f64;
    (concordant_minus_discordant / denom).clamp(-1.0, 1.0)
}

// Subsample two samples to `m` rows each. Samples of equal size share the row
// indices, so a sample compared with itself stays identical.
fn paired_subsample(a: &Matrix, b: &Matrix, m: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = rng::seeded(seed);
    let mut pick = |x: &Matrix, idx: Option<&[usize]>| -> (Matrix, Option<Vec<usize>>) {
        if x.rows() == m {
            return (x.clone(), None);
        }
        match idx {
            Some(i) => (x.select_rows(i), None),
            None => {
                let i = rng::sample_indices(&mut rng, x.rows(), m);
                (x.select_rows(&i), Some(i))
            }
        }
    };
    let (sa, ia) = pick(a, None);
    let shared = if a.rows() == b.rows() { ia.as_deref() } else { None };
    let (sb, _) = pick(b, shared);
    (sa, sb)
}

/// Absolute Kendall error: mean over coordinate pairs of `|τ_gen − τ_ref|`,
/// both samples subsampled to a common row count of at most [`KENDALL_CAP`].
pub fn ake(gen: &Matrix, reference: &Matrix, seed: u64) -> Result<f64> {
    let d = reference.cols();
    if gen.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: gen.cols() });
    }
    if d < 2 {
        return Err(Error::invalid("d", "AKE needs at least two coordinates"));
    }
    let m = gen.rows().min(reference.rows()).min(KENDALL_CAP);
    if m < 2 {
        return Err(Error::Empty);
    }
    let (g, r) = paired_subsample(gen, reference, m, seed);
    let (gc, rc): (Vec<Vec<f64>>, Vec<Vec<f64>>) = ((0..d).map(|j| g.column(j)).collect(), (0..d).map(|j| r.column(j)).collect());
    let mut total = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            total += (kendall_tau(&gc[i], &gc[j]) - kendall_tau(&rc[i], &rc[j])).abs();
        }
    }
    Ok(total / (d * (d - 1) / 2) as f64)
}

fn random_directions(d: usize, count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn project(x: &Matrix, dir: &[f64]) -> Vec<f64> {
    (0..x.rows()).map(|i| x.row(i).iter().zip(dir).map(|(a, b)| a * b).sum()).collect()
}

/// Sliced 2-Wasserstein distance `sqrt(mean_p W₂²(⟨gen, u_p⟩, ⟨ref, u_p⟩))`
/// over `projections` seeded uniform directions. In one dimension every
/// direction is `±1` and this is the plain 1D `W₂`.
pub fn sliced_wasserstein(gen: &Matrix, reference: &Matrix, projections: usize, seed: u64) -> Result<f64> {
    let d = reference.cols();
    if gen.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: gen.cols() });
    }
    if gen.rows() == 0 || reference.rows() == 0 || d == 0 || projections == 0 {
        return Err(Error::Empty);
    }
    let mut rng = rng::seeded(seed);
    let dirs = random_directions(d, projections, &mut rng);
    let mut total = 0.0;
    for (p, dir) in dirs.iter().enumerate() {
        let w = w2_1d(&project(gen, dir), &project(reference, dir), rng::derive_seed(seed, &[p as u64]))?;
        total += w * w;
    }
    Ok(libm::sqrt(total / projections as f64))
}

fn top_directions(x: &Matrix) -> Result<Matrix> {
    let n = x.rows();
    let keep = (libm::ceil(libm::sqrt(n as f64)) as usize).min(n);
    let norms: Vec<f64> = (0..n).map(|i| libm::sqrt(x.row(i).iter().map(|v| v * v).sum())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut out = x.select_rows(&order[..keep]);
    for (r, &i) in order[..keep].iter().enumerate() {
        if !(norms[i] > 0.0) || !norms[i].is_finite() {
            return Err(Error::invalid("sample", "extreme rows must have finite nonzero norm"));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= norms[i]);
    }
    Ok(out)
}

/// Sliced 2-Wasserstein distance between the empirical angular measures: the
/// `⌈√n⌉` rows of largest Euclidean norm of each sample, projected to the unit
/// sphere.
pub fn angular_w2(gen: &Matrix, reference: &Matrix, projections: usize, seed: u64) -> Result<f64> {
    if gen.rows() < 4 || reference.rows() < 4 {
        return Err(Error::invalid("n", "angular measure needs at least 4 rows"));
    }
    sliced_wasserstein(&top_directions(gen)?, &top_directions(reference)?, projections, seed)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

// Mean of ‖x_i − x_j‖ over all ordered pairs, the diagonal included.
fn mean_within(x: &Matrix) -> f64 {
    let n = x.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += distance(x.row(i), x.row(j));
        }
    }
    2.0 * total / (n * n) as f64
}

/// Energy distance `2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖` between the empirical
/// measures, each sample subsampled to at most `cap` rows.
pub fn energy_distance(gen: &Matrix, reference: &Matrix, cap: usize, seed: u64) -> Result<f64> {
    let d = reference.cols();
    if gen.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: gen.cols() });
    }
    if gen.rows() < 2 || reference.rows() < 2 || cap < 2 {
        return Err(Error::invalid("n", "energy distance needs at least 2 rows per sample"));
    }
    let (x, y) = if gen.rows() == reference.rows() {
        paired_subsample(gen, reference, cap.min(gen.rows()), seed)
    } else {
        let mut rng = rng::seeded(seed);
        let mut pick = |x: &Matrix| {
            if x.rows() <= cap {
                x.clone()
            } else {
                x.select_rows(&rng::sample_indices(&mut rng, x.rows(), cap))
            }
        };
        (pick(gen), pick(reference))
    };
    let mut cross = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            cross += distance(x.row(i), y.row(j));
        }
    }
    cross /= (x.rows() * y.rows()) as f64;
    // V-statistics: the estimate is the energy distance between the two
    // empirical measures, hence exactly nonnegative and zero for equal samples.
    Ok((2.0 * cross - mean_within(&x) - mean_within(&y)).max(0.0))
}

/// Settings for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub seed: u64,
    pub projections: usize,
    pub energy_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seed: 0, projections: DEFAULT_PROJECTIONS, energy_cap: ENERGY_CAP }
    }
}

/// Metrics of one generated sample against a reference sample.
///
/// Averages over an empty coordinate set (for example `w1_pareto` when no
/// reference coordinate is Pareto) are `None`, never zero. Tail metrics
/// (`hill_err`, risk and quantile errors) are averaged over the coordinates
/// whose reference label is not Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub w1_all: f64,
    pub w1_pareto: Option<f64>,
    pub w1_gauss: Option<f64>,
    pub hill_err: Option<f64>,
    pub var99_rel: Option<f64>,
    pub cvar99_rel: Option<f64>,
    pub q995_rel: Option<f64>,
    pub q999_rel: Option<f64>,
    pub ake: Option<f64>,
    pub angular_w2: Option<f64>,
    pub sliced_w: f64,
    pub energy: f64,
    /// The generated sample contained non-finite values.
    pub diverged: bool,
    /// `w1_all > 10³`.
    pub severe: bool,
    /// `w1_pareto > 1`.
    pub catastrophic: bool,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 15] = [
        "w1_all", "w1_pareto", "w1_gauss", "hill_err", "var99_rel", "cvar99_rel", "q995_rel", "q999_rel", "ake",
        "angular_w2", "sliced_w", "energy", "diverged", "severe", "catastrophic",
    ];

    /// Report for a run that produced no usable sample: every distance is
    /// `+∞` and all flags are set.
    pub fn diverged(labels: &[MarginLabel]) -> Self {
        let has = |l: MarginLabel| labels.contains(&l);
        let inf = Some(f64::INFINITY);
        let tail = labels.iter().any(|&l| l != MarginLabel::Gaussian);
        MetricsReport {
            w1_all: f64::INFINITY,
            w1_pareto: if has(MarginLabel::Pareto) { inf } else { None },
            w1_gauss: if has(MarginLabel::Gaussian) { inf } else { None },
            hill_err: if tail { inf } else { None },
            var99_rel: if tail { inf } else { None },
            cvar99_rel: if tail { inf } else { None },
            q995_rel: if tail { inf } else { None },
            q999_rel: if tail { inf } else { None },
            ake: if labels.len() >= 2 { inf } else { None },
            angular_w2: inf,
            sliced_w: f64::INFINITY,
            energy: f64::INFINITY,
            diverged: true,
            severe: true,
            catastrophic: has(MarginLabel::Pareto),
        }
    }

    /// Field values in [`Self::CSV_HEADER`] order; missing values are `NA`.
    pub fn csv_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(|| String::from("NA"), fmt_f64);
        let flag = |b: bool| String::from(if b { "1" } else { "0" });
        alloc::vec![
            fmt_f64(self.w1_all),
            opt(self.w1_pareto),
            opt(self.w1_gauss),
            opt(self.hill_err),
            opt(self.var99_rel),
            opt(self.cvar99_rel),
            opt(self.q995_rel),
            opt(self.q999_rel),
            opt(self.ake),
            opt(self.angular_w2),
            fmt_f64(self.sliced_w),
            fmt_f64(self.energy),
            flag(self.diverged),
            flag(self.severe),
            flag(self.catastrophic),
        ]
    }

    /// Inverse of [`Self::csv_fields`].
    pub fn from_csv_fields(fields: &[&str]) -> Result<Self> {
        if fields.len() != Self::CSV_HEADER.len() {
            return Err(Error::DimensionMismatch { expected: Self::CSV_HEADER.len(), got: fields.len() });
        }
        let num = |s: &str| crate::transforms::parse_f64("metrics", s);
        let opt = |s: &str| if s == "NA" { Ok(None) } else { num(s).map(Some) };
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(Error::invalid("metrics", format!("bad flag `{s}`"))),
        };
        Ok(MetricsReport {
            w1_all: num(fields[0])?,
            w1_pareto: opt(fields[1])?,
            w1_gauss: opt(fields[2])?,
            hill_err: opt(fields[3])?,
            var99_rel: opt(fields[4])?,
            cvar99_rel: opt(fields[5])?,
            q995_rel: opt(fields[6])?,
            q999_rel: opt(fields[7])?,
            ake: opt(fields[8])?,
            angular_w2: opt(fields[9])?,
            sliced_w: num(fields[10])?,
            energy: num(fields[11])?,
            diverged: flag(fields[12])?,
            severe: flag(fields[13])?,
            catastrophic: flag(fields[14])?,
        })
    }
}

/// Shortest text that parses back to the same `f64`, with `inf`/`-inf`/`nan`
/// spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::from("nan")
    } else if v.is_infinite() {
        String::from(if v > 0.0 { "inf" } else { "-inf" })
    } else {
        format!("{v:?}")
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

// Mean of a per-coordinate metric; a coordinate where the metric is undefined
// makes the whole average missing rather than silently dropping it.
fn mean_of(coords: &[usize], mut f: impl FnMut(usize) -> Result<f64>) -> Option<f64> {
    let mut values = Vec::with_capacity(coords.len());
    for &j in coords {
        values.push(f(j).ok()?);
    }
    mean(&values)
}

/// Full metric report of `gen` against `reference`; coordinate groups follow
/// the reference labels.
pub fn evaluate(gen: &SampleMatrix, reference: &SampleMatrix, cfg: &EvalConfig) -> Result<MetricsReport> {
    let d = reference.d();
    if gen.d() != d {
        return Err(Error::DimensionMismatch { expected: d, got: gen.d() });
    }
    if reference.labels.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: reference.labels.len() });
    }
    if gen.n() == 0 || reference.n() == 0 {
        return Err(Error::Empty);
    }
    if !reference.data.is_finite() {
        return Err(Error::NonFinite);
    }
    if !gen.data.is_finite() {
        return Ok(MetricsReport::diverged(&reference.labels));
    }
    let seed = |label: u64, j: usize| rng::derive_seed(cfg.seed, &[label, j as u64]);
    let gcols: Vec<Vec<f64>> = (0..d).map(|j| gen.data.column(j)).collect();
    let rcols: Vec<Vec<f64>> = (0..d).map(|j| reference.data.column(j)).collect();
    let mut w1 = Vec::with_capacity(d);
    for j in 0..d {
        w1.push(w1_1d(&gcols[j], &rcols[j], seed(0, j))?);
    }
    let group = |keep: &dyn Fn(MarginLabel) -> bool| -> Vec<usize> { (0..d).filter(|&j| keep(reference.labels[j])).collect() };
    let pareto = group(&|l| l == MarginLabel::Pareto);
    let gauss = group(&|l| l == MarginLabel::Gaussian);
    let tail = group(&|l| l != MarginLabel::Gaussian);
    let w1_all = mean(&w1).unwrap();
    let w1_pareto = mean_of(&pareto, |j| Ok(w1[j]));
    let w1_gauss = mean_of(&gauss, |j| Ok(w1[j]));

    let hill_err = mean_of(&tail, |j| {
        let r = hill(&rcols[j], gating_k(rcols[j].len()))?;
        let g = hill(&gcols[j], gating_k(gcols[j].len()))?;
        relative_error(g.alpha_hat, r.alpha_hat)
    });
    let risk: Vec<Option<(f64, f64)>> = tail.iter().map(|&j| risk_metrics(&gcols[j], &rcols[j], 0.99).ok()).collect();
    let (var99_rel, cvar99_rel) = if risk.iter().all(Option::is_some) && !risk.is_empty() {
        let r: Vec<(f64, f64)> = risk.into_iter().map(Option::unwrap).collect();
        (mean(&r.iter().map(|p| p.0).collect::<Vec<_>>()), mean(&r.iter().map(|p| p.1).collect::<Vec<_>>()))
    } else {
        (None, None)
    };
    let q995_rel = mean_of(&tail, |j| extreme_quantile_err(&gcols[j], &rcols[j], 0.995));
    let q999_rel = mean_of(&tail, |j| extreme_quantile_err(&gcols[j], &rcols[j], 0.999));

    let ake = if d >= 2 { Some(ake(&gen.data, &reference.data, seed(1, 0))?) } else { None };
    let angular_w2 = angular_w2(&gen.data, &reference.data, cfg.projections, seed(2, 0)).ok();
    let sliced_w = sliced_wasserstein(&gen.data, &reference.data, cfg.projections, seed(3, 0))?;
    let energy = if gen.n() >= 2 && reference.n() >= 2 {
        energy_distance(&gen.data, &reference.data, cfg.energy_cap, seed(4, 0))?
    } else {
        f64::NAN
    };
    Ok(MetricsReport {
        w1_all,
        w1_pareto,
        w1_gauss,
        hill_err,
        var99_rel,
        cvar99_rel,
        q995_rel,
        q999_rel,
        ake,
        angular_w2,
        sliced_w,
        energy,
        diverged: false,
        severe: !(w1_all <= SEVERE_W1),
        catastrophic: w1_pareto.is_some_and(|w| !(w <= CATASTROPHIC_W1)),
    })
}
