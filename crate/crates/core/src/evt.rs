//! Extreme-value primitives and Monte Carlo checks of the tail-annealing theory.
//!
//! Conventions: the shape `γ` gives `P(X > t) = t^{−1/γ}` for `t ≥ 1`; the tail
//! index is `α = 1/γ`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand_distr::{Distribution, StandardNormal};

use crate::linalg::sorted;
use crate::rng::{self, Rng};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillEstimate {
    pub alpha_hat: f64,
    pub gamma_hat: f64,
    pub k: usize,
    pub n: usize,
}

/// Default number of upper order statistics for the gating diagnostic.
pub fn gating_k(n: usize) -> usize {
    let five_percent = libm::ceil(0.05 * n as f64) as usize;
    five_percent.max(10).min(n.saturating_sub(1)).max(1)
}

/// Default number of upper order statistics for the theory checks.
pub fn theory_k(n: usize) -> usize {
    (libm::ceil(libm::sqrt(n as f64)) as usize).min(n.saturating_sub(1)).max(1)
}

/// Hill estimator on the absolute values of `sample` using the top `k` order
/// statistics: `γ̂ = (1/k) Σ_{i<k} log(|x|_(n−i) / |x|_(n−k))`.
pub fn hill(sample: &[f64], k: usize) -> Result<HillEstimate> {
    let n = sample.len();
    if k == 0 || k >= n {
        return Err(Error::invalid("k", format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let abs: Vec<f64> = sample.iter().map(|v| v.abs()).collect();
    hill_sorted(&sorted(&abs), k)
}

/// Hill estimator on values already sorted ascending (all nonnegative).
pub fn hill_sorted(sorted_abs: &[f64], k: usize) -> Result<HillEstimate> {
    let n = sorted_abs.len();
    if k == 0 || k >= n {
        return Err(Error::invalid("k", format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let positive = sorted_abs.iter().filter(|&&v| v > 0.0).count();
    if positive < k + 1 {
        return Err(Error::TooFewPositive { needed: k + 1, found: positive });
    }
    let threshold = sorted_abs[n - k - 1];
    let log_threshold = libm::log(threshold);
    let sum: f64 = sorted_abs[n - k..].iter().map(|&v| libm::log(v) - log_threshold).sum();
    let gamma_hat = sum / k as f64;
    if !(gamma_hat > 0.0) {
        return Err(Error::DegenerateTail);
    }
    Ok(HillEstimate { alpha_hat: 1.0 / gamma_hat, gamma_hat, k, n })
}

/// Hill-gated mask: `mask[j] = α̂_j ≤ alpha_max`.
pub fn hill_mask(data: &Matrix, alpha_max: f64, k: usize) -> Result<Vec<bool>> {
    (0..data.cols())
        .map(|j| hill(&data.column(j), k).map(|h| h.alpha_hat <= alpha_max))
        .collect()
}

/// Pareto law with shape `gamma`, optionally symmetrized as `S·P` with a fair
/// random sign `S` (support `|x| ≥ 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoMargin {
    pub gamma: f64,
    pub symmetrized: bool,
}

impl ParetoMargin {
    pub fn from_tail_index(alpha: f64, symmetrized: bool) -> Self {
        ParetoMargin { gamma: 1.0 / alpha, symmetrized }
    }

    pub fn tail_index(&self) -> f64 {
        1.0 / self.gamma
    }

    /// `P(X > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        if self.symmetrized {
            if t >= 1.0 {
                0.5 * libm::pow(t, -1.0 / self.gamma)
            } else if t >= -1.0 {
                0.5
            } else {
                1.0 - 0.5 * libm::pow(-t, -1.0 / self.gamma)
            }
        } else if t <= 1.0 {
            1.0
        } else {
            libm::pow(t, -1.0 / self.gamma)
        }
    }

    /// Quantile without argument checks; `p` must lie in `(0, 1)`.
    #[inline]
    pub fn quantile_unchecked(&self, p: f64) -> f64 {
        if self.symmetrized {
            if p > 0.5 {
                libm::pow(2.0 * (1.0 - p), -self.gamma)
            } else if p < 0.5 {
                -libm::pow(2.0 * p, -self.gamma)
            } else {
                0.0
            }
        } else {
            libm::pow(1.0 - p, -self.gamma)
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let p = libm::pow(rng::open01(rng), -self.gamma);
        if self.symmetrized && rng::rademacher(rng) < 0.0 {
            -p
        } else {
            p
        }
    }
}

pub fn pareto_quantile(margin: ParetoMargin, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0, 1), got {p}")));
    }
    if !(margin.gamma > 0.0) {
        return Err(Error::invalid("gamma", "must be positive"));
    }
    Ok(margin.quantile_unchecked(p))
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub metric: String,
    pub theoretical: f64,
    pub estimate: f64,
    /// Absolute tolerance on `|estimate − theoretical|`.
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(metric: String, theoretical: f64, estimate: f64, tolerance: f64, detail: String) -> Self {
        let passed = estimate.is_finite() && (estimate - theoretical).abs() <= tolerance;
        CheckReport { metric, theoretical, estimate, tolerance, passed, detail }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} metric={} theoretical={:.6} estimate={:.6} tolerance={:.6}",
            if self.passed { "PASS" } else { "FAIL" },
            self.metric,
            self.theoretical,
            self.estimate,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Hill index of `X^exponent` for `X ~ Pareto(gamma)`, against `1/(gamma·exponent)`.
pub fn verify_power_lemma(gamma: f64, exponent: f64, n: usize, seed: u64, rel_tol: f64) -> Result<CheckReport> {
    let margin = ParetoMargin { gamma, symmetrized: false };
    let mut rng = rng::seeded(seed);
    let powered: Vec<f64> = (0..n).map(|_| libm::pow(margin.sample(&mut rng), exponent)).collect();
    let k = theory_k(n);
    let h = hill(&powered, k)?;
    let theory = 1.0 / (gamma * exponent);
    Ok(CheckReport::new(
        format!("power_lemma(gamma={gamma}, exponent={exponent})"),
        theory,
        h.alpha_hat,
        rel_tol * theory,
        format!("n={n} k={k}"),
    ))
}

/// Hill index of `X·Y` with `X` Pareto of tail index `alpha` and independent
/// `Y = exp(sigma·N(0,1))`; `sigma = 0` makes `Y ≡ 1`.
pub fn verify_breiman(alpha: f64, sigma: f64, n: usize, seed: u64, rel_tol: f64) -> Result<CheckReport> {
    let margin = ParetoMargin::from_tail_index(alpha, false);
    let mut rng = rng::seeded(seed);
    let product: Vec<f64> = (0..n)
        .map(|_| {
            let x = margin.sample(&mut rng);
            let z: f64 = StandardNormal.sample(&mut rng);
            x * libm::exp(sigma * z)
        })
        .collect();
    let k = theory_k(n);
    let h = hill(&product, k)?;
    Ok(CheckReport::new(
        format!("breiman(alpha={alpha}, lognormal_sigma={sigma})"),
        alpha,
        h.alpha_hat,
        rel_tol * alpha,
        format!("n={n} k={k}"),
    ))
}

/// A law for the transformed variable `Z` that can be sampled conditionally on
/// `Z > z`, used by the multilevel tail estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailLaw {
    /// `Z = φ(X)`, `X ~ Pareto(gamma)` on `[1, ∞)`.
    SoftLogPareto { gamma: f64 },
    /// `Z ~ Exp(rate)`.
    Exponential { rate: f64 },
}

impl TailLaw {
    /// A draw of `Z` conditioned on `Z > z` (`z = −∞` for unconditional).
    pub fn sample_above(&self, z: f64, rng: &mut Rng) -> f64 {
        match *self {
            TailLaw::SoftLogPareto { gamma } => {
                // Z > z  <=>  X > e^z − 1, and X | X > u is u·Pareto(gamma) for u ≥ 1.
                let u = if z > 0.0 { libm::expm1(z).max(1.0) } else { 1.0 };
                let x = u * libm::pow(rng::open01(rng), -gamma);
                libm::log1p(x)
            }
            TailLaw::Exponential { rate } => z.max(0.0) + rng::exp1(rng) / rate,
        }
    }
}

/// Multilevel (splitting) Monte Carlo estimate of `P(Z > z_i)` on an increasing
/// grid. Level 0 draws `n` unconditional samples; level `i` draws `n` samples of
/// `Z | Z > z_{i−1}` and multiplies conditional frequencies, so probabilities far
/// below `1/n` stay resolvable.
pub fn tail_survival_curve(law: TailLaw, z_grid: &[f64], n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(z_grid.len());
    let mut prob = 1.0;
    let mut previous = f64::NEG_INFINITY;
    for &z in z_grid {
        let hits = (0..n).filter(|_| law.sample_above(previous, rng) > z).count();
        prob *= hits as f64 / n as f64;
        out.push(prob);
        previous = z;
    }
    out
}

/// `z ∈ {3, 3.5, …, 8}`.
pub fn default_tail_grid() -> Vec<f64> {
    (0..=10).map(|i| 3.0 + 0.5 * i as f64).collect()
}

/// Two-sided Potter sandwich `e^{−(α+ε)z} ≤ P(φ(X) > z) ≤ e^{−(α−ε)z}` for
/// Pareto `X`, checked on `z_grid`. Returns one report per grid point.
pub fn verify_potter(alpha: f64, eps: f64, z_grid: &[f64], n: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = rng::seeded(seed);
    let law = TailLaw::SoftLogPareto { gamma: 1.0 / alpha };
    let curve = tail_survival_curve(law, z_grid, n, &mut rng);
    z_grid
        .iter()
        .zip(curve)
        .map(|(&z, p)| {
            let rate = if p > 0.0 { -libm::log(p) / z } else { f64::INFINITY };
            CheckReport::new(
                format!("potter(alpha={alpha}, z={z})"),
                alpha,
                rate,
                eps,
                format!("n={n} per level, P={p:.3e}"),
            )
        })
        .collect()
}

/// Least-squares slope of `log P(Z > z)` against `z`.
pub fn survival_slope(z_grid: &[f64], survival: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = z_grid
        .iter()
        .zip(survival)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&z, &p)| (z, libm::log(p)))
        .collect();
    let m = pts.len() as f64;
    let mz = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|(z, y)| (z - mz) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(z, _)| (z - mz) * (z - mz)).sum();
    sxy / sxx
}

/// Exponential tail rate of the log-space law: the slope of the log survival of
/// `Z` on `z_grid` should be `−1/γ`.
pub fn verify_log_score(law: TailLaw, z_grid: &[f64], n: usize, seed: u64, tol: f64) -> CheckReport {
    let mut rng = rng::seeded(seed);
    let curve = tail_survival_curve(law, z_grid, n, &mut rng);
    let slope = survival_slope(z_grid, &curve);
    let theory = match law {
        TailLaw::SoftLogPareto { gamma } => -1.0 / gamma,
        TailLaw::Exponential { rate } => -rate,
    };
    CheckReport::new(
        format!("log_score_slope({law:?})"),
        theory,
        slope,
        tol,
        format!("OLS on z in [{}, {}], {} points, n={n} per level", z_grid[0], z_grid[z_grid.len() - 1], z_grid.len()),
    )
}

/// Tail lightening along the forward process: Hill index of `X^a` for each
/// annealing exponent `a`, each within `rel_tol` of `1/(γa)`. The last report
/// records whether the estimates increase as `a` decreases.
pub fn verify_annealing(gamma: f64, exponents: &[f64], n: usize, seed: u64, rel_tol: f64) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::with_capacity(exponents.len() + 1);
    for (i, &a) in exponents.iter().enumerate() {
        let mut r = verify_power_lemma(gamma, a, n, rng::derive_seed(seed, &[i as u64]), rel_tol)?;
        r.metric = format!("annealing(gamma={gamma}, alpha_t={a})");
        reports.push(r);
    }
    let mut order: Vec<(f64, f64)> = exponents.iter().copied().zip(reports.iter().map(|r| r.estimate)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = order.windows(2).all(|w| w[1].1 > w[0].1);
    reports.push(CheckReport {
        metric: format!("annealing_monotone(gamma={gamma})"),
        theoretical: 1.0,
        estimate: if monotone { 1.0 } else { 0.0 },
        tolerance: 0.0,
        passed: monotone,
        detail: String::from("Hill index increases as the exponent decreases"),
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic quantile grid `x_i = (i/(n+1))^{−γ}`.
    fn pareto_grid(gamma: f64, n: usize) -> Vec<f64> {
        (1..=n).map(|i| libm::pow(i as f64 / (n as f64 + 1.0), -gamma)).collect()
    }

    #[test]
    fn hill_on_quantile_grid() {
        let h = hill(&pareto_grid(0.5, 10_000), 100).unwrap();
        assert!((1.9..=2.1).contains(&h.alpha_hat), "{}", h.alpha_hat);
        assert!((h.alpha_hat * h.gamma_hat - 1.0).abs() < 1e-15);
        assert_eq!((h.k, h.n), (100, 10_000));
    }

    #[test]
    fn hill_consistency_on_grid() {
        for &gamma in &[0.25, 0.5, 1.0 / 1.5] {
            let n = 100_000;
            let h = hill(&pareto_grid(gamma, n), theory_k(n)).unwrap();
            let alpha = 1.0 / gamma;
            assert!((h.alpha_hat / alpha - 1.0).abs() < 0.05, "gamma={gamma}: {}", h.alpha_hat);
        }
    }

    #[test]
    fn hill_on_gaussian_is_large() {
        let mut rng = rng::seeded(11);
        let x = rng::standard_normals(&mut rng, 10_000);
        let h = hill(&x, theory_k(10_000)).unwrap();
        assert!(h.alpha_hat > 5.0, "{}", h.alpha_hat);
    }

    #[test]
    fn hill_on_symmetrized_pareto_sample() {
        let mut rng = rng::seeded(5);
        let m = ParetoMargin::from_tail_index(2.0, true);
        let x: Vec<f64> = (0..10_000).map(|_| m.sample(&mut rng)).collect();
        let h = hill(&x, gating_k(x.len())).unwrap();
        assert!((1.5..=2.5).contains(&h.alpha_hat), "{}", h.alpha_hat);
    }

    #[test]
    fn hill_scale_equivariance() {
        let x = pareto_grid(0.7, 2_000);
        let base = hill(&x, 50).unwrap().alpha_hat;
        for &c in &[0.25, 0.3, 7.1, 1024.0, 1e5] {
            let y: Vec<f64> = x.iter().map(|v| c * v).collect();
            assert!((hill(&y, 50).unwrap().alpha_hat - base).abs() < 1e-10 * base);
        }
    }

    #[test]
    fn hill_errors() {
        assert!(hill(&[1.0, 2.0, 3.0], 0).is_err());
        assert!(hill(&[1.0, 2.0, 3.0], 3).is_err());
        assert!(matches!(hill(&[0.0, 0.0, 0.0, 2.0], 2), Err(Error::TooFewPositive { .. })));
        assert_eq!(hill(&[1.0, 5.0, 5.0, 5.0], 2), Err(Error::DegenerateTail));
        assert_eq!(hill(&[1.0, f64::NAN, 2.0], 1), Err(Error::NonFinite));
    }

    #[test]
    fn pareto_quantile_examples() {
        let m = ParetoMargin { gamma: 0.5, symmetrized: false };
        assert!((pareto_quantile(m, 0.99).unwrap() - 10.0).abs() < 1e-12);
        let s = ParetoMargin { gamma: 0.5, symmetrized: true };
        assert_eq!(pareto_quantile(s, 0.5).unwrap(), 0.0);
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let t = pareto_quantile(m, p).unwrap();
            assert!((m.survival(t) - (1.0 - p)).abs() < 1e-12);
        }
        for &p in &[0.01, 0.2, 0.7, 0.999] {
            let t = pareto_quantile(s, p).unwrap();
            assert!((s.survival(t) - (1.0 - p)).abs() < 1e-12, "p={p}");
        }
        assert!(pareto_quantile(m, 0.0).is_err());
        assert!(pareto_quantile(m, 1.0).is_err());
    }

    #[test]
    fn power_lemma_checks() {
        let r = verify_power_lemma(0.5, 2.0, 100_000, 1, 0.10).unwrap();
        assert!(r.passed, "{r}");
        let r = verify_power_lemma(0.5, 1.0, 100_000, 2, 0.10).unwrap();
        assert!(r.passed, "{r}");
        assert_eq!(r.theoretical, 2.0);
        let r = verify_power_lemma(0.4, 0.5, 100_000, 3, 0.15).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn breiman_degenerate_multiplier_is_plain_hill() {
        let r = verify_breiman(2.0, 0.0, 100_000, 4, 0.15).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn exponential_law_slope() {
        let r = verify_log_score(TailLaw::Exponential { rate: 2.0 }, &default_tail_grid(), 100_000, 6, 0.3);
        assert!(r.passed, "{r}");
        let r = verify_log_score(TailLaw::SoftLogPareto { gamma: 1.0 }, &default_tail_grid(), 100_000, 7, 0.3);
        assert!(r.passed, "{r}");
    }

    #[test]
    fn survival_curve_matches_exact_tail() {
        let mut rng = rng::seeded(8);
        let grid: Vec<f64> = (1..=8).map(f64::from).collect();
        let curve = tail_survival_curve(TailLaw::SoftLogPareto { gamma: 0.5 }, &grid, 200_000, &mut rng);
        for (&z, &p) in grid.iter().zip(&curve).filter(|(z, _)| [1.0, 4.0, 8.0].contains(*z)) {
            let exact = libm::pow(libm::expm1(z), -2.0);
            assert!((p / exact - 1.0).abs() < 0.05, "z={z}: {p} vs {exact}");
        }
    }

    #[test]
    fn report_formats() {
        let r = CheckReport::new("m".into(), 1.0, 1.05, 0.1, String::new());
        assert!(r.passed);
        assert!(alloc::format!("{r}").starts_with("PASS metric=m"));
        let r = CheckReport::new("m".into(), 1.0, f64::NAN, 0.1, String::new());
        assert!(!r.passed);
    }
}
