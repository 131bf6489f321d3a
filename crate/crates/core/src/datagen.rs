//! Synthetic benchmark data: copulas composed with heavy- and light-tailed margins.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal, StudentT};
use sha2::{Digest, Sha256};

use crate::evt::ParetoMargin;
use crate::linalg::cholesky;
use crate::rng::{self, Rng};
use crate::special::{normal_cdf, normal_quantile, student_t_quantile};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Copula {
    /// Exchangeable Gaussian copula at Kendall's τ.
    Gaussian { tau: f64 },
    /// Gumbel (logistic) copula at Kendall's τ, `θ = 1/(1 − τ)`.
    Gumbel { tau: f64 },
    /// Hüsler–Reiss copula with AR(1) variogram `Γ_ij = 2(1 − ρ^{|i−j|})`.
    HuslerReiss { rho: f64 },
    /// Independent coordinates.
    Iid,
}

impl Copula {
    pub fn sample(&self, d: usize, n: usize, seed: u64) -> Result<Matrix> {
        match *self {
            Copula::Gaussian { tau } => sample_gaussian_copula(tau, d, n, seed),
            Copula::Gumbel { tau } => sample_gumbel_copula(tau, d, n, seed),
            Copula::HuslerReiss { rho } => sample_husler_reiss(rho, d, n, seed),
            Copula::Iid => {
                let mut rng = rng::seeded(seed);
                Ok(Matrix::from_fn(n, d, |_, _| rng::open01(&mut rng)))
            }
        }
    }

    fn canonical(&self) -> String {
        match *self {
            Copula::Gaussian { tau } => format!("gaussian(tau={tau:?})"),
            Copula::Gumbel { tau } => format!("gumbel(tau={tau:?})"),
            Copula::HuslerReiss { rho } => format!("husler_reiss(rho={rho:?})"),
            Copula::Iid => String::from("iid"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    SymmetrizedPareto { alpha: f64 },
    Gaussian,
    StudentT { nu: f64 },
}

impl Margin {
    pub fn label(&self) -> MarginLabel {
        match self {
            Margin::SymmetrizedPareto { .. } => MarginLabel::Pareto,
            Margin::Gaussian => MarginLabel::Gaussian,
            Margin::StudentT { .. } => MarginLabel::Other,
        }
    }

    /// Quantile function; `u` must lie in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Margin::SymmetrizedPareto { alpha } => ParetoMargin::from_tail_index(alpha, true).quantile_unchecked(u),
            Margin::Gaussian => normal_quantile(u),
            Margin::StudentT { nu } => student_t_quantile(u, nu),
        }
    }

    fn canonical(&self) -> String {
        match *self {
            Margin::SymmetrizedPareto { alpha } => format!("pareto({alpha:?})"),
            Margin::Gaussian => String::from("gaussian"),
            Margin::StudentT { nu } => format!("student_t({nu:?})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarginLabel {
    Pareto,
    Gaussian,
    Other,
}

impl MarginLabel {
    pub fn name(self) -> &'static str {
        match self {
            MarginLabel::Pareto => "pareto",
            MarginLabel::Gaussian => "gaussian",
            MarginLabel::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pareto" => Some(MarginLabel::Pareto),
            "gaussian" => Some(MarginLabel::Gaussian),
            "other" => Some(MarginLabel::Other),
            _ => None,
        }
    }
}

/// Real-valued sample with per-coordinate margin labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pub data: Matrix,
    pub labels: Vec<MarginLabel>,
    /// Fingerprint of the recipe that produced the data (0 for external data).
    pub fingerprint: u64,
}

impl SampleMatrix {
    pub fn new(data: Matrix, labels: Vec<MarginLabel>, fingerprint: u64) -> Result<Self> {
        if labels.len() != data.cols() {
            return Err(Error::DimensionMismatch { expected: data.cols(), got: labels.len() });
        }
        Ok(SampleMatrix { data, labels, fingerprint })
    }

    /// Data from outside the generators: every label is [`MarginLabel::Other`].
    pub fn unlabeled(data: Matrix) -> Self {
        let labels = alloc::vec![MarginLabel::Other; data.cols()];
        SampleMatrix { data, labels, fingerprint: 0 }
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn d(&self) -> usize {
        self.data.cols()
    }

    pub fn rows(&self, start: usize, end: usize) -> SampleMatrix {
        SampleMatrix { data: self.data.slice_rows(start, end), labels: self.labels.clone(), fingerprint: self.fingerprint }
    }

    /// Consecutive, disjoint blocks of `sizes[i]` rows that exhaust the sample.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<SampleMatrix>> {
        let total: usize = sizes.iter().sum();
        if total != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: total });
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&s| {
                let part = self.rows(start, start + s);
                start += s;
                part
            })
            .collect())
    }
}

/// Train / validation / test partition of one generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: SampleMatrix,
    pub val: SampleMatrix,
    pub test: SampleMatrix,
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub copula: Copula,
    pub d: usize,
    pub margins: Vec<Margin>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Number of Pareto coordinates in the 70/30 heavy/light benchmark layout.
pub fn pareto_count(d: usize) -> usize {
    (7 * d).div_ceil(10)
}

/// The benchmark margin layout: the first `⌈0.7 d⌉` coordinates symmetrized
/// Pareto with tail index `alpha`, the rest standard Gaussian.
pub fn benchmark_margins(d: usize, alpha: f64) -> Vec<Margin> {
    let p = pareto_count(d);
    (0..d).map(|j| if j < p { Margin::SymmetrizedPareto { alpha } } else { Margin::Gaussian }).collect()
}

impl DatasetSpec {
    pub fn benchmark(copula: Copula, d: usize, alpha: f64, sizes: (usize, usize, usize), seed: u64) -> Self {
        DatasetSpec {
            copula,
            d,
            margins: benchmark_margins(d, alpha),
            n_train: sizes.0,
            n_val: sizes.1,
            n_test: sizes.2,
            seed,
        }
    }

    pub fn n_total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "must be positive"));
        }
        if self.margins.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: self.margins.len() });
        }
        match self.copula {
            Copula::Gaussian { tau } | Copula::Gumbel { tau } if !(tau > 0.0 && tau < 1.0) => {
                return Err(Error::invalid("tau", format!("must lie in (0, 1), got {tau}")));
            }
            Copula::HuslerReiss { rho } if !(rho > 0.0 && rho < 1.0) => {
                return Err(Error::invalid("rho", format!("must lie in (0, 1), got {rho}")));
            }
            _ => {}
        }
        for m in &self.margins {
            match *m {
                Margin::SymmetrizedPareto { alpha } if !(alpha > 0.0) => {
                    return Err(Error::invalid("alpha", "must be positive"))
                }
                Margin::StudentT { nu } if !(nu > 0.0) => return Err(Error::invalid("nu", "must be positive")),
                _ => {}
            }
        }
        if self.n_train == 0 {
            return Err(Error::invalid("n_train", "must be positive"));
        }
        Ok(())
    }

    /// Stable text form; the fingerprint is a hash of it.
    pub fn canonical(&self) -> String {
        let margins: Vec<String> = self.margins.iter().map(Margin::canonical).collect();
        format!(
            "copula={} d={} margins=[{}] n=({},{},{}) seed={}",
            self.copula.canonical(),
            self.d,
            margins.join(","),
            self.n_train,
            self.n_val,
            self.n_test,
            self.seed
        )
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint_str(&self.canonical())
    }

    /// Draw the full sample and split it into train / validation / test.
    pub fn generate(&self) -> Result<Splits> {
        self.validate()?;
        let u = self.copula.sample(self.d, self.n_total(), self.seed)?;
        let mut all = compose_margins(&u, &self.margins)?;
        all.fingerprint = self.fingerprint();
        let mut parts = all.split(&[self.n_train, self.n_val, self.n_test])?.into_iter();
        Ok(Splits {
            train: parts.next().unwrap(),
            val: parts.next().unwrap(),
            test: parts.next().unwrap(),
        })
    }
}

pub fn fingerprint_str(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// Exchangeable Gaussian copula with pairwise correlation `ρ = sin(πτ/2)`.
pub fn sample_gaussian_copula(tau: f64, d: usize, n: usize, seed: u64) -> Result<Matrix> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("must lie in (0, 1), got {tau}")));
    }
    let rho = libm::sin(PI * tau / 2.0);
    let (a, b) = (libm::sqrt(rho), libm::sqrt(1.0 - rho));
    let mut rng = rng::seeded(seed);
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let common: f64 = StandardNormal.sample(&mut rng);
        for v in out.row_mut(i) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = normal_cdf(a * common + b * e);
        }
    }
    Ok(out)
}

/// Positive stable variate with Laplace transform `exp(−s^a)`, `0 < a ≤ 1`
/// (Kanter's representation).
pub fn positive_stable(a: f64, rng: &mut Rng) -> f64 {
    if a >= 1.0 {
        return 1.0;
    }
    let theta = PI * rng::open01(rng);
    let w = rng::exp1(rng);
    let left = libm::sin(a * theta) / libm::pow(libm::sin(theta), 1.0 / a);
    let right = libm::pow(libm::sin((1.0 - a) * theta) / w, (1.0 - a) / a);
    left * right
}

/// Gumbel copula by Marshall–Olkin frailty: `V` positive stable of index
/// `1/θ`, then `U_j = exp(−(E_j/V)^{1/θ})` with iid standard exponentials `E_j`.
pub fn sample_gumbel_copula(tau: f64, d: usize, n: usize, seed: u64) -> Result<Matrix> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("must lie in (0, 1), got {tau}")));
    }
    let theta = 1.0 / (1.0 - tau);
    let a = 1.0 / theta;
    let mut rng = rng::seeded(seed);
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let v = positive_stable(a, &mut rng);
        for x in out.row_mut(i) {
            let e = rng::exp1(&mut rng);
            *x = libm::exp(-libm::pow(e / v, a));
        }
    }
    Ok(out)
}

/// AR(1) variogram `Γ_ij = 2(1 − ρ^{|i−j|})`.
pub fn ar1_variogram(rho: f64, d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| 2.0 * (1.0 - libm::pow(rho, i.abs_diff(j) as f64)))
}

pub fn sample_husler_reiss(rho: f64, d: usize, n: usize, seed: u64) -> Result<Matrix> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid("rho", format!("must lie in (0, 1), got {rho}")));
    }
    let mut rng = rng::seeded(seed);
    sample_husler_reiss_variogram(&ar1_variogram(rho, d), n, &mut rng)
}

/// Exact simulation of the Hüsler–Reiss max-stable vector with variogram `Γ`
/// by extremal functions, returned on uniform margins.
///
/// For each location `j`, Poisson points `ζ` in decreasing order are paired with
/// spectral functions `W_k = exp(G_k − G_j − Γ_kj/2)` where `G` is any centred
/// Gaussian vector with variogram `Γ`. A candidate `ζ·W` is kept only if it does
/// not exceed the running maximum at an earlier location, so each location's
/// extremal function is counted once. The output `Z` has unit Fréchet margins
/// and is mapped to `exp(−1/Z)`.
pub fn sample_husler_reiss_variogram(variogram: &Matrix, n: usize, rng: &mut Rng) -> Result<Matrix> {
    let d = variogram.rows();
    if variogram.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: variogram.cols() });
    }
    // G_0 = 0; the remaining coordinates have covariance (Γ_k0 + Γ_l0 − Γ_kl)/2.
    let chol = if d > 1 {
        let cov = Matrix::from_fn(d - 1, d - 1, |k, l| {
            0.5 * (variogram.get(k + 1, 0) + variogram.get(l + 1, 0) - variogram.get(k + 1, l + 1))
        });
        Some(cholesky(&cov)?)
    } else {
        None
    };
    let mut g = alloc::vec![0.0; d];
    let mut eps = alloc::vec![0.0; d.saturating_sub(1)];
    let mut w = alloc::vec![0.0; d];
    let mut z = alloc::vec![0.0; d];
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..d {
            let mut arrival = rng::exp1(rng);
            let mut zeta = 1.0 / arrival;
            while zeta > z[j] {
                if let Some(l) = &chol {
                    for e in eps.iter_mut() {
                        *e = StandardNormal.sample(rng);
                    }
                    for k in 1..d {
                        let row = l.row(k - 1);
                        g[k] = row[..k].iter().zip(&eps[..k]).map(|(a, b)| a * b).sum();
                    }
                }
                for k in 0..d {
                    w[k] = libm::exp(g[k] - g[j] - 0.5 * variogram.get(k, j));
                }
                if (0..j).all(|k| zeta * w[k] < z[k]) {
                    for k in 0..d {
                        z[k] = z[k].max(zeta * w[k]);
                    }
                }
                arrival += rng::exp1(rng);
                zeta = 1.0 / arrival;
            }
        }
        for (o, &v) in out.row_mut(i).iter_mut().zip(&z) {
            *o = libm::exp(-1.0 / v);
        }
    }
    Ok(out)
}

/// Closed-form bivariate Hüsler–Reiss extremal coefficient `2Φ(√Γ/2)`.
pub fn husler_reiss_extremal_coefficient(gamma: f64) -> f64 {
    2.0 * normal_cdf(libm::sqrt(gamma) / 2.0)
}

/// Push uniforms through per-coordinate quantile functions.
pub fn compose_margins(u: &Matrix, margins: &[Margin]) -> Result<SampleMatrix> {
    if margins.len() != u.cols() {
        return Err(Error::DimensionMismatch { expected: u.cols(), got: margins.len() });
    }
    let mut data = u.clone();
    for i in 0..data.rows() {
        for (j, v) in data.row_mut(i).iter_mut().enumerate() {
            if !(*v > 0.0 && *v < 1.0) {
                return Err(Error::invalid("u", format!("entry ({i}, {j}) = {} outside (0, 1)", *v)));
            }
            *v = margins[j].quantile(*v);
        }
    }
    let labels = margins.iter().map(Margin::label).collect();
    SampleMatrix::new(data, labels, 0)
}

/// Student-t benchmark: `d − 1` iid Student-t(ν) columns and a last column
/// `X_d | X_{d−1} ~ N(X_{d−1}, 1)`.
pub fn sample_hickling(d: usize, nu: f64, n: usize, seed: u64) -> Result<SampleMatrix> {
    if d < 2 {
        return Err(Error::invalid("d", "must be at least 2"));
    }
    let t = StudentT::new(nu).map_err(|_| Error::invalid("nu", format!("must be positive, got {nu}")))?;
    let mut rng = rng::seeded(seed);
    let mut data = Matrix::zeros(n, d);
    for i in 0..n {
        let row = data.row_mut(i);
        for v in row[..d - 1].iter_mut() {
            *v = t.sample(&mut rng);
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        row[d - 1] = row[d - 2] + e;
    }
    let fp = fingerprint_str(&format!("hickling d={d} nu={nu:?} n={n} seed={seed}"));
    SampleMatrix::new(data, alloc::vec![MarginLabel::Other; d], fp)
}

/// Sizes of a `(train, val, test)` split by fractions of `n`; the test part
/// takes the remainder.
pub fn split_sizes(n: usize, train: f64, val: f64) -> (usize, usize, usize) {
    let a = libm::round(train * n as f64) as usize;
    let b = libm::round(val * n as f64) as usize;
    (a, b, n - a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evt::{gating_k, hill, hill_mask};
    use crate::metrics::kendall_tau;
    use alloc::vec;

    fn tau_01(m: &Matrix) -> f64 {
        kendall_tau(&m.column(0), &m.column(1))
    }

    #[test]
    fn gaussian_copula_hits_target_tau() {
        let u = sample_gaussian_copula(0.5, 2, 10_000, 1).unwrap();
        let t = tau_01(&u);
        assert!((t - 0.5).abs() < 0.02, "{t}");
        assert!((libm::sin(PI * 0.5 / 2.0) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let u = sample_gaussian_copula(1e-9, 2, 10_000, 2).unwrap();
        assert!(tau_01(&u).abs() < 0.03);
        let u = sample_gaussian_copula(0.5, 1, 1_000, 3).unwrap();
        assert!(u.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(sample_gaussian_copula(1.0, 2, 10, 1).is_err());
    }

    #[test]
    fn gumbel_copula_hits_target_tau() {
        let u = sample_gumbel_copula(0.5, 3, 10_000, 4).unwrap();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let t = kendall_tau(&u.column(a), &u.column(b));
            assert!((t - 0.5).abs() < 0.02, "({a},{b}) {t}");
        }
        let u = sample_gumbel_copula(1e-9, 2, 10_000, 5).unwrap();
        assert!(tau_01(&u).abs() < 0.03);
        assert!(sample_gumbel_copula(1.0, 2, 10, 1).is_err());
        assert!(sample_gumbel_copula(0.0, 2, 10, 1).is_err());
    }

    #[test]
    fn gumbel_has_more_upper_tail_dependence_than_gaussian() {
        let q = 0.99;
        let coexceed = |u: &Matrix| {
            (0..u.rows()).filter(|&i| u.get(i, 0) > q && u.get(i, 1) > q).count() as f64
                / (0..u.rows()).filter(|&i| u.get(i, 0) > q).count() as f64
        };
        let gu = sample_gumbel_copula(0.5, 2, 100_000, 6).unwrap();
        let ga = sample_gaussian_copula(0.5, 2, 100_000, 6).unwrap();
        let (a, b) = (coexceed(&gu), coexceed(&ga));
        assert!(a > b, "gumbel {a} vs gaussian {b}");
        // Upper-tail coefficient of Gumbel(θ = 2) is 2 − √2 ≈ 0.586.
        assert!((a - (2.0 - libm::sqrt(2.0))).abs() < 0.1, "{a}");
    }

    fn madogram_extremal_coefficient(u: &Matrix) -> f64 {
        let nu = (0..u.rows()).map(|i| (u.get(i, 0) - u.get(i, 1)).abs()).sum::<f64>() / (2.0 * u.rows() as f64);
        (1.0 + 2.0 * nu) / (1.0 - 2.0 * nu)
    }

    #[test]
    fn husler_reiss_bivariate_extremal_coefficient() {
        for (seed, &rho) in [0.1, 0.5, 0.9].iter().enumerate() {
            let u = sample_husler_reiss(rho, 2, 20_000, 10 + seed as u64).unwrap();
            let want = husler_reiss_extremal_coefficient(2.0 * (1.0 - rho));
            let got = madogram_extremal_coefficient(&u);
            assert!((got - want).abs() < 0.03, "rho={rho}: {got} vs {want}");
        }
        // rho -> 0: Γ -> 2.
        let u = sample_husler_reiss(1e-9, 2, 20_000, 20).unwrap();
        let want = husler_reiss_extremal_coefficient(2.0);
        assert!((madogram_extremal_coefficient(&u) - want).abs() < 0.03);
        assert!(sample_husler_reiss(1.0, 2, 10, 1).is_err());
    }

    #[test]
    fn husler_reiss_near_comonotone() {
        let u = sample_husler_reiss(0.9999, 3, 2_000, 21).unwrap();
        assert!(tau_01(&u) > 0.9);
    }

    #[test]
    fn husler_reiss_margins_are_uniform() {
        let u = sample_husler_reiss(0.5, 4, 20_000, 22).unwrap();
        for j in 0..4 {
            let col = u.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let below = col.iter().filter(|&&v| v < 0.1).count() as f64 / col.len() as f64;
            assert!((mean - 0.5).abs() < 0.01 && (below - 0.1).abs() < 0.01, "col {j}: {mean} {below}");
        }
    }

    #[test]
    fn compose_margins_examples() {
        let u = sample_gaussian_copula(0.5, 3, 10_000, 30).unwrap();
        let s = compose_margins(&u, &[Margin::Gaussian; 3]).unwrap();
        for j in 0..3 {
            let c = s.data.column(j);
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            let skew = c.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / v.powf(1.5);
            assert!(skew.abs() < 0.1, "skew {skew}");
        }
        let p = compose_margins(&u, &[Margin::SymmetrizedPareto { alpha: 2.0 }; 3]).unwrap();
        let h = hill(&p.data.column(0), gating_k(10_000)).unwrap();
        assert!((1.5..=2.5).contains(&h.alpha_hat), "{}", h.alpha_hat);
        assert_eq!(p.labels, vec![MarginLabel::Pareto; 3]);

        let half = Matrix::from_fn(4, 2, |_, _| 0.5);
        let s = compose_margins(&half, &[Margin::SymmetrizedPareto { alpha: 1.5 }; 2]).unwrap();
        assert!(s.data.as_slice().iter().all(|&v| v == 0.0));

        let edge = Matrix::from_rows(&[vec![0.5, 1.0]]).unwrap();
        assert!(compose_margins(&edge, &[Margin::Gaussian; 2]).is_err());
    }

    #[test]
    fn copula_survives_margin_composition() {
        let u = sample_gumbel_copula(0.5, 2, 3_000, 31).unwrap();
        let s = compose_margins(&u, &[Margin::SymmetrizedPareto { alpha: 1.5 }, Margin::Gaussian]).unwrap();
        assert_eq!(tau_01(&u), tau_01(&s.data));
    }

    #[test]
    fn hickling_examples() {
        let s = sample_hickling(10, 2.0, 20_000, 40).unwrap();
        let h = hill(&s.data.column(0), gating_k(20_000)).unwrap();
        assert!((1.6..=2.4).contains(&h.alpha_hat), "{}", h.alpha_hat);

        // Last column minus its parent is standard normal: KS against Φ.
        let mut diff: Vec<f64> = (0..s.n()).map(|i| s.data.get(i, 9) - s.data.get(i, 8)).collect();
        diff.sort_by(f64::total_cmp);
        let n = diff.len() as f64;
        let ks = diff
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal_cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        assert!(ks < 1.63 / libm::sqrt(n), "ks {ks}");

        let light = sample_hickling(10, 30.0, 20_000, 41).unwrap();
        let mask = hill_mask(&light.data, 4.0, gating_k(20_000)).unwrap();
        assert!(mask.iter().all(|&m| !m), "{mask:?}");
        assert!(sample_hickling(1, 2.0, 10, 1).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_splits_exhaust() {
        let spec = DatasetSpec::benchmark(Copula::Gumbel { tau: 0.5 }, 10, 2.0, (300, 100, 200), 9);
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.n(), a.val.n(), a.test.n()), (300, 100, 200));
        assert_eq!(a.train.labels.iter().filter(|&&l| l == MarginLabel::Pareto).count(), 7);
        let u = spec.copula.sample(10, 600, 9).unwrap();
        let full = compose_margins(&u, &spec.margins).unwrap();
        assert_eq!(a.train.data, full.data.slice_rows(0, 300));
        assert_eq!(a.val.data, full.data.slice_rows(300, 400));
        assert_eq!(a.test.data, full.data.slice_rows(400, 600));
        let other = DatasetSpec { seed: 10, ..spec.clone() };
        assert_ne!(other.fingerprint(), spec.fingerprint());
    }

    #[test]
    fn benchmark_layout() {
        assert_eq!(pareto_count(20), 14);
        assert_eq!(pareto_count(10), 7);
        assert_eq!(split_sizes(5_000, 0.4, 0.2), (2_000, 1_000, 2_000));
    }
}
