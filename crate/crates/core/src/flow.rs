//! Flow matching in transformed space: interpolation schedules, training,
//! Euler and DDIM sampling, score/denoiser conversions and likelihoods.
//!
//! Time runs from data at `t = 0` to standard Gaussian noise at `t = 1`:
//! `X_t = α_t X_0 + β_t X_1`, and the network regresses the velocity
//! `α̇_t X_0 + β̇_t X_1`. Sampling integrates backwards from `t = 1`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use rand_distr::{Distribution, StandardNormal};

use crate::datagen::{MarginLabel, SampleMatrix};
use crate::evt::gating_k;
use crate::nn::{AdamW, AdamWConfig, EarlyStopping, NetConfig, VelocityNet};
use crate::rng::{self, Rng};
use crate::transforms::{Family, TransformSpec};
use crate::{Error, Matrix, Result};

/// Interpolation schedule `(α_t, β_t)` with `(α_0, β_0) = (1, 0)` and
/// `(α_1, β_1) = (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    /// `(1 − t, t)`.
    Linear,
    /// `(cos(πt/2), sin(πt/2))`.
    VpTrig,
    /// `(√(1 − t), √t)`; derivatives blow up at both endpoints.
    VpPoly,
    /// `((1 − t)², 1 − (1 − t)²)`.
    Quadratic,
}

impl Schedule {
    pub const ALL: [Schedule; 4] = [Schedule::Linear, Schedule::VpTrig, Schedule::VpPoly, Schedule::Quadratic];

    pub fn name(self) -> &'static str {
        match self {
            Schedule::Linear => "linear",
            Schedule::VpTrig => "vp_trig",
            Schedule::VpPoly => "vp_poly",
            Schedule::Quadratic => "quadratic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Variance preserving: `α_t² + β_t² = 1`.
    pub fn is_vp(self) -> bool {
        matches!(self, Schedule::VpTrig | Schedule::VpPoly)
    }

    pub fn alpha(self, t: f64) -> f64 {
        match self {
            Schedule::Linear => 1.0 - t,
            Schedule::VpTrig => libm::cos(FRAC_PI_2 * t),
            Schedule::VpPoly => libm::sqrt(1.0 - t),
            Schedule::Quadratic => (1.0 - t) * (1.0 - t),
        }
    }

    pub fn beta(self, t: f64) -> f64 {
        match self {
            Schedule::Linear => t,
            Schedule::VpTrig => libm::sin(FRAC_PI_2 * t),
            Schedule::VpPoly => libm::sqrt(t),
            Schedule::Quadratic => 1.0 - (1.0 - t) * (1.0 - t),
        }
    }

    pub fn dalpha(self, t: f64) -> f64 {
        match self {
            Schedule::Linear => -1.0,
            Schedule::VpTrig => -FRAC_PI_2 * libm::sin(FRAC_PI_2 * t),
            Schedule::VpPoly => -0.5 / libm::sqrt(1.0 - t),
            Schedule::Quadratic => -2.0 * (1.0 - t),
        }
    }

    pub fn dbeta(self, t: f64) -> f64 {
        match self {
            Schedule::Linear => 1.0,
            Schedule::VpTrig => FRAC_PI_2 * libm::cos(FRAC_PI_2 * t),
            Schedule::VpPoly => 0.5 / libm::sqrt(t),
            Schedule::Quadratic => 2.0 * (1.0 - t),
        }
    }
}

/// `x_t = α_t x0 + β_t x1` and the target velocity `u = α̇_t x0 + β̇_t x1`, row by row.
pub fn interpolate(schedule: Schedule, x0: &Matrix, x1: &Matrix, t: &[f64]) -> Result<(Matrix, Matrix)> {
    if x0.rows() != x1.rows() || x0.cols() != x1.cols() {
        return Err(Error::DimensionMismatch { expected: x0.rows() * x0.cols(), got: x1.rows() * x1.cols() });
    }
    if t.len() != x0.rows() {
        return Err(Error::DimensionMismatch { expected: x0.rows(), got: t.len() });
    }
    let mut xt = x0.clone();
    let mut u = x0.clone();
    for (i, &ti) in t.iter().enumerate() {
        let (a, b, da, db) = (schedule.alpha(ti), schedule.beta(ti), schedule.dalpha(ti), schedule.dbeta(ti));
        for ((p, q), &z) in xt.row_mut(i).iter_mut().zip(u.row_mut(i).iter_mut()).zip(x1.row(i)) {
            let x = *p;
            *p = a * x + b * z;
            *q = da * x + db * z;
        }
    }
    Ok((xt, u))
}

/// A time-dependent vector field on the (transformed) data space.
pub trait VelocityField {
    fn dim(&self) -> usize;

    /// `v(x_i, t_i)` for every row.
    fn velocity(&self, x: &Matrix, t: &[f64]) -> Result<Matrix>;

    /// The velocity together with `J_x v · p` for each probe matrix `p`.
    fn velocity_and_jvps(&self, x: &Matrix, t: &[f64], probes: &[Matrix]) -> Result<(Matrix, Vec<Matrix>)>;
}

impl VelocityField for VelocityNet {
    fn dim(&self) -> usize {
        VelocityNet::dim(self)
    }

    fn velocity(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        self.forward(x, t)
    }

    fn velocity_and_jvps(&self, x: &Matrix, t: &[f64], probes: &[Matrix]) -> Result<(Matrix, Vec<Matrix>)> {
        let cache = self.forward_cached(x, t)?;
        let jvps = probes.iter().map(|p| self.jvp_cached(&cache, p)).collect::<Result<Vec<_>>>()?;
        Ok((cache.output(self.dim()), jvps))
    }
}

// Velocity fields of the form v(x, t)_j = a_j(t) + b_j(t)·x_j.
fn diagonal_affine(
    d: usize,
    x: &Matrix,
    t: &[f64],
    probes: &[Matrix],
    coef: impl Fn(usize, f64) -> (f64, f64),
) -> Result<(Matrix, Vec<Matrix>)> {
    if x.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.cols() });
    }
    let mut v = x.clone();
    let mut jv: Vec<Matrix> = probes.to_vec();
    for (i, &ti) in t.iter().enumerate() {
        for j in 0..d {
            let (a, b) = coef(j, ti);
            v.set(i, j, a + b * x.get(i, j));
            for p in jv.iter_mut() {
                let val = p.get(i, j);
                p.set(i, j, b * val);
            }
        }
    }
    Ok((v, jv))
}

/// Exact marginal velocity when the data law is `N(0, diag(σ²))`:
/// `v(x, t) = (α̇ασ² + β̇β)/(α²σ² + β²) · x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPathField {
    pub schedule: Schedule,
    pub variances: Vec<f64>,
}

impl GaussianPathField {
    pub fn coefficient(&self, j: usize, t: f64) -> f64 {
        let s = self.schedule;
        let (a, b) = (s.alpha(t), s.beta(t));
        let var = self.variances[j];
        (s.dalpha(t) * a * var + s.dbeta(t) * b) / (a * a * var + b * b)
    }
}

impl VelocityField for GaussianPathField {
    fn dim(&self) -> usize {
        self.variances.len()
    }

    fn velocity(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        Ok(self.velocity_and_jvps(x, t, &[])?.0)
    }

    fn velocity_and_jvps(&self, x: &Matrix, t: &[f64], probes: &[Matrix]) -> Result<(Matrix, Vec<Matrix>)> {
        diagonal_affine(self.dim(), x, t, probes, |j, ti| (0.0, self.coefficient(j, ti)))
    }
}

/// Exact velocity when the data law is a point mass at `c`:
/// `v(x, t) = α̇c + β̇(x − αc)/β`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassField {
    pub schedule: Schedule,
    pub center: Vec<f64>,
}

impl VelocityField for PointMassField {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn velocity(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        Ok(self.velocity_and_jvps(x, t, &[])?.0)
    }

    fn velocity_and_jvps(&self, x: &Matrix, t: &[f64], probes: &[Matrix]) -> Result<(Matrix, Vec<Matrix>)> {
        let s = self.schedule;
        diagonal_affine(self.dim(), x, t, probes, |j, ti| {
            let (a, b, da, db) = (s.alpha(ti), s.beta(ti), s.dalpha(ti), s.dbeta(ti));
            let c = self.center[j];
            (da * c - db * a * c / b, db / b)
        })
    }
}

/// Time-independent linear field `v(x) = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub a: Matrix,
}

impl LinearField {
    fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), self.a.rows(), |i, r| self.a.row(r).iter().zip(x.row(i)).map(|(p, q)| p * q).sum())
    }
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn velocity(&self, x: &Matrix, _t: &[f64]) -> Result<Matrix> {
        if x.cols() != self.a.cols() {
            return Err(Error::DimensionMismatch { expected: self.a.cols(), got: x.cols() });
        }
        Ok(self.apply(x))
    }

    fn velocity_and_jvps(&self, x: &Matrix, t: &[f64], probes: &[Matrix]) -> Result<(Matrix, Vec<Matrix>)> {
        Ok((self.velocity(x, t)?, probes.iter().map(|p| self.apply(p)).collect()))
    }
}

/// Solve `v = α̇x̂0 + β̇x̂1`, `x = αx̂0 + βx̂1` for the denoisers `(x̂0, x̂1)`.
pub fn denoise(schedule: Schedule, x: &Matrix, v: &Matrix, t: &[f64]) -> Result<(Matrix, Matrix)> {
    if x.rows() != v.rows() || x.cols() != v.cols() || t.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), got: t.len() });
    }
    let mut x0 = x.clone();
    let mut x1 = x.clone();
    for (i, &ti) in t.iter().enumerate() {
        let (a, b, da, db) = (schedule.alpha(ti), schedule.beta(ti), schedule.dalpha(ti), schedule.dbeta(ti));
        let det = da * b - db * a;
        if !(det.is_finite() && det != 0.0 && da.is_finite() && db.is_finite()) {
            return Err(Error::SingularSchedule(ti));
        }
        for j in 0..x.cols() {
            let (xv, vv) = (x.get(i, j), v.get(i, j));
            x0.set(i, j, (vv * b - db * xv) / det);
            x1.set(i, j, (da * xv - a * vv) / det);
        }
    }
    Ok((x0, x1))
}

/// Denoisers `(x̂0, x̂1)` implied by a velocity field.
pub fn denoiser_from_velocity(
    field: &dyn VelocityField,
    schedule: Schedule,
    x: &Matrix,
    t: &[f64],
) -> Result<(Matrix, Matrix)> {
    denoise(schedule, x, &field.velocity(x, t)?, t)
}

/// Score `∇ log p_t(x) = −x̂1/β_t` implied by a velocity field.
pub fn score_from_velocity(field: &dyn VelocityField, schedule: Schedule, x: &Matrix, t: &[f64]) -> Result<Matrix> {
    let (_, mut x1) = denoiser_from_velocity(field, schedule, x, t)?;
    for (i, &ti) in t.iter().enumerate() {
        let b = schedule.beta(ti);
        if !(b > 0.0) {
            return Err(Error::SingularSchedule(ti));
        }
        x1.row_mut(i).iter_mut().for_each(|v| *v = -*v / b);
    }
    Ok(x1)
}

/// Standard Gaussian noise for `n` rows, a pure function of `seed`.
pub fn initial_noise(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = rng::seeded(seed);
    Matrix::from_vec(n, d, rng::standard_normals(&mut rng, n * d)).unwrap()
}

fn check_finite_state(x: &Matrix, t: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("non-finite sampler state at t = {t}")))
    }
}

/// Euler integration of `dx/dt = v(x, t)` from `t = 1` down to `t = 0` in
/// `steps` equal steps, starting from `noise`.
pub fn euler_sample(field: &dyn VelocityField, noise: &Matrix, steps: usize) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    let dt = 1.0 / steps as f64;
    let mut x = noise.clone();
    let mut t = vec![0.0; x.rows()];
    for k in (1..=steps).rev() {
        let tk = k as f64 / steps as f64;
        t.iter_mut().for_each(|v| *v = tk);
        let v = field.velocity(&x, &t)?;
        x.add_scaled(-dt, &v);
        check_finite_state(&x, tk)?;
    }
    Ok(x)
}

/// Noise level of the DDIM family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaMode {
    /// Deterministic transitions.
    Zero,
    /// The posterior standard deviation of the forward process (ancestral sampling).
    DdpmPosterior,
    /// `η = β_{t_k}`: the previous denoised estimate of the noise is discarded entirely.
    MaxNoise,
}

/// `η̃² = (β_k²/β_{k+1}²)(1 − α_{k+1}²/α_k²)` for the step `t_{k+1} → t_k`.
pub fn ddpm_posterior_eta(schedule: Schedule, t_k: f64, t_next: f64) -> f64 {
    let (ak, bk) = (schedule.alpha(t_k), schedule.beta(t_k));
    let (an, bn) = (schedule.alpha(t_next), schedule.beta(t_next));
    libm::sqrt(((bk * bk) / (bn * bn) * (1.0 - (an * an) / (ak * ak))).max(0.0))
}

/// One DDIM transition to time `t_k`:
/// `x_{t_k} = α_k x̂0 + √(β_k² − η²) x̂1 + η z`.
pub fn ddim_transition(
    schedule: Schedule,
    t_k: f64,
    x0_hat: &Matrix,
    x1_hat: &Matrix,
    eta: f64,
    noise: &Matrix,
) -> Result<Matrix> {
    let (a, b) = (schedule.alpha(t_k), schedule.beta(t_k));
    let radicand = b * b - eta * eta;
    if !(radicand >= 0.0) || eta < 0.0 {
        return Err(Error::invalid("eta", format!("η = {eta} exceeds β = {b} at t = {t_k}")));
    }
    let r = libm::sqrt(radicand);
    let mut out = x0_hat.clone();
    for ((o, &p), &z) in out.as_mut_slice().iter_mut().zip(x1_hat.as_slice()).zip(noise.as_slice()) {
        *o = a * *o + r * p + eta * z;
    }
    Ok(out)
}

/// DDIM sampling on the uniform grid `t_k = k/steps`, with denoisers obtained
/// from the velocity field. Requires a variance-preserving schedule.
pub fn ddim_sample(
    field: &dyn VelocityField,
    schedule: Schedule,
    noise: &Matrix,
    steps: usize,
    eta_mode: EtaMode,
    seed: u64,
) -> Result<Matrix> {
    if !schedule.is_vp() {
        return Err(Error::NotVariancePreserving);
    }
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let (n, d) = (noise.rows(), noise.cols());
    let mut x = noise.clone();
    let mut t = vec![0.0; n];
    for k in (0..steps).rev() {
        let (tk, tn) = (k as f64 / steps as f64, (k + 1) as f64 / steps as f64);
        t.iter_mut().for_each(|v| *v = tn);
        let (x0, x1) = denoiser_from_velocity(field, schedule, &x, &t)?;
        let eta = match eta_mode {
            EtaMode::Zero => 0.0,
            EtaMode::DdpmPosterior if k > 0 => ddpm_posterior_eta(schedule, tk, tn),
            EtaMode::MaxNoise => schedule.beta(tk),
            EtaMode::DdpmPosterior => 0.0,
        };
        let z = if eta > 0.0 {
            Matrix::from_vec(n, d, rng::standard_normals(&mut rng, n * d))?
        } else {
            Matrix::zeros(n, d)
        };
        x = ddim_transition(schedule, tk, &x0, &x1, eta, &z)?;
        check_finite_state(&x, tk)?;
    }
    Ok(x)
}

/// Rademacher probe matrices for Hutchinson trace estimation.
pub fn rademacher_probes(n: usize, d: usize, count: usize, rng: &mut Rng) -> Vec<Matrix> {
    (0..count).map(|_| Matrix::from_fn(n, d, |_, _| rng::rademacher(rng))).collect()
}

/// Hutchinson estimate `(1/K) Σ_k p_kᵀ J_x v p_k` of the divergence, per row.
pub fn hutchinson_divergence(field: &dyn VelocityField, x: &Matrix, t: &[f64], probes: &[Matrix]) -> Result<Vec<f64>> {
    Ok(velocity_and_divergence(field, x, t, probes)?.1)
}

fn velocity_and_divergence(
    field: &dyn VelocityField,
    x: &Matrix,
    t: &[f64],
    probes: &[Matrix],
) -> Result<(Matrix, Vec<f64>)> {
    let (v, jvps) = field.velocity_and_jvps(x, t, probes)?;
    let mut div = vec![0.0; x.rows()];
    for (p, jp) in probes.iter().zip(&jvps) {
        for (i, dv) in div.iter_mut().enumerate() {
            *dv += p.row(i).iter().zip(jp.row(i)).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let k = probes.len().max(1) as f64;
    div.iter_mut().for_each(|v| *v /= k);
    Ok((v, div))
}

/// Settings of the likelihood integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllConfig {
    pub probes: usize,
    pub atol: f64,
    pub rtol: f64,
    pub seed: u64,
    /// Smallest step before the integrator gives up.
    pub min_step: f64,
}

impl Default for NllConfig {
    fn default() -> Self {
        NllConfig { probes: 10, atol: 1e-5, rtol: 1e-5, seed: 0, min_step: 1e-10 }
    }
}

/// Likelihood estimate of a data set under a model.
#[derive(Debug, Clone, PartialEq)]
pub struct NllEstimate {
    /// Mean negative log-likelihood per point divided by `d`, in data space.
    pub nll_per_dim: f64,
    /// Per-point negative log-likelihood in data space.
    pub per_point: Vec<f64>,
    /// Per-point transform correction `−log|det J_Φ(x)|` (plus any standardization scale term).
    pub jacobian_term: Vec<f64>,
    pub hutchinson_probes: usize,
    pub atol: f64,
    pub rtol: f64,
    /// Number of accepted integrator steps.
    pub steps: usize,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrate `dx/dt = v(x, t)` and `dℓ/dt = div v(x, t)` from `t = 0` to `1`
/// with adaptive Dormand–Prince steps. Returns `(x_1, ∫ div v dt, accepted steps)`.
pub fn integrate_divergence(
    field: &dyn VelocityField,
    x0: &Matrix,
    probes: &[Matrix],
    cfg: &NllConfig,
) -> Result<(Matrix, Vec<f64>, usize)> {
    let (n, d) = (x0.rows(), x0.cols());
    let mut x = x0.clone();
    let mut ell = vec![0.0; n];
    let mut t = 0.0;
    let mut h: f64 = 0.05;
    let mut tv = vec![0.0; n];
    let mut eval = |x: &Matrix, time: f64| -> Result<(Matrix, Vec<f64>)> {
        tv.iter_mut().for_each(|v| *v = time);
        velocity_and_divergence(field, x, &tv, probes)
    };
    let mut k1 = eval(&x, t)?;
    let mut accepted = 0;
    while t < 1.0 {
        h = h.min(1.0 - t);
        let mut ks: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(7);
        ks.push(k1.clone());
        let mut y_stage = x.clone();
        let mut l_stage = ell.clone();
        for s in 1..7 {
            y_stage.as_mut_slice().copy_from_slice(x.as_slice());
            l_stage.copy_from_slice(&ell);
            for (r, k) in ks.iter().enumerate() {
                let a = A[s][r];
                if a != 0.0 {
                    y_stage.add_scaled(h * a, &k.0);
                    for (l, kv) in l_stage.iter_mut().zip(&k.1) {
                        *l += h * a * kv;
                    }
                }
            }
            ks.push(eval(&y_stage, t + C[s] * h)?);
        }
        // The seventh stage is evaluated at the fifth-order solution.
        let (y_new, l_new) = (y_stage, l_stage);
        let mut sum = 0.0;
        let mut worst = (0usize, 0.0f64);
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..d {
                let e: f64 = h * (0..7).map(|s| E[s] * ks[s].0.get(i, j)).sum::<f64>();
                let sc = cfg.atol + cfg.rtol * x.get(i, j).abs().max(y_new.get(i, j).abs());
                row_sum += (e / sc) * (e / sc);
            }
            let e: f64 = h * (0..7).map(|s| E[s] * ks[s].1[i]).sum::<f64>();
            let sc = cfg.atol + cfg.rtol * ell[i].abs().max(l_new[i].abs());
            row_sum += (e / sc) * (e / sc);
            if row_sum > worst.1 {
                worst = (i, row_sum);
            }
            sum += row_sum;
        }
        let err = libm::sqrt(sum / (n * (d + 1)) as f64);
        if !err.is_finite() || !y_new.is_finite() {
            return Err(Error::Diverged(format!("non-finite likelihood state at t = {t}")));
        }
        if err <= 1.0 {
            t += h;
            x = y_new;
            ell = l_new;
            k1 = ks.pop().unwrap();
            accepted += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * libm::pow(err, -0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if t < 1.0 && h < cfg.min_step {
            return Err(Error::StepSizeUnderflow { t, point: worst.0 });
        }
    }
    Ok((x, ell, accepted))
}

/// Negative log-likelihood of rows `y` (already in model space) under the flow
/// with standard Gaussian base: `−log N(x_1) − ∫ div v dt`, per row.
pub fn latent_nll(field: &dyn VelocityField, y: &Matrix, cfg: &NllConfig) -> Result<(Vec<f64>, usize)> {
    if cfg.probes == 0 {
        return Err(Error::invalid("probes", "must be at least 1"));
    }
    let mut rng = rng::seeded(cfg.seed);
    let probes = rademacher_probes(y.rows(), y.cols(), cfg.probes, &mut rng);
    let (x1, ell, steps) = integrate_divergence(field, y, &probes, cfg)?;
    let d = y.cols() as f64;
    let log_norm = 0.5 * d * libm::log(2.0 * PI);
    let nll = (0..y.rows())
        .map(|i| {
            let sq: f64 = x1.row(i).iter().map(|v| v * v).sum();
            0.5 * sq + log_norm - ell[i]
        })
        .collect();
    Ok((nll, steps))
}

/// How the training data are mapped before flow matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformMode {
    /// Soft-log on the coordinates selected by the Hill diagnostic.
    Adaptive,
    /// Soft-log on every coordinate.
    Uniform,
    /// Arcsinh on every coordinate.
    Arcsinh,
    /// No transform (plain flow matching).
    Identity,
}

impl TransformMode {
    pub const ALL: [TransformMode; 4] =
        [TransformMode::Adaptive, TransformMode::Uniform, TransformMode::Arcsinh, TransformMode::Identity];

    pub fn name(self) -> &'static str {
        match self {
            TransformMode::Adaptive => "adaptive",
            TransformMode::Uniform => "uniform",
            TransformMode::Arcsinh => "arcsinh",
            TransformMode::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Fit the transform on training data.
    pub fn fit(self, data: &Matrix, alpha_max: f64, hill_k: usize) -> Result<TransformSpec> {
        let d = data.cols();
        Ok(match self {
            TransformMode::Adaptive => TransformSpec::fit(Family::SoftLog, data, alpha_max, hill_k)?,
            TransformMode::Uniform => TransformSpec::uniform(Family::SoftLog, d),
            TransformMode::Arcsinh => TransformSpec::uniform(Family::Arcsinh, d),
            TransformMode::Identity => TransformSpec::identity(d),
        })
    }
}

/// Per-coordinate affine standardization `(y − mean)/scale` of transformed data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(y: &Matrix) -> Self {
        let n = y.rows() as f64;
        let mut mean = vec![0.0; y.cols()];
        let mut scale = vec![0.0; y.cols()];
        for j in 0..y.cols() {
            let c = y.column(j);
            let m = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            scale[j] = if var > 0.0 { libm::sqrt(var) } else { 1.0 };
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, y: &Matrix) -> Matrix {
        Matrix::from_fn(y.rows(), y.cols(), |i, j| (y.get(i, j) - self.mean[j]) / self.scale[j])
    }

    pub fn invert(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j) * self.scale[j] + self.mean[j])
    }

    /// `Σ_j log scale_j`, the log-density correction of the standardization.
    pub fn log_scale(&self) -> f64 {
        self.scale.iter().map(|s| libm::log(*s)).sum()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub mode: TransformMode,
    pub alpha_max: f64,
    /// Order statistics for the Hill gate; `None` uses the default for the sample size.
    pub hill_k: Option<usize>,
    pub max_epochs: usize,
    /// Early-stopping patience; `None` trains for exactly `max_epochs`.
    pub patience: Option<usize>,
    pub optimizer: AdamWConfig,
    pub width: usize,
    pub depth: usize,
    pub embed_pairs: usize,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::Linear,
            mode: TransformMode::Adaptive,
            alpha_max: TransformSpec::DEFAULT_ALPHA_MAX,
            hill_k: None,
            max_epochs: 5000,
            patience: Some(100),
            optimizer: AdamWConfig::default(),
            width: 256,
            depth: 4,
            embed_pairs: 128,
            standardize: false,
            seed: 0,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` when there is no validation set.
    pub val_loss: f64,
    pub grad_norm: f64,
}

/// A trained velocity network together with everything needed to decode samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: VelocityNet,
    pub transform: TransformSpec,
    pub schedule: Schedule,
    pub standardizer: Option<Standardizer>,
    pub labels: Vec<MarginLabel>,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (the best validation loss).
    pub best_epoch: usize,
    pub seed: u64,
}

// Stream labels for derived seeds.
const STREAM_NET: u64 = 1;
const STREAM_EPOCH: u64 = 2;
const STREAM_VAL: u64 = 3;

/// Fit the transform on the training margins, map the data, and run
/// full-batch flow matching with AdamW, keeping the parameters of the epoch
/// with the lowest validation loss.
pub fn train(train_data: &SampleMatrix, val_data: Option<&SampleMatrix>, cfg: &TrainConfig) -> Result<TrainedModel> {
    let d = train_data.d();
    if train_data.n() < 2 {
        return Err(Error::invalid("n_train", "need at least 2 training rows"));
    }
    if cfg.max_epochs == 0 || cfg.max_epochs > 5000 {
        return Err(Error::invalid("max_epochs", "must lie in 1..=5000"));
    }
    let val_data = val_data.filter(|v| v.n() > 0);
    if cfg.patience.is_some() && val_data.is_none() {
        return Err(Error::invalid("validation", "early stopping needs a nonempty validation set"));
    }
    if let Some(v) = val_data {
        if v.d() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.d() });
        }
    }
    let k = cfg.hill_k.unwrap_or_else(|| gating_k(train_data.n()));
    let transform = cfg.mode.fit(&train_data.data, cfg.alpha_max, k)?;
    let mut y = transform.apply_forward(&train_data.data)?;
    let standardizer = cfg.standardize.then(|| Standardizer::fit(&y));
    if let Some(s) = &standardizer {
        y = s.apply(&y);
    }

    // Validation interpolants are drawn once so the validation loss is a
    // deterministic function of the parameters.
    let val = match val_data {
        Some(v) => {
            let mut yv = transform.apply_forward(&v.data)?;
            if let Some(s) = &standardizer {
                yv = s.apply(&yv);
            }
            let mut rng = rng::seeded(rng::derive_seed(cfg.seed, &[STREAM_VAL]));
            let t: Vec<f64> = (0..yv.rows()).map(|_| rng::open01(&mut rng)).collect();
            let noise = Matrix::from_vec(yv.rows(), d, rng::standard_normals(&mut rng, yv.rows() * d))?;
            let (xt, u) = interpolate(cfg.schedule, &yv, &noise, &t)?;
            Some((xt, t, u))
        }
        None => None,
    };

    let net_cfg = NetConfig { d, width: cfg.width, depth: cfg.depth, embed_pairs: cfg.embed_pairs };
    let mut net = VelocityNet::new(net_cfg, rng::derive_seed(cfg.seed, &[STREAM_NET]));
    let mut opt = AdamW::new(cfg.optimizer, net.params().len());
    let mut stopper = cfg.patience.map(EarlyStopping::new);
    let mut best_params = net.params().to_vec();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, &[STREAM_EPOCH]));
    let n = y.rows();
    for epoch in 1..=cfg.max_epochs {
        let t: Vec<f64> = (0..n).map(|_| rng::open01(&mut rng)).collect();
        let noise = Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect())?;
        let (xt, u) = interpolate(cfg.schedule, &y, &noise, &t)?;
        let (train_loss, mut grad) = net
            .loss_and_grad(&xt, &t, &u)
            .map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}")))?;
        let grad_norm = opt.step(net.params_mut(), &mut grad).map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}")))?;
        let val_loss = match &val {
            Some((xv, tv, uv)) => net.loss(xv, tv, uv)?,
            None => f64::NAN,
        };
        log.push(EpochLog { epoch, train_loss, val_loss, grad_norm });
        if val.is_some() && !val_loss.is_finite() {
            return Err(Error::Diverged(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        match stopper.as_mut() {
            Some(s) => {
                let (improved, stop) = s.observe(val_loss);
                if improved {
                    best_params.copy_from_slice(net.params());
                    best_epoch = epoch;
                }
                if stop {
                    break;
                }
            }
            None => best_epoch = epoch,
        }
    }
    if stopper.is_some() {
        net.params_mut().copy_from_slice(&best_params);
    }
    Ok(TrainedModel {
        net,
        transform,
        schedule: cfg.schedule,
        standardizer,
        labels: train_data.labels.clone(),
        log,
        best_epoch,
        seed: cfg.seed,
    })
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    /// Map model-space rows back to data space.
    pub fn decode(&self, latent: &Matrix, clamp: f64) -> Result<SampleMatrix> {
        let y = match &self.standardizer {
            Some(s) => s.invert(latent),
            None => latent.clone(),
        };
        let x = self.transform.apply_inverse(&y, clamp)?;
        SampleMatrix::new(x, self.labels.clone(), 0)
    }

    /// Map data-space rows to model space.
    pub fn encode(&self, data: &Matrix) -> Result<Matrix> {
        let y = self.transform.apply_forward(data)?;
        Ok(match &self.standardizer {
            Some(s) => s.apply(&y),
            None => y,
        })
    }

    /// Euler sampling of model-space rows from the noise drawn with `seed`.
    pub fn sample_latent(&self, n: usize, steps: usize, seed: u64) -> Result<Matrix> {
        euler_sample(&self.net, &initial_noise(n, self.dim(), seed), steps)
    }

    /// Draw `n` data-space samples with `steps` Euler steps; transformed
    /// coordinates are clamped to `[−clamp, clamp]` before inversion.
    pub fn sample(&self, n: usize, steps: usize, clamp: f64, seed: u64) -> Result<SampleMatrix> {
        self.decode(&self.sample_latent(n, steps, seed)?, clamp)
    }

    pub fn ddim_sample(&self, n: usize, steps: usize, eta: EtaMode, clamp: f64, seed: u64) -> Result<SampleMatrix> {
        let noise = initial_noise(n, self.dim(), seed);
        let latent = ddim_sample(&self.net, self.schedule, &noise, steps, eta, rng::derive_seed(seed, &[1]))?;
        self.decode(&latent, clamp)
    }

    /// Data-space negative log-likelihood: the latent flow likelihood plus the
    /// change-of-variables term of the transform (and standardization).
    pub fn nll(&self, data: &Matrix, cfg: &NllConfig) -> Result<NllEstimate> {
        if data.cols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: data.cols() });
        }
        if data.rows() == 0 {
            return Err(Error::Empty);
        }
        let y = self.encode(data)?;
        let (latent, steps) = latent_nll(&self.net, &y, cfg)?;
        let std_term = self.standardizer.as_ref().map_or(0.0, Standardizer::log_scale);
        let jacobian_term =
            (0..data.rows()).map(|i| Ok(std_term - self.transform.log_det_jacobian(data.row(i))?)).collect::<Result<Vec<f64>>>()?;
        let per_point: Vec<f64> = latent.iter().zip(&jacobian_term).map(|(a, b)| a + b).collect();
        let nll_per_dim = per_point.iter().sum::<f64>() / (per_point.len() * self.dim()) as f64;
        Ok(NllEstimate {
            nll_per_dim,
            per_point,
            jacobian_term,
            hutchinson_probes: cfg.probes,
            atol: cfg.atol,
            rtol: cfg.rtol,
            steps,
        })
    }

    pub fn describe(&self) -> String {
        format!(
            "d={} schedule={} family={} masked={} epochs={} best_epoch={}",
            self.dim(),
            self.schedule.name(),
            self.transform.family().name(),
            self.transform.mask().iter().filter(|&&m| m).count(),
            self.log.len(),
            self.best_epoch
        )
    }
}
