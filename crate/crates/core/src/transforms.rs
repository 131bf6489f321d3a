//! Coordinate-wise tail-compressing transforms.
//!
//! The soft-log `φ(x) = sign(x)·log(1 + |x|)` maps power-law tails to
//! exponential ones. Its scaled form `φ_s(x) = φ(s·x)/s` moves the cross-over
//! between the linear bulk and the logarithmic tail to `|x| ≈ 1/s`; `s = 0` is
//! the identity. The arcsinh family is the smooth (C^∞) counterpart with the
//! same logarithmic asymptote.
//!
//! The forward map contracts: for a transformed soft-log coordinate the Jacobian
//! entry is `1/(1 + s|x|)`, so [`TransformSpec::log_det_jacobian`] is `≤ 0`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::evt;
use crate::{Error, Matrix, Result};

/// Largest `|y|` for which `e^{|y|} − 1` is finite.
const EXPM1_MAX_ARG: f64 = 709.782_712_893_383_9;

pub fn soft_log(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(soft_log_unchecked(x))
}

#[inline]
fn soft_log_unchecked(x: f64) -> f64 {
    libm::copysign(libm::log1p(x.abs()), x)
}

pub fn soft_log_inv(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite);
    }
    if y.abs() > EXPM1_MAX_ARG {
        return Err(Error::InverseOverflow { row: 0, coord: 0 });
    }
    Ok(libm::copysign(libm::expm1(y.abs()), y))
}

/// `φ_s(x) = sign(x)·log(1 + s|x|)/s`, with the identity at `s = 0`.
pub fn phi_s2(x: f64, s2: f64) -> Result<f64> {
    check_scale(s2)?;
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(Family::SoftLog.forward(x, s2))
}

pub fn phi_s2_inv(y: f64, s2: f64) -> Result<f64> {
    check_scale(s2)?;
    if !y.is_finite() {
        return Err(Error::NonFinite);
    }
    Family::SoftLog.inverse(y, s2).ok_or(Error::InverseOverflow { row: 0, coord: 0 })
}

pub fn arcsinh_t(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(libm::asinh(x))
}

pub fn arcsinh_inv(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite);
    }
    let x = libm::sinh(y);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InverseOverflow { row: 0, coord: 0 })
    }
}

fn check_scale(s2: f64) -> Result<()> {
    if !(s2 >= 0.0 && s2.is_finite()) {
        return Err(Error::invalid("s2", format!("must be a finite nonnegative number, got {s2}")));
    }
    Ok(())
}

/// Global transform family. Per coordinate, a zero scale (unmasked) means identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    SoftLog,
    Arcsinh,
    Identity,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::SoftLog => "soft_log",
            Family::Arcsinh => "arcsinh",
            Family::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "soft_log" | "softlog" | "log" => Some(Family::SoftLog),
            "arcsinh" | "asinh" => Some(Family::Arcsinh),
            "identity" | "none" => Some(Family::Identity),
            _ => None,
        }
    }

    #[inline]
    fn forward(self, x: f64, s: f64) -> f64 {
        if s == 0.0 {
            return x;
        }
        match self {
            Family::Identity => x,
            Family::SoftLog if s == 1.0 => soft_log_unchecked(x),
            Family::SoftLog => libm::copysign(libm::log1p(s * x.abs()), x) / s,
            Family::Arcsinh if s == 1.0 => libm::asinh(x),
            Family::Arcsinh => libm::asinh(s * x) / s,
        }
    }

    /// `None` on overflow.
    #[inline]
    fn inverse(self, y: f64, s: f64) -> Option<f64> {
        if s == 0.0 {
            return Some(y);
        }
        let x = match self {
            Family::Identity => y,
            Family::SoftLog => {
                if s * y.abs() > EXPM1_MAX_ARG {
                    return None;
                }
                if s == 1.0 {
                    libm::copysign(libm::expm1(y.abs()), y)
                } else {
                    libm::copysign(libm::expm1(s * y.abs()), y) / s
                }
            }
            Family::Arcsinh if s == 1.0 => libm::sinh(y),
            Family::Arcsinh => libm::sinh(s * y) / s,
        };
        x.is_finite().then_some(x)
    }

    /// `log |dφ_s/dx|`.
    #[inline]
    fn log_derivative(self, x: f64, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        match self {
            Family::Identity => 0.0,
            Family::SoftLog => -libm::log1p(s * x.abs()),
            Family::Arcsinh => -0.5 * libm::log1p((s * x) * (s * x)),
        }
    }
}

/// Per-coordinate transform: a family, a scale per coordinate, and the Hill mask.
///
/// Invariant: `mask[j] == (s2[j] > 0)` and `s2[j] == 0` for every coordinate when
/// the family is [`Family::Identity`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    family: Family,
    s2: Vec<f64>,
    mask: Vec<bool>,
    alpha_max: f64,
}

impl TransformSpec {
    pub const DEFAULT_ALPHA_MAX: f64 = 4.0;

    /// Every coordinate untouched.
    pub fn identity(d: usize) -> Self {
        TransformSpec {
            family: Family::Identity,
            s2: alloc::vec![0.0; d],
            mask: alloc::vec![false; d],
            alpha_max: Self::DEFAULT_ALPHA_MAX,
        }
    }

    /// Every coordinate transformed at unit scale.
    pub fn uniform(family: Family, d: usize) -> Self {
        Self::from_mask(family, alloc::vec![true; d], Self::DEFAULT_ALPHA_MAX)
    }

    /// Binary gating: scale 1 where `mask[j]`, identity elsewhere.
    pub fn from_mask(family: Family, mask: Vec<bool>, alpha_max: f64) -> Self {
        if family == Family::Identity {
            return TransformSpec { alpha_max, ..Self::identity(mask.len()) };
        }
        let s2 = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        TransformSpec { family, s2, mask, alpha_max }
    }

    /// Continuous scales; the mask follows `s2 > 0`.
    pub fn with_scales(family: Family, s2: Vec<f64>, alpha_max: f64) -> Result<Self> {
        for &s in &s2 {
            check_scale(s)?;
        }
        if family == Family::Identity && s2.iter().any(|&s| s > 0.0) {
            return Err(Error::invalid("s2", "identity family requires all scales to be zero"));
        }
        let mask = s2.iter().map(|&s| s > 0.0).collect();
        Ok(TransformSpec { family, s2, mask, alpha_max })
    }

    /// Fit the Hill-gated mask on training data: coordinate `j` is transformed iff
    /// its Hill tail index is at most `alpha_max`.
    pub fn fit(family: Family, data: &Matrix, alpha_max: f64, k: usize) -> Result<Self> {
        if family == Family::Identity {
            return Ok(TransformSpec { alpha_max, ..Self::identity(data.cols()) });
        }
        let mask = evt::hill_mask(data, alpha_max, k)?;
        Ok(Self::from_mask(family, mask, alpha_max))
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn s2(&self) -> &[f64] {
        &self.s2
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    /// Effective family of coordinate `j`.
    pub fn coordinate_family(&self, j: usize) -> Family {
        if self.mask[j] {
            self.family
        } else {
            Family::Identity
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: d });
        }
        Ok(())
    }

    pub fn forward_value(&self, j: usize, x: f64) -> f64 {
        self.family.forward(x, self.s2[j])
    }

    pub fn apply_forward(&self, data: &Matrix) -> Result<Matrix> {
        self.check_dim(data.cols())?;
        if !data.is_finite() {
            return Err(Error::NonFinite);
        }
        let mut out = data.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                if self.mask[j] {
                    *v = self.family.forward(*v, self.s2[j]);
                }
            }
        }
        Ok(out)
    }

    /// Clamp transformed coordinates to `[−clamp, clamp]` (pass `f64::INFINITY`
    /// to disable) and invert. Untransformed coordinates pass through untouched.
    pub fn apply_inverse(&self, data: &Matrix, clamp: f64) -> Result<Matrix> {
        self.check_dim(data.cols())?;
        if !(clamp > 0.0) {
            return Err(Error::invalid("clamp", format!("must be positive or infinite, got {clamp}")));
        }
        let mut out = data.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite);
                }
                if self.mask[j] {
                    let y = v.clamp(-clamp, clamp);
                    *v = self
                        .family
                        .inverse(y, self.s2[j])
                        .ok_or(Error::InverseOverflow { row: i, coord: j })?;
                }
            }
        }
        Ok(out)
    }

    /// `log |det J_Φ(x)|` of the forward map (nonpositive). The data-space
    /// likelihood correction is its negation.
    pub fn log_det_jacobian(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(x.iter()
            .enumerate()
            .filter(|&(j, _)| self.mask[j])
            .map(|(j, &v)| self.family.log_derivative(v, self.s2[j]))
            .sum())
    }

    /// Key-value text block used inside model checkpoints.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "family = {}", self.family.name());
        let _ = writeln!(s, "alpha_max = {:?}", self.alpha_max);
        let mask: Vec<&str> = self.mask.iter().map(|&m| if m { "1" } else { "0" }).collect();
        let _ = writeln!(s, "mask = {}", mask.join(" "));
        let s2: Vec<String> = self.s2.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "s2 = {}", s2.join(" "));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut family = None;
        let mut alpha_max = None;
        let mut mask = None;
        let mut s2 = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid("transform", format!("malformed line `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "family" => {
                    family = Some(
                        Family::parse(value)
                            .ok_or_else(|| Error::invalid("family", value.to_string()))?,
                    )
                }
                "alpha_max" => alpha_max = Some(parse_f64("alpha_max", value)?),
                "mask" => {
                    mask = Some(
                        value
                            .split_whitespace()
                            .map(|t| match t {
                                "1" => Ok(true),
                                "0" => Ok(false),
                                _ => Err(Error::invalid("mask", t.to_string())),
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "s2" => {
                    s2 = Some(
                        value.split_whitespace().map(|t| parse_f64("s2", t)).collect::<Result<Vec<_>>>()?,
                    )
                }
                other => return Err(Error::invalid("transform", format!("unknown key `{other}`"))),
            }
        }
        let family = family.ok_or_else(|| Error::invalid("transform", "missing `family`"))?;
        let alpha_max = alpha_max.unwrap_or(Self::DEFAULT_ALPHA_MAX);
        let s2 = s2.ok_or_else(|| Error::invalid("transform", "missing `s2`"))?;
        let spec = Self::with_scales(family, s2, alpha_max)?;
        if let Some(mask) = mask {
            if mask != spec.mask {
                return Err(Error::invalid("mask", "inconsistent with s2"));
            }
        }
        Ok(spec)
    }
}

pub(crate) fn parse_f64(name: &'static str, s: &str) -> Result<f64> {
    match s {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => s.parse::<f64>().map_err(|_| Error::invalid(name, format!("not a number: `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::E;

    #[test]
    fn soft_log_examples() {
        assert_eq!(soft_log(0.0).unwrap(), 0.0);
        assert!((soft_log(E - 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((soft_log(-(E * E - 1.0)).unwrap() + 2.0).abs() < 1e-15);
        assert_eq!(soft_log(f64::NAN), Err(Error::NonFinite));
        assert_eq!(soft_log(f64::INFINITY), Err(Error::NonFinite));
    }

    #[test]
    fn soft_log_inverse_examples() {
        assert!((soft_log_inv(1.0).unwrap() - (E - 1.0)).abs() < 1e-15);
        assert_eq!(soft_log_inv(0.0).unwrap(), 0.0);
        let x = 1e6;
        let back = soft_log_inv(soft_log(x).unwrap()).unwrap();
        assert!((back - x).abs() / x <= 1e-12);
        assert!(matches!(soft_log_inv(710.0), Err(Error::InverseOverflow { .. })));
        assert!(soft_log_inv(-709.0).unwrap().is_finite());
    }

    #[test]
    fn scaled_family_examples() {
        assert_eq!(phi_s2(5.0, 0.0).unwrap(), 5.0);
        assert!((phi_s2((E * E - 1.0) / 2.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((phi_s2(E - 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(phi_s2(1.0, -0.5).is_err());
        for &x in &[-3.0, -0.2, 0.0, 0.7, 40.0] {
            assert_eq!(phi_s2(x, 1.0).unwrap(), soft_log(x).unwrap());
        }
        // Converges to the identity as s2 -> 0.
        assert!((phi_s2(3.0, 1e-9).unwrap() - 3.0).abs() < 1e-7);
    }

    #[test]
    fn arcsinh_examples() {
        assert_eq!(arcsinh_t(0.0).unwrap(), 0.0);
        assert!((arcsinh_t(libm::sinh(2.0)).unwrap() - 2.0).abs() < 1e-15);
        let gap = (arcsinh_t(1e6).unwrap() - soft_log(1e6).unwrap()).abs();
        assert!(gap < 0.7, "gap {gap}");
        assert!(arcsinh_t(f64::NAN).is_err());
    }

    #[test]
    fn forward_masks_and_preserves_bits() {
        let m = Matrix::from_rows(&[vec![E - 1.0, 17.25], vec![-3.5, -0.125]]).unwrap();
        let none = TransformSpec::from_mask(Family::SoftLog, vec![false, false], 4.0);
        assert_eq!(none.apply_forward(&m).unwrap(), m);

        let one = TransformSpec::uniform(Family::SoftLog, 1);
        let single = Matrix::from_rows(&[vec![E - 1.0]]).unwrap();
        assert!((one.apply_forward(&single).unwrap().get(0, 0) - 1.0).abs() < 1e-15);

        let mixed = TransformSpec::from_mask(Family::SoftLog, vec![true, false], 4.0);
        let out = mixed.apply_forward(&m).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(out.get(0, 1).to_bits(), m.get(0, 1).to_bits());
        assert_eq!(out.get(1, 1).to_bits(), m.get(1, 1).to_bits());

        let wrong = TransformSpec::uniform(Family::SoftLog, 3);
        assert!(matches!(wrong.apply_forward(&m), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn inverse_clamps_in_log_space() {
        let spec = TransformSpec::uniform(Family::SoftLog, 1);
        let y = Matrix::from_rows(&[vec![12.0]]).unwrap();
        let x = spec.apply_inverse(&y, 10.0).unwrap();
        assert_eq!(x.get(0, 0), libm::expm1(10.0));

        let inside = Matrix::from_rows(&[vec![-7.9], vec![3.25], vec![8.0]]).unwrap();
        let a = spec.apply_inverse(&inside, 10.0).unwrap();
        let b = spec.apply_inverse(&inside, f64::INFINITY).unwrap();
        assert_eq!(a, b);

        let huge = Matrix::from_rows(&[vec![0.0, 800.0]]).unwrap();
        let spec2 = TransformSpec::uniform(Family::SoftLog, 2);
        assert_eq!(spec2.apply_inverse(&huge, f64::INFINITY), Err(Error::InverseOverflow { row: 0, coord: 1 }));
        assert!(spec2.apply_inverse(&huge, 10.0).is_ok());
        assert!(spec2.apply_inverse(&huge, 0.0).is_err());
    }

    #[test]
    fn log_det_examples() {
        let off = TransformSpec::from_mask(Family::SoftLog, vec![false, false], 4.0);
        assert_eq!(off.log_det_jacobian(&[3.0, -2.0]).unwrap(), 0.0);
        let one = TransformSpec::uniform(Family::SoftLog, 1);
        assert!((one.log_det_jacobian(&[E - 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let mixed = TransformSpec::from_mask(Family::SoftLog, vec![true, false], 4.0);
        assert!((mixed.log_det_jacobian(&[E - 1.0, 17.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_det_matches_finite_differences() {
        for family in [Family::SoftLog, Family::Arcsinh] {
            for &s in &[0.5, 1.0, 2.0] {
                let spec = TransformSpec::with_scales(family, vec![s], 4.0).unwrap();
                for &x in &[-4.0, -0.3, 0.6, 25.0] {
                    let h = 1e-6 * (1.0 + f64::abs(x));
                    let fd = (spec.forward_value(0, x + h) - spec.forward_value(0, x - h)) / (2.0 * h);
                    let ld = spec.log_det_jacobian(&[x]).unwrap();
                    assert!((libm::log(fd) - ld).abs() < 1e-8, "{family:?} s={s} x={x}");
                }
            }
        }
    }

    #[test]
    fn second_derivative_jumps_at_origin() {
        let f = |x: f64| soft_log(x).unwrap();
        let h = 1e-3;
        let left = (f(-h) - 2.0 * f(-2.0 * h) + f(-3.0 * h)) / (h * h);
        let right = (f(3.0 * h) - 2.0 * f(2.0 * h) + f(h)) / (h * h);
        assert!(left > 0.5 && right < -0.5, "left {left} right {right}");
        // arcsinh is smooth: both one-sided estimates are close to zero.
        let g = |x: f64| arcsinh_t(x).unwrap();
        let left = (g(-h) - 2.0 * g(-2.0 * h) + g(-3.0 * h)) / (h * h);
        let right = (g(3.0 * h) - 2.0 * g(2.0 * h) + g(h)) / (h * h);
        assert!(left.abs() < 0.02 && right.abs() < 0.02);
    }

    #[test]
    fn text_round_trip() {
        let spec = TransformSpec::with_scales(Family::Arcsinh, vec![1.0, 0.0, 0.37], 3.5).unwrap();
        let back = TransformSpec::from_text(&spec.to_text()).unwrap();
        assert_eq!(back, spec);
        assert!(TransformSpec::from_text("family = soft_log\ns2 = 1 0\nmask = 1 1\n").is_err());
        assert!(TransformSpec::from_text("family = nope\ns2 = 1\n").is_err());
    }

    #[test]
    fn identity_family_ignores_mask() {
        let spec = TransformSpec::from_mask(Family::Identity, vec![true, true], 4.0);
        assert_eq!(spec.mask(), &[false, false]);
        assert!(TransformSpec::with_scales(Family::Identity, vec![1.0], 4.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn forward_is_odd_and_monotone(x in -1e6f64..1e6, dx in 1e-6f64..10.0, s in prop::sample::select(vec![0.0, 0.5, 1.0, 2.0])) {
                for family in [Family::SoftLog, Family::Arcsinh] {
                    let f = |v: f64| family.forward(v, s);
                    prop_assert_eq!(f(-x), -f(x));
                    prop_assert!(f(x + dx) > f(x));
                }
            }
        }
    }
}
