//! The nonlinearity `g`, its primitive `G`, the pointwise map
//! `f(w) = g(|w|²) w`, the interaction remainder `f̃` and the maps `h`, `𝔢`
//! that feed the bound-state fixed point.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_real, ComplexField, RealField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `g(s) = λ s^p`
    #[default]
    Power,
    /// `g(s) = λ s^p / (1 + s)`
    Saturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nonlinearity {
    pub family: Family,
    pub p: f64,
    pub lambda: f64,
}

/// Focusing cubic.
impl Default for Nonlinearity {
    fn default() -> Self {
        Self {
            family: Family::Power,
            p: 1.0,
            lambda: -1.0,
        }
    }
}

/// Limit at `s = 0` of `c s^e`: zero for `e > 0`, `c` for `e = 0`, and zero by
/// convention when the power is singular.
#[inline]
fn power_term(c: f64, s: f64, e: f64) -> f64 {
    if s == 0.0 {
        if e == 0.0 {
            c
        } else {
            0.0
        }
    } else {
        c * s.powf(e)
    }
}

impl Nonlinearity {
    pub fn power(p: f64, lambda: f64) -> Result<Self> {
        Self::new(Family::Power, p, lambda)
    }

    pub fn saturating(p: f64, lambda: f64) -> Result<Self> {
        Self::new(Family::Saturating, p, lambda)
    }

    pub fn new(family: Family, p: f64, lambda: f64) -> Result<Self> {
        let nl = Self { family, p, lambda };
        nl.validate()?;
        Ok(nl)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) || !self.p.is_finite() {
            return Err(Error::InvalidNonlinearity(format!(
                "exponent p must be positive, got {}",
                self.p
            )));
        }
        if self.lambda != 1.0 && self.lambda != -1.0 {
            return Err(Error::InvalidNonlinearity(format!(
                "sign lambda must be +1 or -1, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn is_defocusing(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn g(&self, s: f64) -> f64 {
        let base = power_term(self.lambda, s, self.p);
        match self.family {
            Family::Power => base,
            Family::Saturating => base / (1.0 + s),
        }
    }

    pub fn g_prime(&self, s: f64) -> f64 {
        let (p, l) = (self.p, self.lambda);
        match self.family {
            Family::Power => power_term(l * p, s, p - 1.0),
            Family::Saturating => {
                power_term(l * p, s, p - 1.0) / (1.0 + s)
                    - power_term(l, s, p) / ((1.0 + s) * (1.0 + s))
            }
        }
    }

    pub fn g_second(&self, s: f64) -> f64 {
        let (p, l) = (self.p, self.lambda);
        match self.family {
            Family::Power => power_term(l * p * (p - 1.0), s, p - 2.0),
            Family::Saturating => {
                let d = 1.0 + s;
                power_term(l * p * (p - 1.0), s, p - 2.0) / d
                    - power_term(2.0 * l * p, s, p - 1.0) / (d * d)
                    + power_term(2.0 * l, s, p) / (d * d * d)
            }
        }
    }

    /// Primitive `G` with `G' = g`, `G(0) = 0`.
    pub fn big_g(&self, s: f64) -> f64 {
        let (p, l) = (self.p, self.lambda);
        match self.family {
            Family::Power => power_term(l / (p + 1.0), s, p + 1.0),
            Family::Saturating => l * saturating_primitive(p, s),
        }
    }

    /// `(g(s), G(s))`.
    pub fn g_big_g(&self, s: f64) -> Result<(f64, f64)> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::NegativeArgument(s));
        }
        Ok((self.g(s), self.big_g(s)))
    }

    /// Pointwise `f(w) = g(|w|²) w`.
    #[inline]
    pub fn f_point(&self, w: Complex64) -> Complex64 {
        w * self.g(w.norm_sqr())
    }

    /// Pointwise `f̃(ζ, ξ) = f(ζ + ξ) - f(ξ) - f(ζ)`.
    #[inline]
    pub fn f_tilde_point(&self, zeta: Complex64, xi: Complex64) -> Complex64 {
        self.f_point(zeta + xi) - self.f_point(xi) - self.f_point(zeta)
    }

    /// `h̃(ρ, μ) = g(ρ μ²) μ`.
    #[inline]
    pub fn h_tilde(&self, rho: f64, mu: f64) -> f64 {
        self.g(rho * mu * mu) * mu
    }

    /// `∂_ρ h̃ = g'(ρμ²) μ³`.
    pub fn h_tilde_drho(&self, rho: f64, mu: f64) -> f64 {
        self.g_prime(rho * mu * mu) * mu * mu * mu
    }

    /// `∂_μ h̃ = g(ρμ²) + 2ρ g'(ρμ²) μ²`.
    pub fn h_tilde_dmu(&self, rho: f64, mu: f64) -> f64 {
        let s = rho * mu * mu;
        self.g(s) + 2.0 * rho * self.g_prime(s) * mu * mu
    }

    /// `s g(s) - G(s)`; nonnegative for every `s` is one of the hypotheses of
    /// the dispersion result.
    pub fn virial_defect(&self, s: f64) -> f64 {
        s * self.g(s) - self.big_g(s)
    }
}

/// `∫_0^s t^p / (1 + t) dt`.
fn saturating_primitive(p: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    const SPLIT: f64 = 0.5;
    let series = |s: f64| -> f64 {
        // Σ_k (-1)^k s^{p+1+k} / (p+1+k), alternating with ratio < s
        let mut sum = 0.0;
        let mut term = s.powf(p + 1.0);
        for k in 0..200 {
            let add = term / (p + 1.0 + k as f64);
            if k % 2 == 0 {
                sum += add;
            } else {
                sum -= add;
            }
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            term *= s;
        }
        sum
    };
    if s <= SPLIT {
        return series(s);
    }
    series(SPLIT) + gauss_legendre(|t| t.powf(p) / (1.0 + t), SPLIT, s)
}

/// Composite 8-point Gauss-Legendre on a smooth integrand.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const NODES: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const WEIGHTS: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let panels = ((b - a) * 8.0).ceil().max(4.0) as usize;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * width;
        let mid = lo + 0.5 * width;
        let half = 0.5 * width;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            total += w * half * (f(mid - half * x) + f(mid + half * x));
        }
    }
    total
}

pub fn f_eval(nl: &Nonlinearity, w: &ComplexField) -> ComplexField {
    w.map(|v| nl.f_point(v))
}

pub fn f_tilde(nl: &Nonlinearity, qz: &ComplexField, xi: &ComplexField) -> Result<ComplexField> {
    qz.zip_with(xi, |a, b| nl.f_tilde_point(a, b))
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::RhoOutOfRange(rho));
    }
    Ok(())
}

/// `h(ρ, q)(x) = g(ρ q(x)²) q(x)`.
pub fn h_eval(nl: &Nonlinearity, rho: f64, q: &RealField) -> Result<RealField> {
    check_rho(rho)?;
    Ok(q.map(|mu| nl.h_tilde(rho, mu)))
}

/// `𝔢(ρ, q) = <h(ρ, φ + q), φ>`.
pub fn e_eval(nl: &Nonlinearity, rho: f64, q: &RealField, phi: &RealField) -> Result<f64> {
    let shifted = phi.zip_with(q, |a, b| a + b)?;
    let h = h_eval(nl, rho, &shifted)?;
    inner_real(&h, phi)
}
