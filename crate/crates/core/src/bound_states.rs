//! Small standing waves bifurcating from the ground state of `H_q`.
//!
//! For `ρ = |z|²` the real profile `q(ρ) ∈ P_c` solves the fixed point
//! `q = R Φ(ρ, q)` with `Φ(ρ, q) = 𝔢(ρ, q)(φ + q) - h(ρ, φ + q)`, and
//! `Q[z] = z (φ + q(|z|²))`, `E(|z|²) = e + 𝔢(|z|², q(|z|²))`.
//!
//! `φ` and `e` are the discrete eigenpair, so `Q[z]` is a standing wave of
//! the discrete equation up to the Picard tolerance. The resolvent is shifted
//! by the closed-form `q²/4`; the small mismatch `e + q²/4` is carried into the
//! iteration as an extra linear term.

use std::sync::{Arc, RwLock};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{inner_real, norm_real, ComplexField, Grid, NormKind, RealField, I};
use crate::nonlinearity::{e_eval, h_eval, Family, Nonlinearity};
use crate::operator::{build_operator, DeltaOperator, Resolvent, SpectralData};

pub const DEFAULT_PROFILE_GAMMA: f64 = 0.2;
const PICARD_TOL: f64 = 1e-12;
const PICARD_MAX_ITERS: usize = 1000;
const CACHE_CAPACITY: usize = 48;

/// A converged profile `q(ρ)` together with its Picard history.
#[derive(Debug, Clone)]
pub struct Profile {
    pub rho: f64,
    pub q: RealField,
    /// `𝔢(ρ, q(ρ))`
    pub e: f64,
    pub iterations: usize,
    /// Successive difference ratios `‖q_{k+1}-q_k‖ / ‖q_k-q_{k-1}‖`.
    pub contraction: Vec<f64>,
    /// `‖q_k - R Φ(ρ, q_k)‖_{H¹_γ}` at exit.
    pub residual: f64,
}

impl Profile {
    /// Largest recorded contraction ratio, ignoring steps already at the
    /// round-off floor.
    pub fn max_contraction(&self) -> f64 {
        self.contraction.iter().cloned().fold(0.0, f64::max)
    }

    /// Two-column plain text `x q(x)`.
    pub fn to_text(&self) -> String {
        let grid = self.q.grid();
        let mut out = String::with_capacity(grid.len() * 32);
        out.push_str(&format!("# rho = {:e}, e = {:e}\n", self.rho, self.e));
        for (i, v) in self.q.values().iter().enumerate() {
            out.push_str(&format!("{:.10e} {:.16e}\n", grid.x(i), v));
        }
        out
    }
}

#[derive(Debug)]
pub struct BoundStateFamily {
    nl: Nonlinearity,
    op: DeltaOperator,
    sd: SpectralData,
    resolvent: Resolvent,
    gamma: f64,
    amplitude_cap: Option<f64>,
    cache: RwLock<Vec<Arc<Profile>>>,
}

impl Clone for BoundStateFamily {
    /// Shares nothing mutable: the clone starts with an empty cache.
    fn clone(&self) -> Self {
        Self {
            nl: self.nl,
            op: self.op.clone(),
            sd: self.sd.clone(),
            resolvent: self.resolvent.clone(),
            gamma: self.gamma,
            amplitude_cap: self.amplitude_cap,
            cache: RwLock::new(Vec::new()),
        }
    }
}

impl BoundStateFamily {
    pub fn new(nl: Nonlinearity, q: f64, grid: Grid) -> Result<Self> {
        let op = build_operator(q, grid)?;
        Self::from_operator(nl, &op)
    }

    pub fn from_operator(nl: Nonlinearity, op: &DeltaOperator) -> Result<Self> {
        nl.validate()?;
        let sd = SpectralData::numeric(op)?;
        let resolvent = Resolvent::new(op, &sd)?;
        Ok(Self {
            nl,
            op: op.clone(),
            sd,
            resolvent,
            gamma: DEFAULT_PROFILE_GAMMA,
            amplitude_cap: None,
            cache: RwLock::new(Vec::new()),
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_amplitude_cap(mut self, cap: f64) -> Self {
        self.amplitude_cap = Some(cap);
        self
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn operator(&self) -> &DeltaOperator {
        &self.op
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.sd
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn amplitude_cap(&self) -> Option<f64> {
        self.amplitude_cap
    }

    fn profile_norm(&self, q: &RealField) -> f64 {
        norm_real(q, NormKind::H1Gamma(self.gamma)).unwrap_or(f64::INFINITY)
    }

    /// `Φ(ρ, q) = 𝔢(ρ, q)(φ + q) - h(ρ, φ + q)`; returns `(Φ, 𝔢)`.
    pub fn phi_map(&self, rho: f64, q: &RealField) -> Result<(RealField, f64)> {
        if !(rho > 0.0) || rho > 1.0 {
            return Err(Error::RhoOutOfRange(rho));
        }
        if let Some(cap) = self.amplitude_cap {
            if rho >= cap * cap {
                return Err(Error::RhoOutOfRange(rho));
            }
        }
        let phi = &self.sd.phi;
        let e = e_eval(&self.nl, rho, q, phi)?;
        let shifted = phi.zip_with(q, |a, b| a + b)?;
        let h = h_eval(&self.nl, rho, &shifted)?;
        let out = shifted.zip_with(&h, |s, hv| e * s - hv)?;
        Ok((out, e))
    }

    fn picard_step(&self, rho: f64, q: &RealField) -> Result<(RealField, f64)> {
        let (phi_q, e) = self.phi_map(rho, q)?;
        let mismatch = self.sd.eigenvalue - self.sd.exact_eigenvalue;
        let rhs = phi_q.zip_with(q, |a, b| a + mismatch * b)?;
        Ok((self.resolvent.apply_real(&rhs)?, e))
    }

    /// Picard iteration `q ← R Φ(ρ, q)` from `q = 0`.
    pub fn solve_profile(&self, rho: f64) -> Result<Profile> {
        self.solve_profile_from(rho, RealField::zeros(*self.grid()))
    }

    pub fn solve_profile_from(&self, rho: f64, start: RealField) -> Result<Profile> {
        let mut q = start;
        let mut prev_diff = f64::NAN;
        let mut contraction = Vec::new();
        let mut growing = 0;
        for k in 1..=PICARD_MAX_ITERS {
            let (next, _) = self.picard_step(rho, &q)?;
            let diff = self.profile_norm(&(&next - &q));
            if !diff.is_finite() || self.profile_norm(&next) > 10.0 {
                return Err(Error::ProfileDiverged {
                    rho,
                    factor: if prev_diff > 0.0 { diff / prev_diff } else { f64::INFINITY },
                });
            }
            // ratios at the round-off floor say nothing about contraction
            if prev_diff.is_finite() && prev_diff > 1e3 * PICARD_TOL {
                let ratio = diff / prev_diff;
                contraction.push(ratio);
                if ratio >= 1.0 {
                    growing += 1;
                    if growing >= 3 {
                        return Err(Error::ProfileDiverged { rho, factor: ratio });
                    }
                } else {
                    growing = 0;
                }
            }
            q = next;
            prev_diff = diff;
            if diff < PICARD_TOL {
                let (check, e) = self.picard_step(rho, &q)?;
                let residual = self.profile_norm(&(&check - &q));
                return Ok(Profile {
                    rho,
                    q,
                    e,
                    iterations: k,
                    contraction,
                    residual,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: PICARD_MAX_ITERS,
            last_change: prev_diff,
        })
    }

    /// Cached profile, warm-started from the nearest cached `ρ` (scaled by
    /// the `ρ^p` law).
    pub fn profile(&self, rho: f64) -> Result<Arc<Profile>> {
        let nearest = {
            let cache = self.cache.read().expect("profile cache poisoned");
            let idx = cache.partition_point(|p| p.rho < rho);
            if idx < cache.len() && cache[idx].rho == rho {
                return Ok(cache[idx].clone());
            }
            let below = idx.checked_sub(1).map(|i| cache[i].clone());
            let above = cache.get(idx).cloned();
            match (below, above) {
                (Some(b), Some(a)) => Some(if rho - b.rho < a.rho - rho { b } else { a }),
                (b, a) => b.or(a),
            }
        };
        let start = match nearest {
            Some(p) if (p.rho / rho - 1.0).abs() < 0.5 => {
                let s = (rho / p.rho).powf(self.nl.p);
                s * &p.q
            }
            _ => RealField::zeros(*self.grid()),
        };
        let profile = Arc::new(self.solve_profile_from(rho, start)?);
        let mut cache = self.cache.write().expect("profile cache poisoned");
        let idx = cache.partition_point(|p| p.rho < rho);
        if idx < cache.len() && cache[idx].rho == rho {
            return Ok(cache[idx].clone());
        }
        cache.insert(idx, profile.clone());
        if cache.len() > CACHE_CAPACITY {
            // drop the entry farthest (in log ρ) from the newest one
            let far = (0..cache.len())
                .max_by(|&a, &b| {
                    let da = (cache[a].rho / rho).ln().abs();
                    let db = (cache[b].rho / rho).ln().abs();
                    da.total_cmp(&db)
                })
                .expect("cache is non-empty");
            cache.remove(far);
        }
        Ok(profile)
    }

    pub fn cached_profiles(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    fn check_amplitude(&self, z: Complex64) -> Result<()> {
        if let Some(cap) = self.amplitude_cap {
            if z.norm() >= cap {
                return Err(Error::AmplitudeTooLarge(z.norm()));
            }
        }
        Ok(())
    }

    fn profile_for_amplitude(&self, z: Complex64) -> Result<Arc<Profile>> {
        self.profile(z.norm_sqr()).map_err(|e| match e {
            Error::ProfileDiverged { .. } | Error::NoConvergence { .. } | Error::RhoOutOfRange(_) => {
                Error::AmplitudeTooLarge(z.norm())
            }
            other => other,
        })
    }

    /// `E(ρ)` for `ρ = |z|²`.
    pub fn frequency(&self, rho: f64) -> Result<f64> {
        if rho == 0.0 {
            return Ok(self.sd.eigenvalue);
        }
        let p = self.profile_for_amplitude(Complex64::new(rho.sqrt(), 0.0))?;
        Ok(self.sd.eigenvalue + p.e)
    }

    /// `(Q[z], E(|z|²))`.
    pub fn bound_state(&self, z: Complex64) -> Result<(ComplexField, f64)> {
        self.check_amplitude(z)?;
        if z == Complex64::new(0.0, 0.0) {
            return Ok((ComplexField::zeros(*self.grid()), self.sd.eigenvalue));
        }
        let prof = self.profile_for_amplitude(z)?;
        let q = self.sd.phi.zip_with(&prof.q, |a, b| z * (a + b))?;
        Ok((q, self.sd.eigenvalue + prof.e))
    }

    /// `q'(ρ)` by centered differencing of cached profiles with step `ρ/10`.
    pub fn profile_derivative(&self, rho: f64) -> Result<RealField> {
        let step = rho / 10.0;
        let up = self.profile(rho + step)?;
        let down = self.profile(rho - step)?;
        Ok((&up.q - &down.q).map(|v| v / (2.0 * step)))
    }

    /// `D_j Q[z]` for `j ∈ {1, 2}` (derivative in `Re z`, `Im z`).
    pub fn dq(&self, z: Complex64, j: usize) -> Result<ComplexField> {
        assert!(j == 1 || j == 2, "direction index must be 1 or 2");
        self.check_amplitude(z)?;
        let dir = if j == 1 { Complex64::new(1.0, 0.0) } else { I };
        if z.norm() < 1e-4 {
            let s = 1e-6;
            let (up, _) = self.bound_state(z + s * dir)?;
            let (down, _) = self.bound_state(z - s * dir)?;
            return Ok((&up - &down).map(|v| v / (2.0 * s)));
        }
        let rho = z.norm_sqr();
        let prof = self.profile_for_amplitude(z)?;
        let dprof = self
            .profile_derivative(rho)
            .map_err(|_| Error::AmplitudeTooLarge(z.norm()))?;
        let zj = if j == 1 { z.re } else { z.im };
        let coef = 2.0 * z * zj;
        let base = self.sd.phi.zip_with(&prof.q, |a, b| a + b)?;
        base.zip_with(&dprof, |b, d| dir * b + coef * d)
    }

    /// `D_j D_k Q[z]` by centered differences of [`Self::dq`].
    pub fn d2q(&self, z: Complex64, j: usize, k: usize) -> Result<ComplexField> {
        let dir = if k == 1 { Complex64::new(1.0, 0.0) } else { I };
        let s = 1e-3 * z.norm().max(1e-3);
        let up = self.dq(z + s * dir, j)?;
        let down = self.dq(z - s * dir, j)?;
        Ok((&up - &down).map(|v| v / (2.0 * s)))
    }

    /// `DQ[z] w = D_1Q Re w + D_2Q Im w`.
    pub fn dq_apply(&self, z: Complex64, w: Complex64) -> Result<ComplexField> {
        let d1 = self.dq(z, 1)?;
        let d2 = self.dq(z, 2)?;
        d1.zip_with(&d2, |a, b| a * w.re + b * w.im)
    }

    /// Residual `‖H Q + f(Q) - E Q‖_{L²}` of the standing-wave equation.
    pub fn standing_wave_residual(&self, z: Complex64) -> Result<f64> {
        let (q, e) = self.bound_state(z)?;
        let hq = self.op.apply(&q)?;
        let r = hq.zip_with(&q, |a, b| a + self.nl.f_point(b) - e * b)?;
        crate::grid::norm(&r, NormKind::L2)
    }

    /// Whether the Picard iteration at `ρ` converges with every recorded
    /// contraction ratio at most `max_factor`.
    fn contracts(&self, rho: f64, max_factor: f64) -> bool {
        match self.solve_profile(rho) {
            Ok(p) => p.max_contraction() <= max_factor,
            Err(_) => false,
        }
    }

    /// Largest `ρ` in `(0, hi]` with a Picard contraction of at most
    /// `max_factor`, by bisection in `log ρ`.
    pub fn empirical_rho0(&self, max_factor: f64, hi: f64) -> f64 {
        let mut lo = 1e-10f64;
        let mut hi = hi.min(1.0);
        if self.contracts(hi, max_factor) {
            return hi;
        }
        if !self.contracts(lo, max_factor) {
            return 0.0;
        }
        for _ in 0..30 {
            let mid = (lo * hi).sqrt();
            if self.contracts(mid, max_factor) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.01 {
                break;
            }
        }
        lo
    }

    /// Closed-form focusing cubic bound state (see [`cubic_profile`]),
    /// available only for `p = 1`, `λ = -1`, `q = 1`.
    pub fn cubic_oracle(&self, beta: f64) -> Result<(RealField, f64)> {
        if self.nl.family != Family::Power
            || self.nl.p != 1.0
            || self.nl.lambda != -1.0
            || self.op.coupling() != 1.0
        {
            return Err(Error::OracleUnavailable);
        }
        cubic_profile(beta, *self.grid())
    }
}

/// `Q(x) = √2 β sech(β|x| + artanh(1/(2β)))`, `E = -β²`.
///
/// Solves `-Q'' - Q³ = E Q` away from 0 and matches the jump
/// `Q'(0+) - Q'(0-) = -Q(0)`, which forces `tanh(a) = 1/(2β)` and so `β > 1/2`.
pub fn cubic_profile(beta: f64, grid: Grid) -> Result<(RealField, f64)> {
    if !(beta > 0.5) {
        return Err(Error::BetaTooSmall(beta));
    }
    let shift = (1.0 / (2.0 * beta)).atanh();
    let q = RealField::from_fn(grid, |x| {
        2f64.sqrt() * beta / (beta * x.abs() + shift).cosh()
    });
    Ok((q, -beta * beta))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// `<Q[z] - zφ, φ>` relative to `|z|`; zero when the correction is in `P_c`.
pub fn orthogonal_remainder(fam: &BoundStateFamily, z: Complex64) -> Result<f64> {
    let (q, _) = fam.bound_state(z)?;
    let phi = fam.spectral().phi.clone();
    let rem = q.zip_with(&phi, |a, p| a - z * p)?;
    let re = inner_real(&rem.map(|v| v.re), &phi)?;
    let im = inner_real(&rem.map(|v| v.im), &phi)?;
    Ok(Complex64::new(re, im).norm() / z.norm())
}
