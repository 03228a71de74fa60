//! Time stepping for `i u_t = H_q u + g(|u|²) u`.
//!
//! Strang splitting: exact nonlinear phase for `dt/2`, a Crank–Nicolson step
//! of the linear part, another nonlinear half step. The phase step keeps `|u|`
//! pointwise and the Cayley transform of the symmetric `T` is unitary, so the
//! discrete mass is conserved to round-off when the sponge is off.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bound_states::BoundStateFamily;
use crate::error::{Error, Result};
use crate::grid::{norm, ComplexField, Grid, NormKind, RealField, I};
use crate::modulation::{Convention, Modulator};
use crate::nonlinearity::Nonlinearity;
use crate::operator::{build_operator, DeltaOperator};
use crate::tridiag::Factored;
use crate::virial::{j_functional, VirialWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sponge {
    pub width: f64,
    pub strength: f64,
}

impl Sponge {
    /// Default absorber for a domain of half-width `l`.
    pub fn for_half_width(l: f64) -> Self {
        Self {
            width: l / 8.0,
            strength: 1.0,
        }
    }

    /// `sin²` ramp from 0 at `|x| = L - W` to 1 at `|x| = L`.
    pub fn profile(&self, grid: Grid) -> RealField {
        let start = grid.half_width() - self.width;
        RealField::from_fn(grid, |x| {
            let s = ((x.abs() - start) / self.width).clamp(0.0, 1.0);
            (0.5 * std::f64::consts::PI * s).sin().powi(2)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub coupling: f64,
    pub nonlinearity: Nonlinearity,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub sponge: Option<Sponge>,
    /// Steps between snapshots.
    pub cadence: usize,
}

impl EvolutionConfig {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        self.nonlinearity.validate()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::InvalidConfig(format!("T must be nonnegative, got {}", self.t_final)));
        }
        if self.cadence == 0 {
            return Err(Error::InvalidConfig("cadence must be at least 1".into()));
        }
        if let Some(s) = self.sponge {
            if !(s.width > 0.0 && s.width < grid.half_width() / 4.0) || !(s.strength >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "sponge width must lie in (0, L/4), got {}",
                    s.width
                )));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Precomputed Crank–Nicolson factors for one `(T, dt)`.
#[derive(Debug, Clone)]
pub struct Propagator {
    op: DeltaOperator,
    nl: Nonlinearity,
    dt: f64,
    implicit: Factored<Complex64>,
    damping: Option<Vec<f64>>,
}

impl Propagator {
    /// `dt` may be negative (backward stepping); the sponge requires `dt > 0`.
    pub fn new(op: &DeltaOperator, nl: Nonlinearity, dt: f64, sponge: Option<Sponge>) -> Result<Self> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid dt {dt}")));
        }
        let implicit = op
            .matrix()
            .factor_affine(Complex64::new(1.0, 0.0), I * (0.5 * dt))?;
        let damping = sponge.map(|s| {
            s.profile(*op.grid())
                .values()
                .iter()
                .map(|v| (-s.strength * v * dt).exp())
                .collect()
        });
        Ok(Self {
            op: op.clone(),
            nl,
            dt,
            implicit,
            damping,
        })
    }

    pub fn from_config(cfg: &EvolutionConfig, grid: Grid) -> Result<Self> {
        cfg.validate(&grid)?;
        let op = build_operator(cfg.coupling, grid)?;
        Self::new(&op, cfg.nonlinearity, cfg.dt, cfg.sponge)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn operator(&self) -> &DeltaOperator {
        &self.op
    }

    /// `u ← e^{-i g(|u|²) τ} u`.
    pub fn nonlinear_phase(&self, u: &mut [Complex64], tau: f64) {
        for v in u.iter_mut() {
            let g = self.nl.g(v.norm_sqr());
            if g != 0.0 {
                *v *= Complex64::from_polar(1.0, -g * tau);
            }
        }
    }

    /// `(I + i dt/2 T) u⁺ = (I - i dt/2 T) u` on the interior nodes.
    pub fn linear_step(&self, u: &mut [Complex64]) {
        let n = u.len();
        let m = self.op.matrix();
        let c = I * (0.5 * self.dt);
        let inner = &u[1..n - 1];
        let mut rhs = Vec::with_capacity(n - 2);
        for i in 0..n - 2 {
            let mut tu = m.diag[i] * inner[i];
            if i > 0 {
                tu += m.off[i - 1] * inner[i - 1];
            }
            if i + 3 < n {
                tu += m.off[i] * inner[i + 1];
            }
            rhs.push(inner[i] - c * tu);
        }
        self.implicit.solve_in_place(&mut rhs);
        u[1..n - 1].copy_from_slice(&rhs);
        u[0] = Complex64::new(0.0, 0.0);
        u[n - 1] = Complex64::new(0.0, 0.0);
    }

    fn damp(&self, u: &mut [Complex64]) {
        if let Some(d) = &self.damping {
            for (v, f) in u.iter_mut().zip(d) {
                *v *= *f;
            }
        }
    }

    /// One Strang step.
    pub fn step(&self, u: &ComplexField) -> Result<ComplexField> {
        if *u.grid() != *self.op.grid() {
            return Err(Error::GridMismatch);
        }
        let mut v = u.values().to_vec();
        self.nonlinear_phase(&mut v, 0.5 * self.dt);
        self.linear_step(&mut v);
        self.nonlinear_phase(&mut v, 0.5 * self.dt);
        self.damp(&mut v);
        let out = ComplexField::from_values(*u.grid(), v)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("step"));
        }
        Ok(out)
    }

    /// `k` Strang steps; interior half steps are fused into full ones, which
    /// is exact because the phase step preserves `|u|`. The sponge, when
    /// present, is applied after every linear step.
    pub fn advance(&self, u: &mut [Complex64], k: usize) {
        if k == 0 {
            return;
        }
        if self.damping.is_some() {
            for _ in 0..k {
                self.nonlinear_phase(u, 0.5 * self.dt);
                self.linear_step(u);
                self.nonlinear_phase(u, 0.5 * self.dt);
                self.damp(u);
            }
            return;
        }
        self.nonlinear_phase(u, 0.5 * self.dt);
        for i in 0..k {
            self.linear_step(u);
            let tau = if i + 1 == k { 0.5 } else { 1.0 } * self.dt;
            self.nonlinear_phase(u, tau);
        }
    }
}

/// One Strang step of `u` under `cfg`.
pub fn step(u: &ComplexField, cfg: &EvolutionConfig, op: &DeltaOperator) -> Result<ComplexField> {
    Propagator::new(op, cfg.nonlinearity, cfg.dt, cfg.sponge)?.step(u)
}

/// `(½‖u‖², ½‖D₊u‖² - (q/2)|u(0)|² + ½∫G(|u|²))`, the kinetic and delta
/// parts through the discrete quadratic form.
pub fn conserved(u: &ComplexField, op: &DeltaOperator, nl: &Nonlinearity) -> Result<(f64, f64)> {
    let mass = 0.5 * norm(u, NormKind::L2)?.powi(2);
    let grid = u.grid();
    let pot: Vec<f64> = u.values().iter().map(|v| nl.big_g(v.norm_sqr())).collect();
    let energy = 0.5 * op.quadratic_form(u)? + 0.5 * grid.integrate(&pot);
    Ok((mass, energy))
}

/// Modulation and virial diagnostics evaluated at each snapshot.
#[derive(Debug, Clone)]
pub struct Tracker<'a> {
    pub family: &'a BoundStateFamily,
    pub convention: Convention,
    pub weights: &'a VirialWeights,
    /// `γ` of the local norm `H¹_{-γ}`.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub z_re: f64,
    pub z_im: f64,
    /// `E(|z|²)`
    pub frequency: f64,
    /// `‖ξ‖_{H¹_{-γ}}`
    pub xi_local: f64,
    /// `‖ξ‖_{H¹}`
    pub xi_h1: f64,
    /// `‖ζ_A ξ‖_X`
    pub w_x: f64,
    pub j: f64,
    /// `∫₀ᵗ ‖ξ‖²_{H¹_{-γ}}`
    pub int_xi: f64,
    /// `∫₀ᵗ E(|z|²)`, with `E` mapped to the time-discrete rotation rate
    pub int_e: f64,
    pub rho_re: f64,
    pub rho_im: f64,
}

impl Sample {
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.z_re, self.z_im)
    }

    pub fn rho(&self) -> Complex64 {
        Complex64::new(self.rho_re, self.rho_im)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    /// Snapshot times at which an observer or the decomposition failed.
    pub failures: Vec<(f64, String)>,
    #[serde(skip)]
    pub final_state: Option<ComplexField>,
}

impl TrajectoryRecord {
    pub fn flagged(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn relative_mass_drift(&self) -> f64 {
        let m0 = self.samples.first().map(|s| s.mass).unwrap_or(0.0);
        self.samples
            .iter()
            .map(|s| ((s.mass - m0) / m0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.samples.first().map(|s| s.energy).unwrap_or(0.0);
        self.samples
            .iter()
            .map(|s| (s.energy - e0).abs())
            .fold(0.0, f64::max)
    }
}

/// Callback at every snapshot.
pub trait Observer {
    fn observe(&mut self, t: f64, u: &ComplexField) -> Result<()>;
}

impl<F: FnMut(f64, &ComplexField) -> Result<()>> Observer for F {
    fn observe(&mut self, t: f64, u: &ComplexField) -> Result<()> {
        self(t, u)
    }
}

struct Running {
    dt: f64,
    last: Option<(f64, f64, f64)>,
    int_xi: f64,
    int_e: f64,
    z_hint: Option<Complex64>,
}

fn diagnose(
    tracker: &Tracker,
    u: &ComplexField,
    t: f64,
    run: &mut Running,
) -> Result<(Complex64, f64, f64, f64, f64, f64)> {
    let m = Modulator::new(tracker.family);
    let state = match (tracker.convention, run.z_hint) {
        (Convention::Hc, Some(z)) => m.decompose_hc_from(u, z)?,
        (c, _) => m.decompose(u, c)?,
    };
    run.z_hint = Some(state.z);
    let xi = &state.remainder;
    let local = norm(xi, NormKind::H1MinusGamma(tracker.gamma))?;
    let h1 = norm(xi, NormKind::H1)?;
    let w = tracker.weights.weighted(xi)?;
    let w_x = norm(&w, NormKind::X)?;
    let j = j_functional(xi, tracker.weights)?;
    let freq = tracker.family.frequency(state.z.norm_sqr())?;
    // Crank–Nicolson turns a mode of frequency E by 2 atan(E dt/2) per step;
    // integrating that rate keeps the O(E³dt²) phase lag out of ρ(t)
    let turned = 2.0 * (0.5 * freq * run.dt).atan() / run.dt;
    if let Some((t0, l0, e0)) = run.last {
        let dt = t - t0;
        run.int_xi += 0.5 * dt * (l0 * l0 + local * local);
        run.int_e += 0.5 * dt * (e0 + turned);
    }
    run.last = Some((t, local, turned));
    Ok((state.z, freq, local, h1, w_x, j))
}

/// Runs `cfg` from `u0`, sampling every `cfg.cadence` steps (and at the end).
pub fn evolve(
    u0: &ComplexField,
    cfg: &EvolutionConfig,
    tracker: Option<&Tracker>,
    observers: &mut [&mut dyn Observer],
) -> Result<TrajectoryRecord> {
    let grid = *u0.grid();
    let prop = Propagator::from_config(cfg, grid)?;
    let steps = cfg.steps();
    let mut u = u0.values().to_vec();
    let mut record = TrajectoryRecord {
        samples: Vec::new(),
        failures: Vec::new(),
        final_state: None,
    };
    let mut run = Running {
        dt: cfg.dt,
        last: None,
        int_xi: 0.0,
        int_e: 0.0,
        z_hint: None,
    };
    let mut done = 0;
    loop {
        let t = done as f64 * cfg.dt;
        let field = ComplexField::from_values(grid, u.clone())?;
        if !field.is_finite() {
            return Err(Error::NonFinite("evolve"));
        }
        let (mass, energy) = conserved(&field, prop.operator(), &cfg.nonlinearity)?;
        let mut sample = Sample {
            t,
            mass,
            energy,
            z_re: f64::NAN,
            z_im: f64::NAN,
            frequency: f64::NAN,
            xi_local: f64::NAN,
            xi_h1: f64::NAN,
            w_x: f64::NAN,
            j: f64::NAN,
            int_xi: run.int_xi,
            int_e: run.int_e,
            rho_re: f64::NAN,
            rho_im: f64::NAN,
        };
        if let Some(tr) = tracker {
            match diagnose(tr, &field, t, &mut run) {
                Ok((z, freq, local, h1, w_x, j)) => {
                    let rho = z * Complex64::from_polar(1.0, run.int_e);
                    sample = Sample {
                        z_re: z.re,
                        z_im: z.im,
                        frequency: freq,
                        xi_local: local,
                        xi_h1: h1,
                        w_x,
                        j,
                        int_xi: run.int_xi,
                        int_e: run.int_e,
                        rho_re: rho.re,
                        rho_im: rho.im,
                        ..sample
                    };
                }
                Err(e) => record.failures.push((t, e.to_string())),
            }
        }
        for obs in observers.iter_mut() {
            if let Err(e) = obs.observe(t, &field) {
                let msg = Error::ObserverFailure {
                    t,
                    message: e.to_string(),
                };
                record.failures.push((t, msg.to_string()));
            }
        }
        record.samples.push(sample);
        if done == steps {
            record.final_state = Some(field);
            break;
        }
        let k = cfg.cadence.min(steps - done);
        prop.advance(&mut u, k);
        done += k;
    }
    Ok(record)
}
