//! Splitting `u = Q[z] + remainder` with the remainder in a codimension-2
//! subspace.
//!
//! * `Pc`: `⟨ξ, φ⟩ = ⟨ξ, iφ⟩ = 0`, i.e. `ξ ∈ P_c H¹`.
//! * `Hc`: `⟨iη, D₁Q[z]⟩ = ⟨iη, D₂Q[z]⟩ = 0`, i.e. `η ∈ H_c[z]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bound_states::BoundStateFamily;
use crate::error::{Error, Result};
use crate::grid::{inner, norm, ComplexField, NormKind};
use crate::operator::project_continuous;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 50;
const DEGENERATE_D: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Pc,
    Hc,
}

#[derive(Debug, Clone)]
pub struct ModulationState {
    pub z: Complex64,
    pub remainder: ComplexField,
    pub convention: Convention,
    /// Size of the two defining pairings of the remainder.
    pub residual: f64,
    pub iterations: usize,
}

impl ModulationState {
    /// `‖Q[z] + remainder - u‖_{H¹}`.
    pub fn reconstruction_error(&self, fam: &BoundStateFamily, u: &ComplexField) -> Result<f64> {
        let (q, _) = fam.bound_state(self.z)?;
        let back = &q + &self.remainder;
        norm(&(&back - u), NormKind::H1)
    }
}

/// Decomposition engine bound to one family of standing waves.
#[derive(Debug, Clone, Copy)]
pub struct Modulator<'a> {
    fam: &'a BoundStateFamily,
    /// Smallness threshold on `‖u‖_{H¹}`.
    c0: f64,
}

impl<'a> Modulator<'a> {
    pub fn new(fam: &'a BoundStateFamily) -> Self {
        Self {
            fam,
            c0: f64::INFINITY,
        }
    }

    pub fn with_threshold(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    pub fn family(&self) -> &BoundStateFamily {
        self.fam
    }

    pub fn threshold(&self) -> f64 {
        self.c0
    }

    fn check_small(&self, u: &ComplexField) -> Result<()> {
        let n = norm(u, NormKind::H1)?;
        if n >= self.c0 {
            return Err(Error::TooLarge {
                norm: n,
                threshold: self.c0,
            });
        }
        Ok(())
    }

    fn map_amplitude(&self, e: Error, z: Complex64) -> Error {
        match e {
            Error::AmplitudeTooLarge(_) => Error::NewtonDiverged(z.norm()),
            other => other,
        }
    }

    /// `F(z, u) = (⟨u - Q[z], φ⟩, ⟨u - Q[z], iφ⟩)`.
    fn pc_map(&self, u: &ComplexField, z: Complex64) -> Result<(ComplexField, [f64; 2])> {
        let (q, _) = self.fam.bound_state(z).map_err(|e| self.map_amplitude(e, z))?;
        let rem = u - &q;
        let phi = self.fam.spectral().phi_complex();
        let f = [inner(&rem, &phi)?, inner(&rem, &phi.times_i())?];
        Ok((rem, f))
    }

    pub fn decompose_pc(&self, u: &ComplexField) -> Result<ModulationState> {
        self.check_small(u)?;
        let phi = self.fam.spectral().phi_complex();
        let iphi = phi.times_i();
        let mut z = Complex64::new(inner(u, &phi)?, inner(u, &iphi)?);
        let mut last = f64::INFINITY;
        for k in 0..=NEWTON_MAX_ITERS {
            let (rem, f) = self.pc_map(u, z)?;
            let size = f[0].hypot(f[1]);
            if size < NEWTON_TOL {
                return Ok(ModulationState {
                    z,
                    remainder: rem,
                    convention: Convention::Pc,
                    residual: size,
                    iterations: k,
                });
            }
            if !size.is_finite() || (k > 3 && size > last) {
                return Err(Error::NewtonDiverged(size));
            }
            last = size;
            // ∂F/∂z_j = -(⟨D_jQ, φ⟩, ⟨D_jQ, iφ⟩); the q'(ρ) part of D_jQ lies
            // in P_c, leaving the pairings of i^{j-1}(φ + q) with φ and iφ
            let prof = if z.norm() > 0.0 {
                let p = self.fam.profile(z.norm_sqr()).map_err(|_| Error::NewtonDiverged(size))?;
                self.fam.spectral().phi.zip_with(&p.q, |a, b| Complex64::new(a + b, 0.0))?
            } else {
                phi.clone()
            };
            let iprof = prof.times_i();
            let jac = [
                [-inner(&prof, &phi)?, -inner(&iprof, &phi)?],
                [-inner(&prof, &iphi)?, -inner(&iprof, &iphi)?],
            ];
            let step = solve2(jac, f).ok_or(Error::NewtonDiverged(size))?;
            z -= Complex64::new(step[0], step[1]);
        }
        Err(Error::NewtonDiverged(last))
    }

    /// `F(z, u) = (⟨u - Q[z], iD₁Q[z]⟩, ⟨u - Q[z], iD₂Q[z]⟩)` and the
    /// frozen-remainder Jacobian `-⟨D_kQ, iD_jQ⟩`.
    fn hc_map(
        &self,
        u: &ComplexField,
        z: Complex64,
    ) -> Result<(ComplexField, [f64; 2], [[f64; 2]; 2])> {
        let (q, _) = self.fam.bound_state(z).map_err(|e| self.map_amplitude(e, z))?;
        let rem = u - &q;
        let d1 = self.fam.dq(z, 1).map_err(|e| self.map_amplitude(e, z))?;
        let d2 = self.fam.dq(z, 2).map_err(|e| self.map_amplitude(e, z))?;
        let id = [d1.times_i(), d2.times_i()];
        let d = [d1, d2];
        let f = [inner(&rem, &id[0])?, inner(&rem, &id[1])?];
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            for k in 0..2 {
                jac[j][k] = -inner(&d[k], &id[j])?;
            }
        }
        Ok((rem, f, jac))
    }

    /// Newton on the `H_c[z]` conditions. The Jacobian drops the
    /// `⟨η, iD_jD_kQ⟩` term, which is small with `η`, so convergence is
    /// linear at that rate; steps that increase `|F|` are halved.
    pub fn decompose_hc(&self, u: &ComplexField) -> Result<ModulationState> {
        self.check_small(u)?;
        let start = self.decompose_pc(u)?.z;
        self.decompose_hc_from(u, start)
    }

    pub fn decompose_hc_from(&self, u: &ComplexField, start: Complex64) -> Result<ModulationState> {
        let mut z = start;
        let (mut rem, mut f, mut jac) = self.hc_map(u, z)?;
        let mut size = f[0].hypot(f[1]);
        for k in 0..=NEWTON_MAX_ITERS {
            if size < NEWTON_TOL {
                return Ok(ModulationState {
                    z,
                    remainder: rem,
                    convention: Convention::Hc,
                    residual: size,
                    iterations: k,
                });
            }
            let step = solve2(jac, f).ok_or(Error::NewtonDiverged(size))?;
            let mut t = 1.0;
            loop {
                let trial = z - t * Complex64::new(step[0], step[1]);
                let next = self.hc_map(u, trial)?;
                let next_size = next.1[0].hypot(next.1[1]);
                if next_size < size {
                    z = trial;
                    (rem, f, jac) = next;
                    size = next_size;
                    break;
                }
                t *= 0.5;
                if t < 1e-3 {
                    return Err(Error::NewtonDiverged(size));
                }
            }
        }
        Err(Error::NewtonDiverged(size))
    }

    pub fn decompose(&self, u: &ComplexField, convention: Convention) -> Result<ModulationState> {
        match convention {
            Convention::Pc => self.decompose_pc(u),
            Convention::Hc => self.decompose_hc(u),
        }
    }

    /// `(M, D)` with `M[j] = [⟨iφ, D_jQ⟩, -⟨φ, D_jQ⟩]` and `D = det M`
    /// (`D(0) = 1`).
    fn r_system(&self, z: Complex64) -> Result<([[f64; 2]; 2], [ComplexField; 2])> {
        let phi = self.fam.spectral().phi_complex();
        let iphi = phi.times_i();
        let d = [self.fam.dq(z, 1)?, self.fam.dq(z, 2)?];
        let mut m = [[0.0; 2]; 2];
        for j in 0..2 {
            m[j] = [inner(&iphi, &d[j])?, -inner(&phi, &d[j])?];
        }
        Ok((m, d))
    }

    /// `D(z)`; equal to 1 at the origin.
    pub fn d_of_z(&self, z: Complex64) -> Result<f64> {
        let (m, _) = self.r_system(z)?;
        Ok(m[0][0] * m[1][1] - m[0][1] * m[1][0])
    }

    /// `R[z]ξ = ξ + aφ + b iφ`, the unique element of `H_c[z]` with
    /// `P_c R[z]ξ = ξ`.
    pub fn r_operator(&self, z: Complex64, xi: &ComplexField) -> Result<ComplexField> {
        let sd = self.fam.spectral();
        let leak = sd.coefficient(xi)?.norm();
        let scale = norm(xi, NormKind::L2)?.max(1e-300);
        if leak > 1e-8 * scale {
            return Err(Error::NotProjected(leak));
        }
        let (m, d) = self.r_system(z)?;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < DEGENERATE_D {
            return Err(Error::DegenerateD(det));
        }
        let ixi = xi.times_i();
        let rhs = [-inner(&ixi, &d[0])?, -inner(&ixi, &d[1])?];
        let [a, b] = solve2(m, rhs).ok_or(Error::DegenerateD(det))?;
        let phi = sd.phi_complex();
        phi.zip_with(xi, |p, x| x + Complex64::new(a, b) * p)
    }

    /// The two `H_c[z]` pairings of `η`.
    pub fn hc_pairings(&self, z: Complex64, eta: &ComplexField) -> Result<[f64; 2]> {
        let ieta = eta.times_i();
        Ok([
            inner(&ieta, &self.fam.dq(z, 1)?)?,
            inner(&ieta, &self.fam.dq(z, 2)?)?,
        ])
    }

    /// `Q[z] + R[z]ξ` (or `Q[z] + ξ` for `Pc`).
    pub fn compose(&self, z: Complex64, xi: &ComplexField, convention: Convention) -> Result<ComplexField> {
        let (q, _) = self.fam.bound_state(z)?;
        let rem = match convention {
            Convention::Pc => xi.clone(),
            Convention::Hc => self.r_operator(z, xi)?,
        };
        Ok(&q + &rem)
    }
}

/// Projects a field onto the continuous subspace of the family's operator.
pub fn continuous_part(fam: &BoundStateFamily, u: &ComplexField) -> Result<ComplexField> {
    project_continuous(u, fam.spectral())
}

/// `e^{iθ} u`.
pub fn rotate(u: &ComplexField, theta: f64) -> ComplexField {
    u.scale(Complex64::from_polar(1.0, theta))
}

fn solve2(m: [[f64; 2]; 2], r: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        (r[0] * m[1][1] - m[0][1] * r[1]) / det,
        (m[0][0] * r[1] - m[1][0] * r[0]) / det,
    ])
}
