//! Cutoff `χ`, weights `ζ_A`, `ψ_A`, the potential `V`, the functional
//! `J(ξ) = ½⟨iξ, (ψ_A'/2 + ψ_A ∂ₓ)ξ⟩` and the commutator identity
//!
//! `⟨(ψ_A'/2 + ψ_A ∂ₓ)ξ, H₁ξ⟩ = ⟨H_{1/2} w, w⟩ + (1/2A)⟨V w, w⟩`, `w = ζ_A ξ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    derivative, inner, japanese_bracket, norm, ComplexField, Grid, NormKind, RealField,
};
use crate::nonlinearity::{f_eval, Nonlinearity};
use crate::operator::{build_operator, DeltaOperator, SpectralData};

/// Which formula builds `V` from `χ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VForm {
    /// `χ''|x| + 2χ' sign(x)`, i.e. `A (log ζ_A)''` away from 0.
    Derived,
    /// `χ''|x| + 2χ'' sign(x)`.
    Alternative,
}

/// `e^{-1/t}` for `t > 0` and its first two derivatives.
fn bump(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let v = (-1.0 / t).exp();
    let t2 = t * t;
    (v, v / t2, v * (1.0 / (t2 * t2) - 2.0 / (t2 * t)))
}

/// `χ`, `dχ/dt`, `d²χ/dt²` as functions of `t = |x|`.
pub fn chi_radial(t: f64) -> (f64, f64, f64) {
    if t <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if t >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    let (f, df, ddf) = {
        let (v, d, dd) = bump(2.0 - t);
        (v, -d, dd)
    };
    let (g, dg, ddg) = bump(t - 1.0);
    let s = f + g;
    let ds = df + dg;
    let n = df * g - f * dg;
    let dn = ddf * g - f * ddg;
    (f / s, n / (s * s), dn / (s * s) - 2.0 * n * ds / (s * s * s))
}

#[derive(Debug, Clone)]
pub struct VirialWeights {
    pub a: f64,
    pub chi: RealField,
    pub chi1: RealField,
    pub chi2: RealField,
    pub zeta: RealField,
    pub psi: RealField,
    pub v: RealField,
}

pub fn make_weights(a: f64, grid: Grid) -> Result<VirialWeights> {
    make_weights_with(a, grid, VForm::Derived)
}

pub fn make_weights_with(a: f64, grid: Grid, form: VForm) -> Result<VirialWeights> {
    if !(a >= 4.0) {
        return Err(Error::ATooSmall(a));
    }
    let chi = RealField::from_fn(grid, |x| chi_radial(x.abs()).0);
    let chi1 = RealField::from_fn(grid, |x| x.signum() * chi_radial(x.abs()).1);
    let chi2 = RealField::from_fn(grid, |x| chi_radial(x.abs()).2);
    let zeta = chi.map_x(|x, c| (-x.abs() * (1.0 - c) / a).exp());
    // cumulative trapezoid of ζ² from 0 outward, odd extension
    let h = grid.spacing();
    let c = grid.center();
    let z2: Vec<f64> = zeta.values().iter().map(|v| v * v).collect();
    let mut psi = vec![0.0; grid.len()];
    for k in 1..=c {
        psi[c + k] = psi[c + k - 1] + 0.5 * h * (z2[c + k - 1] + z2[c + k]);
        psi[c - k] = -psi[c + k];
    }
    let psi = RealField::from_values(grid, psi)?;
    let v = RealField::from_fn(grid, |x| {
        let (_, d1, d2) = chi_radial(x.abs());
        match form {
            // χ'(x) sign(x) = dχ/dt
            VForm::Derived => d2 * x.abs() + 2.0 * d1,
            VForm::Alternative => d2 * x.abs() + 2.0 * d2 * x.signum(),
        }
    });
    Ok(VirialWeights {
        a,
        chi,
        chi1,
        chi2,
        zeta,
        psi,
        v,
    })
}

impl VirialWeights {
    pub fn grid(&self) -> &Grid {
        self.zeta.grid()
    }

    /// `(ψ_A'/2 + ψ_A ∂ₓ) ξ`, with `ψ_A' = ζ_A²`.
    pub fn apply_commutator(&self, xi: &ComplexField) -> Result<ComplexField> {
        xi.check_grid(&self.zeta)?;
        let d = derivative(xi);
        let half = xi.zip_with(&self.zeta, |u, z| 0.5 * z * z * u)?;
        let flux = d.zip_with(&self.psi, |du, p| p * du)?;
        Ok(&half + &flux)
    }

    /// `w = ζ_A ξ`.
    pub fn weighted(&self, xi: &ComplexField) -> Result<ComplexField> {
        xi.zip_with(&self.zeta, |u, z| z * u)
    }

    /// `∫ |V| ⟨x⟩ dx`.
    pub fn v_moment(&self) -> f64 {
        let g = *self.grid();
        let vals: Vec<f64> = (0..g.len())
            .map(|i| self.v.values()[i].abs() * japanese_bracket(g.x(i)))
            .collect();
        g.integrate(&vals)
    }
}

/// `J(ξ) = ½⟨iξ, (ψ_A'/2 + ψ_A ∂ₓ)ξ⟩`.
pub fn j_functional(xi: &ComplexField, wts: &VirialWeights) -> Result<f64> {
    let t = wts.apply_commutator(xi)?;
    Ok(0.5 * inner(&xi.times_i(), &t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Both sides of the identity with `H₁` (coupling 1) on the left and
/// `H_{1/2}` (coupling ½) on the right.
pub fn commutator_identity(xi: &ComplexField, wts: &VirialWeights) -> Result<CommutatorCheck> {
    let grid = *wts.grid();
    xi.check_grid(&wts.zeta)?;
    let h1 = build_operator(1.0, grid)?;
    let h_half = build_operator(0.5, grid)?;
    let lhs = inner(&wts.apply_commutator(xi)?, &h1.apply(xi)?)?;
    let w = wts.weighted(xi)?;
    let vw = w.zip_with(&wts.v, |a, b| b * a)?;
    let rhs = h_half.quadratic_form(&w)? + inner(&vw, &w)? / (2.0 * wts.a);
    let gap = (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + 1e-300);
    Ok(CommutatorCheck { lhs, rhs, gap })
}

/// Numeric versions of the coercivity bounds for one `ξ ∈ P_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub a: f64,
    /// `⟨(-∂² + δ) w, w⟩`
    pub form: f64,
    /// commutator left side over `form`; the bound is `≥ 1/5`
    pub main_ratio: f64,
    /// `A · (1/2A)|⟨Vw, w⟩| / form`
    pub v_ratio_times_a: f64,
    /// the bound on the above: `2 ∫|V|⟨x⟩`
    pub v_ratio_bound: f64,
    /// `A · |∫ w φ| / form^{1/2}`
    pub leak_times_a: f64,
    /// the bound on the above: `√2 ∫ ⟨x⟩^{3/2} e^{-|x|/4}`
    pub leak_bound: f64,
    /// `⟨H₁ w, w⟩ / form`
    pub h1_ratio: f64,
    /// `(‖w'‖² + ‖⟨x⟩⁻² w‖²) / form`; the bound is 12
    pub x_norm_constant: f64,
    /// `max |w(x)| / (2⟨x⟩^{1/2} form^{1/2})`; the bound is 1
    pub pointwise_ratio: f64,
}

impl CoercivityReport {
    pub fn key_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("A", self.a),
            ("form", self.form),
            ("main_ratio", self.main_ratio),
            ("v_ratio_times_a", self.v_ratio_times_a),
            ("v_ratio_bound", self.v_ratio_bound),
            ("leak_times_a", self.leak_times_a),
            ("leak_bound", self.leak_bound),
            ("h1_ratio", self.h1_ratio),
            ("x_norm_constant", self.x_norm_constant),
            ("pointwise_ratio", self.pointwise_ratio),
        ]
    }
}

/// Operators shared by many coercivity evaluations on one grid.
#[derive(Debug, Clone)]
pub struct CoercivityContext {
    h1: DeltaOperator,
    repulsive: DeltaOperator,
    sd: SpectralData,
}

impl CoercivityContext {
    pub fn new(grid: Grid) -> Result<Self> {
        let h1 = build_operator(1.0, grid)?;
        let sd = SpectralData::numeric(&h1)?;
        Ok(Self {
            repulsive: build_operator(-1.0, grid)?,
            h1,
            sd,
        })
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.sd
    }
}

pub fn coercivity_report(
    xi: &ComplexField,
    wts: &VirialWeights,
    ctx: &CoercivityContext,
) -> Result<CoercivityReport> {
    let grid = *wts.grid();
    let leak_in = ctx.sd.coefficient(xi)?.norm();
    if leak_in > 1e-8 * norm(xi, NormKind::L2)? {
        return Err(Error::NotProjected(leak_in));
    }
    let w = wts.weighted(xi)?;
    let form = ctx.repulsive.quadratic_form(&w)?;
    let lhs = inner(&wts.apply_commutator(xi)?, &ctx.h1.apply(xi)?)?;
    let vw = w.zip_with(&wts.v, |a, b| b * a)?;
    let v_term = inner(&vw, &w)?.abs() / (2.0 * wts.a);
    let leak = ctx.sd.coefficient(&w)?.norm();
    let dw = derivative(&w);
    let dw2 = norm(&dw, NormKind::L2)?.powi(2);
    let decayed = w.map_x(|x, v| v / japanese_bracket(x).powi(2));
    let x_norm = dw2 + norm(&decayed, NormKind::L2)?.powi(2);
    let root = form.sqrt();
    let pointwise = (0..grid.len())
        .map(|i| w.values()[i].norm() / (2.0 * japanese_bracket(grid.x(i)).sqrt() * root))
        .fold(0.0, f64::max);
    let leak_weight: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.x(i);
            japanese_bracket(x).powf(1.5) * (-x.abs() / 4.0).exp()
        })
        .collect();
    Ok(CoercivityReport {
        a: wts.a,
        form,
        main_ratio: lhs / form,
        v_ratio_times_a: wts.a * v_term / form,
        v_ratio_bound: 2.0 * wts.v_moment(),
        leak_times_a: wts.a * leak / root,
        leak_bound: 2f64.sqrt() * grid.integrate(&leak_weight),
        h1_ratio: ctx.h1.quadratic_form(&w)? / form,
        x_norm_constant: x_norm / form,
        pointwise_ratio: pointwise,
    })
}

/// `|⟨(ψ_A'/2 + ψ_A ∂ₓ)ξ, f(ξ)⟩| / ‖w'‖²`.
pub fn nonlinear_pairing_ratio(
    xi: &ComplexField,
    wts: &VirialWeights,
    nl: &Nonlinearity,
) -> Result<f64> {
    let t = wts.apply_commutator(xi)?;
    let f = f_eval(nl, xi);
    let w = wts.weighted(xi)?;
    Ok(inner(&t, &f)?.abs() / norm(&derivative(&w), NormKind::L2)?.powi(2))
}
