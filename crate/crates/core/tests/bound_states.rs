use nls_core::bound_states::{cubic_profile, log_log_slope, BoundStateFamily};
use nls_core::grid::{inner_real, norm, Grid, NormKind};
use nls_core::nonlinearity::Nonlinearity;
use num_complex::Complex64;

fn focusing_cubic(h: f64) -> BoundStateFamily {
    let grid = Grid::with_spacing(40.0, h).unwrap();
    BoundStateFamily::new(Nonlinearity::power(1.0, -1.0).unwrap(), 1.0, grid).unwrap()
}

fn oracle_error(fam: &BoundStateFamily, beta: f64) -> (f64, f64) {
    let (exact, e_exact) = cubic_profile(beta, *fam.grid()).unwrap();
    // the correction is orthogonal to φ, so the coordinate is the φ-overlap
    let z = inner_real(&exact, &fam.spectral().phi).unwrap();
    let (q, e) = fam.bound_state(Complex64::new(z, 0.0)).unwrap();
    let rel = norm(&(&q - &exact.to_complex()), NormKind::H1).unwrap()
        / norm(&exact.to_complex(), NormKind::H1).unwrap();
    (rel, (e - e_exact).abs())
}

#[test]
fn picard_profile_converges_to_closed_form() {
    let coarse = focusing_cubic(0.02);
    let fine = focusing_cubic(0.01);
    for beta in [0.52, 0.55, 0.6] {
        let (rc, ec) = oracle_error(&coarse, beta);
        let (rf, ef) = oracle_error(&fine, beta);
        assert!(rf < 5e-6 && ef < 5e-6, "beta {beta}: {rf:e} {ef:e}");
        // second-order in h
        assert!(rc / rf > 3.0 && ec / ef > 3.0, "beta {beta}: {rc:e}/{rf:e}, {ec:e}/{ef:e}");
    }
}

#[test]
fn frequency_shift_is_linear_in_rho_for_cubic() {
    // E(ρ) - e ≈ 𝔢 ≈ λ ρ ∫ φ⁴ = -ρ/4 at leading order
    let fam = focusing_cubic(0.02);
    let rhos = [1e-4, 4e-4, 1.6e-3];
    let shifts: Vec<f64> = rhos
        .iter()
        .map(|&r| (fam.frequency(r).unwrap() - fam.spectral().eigenvalue).abs())
        .collect();
    assert!((log_log_slope(&rhos, &shifts) - 1.0).abs() < 0.01);
    assert!((shifts[0] / rhos[0] - 0.25).abs() < 1e-3);
}

#[test]
fn contraction_threshold_is_reported() {
    let fam = focusing_cubic(0.05);
    let rho0 = fam.empirical_rho0(0.5, 1.0);
    assert!(rho0 > 0.05 && rho0 < 1.0, "rho0 = {rho0}");
    let inside = fam.solve_profile(0.5 * rho0).unwrap();
    assert!(inside.max_contraction() <= 0.5);
}
