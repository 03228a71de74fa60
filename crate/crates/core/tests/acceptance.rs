//! Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
//! below; the process exits non-zero if any criterion fails.

use std::time::Instant;

use nls_core::bound_states::{cubic_profile, log_log_slope, BoundStateFamily};
use nls_core::config::RunConfig;
use nls_core::evolution::{evolve, EvolutionConfig, Propagator};
use nls_core::experiments::{
    run_dispersion, run_selection, run_small_en, run_virial_check, ExperimentReport,
};
use nls_core::grid::{inner, norm, random_smooth_field, ComplexField, Grid, NormKind};
use nls_core::modulation::{continuous_part, rotate, Convention, Modulator};
use nls_core::nonlinearity::Nonlinearity;
use nls_core::operator::{build_operator, SpectralData};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// 1
const EIGENVALUE_TOL: f64 = 5e-3;
const REFINEMENT_FACTOR: f64 = 2.0;
// 2
const CONTRACTION_MAX: f64 = 0.5;
const STANDING_RESIDUAL_MAX: f64 = 1e-6;
const PROFILE_SLOPE_TOL: f64 = 0.15;
// 3
const ORACLE_LINF_MAX: f64 = 1e-3;
// 6
const MASS_DRIFT_MAX: f64 = 1e-8;
const ENERGY_ORDER_MIN: f64 = 1.5;
const REVERSAL_MAX: f64 = 1e-10;
// 10
const ROUND_TRIP_MAX: f64 = 1e-9;
const R_IDENTITY_MAX: f64 = 1e-10;
const PC_ORTHOGONALITY_MAX: f64 = 1e-12;
const HC_ORTHOGONALITY_MAX: f64 = 1e-9;
const GAUGE_MAX: f64 = 1e-12;

type Outcome = (bool, String);

fn spectral_fidelity() -> Outcome {
    let err = |h: f64| {
        let grid = Grid::with_spacing(40.0, h).unwrap();
        let sd = SpectralData::numeric(&build_operator(1.0, grid).unwrap()).unwrap();
        (sd.eigenvalue + 0.25).abs()
    };
    let (coarse, fine) = (err(0.01), err(0.005));
    (
        coarse < EIGENVALUE_TOL && coarse / fine >= REFINEMENT_FACTOR,
        format!("|lambda + 1/4| = {coarse:.3e} at h=0.01, {fine:.3e} at h=0.005 (ratio {:.2})", coarse / fine),
    )
}

fn bound_state_construction() -> Outcome {
    let grid = Grid::with_spacing(40.0, 0.05).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, lambda) in [(1.0, -1.0), (1.0, 1.0), (0.3, 1.0), (2.0, -1.0)] {
        let fam = BoundStateFamily::new(Nonlinearity::power(p, lambda).unwrap(), 1.0, grid).unwrap();
        let rho0 = fam.empirical_rho0(CONTRACTION_MAX, 1.0);
        // four rungs halving down from inside the contraction region
        let top = (0.5 * rho0.sqrt()).min(1.0 / 16.0);
        let zs: Vec<f64> = (0..4).map(|k| top * 2f64.powi(-k)).collect();
        let mut dev = Vec::new();
        let mut worst_contraction = 0.0f64;
        let mut worst_residual = 0.0f64;
        for &z in &zs {
            let prof = fam.solve_profile(z * z).unwrap();
            worst_contraction = worst_contraction.max(prof.max_contraction());
            let zc = Complex64::new(z, 0.0);
            worst_residual = worst_residual.max(fam.standing_wave_residual(zc).unwrap());
            let (q, _) = fam.bound_state(zc).unwrap();
            let phi = fam.spectral().phi_complex();
            dev.push(norm(&q.axpy(-zc, &phi).unwrap(), NormKind::H1Gamma(0.2)).unwrap());
        }
        let slope = log_log_slope(&zs, &dev);
        let pass = zs.iter().all(|z| z * z <= rho0)
            && worst_contraction <= CONTRACTION_MAX
            && worst_residual < STANDING_RESIDUAL_MAX
            && (slope - (2.0 * p + 1.0)).abs() <= PROFILE_SLOPE_TOL;
        ok &= pass;
        parts.push(format!(
            "(p={p},l={lambda}) rho0={rho0:.3e} |z|<={top:.3e} k<={worst_contraction:.3} res={worst_residual:.1e} slope={slope:.3}"
        ));
    }
    (ok, parts.join("; "))
}

fn cubic_oracle() -> Outcome {
    let grid = Grid::with_spacing(40.0, 0.01).unwrap();
    let fam = BoundStateFamily::new(Nonlinearity::power(1.0, -1.0).unwrap(), 1.0, grid).unwrap();
    let mut worst = 0.0f64;
    for beta in [0.52, 0.55, 0.6] {
        let (exact, _) = cubic_profile(beta, grid).unwrap();
        // amplitude matching: the profile correction is orthogonal to φ
        let z = nls_core::grid::inner_real(&exact, &fam.spectral().phi).unwrap();
        let (q, _) = fam.bound_state(Complex64::new(z, 0.0)).unwrap();
        let err = (&q - &exact.to_complex()).max_abs() / exact.max_abs();
        worst = worst.max(err);
    }
    (worst < ORACLE_LINF_MAX, format!("max L-inf relative error {worst:.3e} over beta in {{0.52, 0.55, 0.6}}"))
}

fn virial_report() -> ExperimentReport {
    let mut cfg = RunConfig::default();
    cfg.grid.l = 40.0;
    cfg.grid.n = 8001;
    cfg.evo.sponge = false;
    run_virial_check(&cfg).unwrap()
}

fn commutator_identity(rep: &ExperimentReport) -> Outcome {
    let names = [
        "identity gap (fine mesh)",
        "identity gap decreases under refinement",
        "derived V closes the identity, alternative does not",
    ];
    let ok = names.iter().all(|n| rep.check(n).unwrap().pass);
    let row = &rep.rows[0].values;
    (
        ok,
        format!(
            "max gap {:.2e} at h=0.01, {:.2e} at h=0.02; shell field gap {:.1e} (derived V) vs {:.1e} (alternative)",
            row["max_gap_fine"], row["max_gap_coarse"], row["shell_gap_derived_V"], row["shell_gap_alternative_V"]
        ),
    )
}

fn coercivity(rep: &ExperimentReport) -> Outcome {
    let names = ["X-norm constant", "pointwise weight bound", "coercivity floor", "V-term slope"];
    let ok = names.iter().all(|n| rep.check(n).unwrap().pass);
    let bounds = rep.rows[1..]
        .iter()
        .all(|r| r.values["v_bound_holds"] == 1.0 && r.values["leak_bound_holds"] == 1.0);
    let local = rep.flags.iter().find(|f| f.starts_with("V-term local")).cloned().unwrap_or_default();
    (
        ok && bounds,
        format!(
            "X constant {:.3} (<= 12), floor {:.3} (>= 0.19), V-term slope {:.3} (-1 +- 0.2), per-A bounds {}; {local}",
            rep.check("X-norm constant").unwrap().value,
            rep.check("coercivity floor").unwrap().value,
            rep.check("V-term slope").unwrap().value,
            if bounds { "hold" } else { "violated" },
        ),
    )
}

fn conservation() -> Outcome {
    let grid = Grid::with_spacing(40.0, 0.05).unwrap();
    let nl = Nonlinearity::power(1.0, -1.0).unwrap();
    let fam = BoundStateFamily::new(nl, 1.0, grid).unwrap();
    let (q, _) = fam.bound_state(Complex64::new(0.3, 0.0)).unwrap();
    let packet = ComplexField::from_fn(grid, |x| Complex64::from_polar(0.05 * (-(x - 5.0).powi(2)).exp(), -x));
    let u0 = &q + &packet;
    let run = |dt: f64| {
        let cfg = EvolutionConfig {
            coupling: 1.0,
            nonlinearity: nl,
            dt,
            t_final: 100.0,
            sponge: None,
            cadence: (0.5 / dt).round() as usize,
        };
        evolve(&u0, &cfg, None, &mut []).unwrap()
    };
    let coarse = run(0.02);
    let fine = run(0.01);
    let mass = coarse.relative_mass_drift().max(fine.relative_mass_drift());
    let order = (coarse.max_energy_drift() / fine.max_energy_drift()).log2();

    let op = build_operator(1.0, grid).unwrap();
    let fwd = Propagator::new(&op, nl, 0.01, None).unwrap();
    let bwd = Propagator::new(&op, nl, -0.01, None).unwrap();
    let mut u = u0.clone();
    for _ in 0..100 {
        u = fwd.step(&u).unwrap();
    }
    for _ in 0..100 {
        u = bwd.step(&u).unwrap();
    }
    let reversal = (&u - &u0).max_abs();
    (
        mass < MASS_DRIFT_MAX && order >= ENERGY_ORDER_MIN && reversal < REVERSAL_MAX,
        format!(
            "mass drift {mass:.2e}, energy drift {:.2e} -> {:.2e} (order {order:.2}), reversal {reversal:.1e}",
            coarse.max_energy_drift(),
            fine.max_energy_drift()
        ),
    )
}

fn summary(rep: &ExperimentReport) -> String {
    rep.checks
        .iter()
        .map(|c| format!("{}={:.4}", c.name, c.value))
        .chain(rep.fits.iter().map(|f| format!("{}: {:.3} [{:.3}, {:.3}]", f.name, f.slope, f.ci_low, f.ci_high)))
        .chain(rep.flags.iter().cloned())
        .collect::<Vec<_>>()
        .join("; ")
}

fn small_data() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.exp.p_values = vec![0.3, 1.0, 2.0];
    let rep = run_small_en(&cfg).unwrap();
    (rep.passed == Some(true), summary(&rep))
}

fn selection() -> Outcome {
    let rep = run_selection(&RunConfig::default()).unwrap();
    (rep.passed == Some(true), summary(&rep))
}

fn dispersion() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.op.q = -1.0;
    cfg.nl = Nonlinearity::power(1.0, 1.0).unwrap();
    let rep = run_dispersion(&cfg).unwrap();
    (rep.passed == Some(true), summary(&rep))
}

fn modulation_algebra() -> Outcome {
    let grid = Grid::with_spacing(30.0, 0.05).unwrap();
    let fam = BoundStateFamily::new(Nonlinearity::power(1.0, -1.0).unwrap(), 1.0, grid).unwrap();
    let m = Modulator::new(&fam);
    let phi = fam.spectral().phi_complex();
    let mut round = 0.0f64;
    let mut r_id = 0.0f64;
    let mut pc_orth = 0.0f64;
    let mut hc_orth = 0.0f64;
    let mut gauge = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_smooth_field(grid, &mut rng, 3, 8.0);
        let xi = continuous_part(&fam, &raw).unwrap().map(|v| v * 0.03);
        let z0 = Complex64::new(0.05 + 0.03 * seed as f64, 0.1 - 0.04 * seed as f64);

        let r0 = m.r_operator(Complex64::new(0.0, 0.0), &xi).unwrap();
        r_id = r_id.max((&r0 - &xi).max_abs());

        for conv in [Convention::Pc, Convention::Hc] {
            let u = m.compose(z0, &xi, conv).unwrap();
            let s = m.decompose(&u, conv).unwrap();
            let back = match conv {
                Convention::Pc => s.remainder.clone(),
                Convention::Hc => continuous_part(&fam, &s.remainder).unwrap(),
            };
            round = round.max((s.z - z0).norm()).max((&back - &xi).max_abs());
            match conv {
                Convention::Pc => {
                    let a = inner(&s.remainder, &phi).unwrap().abs();
                    let b = inner(&s.remainder, &phi.times_i()).unwrap().abs();
                    pc_orth = pc_orth.max(a).max(b);
                }
                Convention::Hc => {
                    let pair = m.hc_pairings(s.z, &s.remainder).unwrap();
                    hc_orth = hc_orth.max(pair[0].abs()).max(pair[1].abs());
                }
            }
            for theta in [0.7, 2.9, -1.4] {
                let t = m.decompose(&rotate(&u, theta), conv).unwrap();
                let rot = Complex64::from_polar(1.0, theta);
                gauge = gauge
                    .max((t.z - rot * s.z).norm())
                    .max((&t.remainder - &rotate(&s.remainder, theta)).max_abs());
            }
        }
    }
    (
        round < ROUND_TRIP_MAX
            && r_id < R_IDENTITY_MAX
            && pc_orth < PC_ORTHOGONALITY_MAX
            && hc_orth < HC_ORTHOGONALITY_MAX
            && gauge < GAUGE_MAX,
        format!(
            "round trip {round:.1e}, R[0] - id {r_id:.1e}, P_c pairing {pc_orth:.1e}, H_c pairing {hc_orth:.1e}, gauge {gauge:.1e}"
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; `--list` must not run the suite
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let virial = virial_report();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("spectral fidelity", Box::new(spectral_fidelity)),
        ("bound-state construction", Box::new(bound_state_construction)),
        ("cubic oracle", Box::new(cubic_oracle)),
        ("commutator identity", Box::new(|| commutator_identity(&virial))),
        ("coercivity suite", Box::new(|| coercivity(&virial))),
        ("conservation", Box::new(conservation)),
        ("small-data decay", Box::new(small_data)),
        ("ground-state selection", Box::new(selection)),
        ("defocusing dispersion", Box::new(dispersion)),
        ("modulation algebra", Box::new(modulation_algebra)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = check();
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {:>2} {name} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
