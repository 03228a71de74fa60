//! `nls`: command-line driver. Exit codes: 0 pass, 1 failed check or run
//! error, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nls_core::bound_states::BoundStateFamily;
use nls_core::config::RunConfig;
use nls_core::evolution::{evolve, Tracker};
use nls_core::experiments::{
    initial_data, run_dispersion, run_modulation_residuals, run_selection, run_small_en,
    run_virial_check, trajectory_csv, write_atomic, ExperimentReport,
};
use nls_core::grid::{norm, random_smooth_field, ComplexField, NormKind};
use nls_core::modulation::{continuous_part, Convention, Modulator};
use nls_core::operator::{build_operator, SpectralData};
use nls_core::virial::make_weights;
use nls_core::Error;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "nls", version, about = "NLS with a delta potential: bound states, modulation, virial and decay experiments")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Per-key overrides applied on top of `--config` (or the defaults).
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long = "grid.L", global = true)]
    grid_l: Option<f64>,
    #[arg(long = "grid.N", global = true)]
    grid_n: Option<usize>,
    #[arg(long = "op.q", alias = "q", global = true, allow_hyphen_values = true)]
    q: Option<f64>,
    #[arg(long = "nl.p", alias = "p", global = true)]
    p: Option<f64>,
    #[arg(long = "nl.lambda", alias = "lambda", global = true, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long = "evo.dt", alias = "dt", global = true)]
    dt: Option<f64>,
    #[arg(long = "evo.T", alias = "T", global = true)]
    t: Option<f64>,
    #[arg(long = "virial.A", alias = "A", global = true)]
    a: Option<f64>,
    #[arg(long = "exp.eps-ladder", global = true, value_delimiter = ',')]
    eps_ladder: Option<Vec<f64>>,
    #[arg(long = "exp.amplitudes", global = true, value_delimiter = ',')]
    amplitudes: Option<Vec<f64>>,
    #[arg(long = "exp.p-values", global = true, value_delimiter = ',')]
    p_values: Option<Vec<f64>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the NLS_OUT environment variable takes precedence)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Conv {
    Pc,
    Hc,
}

impl From<Conv> for Convention {
    fn from(c: Conv) -> Self {
        match c {
            Conv::Pc => Convention::Pc,
            Conv::Hc => Convention::Hc,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for Q[z]; writes the profile and prints the residual and E
    BoundState {
        #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
        z: f64,
    },
    /// Ground eigenvalue and eigenfunction of the discrete operator
    Spectrum,
    /// Split Q[z] + eps * P_c(bump) in both conventions
    Decompose {
        #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
        z: f64,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
    },
    /// Commutator identity and coercivity bounds over random fields
    VirialCheck,
    /// One tracked trajectory from data of H1 size eps
    Evolve {
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, value_enum, default_value_t = Conv::Pc)]
        convention: Conv,
    },
    /// Local decay of the remainder over the eps ladder
    ThmSmallEn,
    /// Convergence of the gauge-corrected modulation parameter
    ThmSelection {
        /// Refuse p <= 1/2 instead of reporting it as experimental
        #[arg(long)]
        strict: bool,
    },
    /// Dispersion under a repulsive delta and defocusing nonlinearity
    ThmDispersion,
    /// Residuals of both modulation systems along a perturbed run
    Residuals,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

/// Defaults before the config file: the dispersion run lives in the
/// repulsive, defocusing regime.
fn base_config(cmd: &Command) -> RunConfig {
    let mut cfg = RunConfig::default();
    if let Command::ThmDispersion = cmd {
        cfg.op.q = -1.0;
        cfg.nl.lambda = 1.0;
    }
    cfg
}

fn merge(base: &mut Value, file: Value) {
    match (base, file) {
        (Value::Object(b), Value::Object(f)) => {
            for (k, v) in f {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn resolve(o: &Overrides, cmd: &Command) -> Result<RunConfig, Error> {
    let base = base_config(cmd);
    let mut cfg: RunConfig = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut merged = serde_json::to_value(&base)?;
            merge(&mut merged, serde_json::from_str(&text)?);
            serde_json::from_value(merged)?
        }
        None => base,
    };
    if let Some(l) = o.grid_l {
        cfg.grid.l = l;
    }
    if let Some(n) = o.grid_n {
        cfg.grid.n = n;
    }
    if let Some(q) = o.q {
        cfg.op.q = q;
    }
    if let Some(p) = o.p {
        cfg.nl.p = p;
    }
    if let Some(l) = o.lambda {
        cfg.nl.lambda = l;
    }
    if let Some(dt) = o.dt {
        cfg.evo.dt = Some(dt);
    }
    if let Some(t) = o.t {
        cfg.evo.t = t;
    }
    if let Some(a) = o.a {
        cfg.virial.a = a;
    }
    if let Some(v) = &o.eps_ladder {
        cfg.exp.eps_ladder = v.clone();
    }
    if let Some(v) = &o.amplitudes {
        cfg.exp.amplitudes = v.clone();
    }
    if let Some(v) = &o.p_values {
        cfg.exp.p_values = v.clone();
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(out) = std::env::var_os("NLS_OUT") {
        cfg.out = PathBuf::from(out);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `{"error": <kind>, "message": <text>}` on stderr.
fn structured(e: &Error) -> String {
    let debug = format!("{e:?}");
    let kind: String = debug.chars().take_while(|c| c.is_alphanumeric()).collect();
    json!({ "error": kind, "message": e.to_string() }).to_string()
}

fn write_summary(cfg: &RunConfig, command: &str, result: Value) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(format!("{command}-{}.json", cfg.hash()));
    let doc = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "config": cfg,
        "result": result,
    });
    write_atomic(&path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    Ok(path)
}

fn field_csv(cfg: &RunConfig, field: &ComplexField) -> String {
    let mut out = format!("# config: {}\nx,re,im\n", serde_json::to_string(cfg).expect("config serializes"));
    let grid = field.grid();
    for (i, v) in field.values().iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", grid.x(i), v.re, v.im));
    }
    out
}

fn print_report(rep: &ExperimentReport, files: &[PathBuf]) -> bool {
    for c in &rep.checks {
        println!("[{}] {}: {:.6} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    for f in &rep.fits {
        println!("fit {}: {:.4} [{:.4}, {:.4}] over {} points", f.name, f.slope, f.ci_low, f.ci_high, f.points);
    }
    for f in &rep.flags {
        println!("note: {f}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    match rep.passed {
        Some(p) => {
            println!("{}: {}", rep.experiment, if p { "pass" } else { "fail" });
            p
        }
        None => {
            println!("{}: reported without pass/fail", rep.experiment);
            true
        }
    }
}

fn report(rep: ExperimentReport, out: &Path) -> Result<bool, Failure> {
    let files = rep.write(out)?;
    Ok(print_report(&rep, &files))
}

fn run(cmd: &Command, cfg: &RunConfig) -> Result<bool, Failure> {
    match cmd {
        Command::BoundState { z } => {
            let fam = BoundStateFamily::new(cfg.nl, cfg.op.q, cfg.grid()?)?;
            let zc = Complex64::new(*z, 0.0);
            let prof = fam.profile(z * z)?;
            let (q, e) = fam.bound_state(zc)?;
            let residual = fam.standing_wave_residual(zc)?;
            let rho0 = fam.empirical_rho0(0.5, 1.0);
            let profile_path = cfg.out.join(format!("bound-state-{}.csv", cfg.hash()));
            std::fs::create_dir_all(&cfg.out)?;
            write_atomic(&profile_path, field_csv(cfg, &q).as_bytes())?;
            let ok = residual < 1e-6 && prof.max_contraction() <= 0.5;
            let summary = write_summary(
                cfg,
                "bound-state",
                json!({
                    "z": z, "E": e, "residual": residual, "iterations": prof.iterations,
                    "max_contraction": prof.max_contraction(), "rho0": rho0, "pass": ok,
                }),
            )?;
            println!("E = {e:.12}");
            println!("residual = {residual:.3e}");
            println!("Picard iterations = {}, max contraction = {:.4}, rho0 = {rho0:.4e}", prof.iterations, prof.max_contraction());
            println!("wrote {}\nwrote {}", profile_path.display(), summary.display());
            Ok(ok)
        }
        Command::Spectrum => {
            let grid = cfg.grid()?;
            let op = build_operator(cfg.op.q, grid)?;
            let bottom = op.smallest_eigenvalue();
            let mut result = json!({ "q": cfg.op.q, "h": grid.spacing(), "smallest_eigenvalue": bottom });
            if cfg.op.q > 0.0 {
                let sd = SpectralData::numeric(&op)?;
                let exact = -cfg.op.q * cfg.op.q / 4.0;
                result["eigenvalue"] = json!(sd.eigenvalue);
                result["exact"] = json!(exact);
                result["error"] = json!((sd.eigenvalue - exact).abs());
                std::fs::create_dir_all(&cfg.out)?;
                let path = cfg.out.join(format!("spectrum-{}.csv", cfg.hash()));
                write_atomic(&path, field_csv(cfg, &sd.phi_complex()).as_bytes())?;
                println!("eigenvalue = {:.10} (exact {exact}), error {:.3e}", sd.eigenvalue, (sd.eigenvalue - exact).abs());
                println!("wrote {}", path.display());
            } else {
                println!("no eigenvalue: q <= 0; smallest discrete eigenvalue {bottom:.3e}");
            }
            println!("wrote {}", write_summary(cfg, "spectrum", result)?.display());
            Ok(true)
        }
        Command::Decompose { z, eps } => {
            let grid = cfg.grid()?;
            let fam = BoundStateFamily::new(cfg.nl, cfg.op.q, grid)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let b = continuous_part(&fam, &random_smooth_field(grid, &mut rng, 3, 8.0))?;
            let b = b.map(|v| v * (*eps / norm(&b, NormKind::H1).unwrap_or(1.0)));
            let zc = Complex64::new(*z, 0.0);
            let (q, _) = fam.bound_state(zc)?;
            let u = &q + &b;
            let m = Modulator::new(&fam);
            let mut ok = true;
            let mut result = json!({ "z_in": z, "eps": eps });
            for (name, conv) in [("pc", Convention::Pc), ("hc", Convention::Hc)] {
                let s = m.decompose(&u, conv)?;
                let err = s.reconstruction_error(&fam, &u)?;
                ok &= err < 1e-9;
                result[name] = json!({
                    "re_z": s.z.re, "im_z": s.z.im, "remainder_h1": norm(&s.remainder, NormKind::H1)?,
                    "newton_residual": s.residual, "iterations": s.iterations, "reconstruction_error": err,
                });
                println!(
                    "{name}: z = {:.12} {:+.12}i, |remainder|_H1 = {:.4e}, reconstruction error {err:.2e}",
                    s.z.re, s.z.im, norm(&s.remainder, NormKind::H1)?
                );
            }
            println!("wrote {}", write_summary(cfg, "decompose", result)?.display());
            Ok(ok)
        }
        Command::VirialCheck => report(run_virial_check(cfg)?, &cfg.out),
        Command::Evolve { eps, convention } => {
            let grid = cfg.grid()?;
            let fam = BoundStateFamily::new(cfg.nl, cfg.op.q, grid)?;
            let u0 = initial_data(&fam, cfg, *eps)?;
            let wts = make_weights(cfg.virial.a, grid)?;
            let tracker = Tracker {
                family: &fam,
                convention: (*convention).into(),
                weights: &wts,
                gamma: cfg.virial.gamma,
            };
            let rec = evolve(&u0, &cfg.evolution(cfg.op.q, cfg.nl)?, Some(&tracker), &mut [])?;
            std::fs::create_dir_all(&cfg.out)?;
            let path = cfg.out.join(format!("evolve-{}.csv", cfg.hash()));
            let cfg_json = serde_json::to_string(cfg).expect("config serializes");
            write_atomic(&path, trajectory_csv(&rec, &cfg_json).as_bytes())?;
            let last = rec.samples.last().expect("samples");
            let result = json!({
                "eps": eps, "snapshots": rec.samples.len(),
                "relative_mass_drift": rec.relative_mass_drift(),
                "max_energy_drift": rec.max_energy_drift(),
                "I_T": last.int_xi, "re_z_T": last.z_re, "im_z_T": last.z_im,
                "decomposition_failures": rec.failures.len(),
            });
            println!(
                "T = {}: |z| = {:.6e}, I(T) = {:.6e}, mass drift {:.2e}, energy drift {:.2e}, failures {}",
                last.t, last.z().norm(), last.int_xi, rec.relative_mass_drift(), rec.max_energy_drift(), rec.failures.len()
            );
            println!("wrote {}\nwrote {}", path.display(), write_summary(cfg, "evolve", result)?.display());
            Ok(!rec.flagged())
        }
        Command::ThmSmallEn => report(run_small_en(cfg)?, &cfg.out),
        Command::ThmSelection { strict } => {
            if *strict && cfg.nl.p <= 0.5 {
                return Err(Error::RequiresP(cfg.nl.p).into());
            }
            report(run_selection(cfg)?, &cfg.out)
        }
        Command::ThmDispersion => report(run_dispersion(cfg)?, &cfg.out),
        Command::Residuals => report(run_modulation_residuals(cfg)?, &cfg.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = resolve(&cli.overrides, &cli.command)
        .map_err(|e| Failure::Usage(structured(&e)))
        .and_then(|cfg| run(&cli.command, &cfg));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("{}", structured(&e));
            ExitCode::from(1)
        }
    }
}
