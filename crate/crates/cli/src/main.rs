//! `periodic-hyp`: validate hypotheses, solve for the time-periodic
//! solution, and run stability experiments from a config file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 hypothesis failure,
//! 4 non-convergence, 5 I/O error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hyperperiodic::diagnostics::{csv_real, regularity_measurements};
use hyperperiodic::system::{measure_mu_max, DEFAULT_SAMPLES};
use hyperperiodic::{
    emit_report, ivp, norms, pde_residual, rescale_time, solve_periodic, validate_forcing, validate_hyperbolicity,
    BoundarySpec, Error, Field, Format, IterationConfig, IterationReport, SourceLinearization, SystemSpec,
};

use config::{BuildError, ConfigError, Mode, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "periodic-hyp", version, about = "Time-periodic solutions of quasilinear hyperbolic systems")]
struct Cli {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for the perturbation signs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the structural hypotheses, θ, K_min and the smallness certificate.
    Validate { config: Option<PathBuf> },
    /// Solve for the periodic solution and write the field and iteration report.
    Periodic { config: Option<PathBuf> },
    /// Solve, perturb, run the forward problem and write the decay report.
    Stability { config: Option<PathBuf> },
    /// Stability runs over the ε list, one directory per value.
    Sweep { config: Option<PathBuf> },
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Hyperbolicity(_)
        | Error::Signature { .. }
        | Error::SourceOrigin(_)
        | Error::DegenerateEigenbasis { .. }
        | Error::Dominance { .. }
        | Error::BoundaryMap(_)
        | Error::Periodicity { .. } => 3,
        Error::Domain { .. } | Error::Convergence(_) | Error::NonContraction(_) => 4,
        Error::StepSize { .. } | Error::InvalidArgument(_) => 2,
        Error::Io { .. } => 5,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(2, e.0)
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Config(c) => c.into(),
            BuildError::Model(m) => m.into(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(Error::Io { path: path.to_path_buf(), source: e })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PERIODIC_HYP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let (mode, path) = match &cli.command {
        Some(Command::Validate { config }) => (Some(Mode::Validate), config),
        Some(Command::Periodic { config }) => (Some(Mode::Periodic), config),
        Some(Command::Stability { config }) => (Some(Mode::Stability), config),
        Some(Command::Sweep { config }) => (Some(Mode::Sweep), config),
        None => (None, &None),
    };
    let path = path
        .as_ref()
        .or(cli.config.as_ref())
        .ok_or_else(|| Failure::new(2, "no config file given (positional or --config)"))?;
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let cfg = RunConfig::parse(&text, path)?;
    let mode = mode
        .or(cfg.experiment.mode)
        .ok_or_else(|| Failure::new(2, "no subcommand given and experiment.mode is unset"))?;
    log::info!("{mode:?} run from {}", path.display());
    match mode {
        Mode::Validate => validate(&cfg),
        Mode::Periodic => {
            let out = prepare_dir(&cli.out)?;
            periodic(&cfg, cfg.experiment.epsilon[0], &out).map(|_| ())
        }
        Mode::Stability => {
            let out = prepare_dir(&cli.out)?;
            stability(&cfg, cfg.experiment.epsilon[0], cli.seed, &out).map(|_| ())
        }
        Mode::Sweep => sweep(&cfg, cli),
    }
}

fn prepare_dir(dir: &Path) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    Ok(dir.to_path_buf())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("plain json value")
}

/// The system and boundary data after the optional time rescaling, with `σ`.
fn prepared(cfg: &RunConfig, epsilon: f64) -> Result<(SystemSpec, BoundarySpec, f64), Failure> {
    let (spec, bspec) = cfg.build(epsilon)?;
    let mu_max = measure_mu_max(&spec, DEFAULT_SAMPLES)?;
    if mu_max > 1.0 + 1e-12 {
        if !cfg.solver.rescale {
            return Err(Failure::new(3, format!("μ_max = {mu_max} > 1 and time rescaling is disabled")));
        }
        let (scaled, sigma) = rescale_time(&spec)?;
        log::info!("rescaled time by σ = {sigma}");
        return Ok((scaled, bspec.time_scaled(sigma)?, sigma));
    }
    Ok((spec, bspec, 1.0))
}

fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    let epsilon = cfg.experiment.epsilon[0];
    let (raw_spec, _) = cfg.build(epsilon)?;
    let raw = validate_hyperbolicity(&raw_spec, DEFAULT_SAMPLES)?;
    let mut problems = Vec::new();
    if raw.needs_rescaling && !cfg.solver.rescale {
        problems.push(format!("μ_max = {} > 1 and time rescaling is disabled", raw.mu_max));
    }
    let (spec, bspec, sigma) = match prepared(cfg, epsilon) {
        Ok(p) => p,
        Err(f) if f.code == 3 => {
            println!("{}", pretty(&json!({ "hyperbolicity": raw, "ok": false, "problems": [f.message.clone()] })));
            return Err(f);
        }
        Err(f) => return Err(f),
    };
    let hyp = validate_hyperbolicity(&spec, DEFAULT_SAMPLES)?;
    if !hyp.a0_diagonal {
        problems.push("A(0) is not diagonal with increasing entries".into());
    }
    let forcing = validate_forcing(&bspec)?;
    let theta = bspec.theta_data()?;
    if theta.theta >= 1.0 {
        problems.push(format!("θ = {} ≥ 1: the boundary coupling is not dissipative", theta.theta));
    }
    let lin = SourceLinearization::new(&spec, cfg.solver.k);
    let (k_min, k, certificate) = match &lin {
        Ok(lin) => {
            let w = hyperperiodic::weights(&lin.gtilde_matrix(), spec.length, spec.n, spec.m)?;
            let c = hyperperiodic::smallness_certificate(theta.theta, lin.k, spec.length, w.m3);
            if !c.ok {
                problems.push(format!("θ + K·L·M₃ = {} ≥ 1", 1.0 - c.margin));
            }
            (Some(lin.k_min), Some(lin.k), Some(c))
        }
        Err(e) => {
            problems.push(e.to_string());
            let g0 = spec.source_jacobian(&vec![0.0; spec.n]);
            (Some(hyperperiodic::minimal_k(&g0)), cfg.solver.k, None)
        }
    };
    let ok = problems.is_empty();
    let report = json!({
        "ok": ok,
        "problems": problems,
        "sigma": sigma,
        "hyperbolicity": hyp,
        "forcing": forcing.report,
        "theta": theta,
        "k_min": k_min,
        "k": k,
        "certificate": certificate,
    });
    println!("{}", pretty(&report));
    if ok {
        Ok(())
    } else {
        Err(Failure::new(3, problems.join("; ")))
    }
}

fn iteration_config(cfg: &RunConfig) -> IterationConfig {
    IterationConfig {
        nt: cfg.grid.nt,
        nx: cfg.grid.nx,
        k: cfg.solver.k,
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
    }
}

fn field_csv(field: &Field) -> String {
    let mut header = String::from("t,x");
    for i in 1..=field.n {
        header.push_str(&format!(",u{i}"));
    }
    let mut out = header;
    out.push('\n');
    for j in 0..field.nt {
        for k in 0..=field.nx {
            out.push_str(&csv_real(field.t(j)));
            out.push(',');
            out.push_str(&csv_real(field.x(k)));
            for v in field.node(j, k) {
                out.push(',');
                out.push_str(&csv_real(*v));
            }
            out.push('\n');
        }
    }
    out
}

struct PeriodicRun {
    spec: SystemSpec,
    bspec: BoundarySpec,
    field: Field,
    report: IterationReport,
}

fn periodic(cfg: &RunConfig, epsilon: f64, out: &Path) -> Result<PeriodicRun, Failure> {
    let (spec, bspec, sigma) = prepared(cfg, epsilon)?;
    let (field, report) = solve_periodic(&spec, &bspec, &iteration_config(cfg))?;
    emit_report(&report, Format::Csv, &out.join("iterations.csv"))?;
    emit_report(&report, Format::Json, &out.join("iteration_report.json"))?;
    write(&out.join("field.csv"), &field_csv(&field))?;
    // per-component sup over t at each end
    let edge = |k: usize| -> Vec<f64> {
        (0..field.n).map(|i| (0..field.nt).map(|j| field.node(j, k)[i].abs()).fold(0.0, f64::max)).collect()
    };
    let summary = json!({
        "epsilon": epsilon,
        "sigma": sigma,
        "converged": report.converged,
        "iterations": report.iterations,
        "fitted_beta": report.fitted_beta,
        "certificate": report.certificate,
        "norms": norms(&field),
        "pde_residual": pde_residual(&field, &spec),
        "regularity": regularity_measurements(&field),
        "amplitude_left": edge(0),
        "amplitude_right": edge(field.nx),
    });
    write(&out.join("summary.json"), &pretty(&summary))?;
    println!("{}", pretty(&summary));
    if !report.converged {
        return Err(Failure::new(
            4,
            format!(
                "no convergence after {} iterations (last delta {:e})",
                report.iterations,
                report.deltas.last().unwrap_or(&f64::NAN)
            ),
        ));
    }
    Ok(PeriodicRun { spec, bspec, field, report })
}

/// Bump amplitudes `±perturbation·ε`, signs drawn from `seed`.
fn perturbation_amplitudes(n: usize, magnitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| if rng.gen::<bool>() { magnitude } else { -magnitude }).collect()
}

fn stability(
    cfg: &RunConfig,
    epsilon: f64,
    seed: u64,
    out: &Path,
) -> Result<(IterationReport, ivp::StabilityReport), Failure> {
    let PeriodicRun { spec, bspec, field, report } = periodic(cfg, epsilon, out)?;
    let amps = perturbation_amplitudes(spec.n, cfg.experiment.perturbation * epsilon, seed);
    let u0 = ivp::perturb(&hyperperiodic::extract_initial_data(&field), spec.length, &amps);
    let t0 = spec.length * measure_mu_max(&spec, DEFAULT_SAMPLES)?;
    let t_end = cfg.experiment.t_end.unwrap_or(6.0 * t0);
    let traj = ivp::run(&u0, &spec, &bspec, t_end, field.dt(), cfg.experiment.cfl)?;
    if let Some(reason) = &traj.halted {
        log::warn!("forward run stopped early: {reason}");
    }
    let stab = ivp::stability_metrics(&traj, &field, &spec)?;
    emit_report(&stab, Format::Csv, &out.join("stability.csv"))?;
    println!(
        "{}",
        pretty(&json!({
            "fitted_decay": stab.fitted_decay,
            "fitted_derivative_decay": stab.fitted_derivative_decay,
            "t0": stab.t0,
            "perturbation": amps,
            "halted": traj.halted,
        }))
    );
    if traj.halted.is_some() {
        return Err(Failure::new(4, "forward run left the admissible neighbourhood"));
    }
    Ok((report, stab))
}

fn sweep(cfg: &RunConfig, cli: &Cli) -> Result<(), Failure> {
    use rayon::prelude::*;

    let out = prepare_dir(&cli.out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Failure::new(2, e.to_string()))?;
    let cells: Vec<(usize, f64)> = cfg.experiment.epsilon.iter().copied().enumerate().collect();
    let results: Vec<Result<Vec<String>, Failure>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(idx, eps)| {
                let dir = prepare_dir(&out.join(format!("cell_{idx:03}")))?;
                let row = match stability(cfg, eps, cli.seed, &dir) {
                    Ok((rep, stab)) => vec![
                        "ok".to_string(),
                        rep.iterations.to_string(),
                        rate(rep.fitted_beta),
                        rate(stab.fitted_decay),
                        rate(stab.fitted_derivative_decay),
                    ],
                    Err(f) if f.code == 5 => return Err(f),
                    Err(f) => {
                        log::warn!("cell {idx} (ε = {eps}): {}", f.message);
                        vec![format!("exit_{}", f.code), String::new(), String::new(), String::new(), String::new()]
                    }
                };
                let mut full = vec![idx.to_string(), csv_real(eps)];
                full.extend(row);
                Ok(full)
            })
            .collect()
    });
    let mut table = String::from("cell,epsilon,status,iterations,fitted_beta,fitted_decay,fitted_derivative_decay\n");
    for r in results {
        table.push_str(&r?.join(","));
        table.push('\n');
    }
    write(&out.join("aggregate.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn rate(r: hyperperiodic::RateFit) -> String {
    match r {
        hyperperiodic::RateFit::Rate(v) => csv_real(v),
        hyperperiodic::RateFit::ConvergedImmediately => "converged_immediately".into(),
        hyperperiodic::RateFit::Insufficient => "insufficient".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E2_SMALL: &str = r#"
[system]
name = "linear_reflect_2x2"
params = { speed = 1.0 }

[boundary]
period = 2.0
gain = 0.5

[[boundary.forcing]]
harmonics = [{ amplitude = 1.0 }]

[[boundary.forcing]]

[grid]
nt = 32
nx = 32
"#;

    #[test]
    fn periodic_writes_field_and_reports() {
        let cfg = RunConfig::parse(E2_SMALL, Path::new("e2.toml")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let run = periodic(&cfg, 0.01, dir.path()).unwrap();
        assert!(run.report.converged);
        for name in ["field.csv", "iterations.csv", "iterations.json", "iteration_report.json", "summary.json"] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
        let field = fs::read_to_string(dir.path().join("field.csv")).unwrap();
        let mut lines = field.lines();
        assert_eq!(lines.next(), Some("t,x,u1,u2"));
        assert_eq!(lines.count(), 32 * 33);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["sigma"], 1.0);
    }

    #[test]
    fn perturbation_signs_follow_the_seed() {
        let a = perturbation_amplitudes(4, 0.5, 7);
        assert_eq!(a, perturbation_amplitudes(4, 0.5, 7));
        assert!(a.iter().all(|v| v.abs() == 0.5));
        let differs = (0..16).any(|s| perturbation_amplitudes(4, 0.5, s) != a);
        assert!(differs);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Convergence(3)), 4);
        assert_eq!(exit_code(&Error::Dominance { family: 1, k: 0.0 }), 3);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(Failure::from(ConfigError("bad".into())).code, 2);
    }
}
