//! `multiflow` command-line tool.
//!
//! Exit codes: 0 success, 1 numeric failure, 2 configuration or I/O error,
//! 3 verification failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use multiflow::config::{parse_config, ExperimentConfig};
use multiflow::convexity::{self, ConvexityReport};
use multiflow::diagnostics::{self, fit_decay_rate, DiagnosticsRecord, RateFit, SteadyStateVerdict, DEFAULT_STEADY_TOL};
use multiflow::measures::{particle_csv_header, read_quantile_csv, write_particle_rows, write_quantile_rows, QUANTILE_CSV_HEADER};
use multiflow::particle_solver::run_particles;
use multiflow::potentials::{validate, ValidationReport};
use multiflow::quantile_solver::run;
use multiflow::verify::verify;
use multiflow::Error;

#[derive(Parser)]
#[command(name = "multiflow", version, about = "Multi-species nonlocal interaction gradient flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the convexity report (λ₀, irreducibility, confinement) and the
    /// kernel validation report as JSON.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the one-dimensional quantile solver.
    Simulate(RunArgs),
    /// Run the particle solver (any dimension).
    Particles(RunArgs),
    /// Recompute diagnostics, rate fits and a steady-state verdict from a
    /// trajectory CSV written by `simulate`.
    Diagnose {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every applicable check on a configuration and print a JSON report.
    Verify {
        #[command(flatten)]
        overrides: Overrides,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    /// Seed for randomized presets.
    #[arg(long)]
    seed: Option<u64>,
    /// Time step; defaults to the stability bound.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Trajectory CSV. The diagnostics CSV and the manifest are written next
    /// to it as `<stem>.diagnostics.csv` and `<stem>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

/// A failure carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Numeric { .. }) => 1,
            _ => 2,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        anyhow::Error::from(error).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { config } => analyze(&config),
        Command::Simulate(args) => simulate(&args),
        Command::Particles(args) => particles(&args),
        Command::Diagnose { traj, config, out } => diagnose(&traj, &config, &out),
        Command::Verify { overrides, out } => verify_cmd(&overrides, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            match error.downcast_ref::<Error>() {
                Some(Error::Config(issues)) => {
                    eprintln!("error: invalid configuration");
                    for issue in issues {
                        eprintln!("  {issue}");
                    }
                }
                _ => eprintln!("error: {}", render_chain(&error)),
            }
            ExitCode::from(code)
        }
    }
}

/// Joins the error chain, dropping causes whose text is already contained
/// in the preceding message.
fn render_chain(error: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if parts.last().is_none_or(|prev| !prev.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

struct Loaded {
    cfg: ExperimentConfig,
    config_sha256: String,
}

fn load(overrides: &Overrides) -> Result<Loaded, Failure> {
    let bytes = fs::read(&overrides.config)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", overrides.config.display()))?;
    let config_sha256 = hex::encode(Sha256::digest(&bytes));
    let mut cfg = parse_config(&overrides.config)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = overrides.dt {
        cfg.solver.dt = Some(dt);
    }
    if let Some(t_end) = overrides.t_end {
        cfg.solver.t_end = t_end;
    }
    cfg.solver.check().map_err(|e| Error::config("solver", e.to_string()))?;
    Ok(Loaded { cfg, config_sha256 })
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: String,
    config_sha256: &'a str,
    seed: u64,
    dt: f64,
    stability_bound: f64,
    dt_exceeds_stability_bound: bool,
    t_end: f64,
    steps: usize,
    outputs: Vec<String>,
    failure: Option<String>,
}

#[derive(Serialize)]
struct AnalyzeOutput {
    convexity: ConvexityReport,
    validation: ValidationReport,
}

fn analyze(config: &Path) -> Result<u8, Failure> {
    let cfg = parse_config(config)?;
    let params = cfg.system_params()?;
    let convexity = convexity::analyze(&cfg.potential, &params)?;
    let validation = validate(&cfg.potential, (-5.0, 5.0), 2001);
    println!("{}", serde_json::to_string_pretty(&AnalyzeOutput { convexity, validation }).map_err(anyhow::Error::from)?);
    Ok(0)
}

fn simulate(args: &RunArgs) -> Result<u8, Failure> {
    let Loaded { cfg, config_sha256 } = load(&args.overrides)?;
    let qs0 = cfg.initial_quantile()?;
    let traj = run(&qs0, &cfg.potential, &cfg.solver)?;

    let mut w = create(&args.out)?;
    writeln!(w, "{QUANTILE_CSV_HEADER}").map_err(anyhow::Error::from)?;
    for r in &traj.records {
        write_quantile_rows(&mut w, r.t, &r.state).map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;

    let diag_path = sibling(&args.out, "diagnostics.csv");
    let mut d = create(&diag_path)?;
    writeln!(d, "{}", diagnostics::diagnostics_csv_header(qs0.n())).map_err(anyhow::Error::from)?;
    for r in &traj.records {
        diagnostics::write_diagnostics_row(&mut d, &r.diagnostics).map_err(anyhow::Error::from)?;
    }
    d.flush().map_err(anyhow::Error::from)?;

    let manifest_path = sibling(&args.out, "manifest.json");
    let manifest = Manifest {
        tool: env!("CARGO_BIN_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "simulate",
        config: args.overrides.config.display().to_string(),
        config_sha256: &config_sha256,
        seed: cfg.seed,
        dt: traj.dt,
        stability_bound: traj.stability_bound,
        dt_exceeds_stability_bound: traj.exceeds_stability_bound(),
        t_end: cfg.solver.t_end,
        steps: traj.steps_taken,
        outputs: vec![args.out.display().to_string(), diag_path.display().to_string()],
        failure: traj.failure.as_ref().map(|e| e.to_string()),
    };
    write_json(&manifest_path, &manifest)?;
    if traj.exceeds_stability_bound() {
        eprintln!("warning: dt = {} exceeds the stability bound {}", traj.dt, traj.stability_bound);
    }
    match traj.failure {
        Some(e) => Err(e.into()),
        None => Ok(0),
    }
}

fn particles(args: &RunArgs) -> Result<u8, Failure> {
    let Loaded { cfg, config_sha256 } = load(&args.overrides)?;
    let ps0 = cfg.initial_particles()?;
    let traj = run_particles(&ps0, &cfg.potential, &cfg.solver)?;

    let mut w = create(&args.out)?;
    writeln!(w, "{}", particle_csv_header(ps0.dim())).map_err(anyhow::Error::from)?;
    for (t, state) in traj.times.iter().zip(&traj.states) {
        write_particle_rows(&mut w, *t, state).map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;

    let diag_path = sibling(&args.out, "diagnostics.csv");
    let mut d = create(&diag_path)?;
    writeln!(d, "t,energy").map_err(anyhow::Error::from)?;
    for (t, e) in traj.times.iter().zip(&traj.energies) {
        writeln!(d, "{t},{e}").map_err(anyhow::Error::from)?;
    }
    d.flush().map_err(anyhow::Error::from)?;

    let steps = traj.times.last().map_or(0, |t| (t / traj.dt - 1e-9).ceil() as usize);
    let manifest = Manifest {
        tool: env!("CARGO_BIN_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "particles",
        config: args.overrides.config.display().to_string(),
        config_sha256: &config_sha256,
        seed: cfg.seed,
        dt: traj.dt,
        stability_bound: traj.stability_bound,
        dt_exceeds_stability_bound: traj.dt > traj.stability_bound,
        t_end: cfg.solver.t_end,
        steps,
        outputs: vec![args.out.display().to_string(), diag_path.display().to_string()],
        failure: traj.failure.as_ref().map(|e| e.to_string()),
    };
    write_json(&sibling(&args.out, "manifest.json"), &manifest)?;
    match traj.failure {
        Some(e) => Err(e.into()),
        None => Ok(0),
    }
}

#[derive(Serialize)]
struct DiagnoseOutput {
    records: Vec<DiagnosticsRecord>,
    rate_fits: Vec<RateFit>,
    /// Quantities for which no rate was fitted, with the reason.
    rate_fits_skipped: Vec<(String, String)>,
    steady_state: SteadyStateVerdict,
}

/// Fits over the leading part of `series` where the value stays above
/// roundoff relative to its start.
fn fit_leading(quantity: &str, series: &[(f64, f64)], predicted: f64) -> std::result::Result<RateFit, String> {
    let Some(&(t0, v0)) = series.first() else {
        return Err("empty series".into());
    };
    let floor = 1e-10 * v0.abs();
    let t1 = series.iter().take_while(|(_, v)| *v > floor).map(|p| p.0).last().unwrap_or(t0);
    fit_decay_rate(quantity, series, (t0, t1), predicted).map_err(|e| e.to_string())
}

fn diagnose(traj_path: &Path, config: &Path, out: &Path) -> Result<u8, Failure> {
    let cfg = parse_config(config)?;
    let params = cfg.initial_quantile()?.params().clone();
    let file = File::open(traj_path).map_err(Error::from).with_context(|| format!("reading {}", traj_path.display()))?;
    let frames = read_quantile_csv(std::io::BufReader::new(file), &params)?;
    let Some((_, last)) = frames.last() else {
        return Err(Error::config("traj", "at least one snapshot").into());
    };
    let report = convexity::analyze(&cfg.potential, &params)?;
    let ground = (report.lambda0 > 0.0).then(|| diagnostics::ground_state(&params, last.resolution()));
    let records: Vec<DiagnosticsRecord> =
        frames.iter().map(|(t, qs)| diagnostics::record(*t, qs, &cfg.potential, ground.as_ref())).collect();

    let mut rate_fits = Vec::new();
    let mut skipped = Vec::new();
    let kappa = cfg.potential.kappa();
    for i in 0..params.n() {
        let name = format!("diam_{}", i + 1);
        let s: f64 = kappa[i].iter().zip(&params.p).map(|(k, p)| k * p).sum();
        if s <= 0.0 {
            skipped.push((name, format!("Σⱼ κᵢⱼ pⱼ = {s} ≤ 0: no separation rate predicted")));
            continue;
        }
        let series: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.diam[i])).collect();
        match fit_leading(&name, &series, params.m[i] * s) {
            Ok(fit) => rate_fits.push(fit),
            Err(e) => skipped.push((name, e)),
        }
    }
    if ground.is_some() {
        let series: Vec<(f64, f64)> = records.iter().filter_map(|r| r.w2_to_ground.map(|d| (r.t, d))).collect();
        match fit_leading("w2_to_ground", &series, report.lambda0) {
            Ok(fit) => rate_fits.push(fit),
            Err(e) => skipped.push(("w2_to_ground".into(), e)),
        }
    } else {
        skipped.push(("w2_to_ground".into(), format!("λ₀ = {} ≤ 0: no ground-state rate", report.lambda0)));
    }
    let output = DiagnoseOutput {
        steady_state: diagnostics::steady_state_of(last, &cfg.potential, DEFAULT_STEADY_TOL),
        records,
        rate_fits,
        rate_fits_skipped: skipped,
    };
    write_json(out, &output)?;
    Ok(0)
}

fn verify_cmd(overrides: &Overrides, out: Option<&Path>) -> Result<u8, Failure> {
    let Loaded { cfg, config_sha256 } = load(overrides)?;
    let report = verify(&cfg)?;
    let value = json!({
        "config": overrides.config.display().to_string(),
        "config_sha256": config_sha256,
        "version": env!("CARGO_PKG_VERSION"),
        "report": report,
    });
    println!("{}", serde_json::to_string_pretty(&value).map_err(anyhow::Error::from)?);
    if let Some(path) = out {
        write_json(path, &value)?;
    }
    Ok(if report.all_passed { 0 } else { 3 })
}
