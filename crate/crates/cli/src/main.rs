//! `crvb`: manufacture, flatten, verify and inspect CR vector-bundle
//! connections.
//!
//! Exit codes: 0 success, 1 validation error, 2 divergence or failed
//! convergence, 3 I/O or file-format error.

use clap::{Parser, Subcommand, ValueEnum};
use crkam::calculus::{tangential_frame, DefiningSurface, TangentialFrame};
use crkam::diagnostics::{convergence_diagnostics, ConvergenceReport};
use crkam::engine::{run_with_trace, verify_solution, IterationTrace, RunSummary, VerifyReport};
use crkam::io::{self, Kind};
use crkam::norms::{ck_norm, fs_norm, holder_seminorm, scaled_fs_norm, NormReport};
use crkam::problem::{manufacture_problem, RunConfig};
use crkam::Error;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "crvb", version, about = "Rapid-convergence flattening of CR vector-bundle connections")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a manufactured connection and its ground-truth frame.
    Manufacture {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "omega.crvb")]
        omega: PathBuf,
        #[arg(long, default_value = "a_true.crvb")]
        truth: PathBuf,
    },
    /// Run the iteration and write the gauge, trace and summary.
    Flatten {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Connection to flatten; manufactured from the config when absent.
        #[arg(long)]
        omega: Option<PathBuf>,
        /// Directory for outputs whose paths the config leaves unset.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Recompute the flatness residual of a gauge from files.
    Verify {
        #[arg(long)]
        omega: PathBuf,
        #[arg(long)]
        gauge: PathBuf,
        /// Pass when the residual is at most tol · (1 + ‖ω0‖).
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Print norm reports for a field, gauge or form file.
    Norms {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, value_enum, default_value_t = NormChoice::Ck)]
        kind: NormChoice,
        #[arg(long, default_value_t = 0)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Radius for `ck` and `fs-scaled`; defaults to the file's radius.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Turn a trace CSV into plot-ready columns.
    Trace {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NormChoice {
    Ck,
    Holder,
    Fs,
    FsScaled,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Format(_) => 3,
            Error::Diverged { .. }
            | Error::SmallnessViolation { .. }
            | Error::FrameDegenerate(_)
            | Error::SolverFailure { .. }
            | Error::GaugeSingular { .. } => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    if let Ok(t) = std::env::var("CRVB_THREADS") {
        let n = t
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("CRVB_THREADS must be a positive integer, got {t:?}")))?;
        crkam::par::configure_threads(n)?;
    }
    match cmd {
        Command::Manufacture { config, omega, truth } => manufacture(config.as_deref(), &omega, &truth),
        Command::Flatten { config, omega, out_dir } => flatten(config.as_deref(), omega.as_deref(), &out_dir),
        Command::Verify { omega, gauge, tol } => verify(&omega, &gauge, tol),
        Command::Norms { field, kind, k, alpha, rho } => norms(&field, kind, k, alpha, rho),
        Command::Trace { input, output } => trace(&input, output.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn heisenberg(n: usize) -> Result<TangentialFrame, Error> {
    tangential_frame(&DefiningSurface::heisenberg(n))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    io::write_atomic(path, s.as_bytes())
}

fn manufacture(config: Option<&Path>, omega: &Path, truth: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let m = manufacture_problem(&cfg.problem)?;
    io::save_form(omega, &m.omega0)?;
    io::save_field(truth, &m.a_true)?;
    println!(
        "wrote {} and {} (seed {}, {} attempt(s))",
        omega.display(),
        truth.display(),
        m.seed_used,
        m.attempts
    );
    Ok(())
}

#[derive(Serialize)]
struct FlattenSummary {
    run: Option<RunSummary>,
    error: Option<String>,
    diagnostics: Option<ConvergenceReport>,
    verify: Option<VerifyReport>,
    elapsed_seconds: f64,
    config: RunConfig,
}

fn flatten(config: Option<&Path>, omega: Option<&Path>, out_dir: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let start = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(Error::from)?;
    let omega0 = match omega {
        Some(p) => io::load_form(p)?,
        None => manufacture_problem(&cfg.problem)?.omega0,
    };
    let frame = heisenberg(omega0.chart.n())?;
    let or = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out_dir.join(name));
    let gauge_path = or(&cfg.output.gauge, "G.crvb");
    let trace_path = or(&cfg.output.trace, "trace.csv");
    let summary_path = or(&cfg.output.summary, "summary.json");
    if let Some(p) = &cfg.output.omega {
        io::save_form(p, &omega0)?;
    }

    let (trace, result) = run_with_trace(&omega0, &cfg.engine, &cfg.solver, &frame);
    io::write_atomic(&trace_path, trace.to_csv().as_bytes())?;
    let diagnostics = convergence_diagnostics(&trace).ok();
    let mut summary = FlattenSummary {
        run: None,
        error: None,
        diagnostics,
        verify: None,
        elapsed_seconds: 0.0,
        config: cfg.clone(),
    };
    let outcome = match result {
        Ok(out) => out,
        Err(e) => {
            summary.error = Some(e.to_string());
            summary.elapsed_seconds = start.elapsed().as_secs_f64();
            write_json(&summary_path, &summary)?;
            return Err(e.into());
        }
    };
    io::save_gauge(&gauge_path, &outcome.gauge)?;
    let verify = verify_solution(&omega0, &outcome.gauge, &frame)?;
    let run = outcome.summary();
    println!(
        "steps {} restarts {} final delta {:.3e} residual {:.3e} (relative {:.3e}) on rho {:.4}",
        run.steps, run.restarts, run.final_delta, verify.raw.value, run.relative_residual, run.rho_infinity
    );
    let fixed_steps = cfg.engine.tol_rel == 0.0 && cfg.engine.tol_abs == 0.0;
    let converged = run.converged;
    summary.run = Some(run);
    summary.verify = Some(verify);
    summary.elapsed_seconds = start.elapsed().as_secs_f64();
    if !converged && !fixed_steps {
        summary.error = Some(format!("tolerance not reached within jmax = {} steps", cfg.engine.jmax));
    }
    write_json(&summary_path, &summary)?;
    match summary.error {
        Some(message) => Err(Failure { code: 2, message }),
        None => Ok(()),
    }
}

fn verify(omega: &Path, gauge: &Path, tol: f64) -> CliResult {
    let omega0 = io::load_form(omega)?;
    let g = io::load_gauge(gauge)?;
    let frame = heisenberg(omega0.chart.n())?;
    let rep = verify_solution(&omega0, &g, &frame)?;
    let norm0 = ck_norm(&omega0, omega0.chart.rho(), 0)?.value;
    let bound = tol * (1.0 + norm0);
    println!("{}", serde_json::to_string_pretty(&rep).map_err(Error::from)?);
    if rep.raw.value <= bound {
        println!("pass: residual {:.3e} <= {:.3e}", rep.raw.value, bound);
        Ok(())
    } else {
        Err(Failure { code: 1, message: format!("residual {:.3e} exceeds {:.3e}", rep.raw.value, bound) })
    }
}

fn norms(path: &Path, kind: NormChoice, k: usize, alpha: f64, rho: Option<f64>) -> CliResult {
    let bytes = std::fs::read(path).map_err(Error::from)?;
    let report = |f: &dyn Fn(&dyn NormTarget) -> Result<NormReport, Error>| -> Result<NormReport, Error> {
        match io::peek_kind(&bytes)? {
            Kind::Field => f(&io::decode_field(&bytes)?),
            Kind::Gauge => f(&io::decode_gauge(&bytes)?.field),
            Kind::Form => f(&io::decode_form(&bytes)?),
        }
    };
    let rep = report(&|t: &dyn NormTarget| t.norm(kind, k, alpha, rho))?;
    println!("{}", NormReport::CSV_HEADER);
    println!("{}", rep.csv_row());
    if rep.lower_bound {
        eprintln!("note: Hölder term sampled; the value is a lower bound");
    }
    Ok(())
}

/// Norms available on every file kind.
trait NormTarget {
    fn norm(&self, kind: NormChoice, k: usize, alpha: f64, rho: Option<f64>) -> Result<NormReport, Error>;
}

impl NormTarget for crkam::field::MatrixField {
    fn norm(&self, kind: NormChoice, k: usize, alpha: f64, rho: Option<f64>) -> Result<NormReport, Error> {
        let frame = heisenberg(self.chart.n())?;
        let rho = rho.unwrap_or(self.chart.rho());
        match kind {
            NormChoice::Ck => ck_norm(self, rho, k),
            NormChoice::Holder => holder_seminorm(self, k, alpha, 20_000, 0),
            NormChoice::Fs => fs_norm(self, k, alpha, &frame),
            NormChoice::FsScaled => Err(Error::invalid("fs-scaled applies to connection forms")),
        }
    }
}

impl NormTarget for crkam::field::ConnectionForm {
    fn norm(&self, kind: NormChoice, k: usize, alpha: f64, rho: Option<f64>) -> Result<NormReport, Error> {
        let frame = heisenberg(self.chart.n())?;
        let rho = rho.unwrap_or(self.chart.rho());
        match kind {
            NormChoice::Ck => ck_norm(self, rho, k),
            NormChoice::Holder => holder_seminorm(self, k, alpha, 20_000, 0),
            NormChoice::Fs => fs_norm(self, k, alpha, &frame),
            NormChoice::FsScaled => scaled_fs_norm(self, rho, k, alpha, &frame),
        }
    }
}

fn trace(input: &Path, output: Option<&Path>) -> CliResult {
    let t = IterationTrace::from_csv(&std::fs::read_to_string(input).map_err(Error::from)?)?;
    let mut out = String::from("j");
    for s in 0..=t.k {
        out.push_str(&format!(",log10_delta{s}"));
    }
    out.push_str(",zeta_j,log10_zeta_j,eta_hat\n");
    for r in &t.rows {
        out.push_str(&r.j.to_string());
        for d in &r.delta {
            out.push_str(&format!(",{:e}", d.log10()));
        }
        out.push_str(&format!(",{:e},{:e},{:e}\n", r.zeta_j, r.zeta_j.log10(), r.eta_hat));
    }
    match output {
        Some(p) => io::write_atomic(p, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}
