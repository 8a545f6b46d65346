use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use vfckit::gallery::gallery;
use vfckit::run::{run, Flags, COMMANDS};
use vfckit::scenario::load_scenario;

/// Kuranishi structures, perturbations and virtual chains on small gallery spaces.
#[derive(Parser, Debug)]
#[command(name = "vfckit", version)]
struct Cli {
    /// verify, build-gcs, perturb, count, boundary, sweep, pushout, stokes, compose, invariance or gallery
    command: String,
    /// Scenario file or gallery:NAME (omit for `gallery`)
    scenario: Option<String>,
    /// Perturbation stage n (s^n → s as n → ∞)
    #[arg(long)]
    n: Option<u64>,
    /// CF-perturbation size ε
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gauss–Legendre order
    #[arg(long)]
    grid: Option<usize>,
    /// Override the residual bound of the command
    #[arg(long)]
    tol: Option<f64>,
    /// Pushout target: point, pair or grid
    #[arg(long)]
    mode: Option<String>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the command's table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn threads() {
    if let Some(n) = std::env::var("VFCKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second initialization only happens in tests; ignore it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn list_gallery() {
    for e in gallery() {
        println!("{:<8} vdim {}  {}  {}", e.name, e.vdim, if e.boundary { "boundary" } else { "closed  " }, e.doc);
    }
}

fn fail(code: &str, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("{code}: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    threads();
    if cli.command == "gallery" {
        list_gallery();
        return ExitCode::SUCCESS;
    }
    if !COMMANDS.contains(&cli.command.as_str()) {
        return fail("UNKNOWN_COMMAND", format!("{} (expected one of {})", cli.command, COMMANDS.join(", ")));
    }
    let Some(path) = cli.scenario.as_deref() else {
        return fail("MISSING_SCENARIO", "a scenario file or gallery:NAME is required");
    };
    let model = match load_scenario(path) {
        Ok(m) => m,
        Err(e) => return fail(e.code(), e),
    };
    let flags = Flags { n: cli.n, epsilon: cli.epsilon, seed: cli.seed, grid: cli.grid, tol: cli.tol, mode: cli.mode };
    let out = match run(&cli.command, &model, &flags) {
        Ok(o) => o,
        Err(e) => return fail(e.code(), e),
    };
    let text = match out.report.to_json() {
        Ok(t) => t,
        Err(e) => return fail(e.code(), e),
    };
    match &cli.json {
        Some(p) => {
            if let Err(e) = std::fs::write(p, format!("{text}\n")) {
                return fail("IO_ERROR", e);
            }
        }
        None => println!("{text}"),
    }
    if let Some(p) = &cli.csv {
        let body = out.csv.unwrap_or_default();
        if let Err(e) = std::fs::write(p, body) {
            return fail("IO_ERROR", e);
        }
    }
    for c in out.report.checks.iter().filter(|c| !c.passed()) {
        eprintln!("{:?} {} residual {:e} {}", c.status, c.name, c.residual, c.detail);
    }
    ExitCode::from(out.report.exit_code() as u8)
}
