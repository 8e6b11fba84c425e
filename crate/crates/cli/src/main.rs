//! `mlcpgd`: run scenarios, check bounds and weak residuals, and measure
//! convergence of the block approximation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use mlcpgd_core::diagnostics::{
    approximation_row, bounds_report, bump_family, fields_csv, loglog_slope, snapshots, ApproxError,
};
use mlcpgd_core::initial::{load_scenario, InitialSpec, ScenarioError, ValidationError};
use mlcpgd_core::weak::{weak_residual_estimate, Bump1d, Equation, ResidualReport};
use mlcpgd_core::{Engine, Scenario, Trajectory};

const SEED_VAR: &str = "MLCPGD_SEED";

#[derive(Parser)]
#[command(name = "mlcpgd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events, snapshots, sampled fields and bounds.
    Simulate(Common),
    /// Simulate, then evaluate both weak residuals on a seeded bump family.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Number of test bumps.
        #[arg(long, default_value_t = 32)]
        bumps: usize,
        /// Largest admissible absolute residual.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Seed mixed with the scenario hash; MLCPGD_SEED takes precedence.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Approximate general initial data by blocks at several refinements.
    Approximate {
        #[command(flatten)]
        common: Common,
        /// Refinement levels (blocks per region).
        #[arg(long, value_delimiter = ',', default_value = "10,20,40,80,160,320,640")]
        k: Vec<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

const PARSE: u8 = 2;
const ENGINE: u8 = 3;
const RESIDUAL: u8 = 4;
const APPROXIMATION: u8 = 5;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| fail(PARSE, format!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable output");
    out.push(b'\n');
    out
}

fn scenario_error(e: ScenarioError) -> Failure {
    let kind = match e {
        ScenarioError::Parse { .. } => "ParseError",
        ScenarioError::Validation(_) => "ValidationError",
    };
    fail(PARSE, format!("{kind}: {e}"))
}

fn prepare(common: &Common) -> Result<(Vec<u8>, Scenario), Failure> {
    let bytes = read(&common.scenario)?;
    let scenario = load_scenario(&bytes).map_err(scenario_error)?;
    fs::create_dir_all(&common.out)
        .map_err(|e| fail(1, format!("cannot create {}: {e}", common.out.display())))?;
    Ok((bytes, scenario))
}

fn window(scenario: &Scenario) -> (f64, f64) {
    (scenario.grid.x0, scenario.grid.x1)
}

fn simulate(common: &Common) -> Result<(Vec<u8>, Scenario, Trajectory), Failure> {
    let (bytes, scenario) = prepare(common)?;
    let initial = scenario
        .initial_state()
        .map_err(|e| fail(PARSE, format!("ValidationError: {e}")))?;
    let engine = Engine::with_options(scenario.road.clone(), scenario.engine.clone());
    let traj = engine
        .run(&initial, scenario.horizon)
        .map_err(|e| fail(ENGINE, format!("EngineError: {e}")))?;

    let mut events = Vec::new();
    traj.write_jsonl(&mut events)
        .map_err(|e| fail(1, format!("cannot serialize events: {e}")))?;
    write(&common.out, "events.jsonl", events)?;
    write(&common.out, "snapshots.json", json(&snapshots(&traj, &scenario.grid)))?;
    write(&common.out, "fields.csv", fields_csv(&traj, &scenario.grid))?;
    let bounds = bounds_report(&traj, window(&scenario), &scenario.grid.ts(scenario.horizon));
    write(&common.out, "bounds.json", json(&bounds))?;
    if !bounds.passed() {
        eprintln!(
            "warning: bound check failed (maximum principle {}, total variation {})",
            bounds.max_ok, bounds.tv_ok
        );
    }
    Ok((bytes, scenario, traj))
}

fn seed_from(bytes: &[u8], seed: u64) -> Result<u64, Failure> {
    let seed = match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| fail(PARSE, format!("{SEED_VAR} must be an unsigned integer, got {v:?}")))?,
        Err(_) => seed,
    };
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    Ok(u64::from_le_bytes(head) ^ seed)
}

fn verify(common: &Common, count: usize, tol: f64, seed: u64) -> Result<(), Failure> {
    let (bytes, scenario, traj) = simulate(common)?;
    let bumps = bump_family(&traj, window(&scenario), count, seed_from(&bytes, seed)?);
    let results = bumps
        .par_iter()
        .map(|b| {
            Ok((
                weak_residual_estimate(&traj, b, Equation::Mass)?,
                weak_residual_estimate(&traj, b, Equation::Momentum)?,
            ))
        })
        .collect::<Result<Vec<_>, mlcpgd_core::quadrature::QuadratureError>>()
        .map_err(|e| fail(RESIDUAL, format!("QuadratureNotConverged: {e}")))?;
    let report = ResidualReport::from_estimates(bumps, &results);
    write(&common.out, "residuals.json", json(&report))?;

    let Some(worst) = report.worst() else {
        eprintln!("warning: no test bumps requested, nothing was checked");
        return Ok(());
    };
    if report.max_abs > tol {
        let b = &report.bumps[worst];
        return Err(fail(
            RESIDUAL,
            format!(
                "residual {:e} exceeds {tol:e} at bump {worst} (center t = {}, x = {}; radii {}, {}): mass {:e}, momentum {:e}",
                report.max_abs,
                b.center.0,
                b.center.1,
                b.radii.0,
                b.radii.1,
                report.mass[worst],
                report.momentum[worst],
            ),
        ));
    }
    println!("max residual {:e} over {} bumps", report.max_abs, report.bumps.len());
    Ok(())
}

/// Slope a convergent fit must not exceed.
const MAX_SLOPE: f64 = -0.8;

fn approximate(common: &Common, ks: &[usize]) -> Result<(), Failure> {
    let bytes = read(&common.scenario)?;
    let scenario = match load_scenario(&bytes) {
        Err(ScenarioError::Validation(ValidationError::Initial(e))) => {
            return Err(fail(APPROXIMATION, format!("ValidationError: {e}")))
        }
        r => r.map_err(scenario_error)?,
    };
    let InitialSpec::General { data, .. } = &scenario.initial else {
        return Err(fail(PARSE, "ValidationError: scenario has no `general` initial data"));
    };
    fs::create_dir_all(&common.out)
        .map_err(|e| fail(1, format!("cannot create {}: {e}", common.out.display())))?;

    // centred on the left end of the support so the profile does not vanish
    // at both ends; a profile flat at both ends hides the first-order error
    let (lo, hi) = data.support();
    let phi = Bump1d {
        center: lo,
        radius: hi - lo,
    };
    let mut csv = String::from("k,e_n,e_nu,e_np\n");
    let mut rows = Vec::new();
    for &k in ks {
        let row = approximation_row(data, &scenario.road, k, &phi).map_err(|e| match e {
            ApproxError::Initial(e) => fail(APPROXIMATION, format!("ApproximationError: {e}")),
            ApproxError::Quadrature(e) => fail(APPROXIMATION, format!("QuadratureNotConverged: {e}")),
        })?;
        csv.push_str(&format!("{},{},{},{}\n", row.k, row.e_n, row.e_nu, row.e_np));
        rows.push(row);
    }
    write(&common.out, "convergence.csv", csv)?;

    if let Some(r) = rows.iter().find(|r| !r.passed()) {
        return Err(fail(
            APPROXIMATION,
            format!(
                "guarantee failed at k = {}: mass {}, bracket {}, variation {}, constraints {}",
                r.k, r.mass_ok, r.bracket_ok, r.tv_ok, r.constraint_ok
            ),
        ));
    }
    let ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    let series: [(&str, Vec<f64>); 3] = [
        ("e_n", rows.iter().map(|r| r.e_n).collect()),
        ("e_nu", rows.iter().map(|r| r.e_nu).collect()),
        ("e_np", rows.iter().map(|r| r.e_np).collect()),
    ];
    for (name, errors) in &series {
        match loglog_slope(&ks, errors) {
            Some(s) if s > MAX_SLOPE => {
                return Err(fail(
                    APPROXIMATION,
                    format!("{name} converges too slowly: fitted slope {s:.3} > {MAX_SLOPE}"),
                ))
            }
            Some(s) => println!("{name}: slope {s:.3}"),
            None => println!("{name}: errors negligible, slope not fitted"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(common) => simulate(common).map(|_| ()),
        Command::Verify {
            common,
            bumps,
            tol,
            seed,
        } => verify(common, *bumps, *tol, *seed),
        Command::Approximate { common, k } => approximate(common, k),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
