//! bridgesim: configure a diffusion model and a conditioning, simulate
//! bridge paths, classify boundaries, and run verification suites.
//!
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Exit codes: 0 success / all checks pass, 1 numerical or statistical
//! failure, 2 usage or config error.

use bridgesim_core::error::BridgeError;
use bridgesim_core::integrator::simulate_ensemble;
use bridgesim_core::scale_speed::{classify_boundary, Endpoint, ScaleFunction, SpeedDensity};
use bridgesim_core::verify::{run_suite, Suite};
use bridgesim_core::ScenarioConfig;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bridgesim", version, about = "Markov bridge simulation and verification")]
struct Cli {
    /// Scenario config file (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides outputs.dir from the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (overrides ensemble.master_seed from the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for ensemble simulation (default: machine parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate an ensemble; writes paths.csv and summary.json
    Simulate,
    /// Run a verification suite: assumptions | bridge | martingale | appendixB | all
    Verify {
        #[arg(value_name = "SUITE")]
        suite: String,
    },
    /// Feller boundary classification of the configured 1-D model
    Classify,
    /// Tabulate density, h and bridge drift on a (t, y) grid to CSV
    Density {
        /// number of time nodes
        #[arg(long, default_value_t = 25)]
        nt: usize,
        /// number of state nodes
        #[arg(long, default_value_t = 81)]
        ny: usize,
        /// state window lower edge (default: model-derived)
        #[arg(long)]
        y_min: Option<f64>,
        /// state window upper edge
        #[arg(long)]
        y_max: Option<f64>,
    },
}

/// Usage/config errors exit 2, numerical/statistical failures exit 1.
enum CliError {
    Usage(String),
    Failure(String),
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Param(_) | BridgeError::Time(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("BRIDGESIM_LOG")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("failure: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <file> is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.ensemble.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.outputs.dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ScenarioConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(cfg.outputs.dir.clone().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    match &cli.cmd {
        Cmd::Simulate => cmd_simulate(cli),
        Cmd::Verify { suite } => cmd_verify(cli, suite),
        Cmd::Classify => cmd_classify(cli),
        Cmd::Density { nt, ny, y_min, y_max } => cmd_density(cli, *nt, *ny, *y_min, *y_max),
    }
}

#[derive(Serialize)]
struct NodeStat {
    t: f64,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

#[derive(Serialize)]
struct PinningSummary {
    target: Vec<f64>,
    tol: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct SimulationSummary {
    model: String,
    n_paths: usize,
    master_seed: u64,
    n_nodes: usize,
    delta_min: f64,
    stride: usize,
    node_stats: Vec<NodeStat>,
    pinning: Option<PinningSummary>,
    failed_paths: usize,
    h_floor_events: usize,
    domain_projections: usize,
    capped_steps: usize,
}

fn cmd_simulate(cli: &Cli) -> Result<ExitCode, CliError> {
    let cfg = load_config(cli)?;
    let dir = out_dir(&cfg)?;
    let bp = cfg.build_bridge()?;
    let grid = cfg.build_grid()?;
    let ens = simulate_ensemble(
        &bp,
        &grid,
        cfg.ensemble.n_paths,
        cfg.ensemble.master_seed,
        cli.threads,
        cfg.method,
    )?;

    let stride = cfg.outputs.stride.max(1);
    if cfg.outputs.paths {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(dir.join("paths.csv"))
                .map_err(|e| CliError::Usage(format!("cannot write paths.csv: {e}")))?,
        );
        ens.write_csv(&mut file, stride)
            .map_err(|e| CliError::Failure(format!("writing paths.csv: {e}")))?;
    }

    let last = grid.len() - 1;
    let node_stats: Vec<NodeStat> = ens
        .node_stats()
        .into_iter()
        .enumerate()
        .filter(|(k, _)| k % stride == 0 || *k == last)
        .map(|(_, (t, mean, variance))| NodeStat { t, mean, variance })
        .collect();
    let pinning = bp.target().map(|z| {
        let tol = 0.05;
        let hits = ens
            .paths
            .iter()
            .filter(|p| {
                let st = p.last_state();
                let d2: f64 = st.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                !p.failed && d2.sqrt() < tol
            })
            .count();
        PinningSummary { target: z.to_vec(), tol, fraction: hits as f64 / ens.n_paths() as f64 }
    });
    let diag = ens.total_diagnostics();
    let summary = SimulationSummary {
        model: bp.h.model.name.clone(),
        n_paths: ens.n_paths(),
        master_seed: cfg.ensemble.master_seed,
        n_nodes: grid.len(),
        delta_min: grid.delta_min,
        stride,
        node_stats,
        pinning,
        failed_paths: ens.failed_paths,
        h_floor_events: diag.h_floor_events,
        domain_projections: diag.domain_projections,
        capped_steps: diag.capped_steps,
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Failure(format!("summary serialisation: {e}")))?;
    std::fs::write(dir.join("summary.json"), text)
        .map_err(|e| CliError::Failure(format!("writing summary.json: {e}")))?;
    log::info!("wrote {} and summary.json", dir.join("paths.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cli: &Cli, suite: &str) -> Result<ExitCode, CliError> {
    let cfg = load_config(cli)?;
    let suite: Suite = suite.parse().map_err(|e: BridgeError| CliError::Usage(e.to_string()))?;
    let reports = run_suite(&cfg, suite)?;
    let text = serde_json::to_string_pretty(&reports)
        .map_err(|e| CliError::Failure(format!("report serialisation: {e}")))?;
    println!("{text}");
    if let Some(dir) = &cfg.outputs.dir {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir).ok();
        std::fs::write(dir.join("reports.json"), &text)
            .map_err(|e| CliError::Failure(format!("writing reports.json: {e}")))?;
    }
    let all_pass = reports.iter().all(|r| r.passed);
    for r in &reports {
        log::info!("{}: {}", r.check, if r.passed { "pass" } else { "FAIL" });
    }
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Failure(
            reports
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.check.clone())
                .collect::<Vec<_>>()
                .join(", "),
        ))
    }
}

fn cmd_classify(cli: &Cli) -> Result<ExitCode, CliError> {
    let cfg = load_config(cli)?;
    let model = cfg.build_model()?;
    if model.dim() != 1 {
        return Err(CliError::Usage("classify requires a 1-D model".into()));
    }
    let lower = model.spec.domain.lower[0];
    let c = if model.spec.domain.is_interior(&cfg.start.x) {
        cfg.start.x[0]
    } else if lower.is_finite() {
        lower + 1.0
    } else {
        0.0
    };
    let sd = SpeedDensity::new(ScaleFunction::new(model.spec.clone(), c)?);
    let reports = vec![
        classify_boundary(&sd, Endpoint::Lower)?,
        classify_boundary(&sd, Endpoint::Upper)?,
    ];
    let text = serde_json::to_string_pretty(&reports)
        .map_err(|e| CliError::Failure(format!("report serialisation: {e}")))?;
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_density(
    cli: &Cli,
    nt: usize,
    ny: usize,
    y_min: Option<f64>,
    y_max: Option<f64>,
) -> Result<ExitCode, CliError> {
    let cfg = load_config(cli)?;
    let model = cfg.build_model()?;
    if model.dim() != 1 {
        return Err(CliError::Usage("density tabulation requires a 1-D model".into()));
    }
    if nt < 2 || ny < 2 {
        return Err(CliError::Usage("need nt ≥ 2 and ny ≥ 2".into()));
    }
    let bp = cfg.build_bridge()?;
    let dir = out_dir(&cfg)?;
    let (s, x0v) = bp.start();
    let x0 = x0v[0];
    let span = cfg.horizon - s;
    let lower = model.spec.domain.lower[0];
    let default_lo = if lower.is_finite() { lower + 1e-6 } else { x0 - 4.0 * span.sqrt() };
    let lo = y_min.unwrap_or(default_lo);
    let hi = y_max.unwrap_or(x0 + 4.0 * span.sqrt());
    if !(lo < hi) {
        return Err(CliError::Usage("need y_min < y_max".into()));
    }

    let path = dir.join("density.csv");
    let mut out = String::from("t,y,density,h,drift\n");
    let delta = cfg.grid.delta_min.unwrap_or(1e-4 * span);
    for i in 0..nt {
        let t = s + (span - delta) * (i as f64 + 0.5) / nt as f64;
        for j in 0..ny {
            let y = lo + (hi - lo) * j as f64 / (ny - 1) as f64;
            let p = if t > s { model.density_between(s, t, &[x0], &[y]).unwrap_or(f64::NAN) } else { f64::NAN };
            let h = bp.h.eval(t, &[y]).unwrap_or(f64::NAN);
            let drift = bp.drift(t, &[y]).map(|d| d[0]).unwrap_or(f64::NAN);
            out.push_str(&format!("{t:.16e},{y:.16e},{p:.16e},{h:.16e},{drift:.16e}\n"));
        }
    }
    std::fs::write(&path, out).map_err(|e| CliError::Failure(format!("writing density.csv: {e}")))?;
    log::info!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}
