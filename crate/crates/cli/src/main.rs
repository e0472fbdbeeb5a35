mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use leafdiff_core::Error;

use crate::commands::{Check, Outcome};
use crate::config::{ExperimentConfig, Workers};

#[derive(Parser)]
#[command(name = "leafdiff", version, about = "Leafwise diffusions on a genus-2 hyperbolic surface")]
struct Cli {
    /// TOML configuration; defaults apply to anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Group, density-equation and metric audits.
    CheckGeometry,
    /// Stationary histogram at the configured rho against the Liouville reference.
    Stationary,
    /// Stationary runs over a list of rho values.
    Sweep {
        /// Comma-separated rho values, replacing sweep.rho_list.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rho: Option<Vec<f64>>,
    },
    /// Pesin integral, Bowen-ball entropy and their gap.
    Entropy,
    /// Lyapunov exponents along one long trajectory.
    Lyapunov,
    /// Distance of the time-one flow from its zero-noise limit.
    ConvergeFlow {
        /// Comma-separated noise levels, replacing converge.eps_list.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Prints the default configuration.
    Defaults,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CheckGeometry => "check-geometry",
            Command::Stationary => "stationary",
            Command::Sweep { .. } => "sweep",
            Command::Entropy => "entropy",
            Command::Lyapunov => "lyapunov",
            Command::ConvergeFlow { .. } => "converge-flow",
            Command::Defaults => "defaults",
        }
    }
}

/// Process exit codes.
mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const AUDIT: u8 = 2;
    pub const PRECONDITION: u8 = 3;
    pub const STARVATION: u8 = 4;
    pub const NUMERICAL: u8 = 5;
}

#[derive(Clone)]
enum Failure {
    Usage(String),
    Precondition(String),
    Core(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => exit::USAGE,
            Failure::Precondition(_) => exit::PRECONDITION,
            Failure::Core(e) => match e {
                Error::AuditFailed(_) => exit::AUDIT,
                Error::NotCoercive { .. }
                | Error::InvalidParameter(_)
                | Error::EmptyHistogram { .. }
                | Error::GridMismatch(_) => exit::PRECONDITION,
                Error::Starvation { .. } => exit::STARVATION,
                Error::BudgetExceeded { .. } | Error::ShootingFailed { .. } | Error::RootFinding(_) => exit::NUMERICAL,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Precondition(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Workers::Count(w);
    }
    cfg.validate().map_err(Failure::Precondition)?;
    Ok(cfg)
}

fn run_command(cli: &Cli, cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let threads = cfg.workers.threads().map_err(Failure::Precondition)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::CheckGeometry => commands::check_geometry(cfg),
        Command::Stationary => commands::stationary(cfg),
        Command::Sweep { rho } => commands::sweep(cfg, rho.as_deref().unwrap_or(&cfg.sweep.rho_list)),
        Command::Entropy => commands::entropy(cfg),
        Command::Lyapunov => commands::lyapunov(cfg),
        Command::ConvergeFlow { eps } => commands::converge_flow(cfg, eps.as_deref().unwrap_or(&cfg.converge.eps_list)),
        Command::Defaults => unreachable!("handled before the pool is built"),
    })
    .map_err(Failure::Core)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::write(dir.join(name), contents).map_err(|e| Failure::Usage(format!("{}: {e}", dir.join(name).display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Defaults = cli.command {
        print!("{}", ExperimentConfig::default().to_toml());
        return ExitCode::SUCCESS;
    }
    let started = Instant::now();
    let command = cli.command.name();
    let loaded = load_config(&cli);
    let (prefix, result) = match &loaded {
        Ok(cfg) => (format!("{command}_{}_seed{}", cfg.hash(), cfg.seed), run_command(&cli, cfg)),
        Err(f) => (format!("{command}_invalid"), Err(f.clone())),
    };

    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!("error: {}: {e}", cli.out.display());
        return ExitCode::from(exit::USAGE);
    }
    let mut outputs = Vec::new();
    let (outcome, mut failure) = match result {
        Ok(mut o) => {
            let f = o.failure.take().map(Failure::Core);
            (o, f)
        }
        Err(f) => (Outcome::default(), Some(f)),
    };
    for (suffix, contents) in &outcome.files {
        let name = format!("{prefix}.{suffix}");
        if let Err(f) = write_file(&cli.out, &name, contents) {
            failure.get_or_insert(f);
            break;
        }
        outputs.push(name);
    }
    let code = failure.as_ref().map_or(exit::OK, Failure::code);
    let checks: &[Check] = &outcome.checks;
    let manifest = json!({
        "command": command,
        "status": if failure.is_none() { "ok" } else { "error" },
        "exit_code": code,
        "error": failure.as_ref().map(Failure::message),
        "config": loaded.as_ref().ok(),
        "config_hash": loaded.as_ref().ok().map(ExperimentConfig::hash),
        "code_version": env!("CARGO_PKG_VERSION"),
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "checks": checks,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = fs::write(cli.out.join(format!("{prefix}.manifest.json")), text) {
        eprintln!("error: writing manifest: {e}");
    }
    if let Some(f) = &failure {
        eprintln!("error: {}", f.message());
    }
    for c in checks {
        eprintln!("{} {} ({})", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    ExitCode::from(code)
}
