use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phtaxis_cli::config::{Mode, RunConfig, SuiteName};
use phtaxis_cli::error::{CliError, CliResult};
use phtaxis_cli::runner::{execute, RunOutcome};
use phtaxis_cli::suite::run_suite;

#[derive(Parser)]
#[command(name = "phtaxis", version, about = "Acid-mediated cell migration model runner")]
struct Cli {
    /// Output directory (overrides outputs.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the particle solver and the suite.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed (overrides the config value).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Record wall-clock time in the manifest.
    #[arg(long, global = true)]
    wall_clock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the PDE system.
    Simulate { config: PathBuf },
    /// Linear stability report of the homogeneous equilibrium.
    Stability { config: PathBuf },
    /// Particle solver against its diffusion limit.
    Kinetic { config: PathBuf },
    /// Preset battery: fig1, fig2, fig3 or dispersion-table.
    Suite { name: SuiteName },
}

fn load(path: &Path, mode: Mode, cli: &Cli) -> CliResult<(RunConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut notes = Vec::new();
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.message().to_string()))?;
    if cfg.mode != mode {
        notes.push(format!("config mode {:?} replaced by the subcommand's {:?}", cfg.mode, mode));
        cfg.mode = mode;
    }
    apply_overrides(&mut cfg, cli);
    Ok((cfg, notes))
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(out) = &cli.out {
        cfg.outputs.directory = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.wall_clock {
        cfg.outputs.wall_clock = true;
    }
}

fn report(o: &RunOutcome) {
    println!("{}: {}", o.name, o.dir.display());
    for (k, v) in &o.summary {
        println!("  {k} = {v}");
    }
}

fn single(path: &Path, mode: Mode, cli: &Cli) -> CliResult<()> {
    let (cfg, notes) = load(path, mode, cli)?;
    let v = cfg.validate()?;
    for n in notes.iter().chain(&v.warnings) {
        eprintln!("warning: {n}");
    }
    let name = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().to_string());
    let outcome = execute(&v, &v.config.outputs.directory, &name)?;
    report(&outcome);
    match outcome.unexpected_blow_up() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn suite(name: SuiteName, cli: &Cli) -> CliResult<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out")).join(name.as_str());
    let results = run_suite(name, &out, |cfg| apply_overrides(cfg, cli));
    let mut first_err = None;
    for (entry, r) in results {
        match r {
            Ok(o) => {
                report(&o);
                if let Some(e) = o.unexpected_blow_up() {
                    eprintln!("{entry}: {e}");
                    first_err.get_or_insert(e);
                }
            }
            Err(e) => {
                eprintln!("{entry}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let command = std::mem::replace(&mut cli.command, Command::Suite { name: SuiteName::Fig1 });
    let result = match command {
        Command::Simulate { config } => single(&config, Mode::Simulate, &cli),
        Command::Stability { config } => single(&config, Mode::StabilityReport, &cli),
        Command::Kinetic { config } => single(&config, Mode::KineticValidate, &cli),
        Command::Suite { name } => suite(name, &cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
