//! `mmpc`: build model banks, run scenarios and compare controllers.
//!
//! Exit codes: 0 success, 1 numeric or I/O failure, 2 usage error.

mod config;

use clap::{Args, Parser, Subcommand};
use config::Config;
use mmpc_core::bank::{build_bank_with_tol, params_hash, ModelBank};
use mmpc_core::cascade::{AttitudeController, ControllerKind};
use mmpc_core::sim::{compare_controllers, compute_metrics, run_scenario, SimOptions};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mmpc_core::Error),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mmpc",
    version,
    about = "Multi-model predictive attitude control toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_dir`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Scenario seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Model-bank construction
    Bank {
        #[command(subcommand)]
        action: BankAction,
    },
    /// Run one scenario with one controller
    Simulate {
        #[arg(long, default_value = "attitude")]
        scenario: String,
        #[arg(long, default_value = "mmpc")]
        controller: String,
        /// Log measured step times (outputs are then no longer reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Run one scenario with several controllers
    Compare {
        #[arg(long, default_value = "attitude")]
        scenario: String,
        /// Comma-separated controller ids
        #[arg(long, value_delimiter = ',', default_value = "mmpc,lmpc,nmpc")]
        controller: Vec<String>,
        /// Log measured step times (outputs are then no longer reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Print the effective configuration as TOML
    Config,
}

#[derive(Subcommand)]
enum BankAction {
    /// Linearize the grid, reduce it by gap metric and write the bank file
    Build,
    /// Write the pairwise gap matrix of the full grid
    Gaps,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(io_err(path))
}

fn load_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)?,
        None => Config::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        for s in &mut cfg.scenarios {
            s.seed = seed;
        }
    }
    Ok(cfg)
}

fn output_dir(cfg: &Config) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    Ok(&cfg.output_dir)
}

fn build_and_write_bank(cfg: &Config) -> Result<ModelBank, CliError> {
    let build = build_bank_with_tol(
        &cfg.grid,
        &cfg.vehicle,
        cfg.bank.delta_th,
        cfg.sample_period,
        cfg.bank.gap_tol,
    )?;
    let path = output_dir(cfg)?.join(&cfg.bank.file);
    let mut w = create(&path)?;
    build.bank.write_json(&mut w)?;
    finish(w, &path)?;
    Ok(build.bank)
}

/// Reuse the bank file when it was built from the same configuration.
fn load_or_build_bank(cfg: &Config) -> Result<ModelBank, CliError> {
    let path = cfg.output_dir.join(&cfg.bank.file);
    if let Ok(file) = File::open(&path) {
        if let Ok(bank) = ModelBank::read_json(std::io::BufReader::new(file)) {
            if bank.params_hash == params_hash(&cfg.vehicle)
                && bank.grid == cfg.grid
                && bank.delta_th == cfg.bank.delta_th
                && bank.sample_period == cfg.sample_period
            {
                return Ok(bank);
            }
        }
    }
    build_and_write_bank(cfg)
}

fn cmd_bank_build(cfg: &Config) -> Result<(), CliError> {
    let bank = build_and_write_bank(cfg)?;
    println!("M = {}", bank.points.len());
    println!("M' = {}", bank.len());
    println!("delta_th = {}", bank.delta_th);
    println!("representative operating points (phi, theta) [rad]:");
    for (k, &r) in bank.representatives.iter().enumerate() {
        let op = bank.points[r];
        let members = bank.assignment.iter().filter(|&&a| a == k).count();
        println!(
            "  {k:>3}: grid {r:>3} ({:.6}, {:.6}), {members} grid points",
            op.phi, op.theta
        );
    }
    println!(
        "bank written to {}",
        cfg.output_dir.join(&cfg.bank.file).display()
    );
    Ok(())
}

fn cmd_bank_gaps(cfg: &Config) -> Result<(), CliError> {
    let build = build_bank_with_tol(
        &cfg.grid,
        &cfg.vehicle,
        cfg.bank.delta_th,
        cfg.sample_period,
        cfg.bank.gap_tol,
    )?;
    let path = output_dir(cfg)?.join("gap_matrix.csv");
    let mut w = create(&path)?;
    build.gaps.write_csv(&mut w)?;
    finish(w, &path)?;
    let (min, max, mean) = build.gaps.off_diagonal_stats();
    println!("models = {}", build.gaps.size());
    println!("off-diagonal gap: min = {min:.6}, max = {max:.6}, mean = {mean:.6}");
    println!("gap matrix written to {}", path.display());
    Ok(())
}

fn parse_controller(id: &str) -> Result<ControllerKind, CliError> {
    id.parse()
        .map_err(|e: mmpc_core::Error| CliError::Usage(e.to_string()))
}

fn sim_options(cfg: &Config, timing: bool) -> SimOptions {
    SimOptions {
        record_timing: cfg.sim.record_timing || timing,
        ..cfg.sim
    }
}

fn build_controller(
    cfg: &Config,
    kind: ControllerKind,
    bank: &ModelBank,
) -> Result<Box<dyn AttitudeController>, CliError> {
    Ok(kind.build(bank, &cfg.vehicle, &cfg.mpc.params()?, cfg.lambda)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    writeln!(w).map_err(io_err(path))?;
    finish(w, path)
}

fn cmd_simulate(
    cfg: &Config,
    scenario: &str,
    controller: &str,
    timing: bool,
) -> Result<(), CliError> {
    let spec = cfg.scenario(scenario)?.clone();
    let kind = parse_controller(controller)?;
    let bank = load_or_build_bank(cfg)?;
    let mut ctl = build_controller(cfg, kind, &bank)?;
    let trace = run_scenario(&spec, &cfg.vehicle, ctl.as_mut(), &sim_options(cfg, timing))?;
    let dir = output_dir(cfg)?;
    let stem = format!("{}_{}", spec.name, kind);
    let trace_path = dir.join(format!("{stem}_trace.csv"));
    let mut w = create(&trace_path)?;
    trace.write_csv(&mut w)?;
    finish(w, &trace_path)?;
    let plot_path = dir.join(format!("{stem}_plot.csv"));
    let mut w = create(&plot_path)?;
    trace.write_plot_data(&mut w)?;
    finish(w, &plot_path)?;
    let metrics_path = dir.join(format!("{stem}_metrics.json"));
    if trace.is_empty() {
        println!("{stem}: empty trace, no metrics");
    } else {
        let metrics = compute_metrics(&trace)?;
        write_json(&metrics_path, &metrics)?;
        let e = metrics.rms_attitude_error;
        println!(
            "{stem}: {} samples, rms attitude error [deg] = ({:.4}, {:.4}, {:.4})",
            metrics.samples, e[0], e[1], e[2]
        );
    }
    if let Some(reason) = &trace.aborted {
        eprintln!("warning: run stopped early: {reason}");
    }
    println!("outputs written to {}", dir.display());
    Ok(())
}

fn cmd_compare(
    cfg: &Config,
    scenario: &str,
    controllers: &[String],
    timing: bool,
) -> Result<(), CliError> {
    let spec = cfg.scenario(scenario)?.clone();
    let kinds = controllers
        .iter()
        .map(|c| parse_controller(c))
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        return Err(CliError::Usage("no controllers given".into()));
    }
    let bank = load_or_build_bank(cfg)?;
    let mut entries = Vec::new();
    for kind in &kinds {
        entries.push((kind.id().to_string(), build_controller(cfg, *kind, &bank)?));
    }
    let comparison = compare_controllers(&spec, &cfg.vehicle, entries, &sim_options(cfg, timing))?;
    let table = comparison.render_table();
    let dir = output_dir(cfg)?;
    let text_path = dir.join(format!("{}_comparison.txt", spec.name));
    fs::write(&text_path, format!("{table}\n")).map_err(io_err(&text_path))?;
    write_json(
        &dir.join(format!("{}_comparison.json", spec.name)),
        &comparison,
    )?;
    println!("{table}");
    for row in &comparison.rows {
        if let Some(e) = &row.error {
            eprintln!("warning: {}: {e}", row.controller);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Bank {
            action: BankAction::Build,
        } => cmd_bank_build(&cfg),
        Command::Bank {
            action: BankAction::Gaps,
        } => cmd_bank_gaps(&cfg),
        Command::Simulate {
            scenario,
            controller,
            timing,
        } => cmd_simulate(&cfg, &scenario, &controller, timing),
        Command::Compare {
            scenario,
            controller,
            timing,
        } => cmd_compare(&cfg, &scenario, &controller, timing),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
