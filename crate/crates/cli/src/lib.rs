//! Command-line front end: `simulate`, `theory`, `sweep`, `stepsize`,
//! `preset`.
//!
//! `BYZFED_THREADS` caps the worker pool; results do not depend on it.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use psofed::config::ConfigFile;
use psofed::presets;
use psofed::results::{format_g9, write_atomic, write_csv_atomic};
use psofed::sim::{self, ExperimentPlan, SweepRow};
use psofed::theory::{self, KronBundle, Layout, TheoryOptions};
use psofed::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "psofed", version, about = "Partial-sharing federated learning under model-poisoning attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo run of a single configuration.
    Simulate(RunArgs),
    /// Steady-state MSE, stability bounds and optimal stepsize.
    Theory(TheoryArgs),
    /// Simulation (plus theory where available) over the configured sweep axis.
    Sweep(RunArgs),
    /// Optimal stepsize from the Neumann approximation and by direct search.
    Stepsize(TheoryArgs),
    /// Desk-scale reproduction of a reference experiment (fig1 .. fig9).
    Preset(PresetArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Write results as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[command(flatten)]
    common: Common,
    /// Neumann truncation order for the optimal stepsize.
    #[arg(long = "neumann-j")]
    neumann_j: Option<usize>,
    /// Drop the second-order stepsize term.
    #[arg(long = "small-step-approx")]
    small_step_approx: bool,
}

#[derive(Debug, Args)]
struct PresetArgs {
    /// fig1 .. fig9
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Instability { .. } | Error::DegenerateBound(_) | Error::DegenerateStepsize(_) => 3,
        Error::Io(_) | Error::Csv(_) => 4,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BYZFED_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Argument(format!("BYZFED_THREADS: expected a positive integer, got {raw:?}")))?;
    // A second call in the same process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load(common: &Common) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::from_path(&common.config)
        .map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", common.config.display())),
            other => other,
        })?;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = Some(seed);
    }
    Ok(cfg)
}

fn load_run(args: &RunArgs) -> Result<(ConfigFile, ExperimentPlan)> {
    let mut cfg = load(&args.common)?;
    if let Some(r) = args.replicas {
        cfg.experiment.replicas = Some(r);
    }
    if let Some(n) = args.iters {
        cfg.experiment.iterations = Some(n);
        if cfg.experiment.window.is_none() {
            cfg.experiment.window = Some(n.min(psofed::config::DEFAULT_WINDOW));
        }
    }
    let plan = cfg.to_plan()?;
    Ok((cfg, plan))
}

fn load_theory(args: &TheoryArgs) -> Result<(KronBundle, usize, TheoryOptions)> {
    let mut cfg = load(&args.common)?;
    if let Some(j) = args.neumann_j {
        cfg.algorithm.neumann_order = Some(j);
    }
    if args.small_step_approx {
        cfg.algorithm.small_step = Some(true);
    }
    let plan = cfg.to_plan()?;
    if plan.algorithm == psofed::algorithms::Algorithm::Signsgd {
        return Err(Error::UnsupportedLaw("the mean-square theory covers psofed and onlinefed only".into()));
    }
    let spec = plan.effective_spec();
    let dim = Layout::new(spec.num_clients, spec.model_dim).kron_dim();
    if dim > sim::THEORY_LIMIT {
        eprintln!("note: second-order state has dimension {dim}; this may take a while");
    }
    Ok((KronBundle::new(&spec)?, plan.neumann_order, TheoryOptions { small_step: plan.small_step }))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Simulate(args) => simulate(&args, out),
        Command::Sweep(args) => sweep(&args, out),
        Command::Theory(args) => theory_cmd(&args, out),
        Command::Stepsize(args) => stepsize(&args, out),
        Command::Preset(args) => preset(&args, out),
    }
}

fn write_outputs(path: &Path, cfg: &ConfigFile, rows: &[SweepRow]) -> Result<()> {
    write_csv_atomic(path, rows)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".config.toml");
    write_atomic(Path::new(&sidecar), cfg.resolved()?.to_toml()?.as_bytes())
}

fn print_row(out: &mut dyn Write, row: &SweepRow) -> Result<()> {
    let m = &row.metrics;
    let label = match row.param {
        Some(p) => format!("{}={} ", p.name(), format_g9(row.value)),
        None => String::new(),
    };
    write!(
        out,
        "{label}{}: test MSE {} ± {}, network MSE {}",
        row.algorithm.name(),
        format_g9(m.steady_test_mse),
        format_g9(m.steady_test_mse_se),
        format_g9(m.network_mse)
    )?;
    if let Some(t) = row.theory {
        write!(out, ", theory {}", format_g9(t.mse.total))?;
    }
    if !m.diverged.is_empty() {
        write!(out, " ({} of {} replicas diverged)", m.diverged.len(), row.replicas)?;
    }
    writeln!(out)?;
    Ok(())
}

fn simulate(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, mut plan) = load_run(args)?;
    plan.sweep = None;
    let rows = sim::sweep(&plan)?;
    for row in &rows {
        print_row(out, row)?;
    }
    if let Some(path) = &args.out {
        write_outputs(path, &cfg, &rows)?;
    }
    Ok(())
}

fn sweep(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let (cfg, plan) = load_run(args)?;
    if plan.sweep.is_none() {
        return Err(Error::Config("experiment.sweep_param: sweep requires sweep_param and sweep_values".into()));
    }
    let rows = sim::sweep_with_progress(&plan, |row| {
        let _ = print_row(out, row);
    })?;
    if let Some(path) = &args.out {
        write_outputs(path, &cfg, &rows)?;
    }
    Ok(())
}

fn theory_cmd(args: &TheoryArgs, out: &mut dyn Write) -> Result<()> {
    let (bundle, order, opts) = load_theory(args)?;
    let r = theory::analyze(&bundle, order, opts)?;
    writeln!(out, "stepsize        {}", format_g9(bundle.spec.stepsize))?;
    writeln!(out, "spectral_radius {}", format_g9(r.spectral_radius))?;
    writeln!(out, "mu_max_mean     {}", format_g9(r.mu_max_mean))?;
    writeln!(out, "mu_max_ms       {}", format_g9(r.mu_max_ms))?;
    writeln!(out, "e_phi           {}", format_g9(r.mse.e_phi))?;
    writeln!(out, "e_omega         {}", format_g9(r.mse.e_omega))?;
    writeln!(out, "e_theta         {}", format_g9(r.mse.e_theta))?;
    writeln!(out, "total           {}", format_g9(r.mse.total))?;
    writeln!(out, "mu_star         {}", format_g9(r.mu_star))?;
    Ok(())
}

fn stepsize(args: &TheoryArgs, out: &mut dyn Write) -> Result<()> {
    let (bundle, order, opts) = load_theory(args)?;
    let approx = theory::optimal_stepsize(&bundle, order)?;
    writeln!(out, "mu_star (J={order})  {}", format_g9(approx))?;
    match theory::optimal_stepsize_exact(&bundle, None, opts) {
        Ok(exact) => writeln!(out, "mu_star (exact)   {}", format_g9(exact))?,
        Err(e) => writeln!(out, "mu_star (exact)   unavailable: {e}")?,
    }
    Ok(())
}

fn preset(args: &PresetArgs, out: &mut dyn Write) -> Result<()> {
    let p = presets::preset(&args.name, args.seed)?;
    writeln!(out, "{}: {}", p.name, p.description)?;
    let mut rows = Vec::new();
    for mut plan in p.curves {
        if let Some(r) = args.replicas {
            plan.replicas = r;
        }
        if let Some(n) = args.iters {
            plan.iterations = n;
            plan.window = plan.window.min(n);
        }
        rows.extend(sim::sweep_with_progress(&plan, |row| {
            let _ = print_row(out, row);
        })?);
    }
    if let Some(path) = &args.out {
        write_csv_atomic(path, &rows)?;
    }
    Ok(())
}
