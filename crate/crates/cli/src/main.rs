use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chanphase::config::{parse_config, ExperimentKind, OutputFormat, RunConfig};
use chanphase::experiments::{self, Progress};
use chanphase::report::{self, OutputSpec};
use chanphase::Error;
use clap::{Args, CommandFactory, Parser, Subcommand};

/// Wave-packet transit through a channel in a reflecting barrier.
#[derive(Parser, Debug)]
#[command(name = "chanphase", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// No progress on standard error.
    #[arg(long)]
    quiet: bool,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Packet through the channel, with the free reference arm.
    Transit(Common),
    /// Packet reflected by barrier material.
    Reflect(Common),
    /// Phase against energy, channel length and width.
    Sweep(Common),
    /// Hard wall, finite step and smoothed barriers on one geometry.
    ModelCompare(Common),
    /// Closed-form reduced momenta and phase shifts.
    Oracle {
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1.0")]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "10")]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "50")]
        ell: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() || matches!(e, Error::Io { .. }) {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Transit(c) => experiment(ExperimentKind::Transit, &c),
        Command::Reflect(c) => experiment(ExperimentKind::Reflect, &c),
        Command::Sweep(c) => experiment(ExperimentKind::Sweep, &c),
        Command::ModelCompare(c) => experiment(ExperimentKind::ModelCompare, &c),
        Command::Oracle { p, a, ell, out, quiet } => {
            let start = Instant::now();
            let rows = experiments::oracle_table(&p, &a, &ell)?;
            print!("{}", report::oracle_text(&rows));
            if let Some(dir) = out {
                report::preflight(&dir)?;
                let spec = OutputSpec::new(&dir, &[OutputFormat::Csv, OutputFormat::Json], oracle_args(&p, &a, &ell));
                report::emit_oracle(&rows, &spec, start.elapsed())?;
                if !quiet {
                    eprintln!("wrote {}", dir.display());
                }
            }
            Ok(())
        }
    }
}

fn oracle_args(p: &[f64], a: &[f64], ell: &[f64]) -> String {
    format!("oracle p={p:?} a={a:?} ell={ell:?}")
}

fn load(path: &Path) -> Result<(String, RunConfig), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    Ok((text, cfg))
}

fn experiment(kind: ExperimentKind, common: &Common) -> Result<(), Failure> {
    let Some(path) = &common.config else {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = cmd
            .find_subcommand_mut(kind.name())
            .map(|s| s.render_usage().to_string())
            .unwrap_or_default();
        return Err(Failure::Config(format!("--config <path> is required\n\n{usage}")));
    };
    let (text, cfg) = load(path)?;
    if let Some(declared) = cfg.experiment.kind {
        if declared != kind {
            return Err(Failure::Config(format!(
                "config declares experiment.kind = {} but the subcommand is {}",
                declared.name(),
                kind.name()
            )));
        }
    }
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    report::preflight(&dir)?;
    let spec = OutputSpec::new(&dir, &cfg.output.formats, text);

    let quiet = common.quiet;
    let log = move |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::Numerical(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(kind, &cfg, &spec, &log))?;
    log(&format!("wrote {}", dir.display()));
    Ok(())
}

fn dispatch(kind: ExperimentKind, cfg: &RunConfig, spec: &OutputSpec, log: &Progress) -> Result<(), Failure> {
    let start = Instant::now();
    match kind {
        ExperimentKind::Transit | ExperimentKind::Reflect => {
            let result = if kind == ExperimentKind::Transit {
                experiments::run_transit(cfg, log)?
            } else {
                experiments::run_reflection(cfg, log)?
            };
            for w in &result.warnings {
                log(&format!("warning: {w}"));
            }
            report::emit_run(&result, kind.name(), spec, start.elapsed())?;
        }
        ExperimentKind::Sweep => {
            let sweep = experiments::run_energy_sweep(cfg, log)?;
            report::emit_sweep(&sweep, cfg, spec, start.elapsed())?;
            for t in &sweep.tables {
                log(&format!(
                    "{} sweep: fitted exponent {}",
                    t.axis.name(),
                    t.exponent_sim.map_or("n/a".into(), |e| format!("{e:.4}"))
                ));
            }
            if !sweep.errors.is_empty() {
                return Err(Failure::Numerical(format!(
                    "{} sweep member(s) failed:\n  {}",
                    sweep.errors.len(),
                    sweep.errors.join("\n  ")
                )));
            }
        }
        ExperimentKind::ModelCompare => {
            let cmp = experiments::run_model_comparison(cfg, log)?;
            report::emit_comparison(&cmp, cfg, spec, start.elapsed())?;
            let failed: Vec<String> = cmp
                .rows
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.label)))
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Numerical(format!("model run(s) failed:\n  {}", failed.join("\n  "))));
            }
        }
        ExperimentKind::Oracle => unreachable!("the oracle subcommand takes no config"),
    }
    Ok(())
}
