//! Library side of the `qct` command-line tool.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 for usage or
//! configuration errors, 3 for file-system errors. Failures print one JSON
//! object `{"error", "kind", "message"}` on standard error.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

pub mod commands;
pub mod config;

use commands::RunOutput;
use config::{apply_override, load_value, parse};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod guide {}

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QCT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "qct", version, about = "Error probabilities of conformance tests on lossy channels")]
pub struct Cli {
    /// Worker threads; the machine's core count when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classical bound C over a τ0 grid.
    Bound(RunArgs),
    /// C, C^pc and Q over a τ0 grid.
    Sweep(RunArgs),
    /// Conditional errors, the cost curve C(b) and optimal biases.
    Cost(RunArgs),
    /// Monte Carlo error frequencies of both probes.
    Simulate(RunArgs),
    /// Reweight a dataset towards a target transmittance density.
    Reweight(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config, or a JSON sidecar from an earlier run.
    pub config: PathBuf,
    /// Override a config entry, as `dotted.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Set both detection efficiencies to 1.
    #[arg(long)]
    pub unit_efficiency: bool,
    /// Base name of the output files; the config file stem by default.
    #[arg(long)]
    pub name: Option<String>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bound(_) => "bound",
            Command::Sweep(_) => "sweep",
            Command::Cost(_) => "cost",
            Command::Simulate(_) => "simulate",
            Command::Reweight(_) => "reweight",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Bound(a)
            | Command::Sweep(a)
            | Command::Cost(a)
            | Command::Simulate(a)
            | Command::Reweight(a) => a,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Compute(conformance::Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    /// Kebab-case identifier of the failure.
    pub fn kind(&self) -> &str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Compute(e) => e.code(),
            CliError::Io(_) => "io",
        }
    }

    pub fn to_json(&self) -> String {
        let class = match self {
            CliError::Compute(_) => "computation",
            _ => self.kind(),
        };
        json!({"error": class, "kind": self.kind(), "message": self.to_string()}).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Compute(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<conformance::Error> for CliError {
    fn from(e: conformance::Error) -> Self {
        match e {
            conformance::Error::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Compute(e),
        }
    }
}

/// Resolved config of a run: its command name and every parameter, with
/// defaults filled in. Written next to the outputs as the sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub command: &'static str,
    pub config: Value,
}

impl Resolved {
    pub fn sidecar(&self) -> String {
        let mut s = serde_json::to_string_pretty(&json!({"command": self.command, "config": self.config}))
            .expect("JSON values serialize");
        s.push('\n');
        s
    }
}

fn resolve<T>(value: Value) -> Result<(T, Value), CliError>
where
    T: serde::de::DeserializeOwned + serde::Serialize,
{
    let typed: T = parse(value)?;
    let canonical = serde_json::to_value(&typed).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((typed, canonical))
}

/// Load, override and run one command on the current thread pool.
pub fn execute(command: &Command) -> Result<(Resolved, RunOutput), CliError> {
    let args = command.args();
    let mut value = load_value(&args.config, command.name())?;
    for o in &args.overrides {
        apply_override(&mut value, o)?;
    }
    if args.unit_efficiency {
        apply_override(&mut value, "detection.eta_s=1.0")?;
        apply_override(&mut value, "detection.eta_i=1.0")?;
    }
    let (config, output) = match command {
        Command::Bound(_) => {
            let (c, v) = resolve(value)?;
            (v, commands::bound(&c)?)
        }
        Command::Sweep(_) => {
            let (c, v) = resolve(value)?;
            (v, commands::sweep(&c)?)
        }
        Command::Cost(_) => {
            let (c, v) = resolve(value)?;
            (v, commands::cost(&c)?)
        }
        Command::Simulate(_) => {
            let (c, v) = resolve(value)?;
            (v, commands::simulate(&c)?)
        }
        Command::Reweight(_) => {
            let (c, v) = resolve(value)?;
            (v, commands::reweight(&c)?)
        }
    };
    Ok((
        Resolved {
            command: command.name(),
            config,
        },
        output,
    ))
}

fn run_name(args: &RunArgs) -> String {
    args.name.clone().unwrap_or_else(|| {
        args.config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Run the parsed command line and write its outputs; returns the paths
/// written, sidecar first.
pub fn run(cli: &Cli) -> Result<(Vec<PathBuf>, Vec<String>), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let (resolved, output) = pool.install(|| execute(&cli.command))?;
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.out.display())))?;
    let name = run_name(cli.command.args());
    let sidecar = cli.out.join(format!("{name}.json"));
    write(&sidecar, &resolved.sidecar())?;
    let mut written = vec![sidecar];
    for a in &output.artifacts {
        let path = cli.out.join(format!("{name}{}", a.suffix));
        write(&path, &a.contents)?;
        written.push(path);
    }
    Ok((written, output.advisories))
}
