use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use commands::{Fail, Role, Strategy};

#[derive(Parser)]
#[command(name = "climex", version, about = "Clocked impulse exchange simulator")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report or CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress warnings on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one exchange and write both epochs as CSV.
    Simulate { config: PathBuf },
    /// Run one exchange and fit it from one party's point of view.
    Estimate {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = RoleArg::Alice)]
        role: RoleArg,
    },
    /// Repeat estimates over a list of parameter values.
    Sweep {
        sweep: PathBuf,
        /// Add a wall-clock column. Timing varies run to run.
        #[arg(long)]
        timing: bool,
    },
    /// Secret-bit budget for the config's ranges and resolutions.
    Budget { config: PathBuf },
    /// Run one exchange with Eve answering one ping and look for outliers.
    Detect {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = StrategyArg::Random)]
        inject: StrategyArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Alice,
    Bob,
    Eve,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    None,
    Random,
    Oracle,
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail::Usage(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<(String, Vec<String>), Fail> {
    match &cli.cmd {
        Cmd::Simulate { config } => commands::simulate(&read(config)?, cli.seed),
        Cmd::Estimate { config, role } => {
            let role = match role {
                RoleArg::Alice => Role::Alice,
                RoleArg::Bob => Role::Bob,
                RoleArg::Eve => Role::Eve,
            };
            commands::estimate(&read(config)?, cli.seed, role)
        }
        Cmd::Sweep { sweep, timing } => {
            let spec = read(sweep)?;
            let dir = sweep.parent().unwrap_or(Path::new("."));
            commands::sweep(&spec, |rel| read(&dir.join(rel)), cli.seed, *timing)
        }
        Cmd::Budget { config } => commands::budget(&read(config)?),
        Cmd::Detect { config, inject } => {
            let s = match inject {
                StrategyArg::None => Strategy::None,
                StrategyArg::Random => Strategy::Random,
                StrategyArg::Oracle => Strategy::Oracle,
            };
            commands::detect(&read(config)?, cli.seed, s)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((text, warnings)) => {
            if !cli.quiet {
                for w in warnings {
                    eprintln!("warning: {w}");
                }
            }
            let written = match &cli.out {
                Some(p) => fs::write(p, &text).map_err(|e| format!("{}: {e}", p.display())),
                None => match std::io::stdout().write_all(text.as_bytes()) {
                    // a closed pipe (`| head`) is not a failure of the run
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                    r => r.map_err(|e| e.to_string()),
                },
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
