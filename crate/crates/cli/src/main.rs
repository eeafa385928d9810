use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kkt_sens_cli::commands::{exit, parse_assignment};
use kkt_sens_cli::{
    cmd_fdcheck, cmd_sense, cmd_solve, cmd_sweep, load_problem, CliError, FdCheckRequest, SenseRequest,
    SweepRequest,
};
use serde_json::Value;

/// Solve parametric nonlinear programs and differentiate their solutions.
#[derive(Parser)]
#[command(name = "kkt-sens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON).
    file: PathBuf,
    /// Override a parameter value.
    #[arg(long = "set", value_name = "NAME=VALUE", value_parser = parse_assignment)]
    sets: Vec<(String, f64)>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and print the optimum, duals and regularity diagnostics.
    Solve {
        #[command(flatten)]
        common: Common,
        /// KKT residual tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Forward or reverse sensitivities at the optimum.
    Sense {
        #[command(flatten)]
        common: Common,
        /// Forward seed on a parameter.
        #[arg(long = "forward", value_name = "PARAM=VALUE", value_parser = parse_assignment)]
        forward: Vec<(String, f64)>,
        /// Reverse seed on a variable.
        #[arg(long = "reverse", value_name = "VAR=WEIGHT", value_parser = parse_assignment)]
        reverse: Vec<(String, f64)>,
        /// Reverse seed on the objective.
        #[arg(long, value_name = "WEIGHT", allow_negative_numbers = true)]
        objective: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Solve and differentiate over a parameter grid; prints CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long)]
        steps: usize,
        /// Start each solve from the previous grid point's optimum.
        #[arg(long)]
        warm: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compare forward sensitivities with central differences.
    Fdcheck {
        #[command(flatten)]
        common: Common,
        /// Parameter to check (repeatable; default all).
        #[arg(long = "param")]
        params: Vec<String>,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

enum Output {
    Json(Value),
    Csv(String, Option<PathBuf>),
}

fn run(cli: Cli) -> Result<(Output, i32), CliError> {
    match cli.command {
        Command::Solve { common, tol } => {
            let problem = load_problem(&common.file)?;
            Ok((Output::Json(cmd_solve(&problem, &common.sets, tol)?), exit::OK))
        }
        Command::Sense { common, forward, reverse, objective, tol } => {
            let problem = load_problem(&common.file)?;
            let req = SenseRequest { forward, reverse, objective };
            Ok((Output::Json(cmd_sense(&problem, &common.sets, &req, tol)?), exit::OK))
        }
        Command::Sweep { common, param, from, to, steps, warm, out, tol } => {
            let problem = load_problem(&common.file)?;
            let req = SweepRequest { param, from, to, steps, warm };
            Ok((Output::Csv(cmd_sweep(&problem, &common.sets, &req, tol)?, out), exit::OK))
        }
        Command::Fdcheck { common, params, tol } => {
            let problem = load_problem(&common.file)?;
            let (report, pass) = cmd_fdcheck(&problem, &common.sets, &FdCheckRequest { params, threshold: tol })?;
            Ok((Output::Json(report), if pass { exit::OK } else { exit::CHECK_FAILED }))
        }
    }
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.to_string().trim_end().to_owned())),
    };
    match run(cli) {
        Ok((Output::Json(v), code)) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("report serializes"));
            ExitCode::from(code as u8)
        }
        Ok((Output::Csv(csv, None), code)) => {
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = stdout.write_all(csv.as_bytes()) {
                return fail(&CliError::Output(e.to_string()));
            }
            ExitCode::from(code as u8)
        }
        Ok((Output::Csv(csv, Some(path)), code)) => match std::fs::write(&path, csv) {
            Ok(()) => ExitCode::from(code as u8),
            Err(e) => fail(&CliError::Output(format!("cannot write {}: {e}", path.display()))),
        },
        Err(e) => fail(&e),
    }
}
