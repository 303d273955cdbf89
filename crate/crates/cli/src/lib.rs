//! Batch front end for sparse covariance regression.
//!
//! Reads response and covariate CSV files, runs fits, cross-validation,
//! inference, simulations and split-stability checks, and writes CSV tables
//! plus a JSON manifest per run.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;

use std::ffi::OsString;
use std::path::Path;

use clap::Parser;

pub use args::Cli;
pub use error::{CliError, Result};

const SUBCOMMANDS: [&str; 5] = ["fit", "cv", "infer", "simulate", "stability"];

/// Splices the flags stored in a `--config <file.json>` object into the
/// argument list right after the subcommand, so that explicit flags given on
/// the command line take precedence.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config") else {
        return Ok(args);
    };
    let path = args
        .get(pos + 1)
        .ok_or_else(|| CliError::Input("--config needs a file".into()))?
        .clone();
    let mut rest: Vec<OsString> = args[..pos].to_vec();
    rest.extend_from_slice(&args[pos + 2..]);
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::Input(format!("{}: {e}", Path::new(&path).display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", Path::new(&path).display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Input("config file must hold a JSON object".into()))?;
    let mut flags = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            serde_json::Value::Bool(true) => flags.push(OsString::from(flag)),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
                flags.push(OsString::from(format!("{flag}={}", joined.join(","))));
            }
            other => flags.push(OsString::from(format!("{flag}={}", scalar(other)?))),
        }
    }
    let sub = rest
        .iter()
        .position(|a| SUBCOMMANDS.iter().any(|s| a == s))
        .ok_or_else(|| CliError::Input("--config requires a subcommand".into()))?;
    rest.splice(sub + 1..sub + 1, flags);
    Ok(rest)
}

fn scalar(v: &serde_json::Value) -> Result<String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        other => Err(CliError::Input(format!("unsupported config value {other}"))),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // a pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        args::Command::Fit(a) => commands::cmd_fit(a),
        args::Command::Cv(a) => commands::cmd_cv(a),
        args::Command::Infer(a) => commands::cmd_infer(a),
        args::Command::Simulate(a) => commands::cmd_simulate(a),
        args::Command::Stability(a) => commands::cmd_stability(a),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            if code != 0 {
                eprintln!("{}", CliError::Input(e.kind().to_string()).to_json_line());
            }
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
