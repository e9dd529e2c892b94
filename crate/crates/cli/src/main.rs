mod args;
mod commands;
mod error;
mod manifest;

use std::fs;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command, ReplayArgs};
use error::{CliError, CliResult};
use manifest::RunManifest;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return usage_error(e),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Replay(r) => replay(&r),
        cmd => run_recorded(&cmd).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Prints the parse error followed by the usage line of the subcommand it
/// concerns; clap omits the usage for value errors.
fn usage_error(e: clap::Error) -> ExitCode {
    let _ = e.print();
    if !e.use_stderr() {
        return ExitCode::SUCCESS;
    }
    if !e.render().to_string().contains("Usage:") {
        let mut cmd = Cli::command();
        let sub = std::env::args().nth(1).unwrap_or_default();
        let usage = match cmd.find_subcommand_mut(&sub) {
            Some(s) => s.clone().bin_name(format!("tputfl {sub}")).render_usage(),
            None => cmd.render_usage(),
        };
        eprintln!("{usage}");
    }
    ExitCode::from(2)
}

/// Writes the manifest before any computation, then again with the output
/// digests once the command succeeds.
fn run_recorded(cmd: &Command) -> CliResult<RunManifest> {
    cmd.check_inputs()?;
    let out = cmd.out_dir().expect("recorded commands have an output directory");
    fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(cmd, out)?;
    manifest.write()?;
    cmd.run()?;
    manifest.record_outputs()?;
    manifest.write()?;
    Ok(manifest)
}

fn replay(r: &ReplayArgs) -> CliResult<()> {
    let recorded = RunManifest::load(&r.manifest)?;
    let mut cmd = recorded.config.clone();
    if matches!(cmd, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot record a replay".into()));
    }
    if let Some(out) = &r.out {
        cmd.set_out_dir(out.clone());
    }
    cmd.check_inputs()?;
    let fresh = RunManifest::new(&cmd, cmd.out_dir().expect("checked above"))?;
    if fresh.inputs != recorded.inputs {
        return Err(CliError::Runtime("input files changed since the recorded run".into()));
    }
    let rerun = run_recorded(&cmd)?;
    let mismatched: Vec<&String> = recorded
        .outputs
        .iter()
        .filter(|(k, v)| rerun.outputs.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .chain(rerun.outputs.keys().filter(|k| !recorded.outputs.contains_key(*k)))
        .collect();
    if !mismatched.is_empty() {
        return Err(CliError::Runtime(format!("output digests differ from the manifest: {mismatched:?}")));
    }
    println!("replay reproduced {} output digests", rerun.outputs.len());
    Ok(())
}
