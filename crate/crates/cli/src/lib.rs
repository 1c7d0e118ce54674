//! The `khd` command-line driver.
//!
//! Exit codes: 0 on success, 2 for input errors (bad files, arguments or
//! data), 3 for numerical or internal failures.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Context;
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, EXIT_INPUT};

fn build_context(cli: &Cli) -> CliResult<Context> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &cli.output {
        config.output = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(min_length) = cli.min_length {
        config.min_length = min_length;
    }
    if let Some(format) = cli.format {
        config.format = format.into();
    }
    Ok(Context { config })
}

fn apply_fit_flags(ctx: &mut Context, args: &args::FitArgs) {
    let c = &mut ctx.config;
    if let Some(v) = args.overrides.rank {
        c.rank = v;
    }
    if let Some(v) = args.overrides.centering {
        c.centering = v.into();
    }
    if let Some(v) = args.rank_cap {
        c.rank_cap = Some(v);
    }
    if let Some(v) = args.sv_rel_tol {
        c.sv_rel_tol = v;
    }
    if let Some(v) = args.lift_subset {
        c.lift.subset_size = v;
    }
    if let Some(v) = args.lift_degree {
        c.lift.max_degree = v;
    }
    if let Some(v) = args.lift_constant {
        c.lift.include_constant = v;
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let mut ctx = build_context(cli)?;
    match &cli.command {
        Command::Fit(a) => {
            apply_fit_flags(&mut ctx, a);
            commands::fit(&ctx, a)
        }
        Command::Score(a) => commands::score(&ctx, a),
        Command::Calibrate(a) => commands::calibrate_cmd(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Crosseval(a) => commands::crosseval(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Modes(a) => commands::modes(&ctx, a),
    }
}

fn report(err: &CliError, json_errors: bool) {
    if json_errors {
        eprintln!("{}", err.to_json());
    } else {
        eprintln!("error: {err}");
    }
}

/// Runs the CLI on the given arguments and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            if code != 0 && args.iter().any(|a| a == "--json-errors") {
                eprintln!("{}", CliError::usage(e.to_string()).to_json());
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            report(&err, cli.json_errors);
            err.exit_code()
        }
    }
}
