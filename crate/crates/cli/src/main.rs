mod cli;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use crate::cli::{Cli, Command, FileConfig};
use crate::commands::Context;

const USAGE_ERROR: u8 = 1;
const DATA_ERROR: u8 = 2;

fn usage_failure(err: clap::Error, argv: &[String]) -> ExitCode {
    match err.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
        _ => {}
    }
    let _ = err.print();
    // follow the error with the flag table of the subcommand, if one was named
    let mut root = Cli::command();
    let sub = argv.iter().skip(1).find_map(|a| {
        root.get_subcommands()
            .find(|s| s.get_name() == a)
            .map(|s| s.get_name().to_string())
    });
    let help = match sub.and_then(|name| root.find_subcommand_mut(&name).map(|s| s.render_help())) {
        Some(h) => h,
        None => root.render_help(),
    };
    eprintln!("\n{help}");
    ExitCode::from(USAGE_ERROR)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => return usage_failure(e, &argv),
    };
    let file = match &cli.config {
        Some(path) => match FileConfig::load(path) {
            Ok(f) => f,
            Err(msg) => {
                eprintln!("error: invalid config file {msg}");
                return ExitCode::from(USAGE_ERROR);
            }
        },
        None => FileConfig::default(),
    };
    let jobs = cli.jobs.or(file.jobs).unwrap_or(0);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
    {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(USAGE_ERROR);
    }
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
    };
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::FabricateBox(a) => commands::fabricate_box(&ctx, a),
        Command::FabricateTags(a) => commands::fabricate_tags(&ctx, a),
        Command::Refine(a) => commands::refine(&ctx, a),
        Command::Partition(a) => commands::partition_cmd(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Render(a) => commands::render(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cli.command.name());
            ExitCode::from(DATA_ERROR)
        }
    }
}
