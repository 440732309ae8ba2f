mod args;
mod commands;
mod exit;
mod settings;

use clap::Parser;

use args::{Cli, Cmd};
use commands::Context;

fn init_logging(quiet: bool, verbose: u8) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("STACKSCOPE_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    init_logging(cli.quiet, cli.verbose);
    let outcome = settings::load(cli.config.as_deref()).and_then(|config| {
        let ctx = Context {
            config,
            quiet: cli.quiet,
        };
        match &cli.command {
            Cmd::Run(a) => commands::run(&ctx, a, false),
            Cmd::Watch(a) => commands::run(&ctx, a, true),
            Cmd::Attach(a) => commands::attach(&ctx, a),
            Cmd::Replay(a) => commands::replay(&ctx, a),
            Cmd::Analyze(a) => commands::analyze(&ctx, a),
            Cmd::Report(a) => commands::report(&ctx, a),
            Cmd::Batch(a) => commands::batch(&ctx, a),
        }
    });
    let code = match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("stackscope: error: {}", f.error);
            f.code
        }
    };
    std::process::exit(code);
}
