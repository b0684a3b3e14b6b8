use std::process::ExitCode;

use clap::Parser;
use minimon_cli::cmd::{self, Cli, Command};
use minimon_cli::CliError;

fn runtime(multi_thread: bool) -> tokio::runtime::Runtime {
    let mut b = if multi_thread { tokio::runtime::Builder::new_multi_thread() } else { tokio::runtime::Builder::new_current_thread() };
    b.enable_all().build().expect("tokio runtime")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve(args) => {
            tracing_subscriber::fmt()
                .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
                .with_writer(std::io::stderr)
                .init();
            runtime(true).block_on(cmd::serve(args))
        }
        Command::BusConsume(args) => cmd::bus_consume(args),
        ref command => {
            let config = cli.client_config()?;
            let rt = runtime(false);
            match cli.command {
                Command::Query(args) => rt.block_on(cmd::query(config, args)),
                Command::Inject(args) => rt.block_on(cmd::inject(config, args)),
                Command::Register { file } => rt.block_on(cmd::register(config, file)),
                Command::Pub { subject, payload } => rt.block_on(cmd::publish(config, subject, payload)),
                Command::Sub { pattern, count, timeout } => rt.block_on(cmd::subscribe(config, pattern, count, timeout)),
                Command::SpiderSim(args) => rt.block_on(cmd::spider_sim(config, args)),
                Command::Status => rt.block_on(cmd::status(config)),
                Command::Serve(_) | Command::BusConsume(_) => unreachable!("handled above: {command:?}"),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.code)
        }
    }
}
