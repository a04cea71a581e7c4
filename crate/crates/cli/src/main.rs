use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use cocreate::commands::{run_sync, Cli, Command, ServeArgs};
use cocreate::config::{ConfigLayer, ServerConfig};
use tracing_subscriber::EnvFilter;

fn serve(args: &ServeArgs) -> Result<()> {
    let file = match &args.config {
        Some(p) => ConfigLayer::from_file(p)?,
        None => ConfigLayer::default(),
    };
    let env = ConfigLayer::from_env(|k| std::env::var(k).ok())?;
    let config = ServerConfig::resolve(args.flag_layer(), env, file)?;
    tokio::runtime::Runtime::new()?.block_on(cocreate::server::serve(config))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn,cocreate=info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Serve(args) => match serve(args) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("serve: {e:#}");
                2
            }
        },
        other => run_sync(other, &mut std::io::stdout(), &mut std::io::stderr()),
    };
    ExitCode::from(code as u8)
}
