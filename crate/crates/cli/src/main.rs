//! `imads`: manage a GUID identity, search the discovery service, resolve
//! people to live endpoints, run the services, and drive the simulator.

mod config;
mod identity;
mod lookup;
mod serve;
mod sim;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "imads", version, about = "Identity mapping and discovery client")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Settings file (TOML); defaults to $IMADS_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "URL")]
    discovery: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    global_registry: Option<String>,
    /// Identity key file.
    #[arg(long, global = true, value_name = "FILE")]
    identity: Option<PathBuf>,
    /// PBKDF2 iterations for GUID derivation; must match the registry's.
    #[arg(long, global = true, value_name = "N")]
    iterations: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create, publish or inspect the local identity.
    #[command(subcommand)]
    Identity(identity::IdentityCommand),
    /// Search the discovery service.
    Search(lookup::SearchArgs),
    /// Resolve a GUID or search terms to live endpoints.
    Resolve(lookup::ResolveArgs),
    /// Run one service in the foreground.
    #[command(subcommand)]
    Serve(serve::ServeCommand),
    /// Run a simulator scenario file and print its metrics.
    Sim(sim::SimArgs),
}

fn settings(opts: &GlobalOpts) -> anyhow::Result<Config> {
    let mut config = Config::locate(opts.config.as_deref())?;
    if let Some(url) = &opts.discovery {
        config.discovery_url = url.clone();
    }
    if let Some(url) = &opts.global_registry {
        config.global_registry_url = url.clone();
    }
    if let Some(path) = &opts.identity {
        config.identity_file = Some(path.clone());
    }
    if let Some(n) = opts.iterations {
        config.guid_iterations = n;
    }
    Ok(config)
}

pub(crate) fn parse_bind(s: &str) -> Result<SocketAddr, String> {
    s.parse().map_err(|e| format!("{s}: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = settings(&cli.global).and_then(|config| match cli.command {
        Command::Identity(cmd) => identity::run(cmd, &config),
        Command::Search(args) => lookup::search(args, &config),
        Command::Resolve(args) => lookup::resolve(args, &config),
        Command::Serve(cmd) => serve::run(cmd, &config),
        Command::Sim(args) => sim::run(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("imads: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imads.toml");
        std::fs::write(&path, "discovery_url = \"http://file-d\"\nglobal_registry_url = \"http://file-g\"\n").unwrap();
        let cli = Cli::try_parse_from(["imads", "--config", path.to_str().unwrap(), "--discovery", "http://flag-d", "search", "x"]).unwrap();
        let config = settings(&cli.global).unwrap();
        assert_eq!(config.discovery_url, "http://flag-d");
        assert_eq!(config.global_registry_url, "http://file-g");
    }
}
