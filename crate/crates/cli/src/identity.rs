use std::io::Write;

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use imads_core::client::IdentityFile;
use imads_core::dataset::UserIdEntry;
use imads_core::guid::generate_identity;
use rand::rngs::OsRng;
use serde_json::json;

use crate::config::Config;
use crate::lookup::{client, now_ms};

#[derive(Debug, Subcommand)]
pub enum IdentityCommand {
    /// Generate a key pair and salt, save them, and publish version 1.
    New {
        /// Service identity and the domain registry that serves it.
        #[arg(long = "entry", value_name = "USER_ID=REGISTRY_URL", required = true, value_parser = parse_entry)]
        entries: Vec<UserIdEntry>,
        /// Replace an existing identity file.
        #[arg(long)]
        force: bool,
        /// Save only; publish later with `identity publish`.
        #[arg(long)]
        no_publish: bool,
    },
    /// Publish the next dataset version, optionally editing its entries.
    Publish {
        #[arg(long = "entry", value_name = "USER_ID=REGISTRY_URL", value_parser = parse_entry)]
        add: Vec<UserIdEntry>,
        #[arg(long = "remove", value_name = "USER_ID")]
        remove: Vec<String>,
    },
    /// Print the GUID and published entries.
    Show {
        #[arg(long)]
        json: bool,
    },
}

pub(crate) fn parse_entry(s: &str) -> Result<UserIdEntry, String> {
    let (user, registry) = s.split_once('=').ok_or_else(|| format!("expected USER_ID=REGISTRY_URL, got {s:?}"))?;
    imads_core::user_id::validate(user).map_err(|e| e.to_string())?;
    if !(registry.starts_with("http://") || registry.starts_with("https://")) {
        return Err(format!("registry URL must be http(s): {registry:?}"));
    }
    Ok(UserIdEntry::new(user, registry))
}

/// `entries` with `remove` dropped and `add` replacing same-user entries.
fn edit(mut entries: Vec<UserIdEntry>, add: Vec<UserIdEntry>, remove: &[String]) -> Vec<UserIdEntry> {
    entries.retain(|e| !remove.contains(&e.user_id) && !add.iter().any(|a| a.user_id == e.user_id));
    entries.extend(add);
    entries
}

pub fn run(cmd: IdentityCommand, config: &Config) -> Result<()> {
    let path = config.identity_path();
    match cmd {
        IdentityCommand::New { entries, force, no_publish } => {
            if path.exists() && !force {
                bail!("{} already exists (use --force to replace it)", path.display());
            }
            let params = config.guid_params();
            let identity = generate_identity(&mut OsRng, &params)?;
            let mut file = IdentityFile::new(&identity, &params, 0, entries);
            file.save(&path)?;
            if !no_publish {
                client(config).publish(&identity, file.user_ids.clone(), 1, now_ms()).context("publishing version 1")?;
                file.version = 1;
                file.save(&path)?;
            }
            println!("{}", identity.guid());
            Ok(())
        }
        IdentityCommand::Publish { add, remove } => {
            let mut file = IdentityFile::load(&path)?;
            let identity = file.identity()?;
            let entries = edit(file.user_ids.clone(), add, &remove);
            if entries.is_empty() {
                bail!("a dataset needs at least one entry");
            }
            let version = file.version + 1;
            client(config).publish(&identity, entries.clone(), version, now_ms()).with_context(|| format!("publishing version {version}"))?;
            file.user_ids = entries;
            file.version = version;
            file.save(&path)?;
            println!("{} version {version}", file.guid);
            Ok(())
        }
        IdentityCommand::Show { json } => {
            let file = IdentityFile::load(&path)?;
            let mut out = std::io::stdout().lock();
            if json {
                let view = json!({ "GUID": file.guid, "version": file.version, "iterations": file.iterations, "userIDs": file.user_ids });
                writeln!(out, "{}", serde_json::to_string_pretty(&view)?)?;
            } else {
                writeln!(out, "GUID     {}", file.guid)?;
                writeln!(out, "version  {}", file.version)?;
                for e in &file.user_ids {
                    writeln!(out, "entry    {} -> {}", e.user_id, e.domain_registry_url)?;
                }
            }
            Ok(())
        }
    }
}
