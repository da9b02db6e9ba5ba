//! Settings file, named by `--config` or `IMADS_CONFIG`. Flags override it.
//!
//! ```toml
//! discovery_url = "http://127.0.0.1:8300"
//! global_registry_url = "http://127.0.0.1:8200"
//! identity_file = "/home/me/.imads/identity.json"
//! guid_iterations = 10000
//!
//! [dht]
//! # simulated network, used when `listen` is unset
//! nodes = 8
//! seed = 1
//! # or one real node
//! listen = "0.0.0.0:8400"
//! advertise = "gr1.example.net:8400"
//! bootstrap = ["gr2.example.net:8400"]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use imads_core::guid::GuidParams;
use serde::{Deserialize, Serialize};

pub const ENV_VAR: &str = "IMADS_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub discovery_url: String,
    pub global_registry_url: String,
    /// Defaults to `~/.imads/identity.json`.
    pub identity_file: Option<PathBuf>,
    pub guid_iterations: u32,
    pub dht: DhtSection,
}

/// The DHT behind `serve global-registry`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DhtSection {
    pub nodes: usize,
    pub seed: u64,
    pub listen: Option<String>,
    pub advertise: Option<String>,
    pub bootstrap: Vec<String>,
}

impl Default for DhtSection {
    fn default() -> Self {
        DhtSection { nodes: 8, seed: 1, listen: None, advertise: None, bootstrap: Vec::new() }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config {
            discovery_url: "http://127.0.0.1:8300".into(),
            global_registry_url: "http://127.0.0.1:8200".into(),
            identity_file: None,
            guid_iterations: GuidParams::default().iterations,
            dht: DhtSection::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The file named by `explicit`, else by `IMADS_CONFIG`, else defaults.
    pub fn locate(explicit: Option<&Path>) -> Result<Config> {
        match explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(ENV_VAR).map(PathBuf::from)) {
            Some(path) => Config::load(&path),
            None => Ok(Config::default()),
        }
    }

    pub fn guid_params(&self) -> GuidParams {
        GuidParams { iterations: self.guid_iterations }
    }

    pub fn identity_path(&self) -> PathBuf {
        self.identity_file.clone().unwrap_or_else(|| {
            let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
            home.join(".imads").join("identity.json")
        })
    }
}
