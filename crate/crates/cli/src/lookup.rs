use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use clap::Args;
use imads_core::client::{Client, ContactSheet, ResolveOptions};
use imads_core::discovery::DiscoveryResponse;
use imads_http::{HttpDiscovery, HttpDomainRegistries, HttpGlobalRegistry};

use crate::config::Config;

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Search terms.
    #[arg(required = true, num_args = 1..)]
    terms: Vec<String>,
    /// Discovery account token, to see profiles limited to users or favorites.
    #[arg(long, env = "IMADS_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    /// A GUID, or search terms.
    #[arg(required = true, num_args = 1..)]
    query: Vec<String>,
    /// Only endpoints with this capability; repeatable.
    #[arg(long = "cap", value_name = "CAPABILITY")]
    caps: Vec<String>,
    /// Which search result to follow.
    #[arg(long, default_value_t = 0)]
    pick: usize,
    #[arg(long)]
    json: bool,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub(crate) fn client(config: &Config) -> Client {
    Client {
        discovery: Arc::new(HttpDiscovery::new(&config.discovery_url)),
        global: Arc::new(HttpGlobalRegistry::new(&config.global_registry_url)),
        domains: Arc::new(HttpDomainRegistries::new()),
        params: config.guid_params(),
    }
}

pub fn search(args: SearchArgs, config: &Config) -> Result<()> {
    let mut discovery = HttpDiscovery::new(&config.discovery_url);
    if let Some(token) = args.token {
        discovery = discovery.with_token(token);
    }
    let response = discovery.lookup(&args.terms.join(" "), false)?;
    let mut out = std::io::stdout().lock();
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&response)?)?;
    } else {
        write_results(&mut out, &response)?;
    }
    Ok(())
}

fn write_results(out: &mut impl Write, response: &DiscoveryResponse) -> std::io::Result<()> {
    if response.results.is_empty() {
        return writeln!(out, "no results");
    }
    writeln!(out, "{:<3} {:<44} HEADLINE", "#", "GUID")?;
    for r in &response.results {
        let guid = if r.guid.is_empty() { "-" } else { &r.guid };
        writeln!(out, "{:<3} {:<44} {}", r.result_no, guid, r.headline)?;
    }
    Ok(())
}

pub fn resolve(args: ResolveArgs, config: &Config) -> Result<()> {
    let caps: BTreeSet<String> = args.caps.iter().map(|c| c.trim().to_ascii_lowercase()).collect();
    let sheet = client(config).resolve(&args.query.join(" "), &caps, ResolveOptions { pick: args.pick }, now_ms())?;
    let mut out = std::io::stdout().lock();
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&sheet)?)?;
    } else {
        write_sheet(&mut out, &sheet)?;
    }
    Ok(())
}

fn write_sheet(out: &mut impl Write, sheet: &ContactSheet) -> std::io::Result<()> {
    writeln!(out, "GUID {}", sheet.guid)?;
    for entry in &sheet.entries {
        writeln!(out, "\n{} at {}", entry.user_id, entry.domain_registry_url)?;
        if let Some(err) = &entry.error {
            writeln!(out, "  unavailable: {err}")?;
        } else if entry.instances.is_empty() {
            writeln!(out, "  no live endpoints")?;
        }
        for i in &entry.instances {
            let media: Vec<&str> = i.media.iter().map(String::as_str).collect();
            writeln!(out, "  {:<50} {:<16} {}", i.url, media.join(","), i.provider)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use imads_core::client::ContactEntry;
    use imads_core::domain_registry::{HypertyInstance, InstanceStatus};
    use imads_core::guid::Guid;

    #[test]
    fn sheet_table_marks_failures() {
        let sheet = ContactSheet {
            guid: Guid::parse("WabRS8ZRswDNUIYtqF-j0nHQZmQVRLJimvqIGIYMz50").unwrap(),
            entries: vec![
                ContactEntry {
                    domain_registry_url: "http://a".into(),
                    user_id: "user://a.com/x".into(),
                    instances: vec![HypertyInstance {
                        url: "hyperty://a.com/1".into(),
                        user_id: "user://a.com/x".into(),
                        media: ["video".to_string(), "voice".to_string()].into(),
                        provider: "a.com".into(),
                        status: InstanceStatus::Live,
                        lease_expiry: 0,
                    }],
                    error: None,
                },
                ContactEntry { domain_registry_url: "http://b".into(), user_id: "user://b.com/x".into(), instances: vec![], error: Some("down".into()) },
            ],
            resolved_at: 0,
        };
        let mut buf = Vec::new();
        write_sheet(&mut buf, &sheet).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("hyperty://a.com/1") && text.contains("video,voice"));
        assert!(text.contains("unavailable: down"));
    }
}
