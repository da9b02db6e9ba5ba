use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use imads_core::net_sim::{run_scenario, to_ndjson, Scenario};

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario JSON: simulator settings plus a timed workload.
    scenario: PathBuf,
    /// Write the event trace here as newline-delimited JSON.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

pub fn run(args: SimArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.scenario).with_context(|| format!("reading {}", args.scenario.display()))?;
    let scenario: Scenario = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.scenario.display()))?;
    let report = run_scenario(&scenario)?;
    if let Some(path) = &args.trace {
        std::fs::write(path, to_ndjson(&report.trace)).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report.metrics)?);
    Ok(())
}
