//! Subcommands. Each prints one document to stdout.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use assure_core::config::Config;
use assure_core::harness::{simulate, Scenario, PRESETS};
use assure_core::ingest::ingest_dir;
use assure_core::model::Topology;
use assure_core::ErrorCategory;

use crate::docs::{parse_format, parse_layer, parse_time, AppError, Workspace};
use crate::service::{self, AppState};

pub const CONFIG_ENV: &str = "ASSURE_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "assure", version, about = "Cross-layer assurance for distributed ML workloads")]
pub struct Cli {
    /// Engine configuration (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a telemetry directory into a snapshot archive.
    Ingest {
        /// Topology file (TOML).
        #[arg(long)]
        topology: PathBuf,
        /// Directory of telemetry files.
        #[arg(long)]
        data: PathBuf,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// List applications seen in a snapshot.
    Apps {
        /// Snapshot written by `ingest`.
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Export the dependency graph.
    Graph {
        /// Snapshot written by `ingest`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Restrict to one application.
        #[arg(long)]
        app: Option<String>,
        /// Output format: structured or dot.
        #[arg(long, default_value = "structured")]
        format: String,
    },
    /// Windowed SLE compliance for one layer.
    Sle {
        /// Snapshot written by `ingest`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Layer: application, gpu, host, nic, switch_port or switch.
        #[arg(long)]
        layer: String,
        /// Restrict to one application.
        #[arg(long)]
        app: Option<String>,
    },
    /// Root-cause analysis report.
    Rca {
        /// Snapshot written by `ingest`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Application id.
        #[arg(long)]
        app: String,
        /// Start of the analysis range (RFC 3339 or microseconds).
        #[arg(long)]
        from: Option<String>,
        /// End of the analysis range (RFC 3339 or microseconds).
        #[arg(long)]
        to: Option<String>,
    },
    /// Fabric paths between two ranks of an application.
    Trace {
        /// Snapshot written by `ingest`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Application id.
        #[arg(long)]
        app: String,
        /// Sending rank.
        #[arg(long)]
        src_rank: u32,
        /// Receiving rank.
        #[arg(long)]
        dst_rank: u32,
        /// Output format: structured or dot.
        #[arg(long, default_value = "structured")]
        format: String,
    },
    /// Generate synthetic telemetry with a ground-truth manifest.
    Simulate {
        /// Scenario file (TOML).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        scenario: Option<PathBuf>,
        /// Built-in scenario: healthy, congestion, throttle, loss or combined.
        #[arg(long)]
        preset: Option<String>,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the read endpoints over HTTP.
    Serve {
        /// Snapshot written by `ingest`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Listen port; defaults to the config file value.
        #[arg(long)]
        port: Option<u16>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config, AppError> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> AppError {
    AppError::new(ErrorCategory::Io, format!("{}: {e}", path.display()))
}

fn pretty(v: serde_json::Value) -> String {
    serde_json::to_string_pretty(&v).expect("json value serializes")
}

/// Runs one subcommand and returns its stdout document.
pub fn execute(cli: Cli) -> Result<String, AppError> {
    let config = load_config(cli.config.as_deref())?;
    let workspace = |path: &Path| Workspace::load(path, &config);
    match cli.command {
        Command::Ingest { topology, data, out } => {
            let topo = Topology::load(&topology)?;
            let (snapshot, report) = ingest_dir(&data, &topo)?;
            std::fs::write(&out, snapshot.to_json()).map_err(|e| io_error(&out, e))?;
            Ok(pretty(json!({ "snapshot": out, "report": report })))
        }
        Command::Apps { snapshot } => Ok(workspace(&snapshot)?.apps().render()),
        Command::Graph { snapshot, app, format } => {
            let format = parse_format(&format)?;
            Ok(workspace(&snapshot)?.graph(app.as_deref(), format)?.render())
        }
        Command::Sle { snapshot, layer, app } => {
            let layer = parse_layer(&layer)?;
            Ok(workspace(&snapshot)?.sle(layer, app.as_deref())?.render())
        }
        Command::Rca { snapshot, app, from, to } => {
            let from = from.as_deref().map(parse_time).transpose()?;
            let to = to.as_deref().map(parse_time).transpose()?;
            Ok(workspace(&snapshot)?.rca(&app, from, to)?.render())
        }
        Command::Trace { snapshot, app, src_rank, dst_rank, format } => {
            let format = parse_format(&format)?;
            Ok(workspace(&snapshot)?.paths(&app, src_rank, dst_rank, format)?.render())
        }
        Command::Simulate { scenario, preset, out } => {
            let scenario = match (scenario, preset) {
                (Some(path), _) => Scenario::load(&path)?,
                (None, Some(name)) => Scenario::preset(&name).ok_or_else(|| {
                    AppError::usage(format!("unknown preset {name:?}, expected one of {}", PRESETS.join(", ")))
                })?,
                (None, None) => return Err(AppError::usage("simulate needs --scenario or --preset")),
            };
            let output = simulate(&scenario)?;
            output.write_to(&out).map_err(|e| io_error(&out, e))?;
            Ok(pretty(json!({
                "out": out,
                "line_counts": output.manifest.line_counts,
                "faults": output.manifest.faults,
                "warnings": output.manifest.warnings,
            })))
        }
        Command::Serve { snapshot, port } => {
            let port = port.unwrap_or(config.port);
            let state = AppState::new(workspace(&snapshot)?);
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| AppError::new(ErrorCategory::Internal, format!("runtime: {e}")))?;
            runtime
                .block_on(service::serve(state, port))
                .map_err(|e| AppError::new(ErrorCategory::Io, format!("serve on port {port}: {e}")))?;
            Ok(String::new())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use assure_core::depgraph::GraphFormat;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn graph_format_names() {
        assert_eq!(parse_format("dot").unwrap(), GraphFormat::Dot);
        assert_eq!(parse_format("xml").unwrap_err().category, ErrorCategory::Usage);
    }
}
