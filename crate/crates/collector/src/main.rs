use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cabin_collector::bus::Bus;
use cabin_collector::config::CollectorConfig;
use cabin_collector::sim::{serve, SimTransport};
use cabin_collector::{api, Collector};
use cabin_core::alignment::read_record_log;
use cabin_core::model::SourceId;
use cabin_core::persistence::write_csv;
use cabin_core::pipeline::replay_rows;
use cabin_core::simulators::{generate, ScenarioScript};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "collector", version, about = "In-cabin driver monitoring data fusion collector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the collector service and its control API.
    Run {
        #[arg(long, env = "CABIN_CONFIG")]
        config: PathBuf,
    },
    /// Fuse recorded per-source JSON-lines dumps into a CSV (offline mode).
    Replay {
        /// Directory of `*.jsonl` record dumps.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pipeline settings and source set; defaults apply otherwise.
        #[arg(long, env = "CABIN_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Generate a scenario and send it to a running collector.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        /// Time compression factor; 1 is real time.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Radar TCP endpoint of the collector.
        #[arg(long)]
        radar_tcp: Option<SocketAddr>,
        /// MQTT broker for wearable and camera records, e.g. mqtt://localhost:1883.
        #[arg(long)]
        mqtt: Option<String>,
        /// Override the script's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run { config } => run(&config).await,
        Command::Replay { logs, out, config } => replay(&logs, &out, config.as_deref()),
        Command::Simulate {
            script,
            speed,
            radar_tcp,
            mqtt,
            seed,
        } => simulate(&script, speed, radar_tcp, mqtt, seed).await,
    }
}

async fn run(config: &Path) -> anyhow::Result<()> {
    let cfg = CollectorConfig::load(config)?;
    let bind = cfg.api_bind;
    let collector = Collector::new(cfg, Bus::new())?;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("cannot bind control API on {bind}"))?;
    tracing::info!(addr = %listener.local_addr()?, "control API listening");
    axum::serve(listener, api::router(collector.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
    if let Some(summary) = collector.shutdown().await {
        let summary = summary?;
        println!("{}", serde_json::to_string_pretty(&summary)?);
    }
    Ok(())
}

fn replay(logs: &Path, out: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg = match config {
        Some(p) => CollectorConfig::load(p)?,
        None => CollectorConfig::default(),
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(logs)
        .with_context(|| format!("cannot read {}", logs.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    if paths.is_empty() {
        bail!("no .jsonl record dumps in {}", logs.display());
    }
    let mut records = Vec::new();
    for p in &paths {
        records.extend(read_record_log(p)?);
    }
    let sources: Option<BTreeSet<SourceId>> = config.map(|_| cfg.sources.enabled().into_iter().collect());
    let n_records = records.len();
    let rows = replay_rows(cfg.pipeline, sources.as_ref(), records)?;
    let file = std::fs::File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_csv(&rows, std::io::BufWriter::new(file))?;
    tracing::info!(files = paths.len(), records = n_records, rows = rows.len(), out = %out.display(), "replay complete");
    Ok(())
}

async fn simulate(script: &Path, speed: f64, radar_tcp: Option<SocketAddr>, mqtt: Option<String>, seed: Option<u64>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(script).with_context(|| format!("cannot read {}", script.display()))?;
    let mut script = ScenarioScript::from_json(&text)?;
    if let Some(seed) = seed {
        script.seed = seed;
    }
    let generated = generate(&script)?;
    let report = serve(&generated, speed, SimTransport::Network { radar_tcp, mqtt }).await?;
    for (source, n) in &report.sent {
        tracing::info!(%source, sent = n, "simulation complete");
    }
    Ok(())
}
