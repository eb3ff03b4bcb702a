//! Collector configuration file (JSON).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cabin_core::model::SourceId;
use cabin_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CollectorError, Result};

/// Where a sensor's data comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceTransport {
    /// Radar byte stream from a serial device node.
    Serial { path: PathBuf },
    /// Radar byte stream from a capture file, read once.
    File { path: PathBuf },
    /// Radar byte stream from TCP clients connecting to `listen`.
    Tcp { listen: SocketAddr },
    /// JSON records from an MQTT broker. `topic` defaults to the
    /// source's data topic under any session.
    Mqtt {
        broker: String,
        #[serde(default)]
        topic: Option<String>,
    },
    /// The in-process bus.
    Bus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourcesConfig {
    pub radar: Option<SourceTransport>,
    pub wearable: Option<SourceTransport>,
    pub camera: Option<SourceTransport>,
}

impl SourcesConfig {
    pub fn get(&self, source: SourceId) -> Option<&SourceTransport> {
        match source {
            SourceId::Radar => self.radar.as_ref(),
            SourceId::Wearable => self.wearable.as_ref(),
            SourceId::Camera => self.camera.as_ref(),
            _ => None,
        }
    }

    pub fn enabled(&self) -> Vec<SourceId> {
        SourceId::SENSORS.into_iter().filter(|s| self.get(*s).is_some()).collect()
    }

    pub fn all_bus() -> Self {
        SourcesConfig {
            radar: Some(SourceTransport::Bus),
            wearable: Some(SourceTransport::Bus),
            camera: Some(SourceTransport::Bus),
        }
    }
}

/// Which clock drives the watermark.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// The workstation's wall clock.
    #[default]
    System,
    /// The largest wall timestamp received so far; used when records are
    /// replayed faster than real time.
    Records,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionDefaults {
    pub subject_pseudo_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectorConfig {
    pub sources: SourcesConfig,
    pub pipeline: PipelineConfig,
    pub storage_dir: PathBuf,
    pub api_bind: SocketAddr,
    pub clock: ClockMode,
    /// Broker to publish fused rows to, if any.
    pub publish_broker: Option<String>,
    pub session_defaults: SessionDefaults,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            sources: SourcesConfig::default(),
            pipeline: PipelineConfig::default(),
            storage_dir: PathBuf::from("data"),
            api_bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            clock: ClockMode::System,
            publish_broker: None,
            session_defaults: SessionDefaults::default(),
        }
    }
}

impl CollectorConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CollectorError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: CollectorConfig =
            serde_json::from_str(&text).map_err(|e| CollectorError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate().map_err(|e| CollectorError::Config(e.to_string()))?;
        if let Some(t) = &self.sources.radar {
            if matches!(t, SourceTransport::Mqtt { .. }) {
                return Err(CollectorError::Config("radar is read from serial, file, tcp or bus".into()));
            }
        }
        for source in [SourceId::Wearable, SourceId::Camera] {
            if let Some(SourceTransport::Serial { .. } | SourceTransport::File { .. } | SourceTransport::Tcp { .. }) =
                self.sources.get(source)
            {
                return Err(CollectorError::Config(format!("{source} is read from mqtt or bus")));
            }
        }
        for broker in self.brokers() {
            parse_broker(&broker)?;
        }
        Ok(())
    }

    fn brokers(&self) -> Vec<String> {
        let mut out: Vec<String> = SourceId::SENSORS
            .into_iter()
            .filter_map(|s| match self.sources.get(s) {
                Some(SourceTransport::Mqtt { broker, .. }) => Some(broker.clone()),
                _ => None,
            })
            .collect();
        out.extend(self.publish_broker.clone());
        out
    }
}

/// Split `mqtt://host[:port]` (or bare `host[:port]`) into host and port.
pub fn parse_broker(url: &str) -> Result<(String, u16)> {
    let rest = url.strip_prefix("mqtt://").or_else(|| url.strip_prefix("tcp://")).unwrap_or(url);
    let rest = rest.trim_end_matches('/');
    let (host, port) = match rest.rsplit_once(':') {
        Some((h, p)) => (
            h,
            p.parse::<u16>()
                .map_err(|_| CollectorError::Config(format!("bad port in broker url {url:?}")))?,
        ),
        None => (rest, 1883),
    };
    if host.is_empty() {
        return Err(CollectorError::Config(format!("missing host in broker url {url:?}")));
    }
    Ok((host.to_string(), port))
}
