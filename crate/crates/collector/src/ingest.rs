//! Ingestion tasks for network and device sources. Each task forwards raw
//! input to the session's pipeline owner; decoding happens there.

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use cabin_core::model::{SourceId, Timestamp};
use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};
use tokio::io::AsyncReadExt;
use tokio::net::TcpListener;
use tokio::sync::mpsc::UnboundedSender;
use tokio::task::{JoinHandle, JoinSet};

use crate::config::parse_broker;
use crate::error::{CollectorError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ingress {
    /// A chunk of a radar byte stream. Each `stream` gets its own decoder.
    RadarBytes { stream: u64, bytes: Vec<u8>, wall: Timestamp },
    /// A JSON wire record.
    Json(Vec<u8>),
}

pub fn system_now() -> Timestamp {
    let ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0);
    Timestamp(ms)
}

/// Stream ids below this are reserved for the bus and device readers.
const FIRST_TCP_STREAM: u64 = 16;
pub const BUS_RADAR_STREAM: u64 = 0;
pub const DEVICE_RADAR_STREAM: u64 = 1;

/// Accept radar connections on `listen`; each connection is a separate byte stream.
pub async fn spawn_radar_tcp(listen: SocketAddr, tx: UnboundedSender<Ingress>) -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(listen)
        .await
        .map_err(|e| CollectorError::Transport(format!("cannot listen on {listen}: {e}")))?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let mut conns = JoinSet::new();
        let mut next_stream = FIRST_TCP_STREAM;
        loop {
            tokio::select! {
                accepted = listener.accept() => match accepted {
                    Ok((mut sock, peer)) => {
                        tracing::info!(%peer, "radar connected");
                        let stream = next_stream;
                        next_stream += 1;
                        let tx = tx.clone();
                        conns.spawn(async move {
                            let mut buf = vec![0u8; 4096];
                            loop {
                                match sock.read(&mut buf).await {
                                    Ok(0) => break,
                                    Ok(n) => {
                                        let msg = Ingress::RadarBytes { stream, bytes: buf[..n].to_vec(), wall: system_now() };
                                        if tx.send(msg).is_err() {
                                            break;
                                        }
                                    }
                                    Err(e) => {
                                        tracing::warn!(%peer, error = %e, "radar connection error");
                                        break;
                                    }
                                }
                            }
                            tracing::info!(%peer, "radar disconnected");
                        });
                    }
                    Err(e) => tracing::warn!(error = %e, "radar accept failed"),
                },
                Some(_) = conns.join_next() => {}
            }
        }
    });
    Ok((local, handle))
}

/// Read a serial device node or capture file until EOF.
pub async fn spawn_radar_reader(path: &Path, tx: UnboundedSender<Ingress>) -> Result<JoinHandle<()>> {
    let mut file = tokio::fs::File::open(path)
        .await
        .map_err(|e| CollectorError::Transport(format!("cannot open {}: {e}", path.display())))?;
    let shown = path.display().to_string();
    Ok(tokio::spawn(async move {
        let mut buf = vec![0u8; 4096];
        loop {
            match file.read(&mut buf).await {
                Ok(0) => {
                    tracing::info!(path = %shown, "radar input reached end of file");
                    break;
                }
                Ok(n) => {
                    let msg = Ingress::RadarBytes {
                        stream: DEVICE_RADAR_STREAM,
                        bytes: buf[..n].to_vec(),
                        wall: system_now(),
                    };
                    if tx.send(msg).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    tracing::warn!(path = %shown, error = %e, "radar read failed");
                    break;
                }
            }
        }
    }))
}

pub fn mqtt_options(client_id: &str, broker: &str) -> Result<MqttOptions> {
    let (host, port) = parse_broker(broker)?;
    let mut opts = MqttOptions::new(client_id, host, port);
    opts.set_keep_alive(Duration::from_secs(15));
    Ok(opts)
}

/// Subscribe to a source's records on an MQTT broker.
pub fn spawn_mqtt(source: SourceId, broker: &str, topic: Option<&str>, tx: UnboundedSender<Ingress>) -> Result<JoinHandle<()>> {
    let client_id = format!("cabin-collector-{source}-{}", std::process::id());
    let opts = mqtt_options(&client_id, broker)?;
    let topic = topic.map_or_else(|| format!("cabin/+/{source}/data"), str::to_string);
    let (client, mut eventloop) = AsyncClient::new(opts, 256);
    let broker = broker.to_string();
    Ok(tokio::spawn(async move {
        // Subscribing on every ConnAck restores the subscription after a reconnect.
        loop {
            match eventloop.poll().await {
                Ok(Event::Incoming(Packet::ConnAck(_))) => {
                    tracing::info!(%broker, %topic, "mqtt connected");
                    if let Err(e) = client.subscribe(topic.clone(), QoS::AtLeastOnce).await {
                        tracing::warn!(error = %e, "mqtt subscribe failed");
                    }
                }
                Ok(Event::Incoming(Packet::Publish(p))) => {
                    if tx.send(Ingress::Json(p.payload.to_vec())).is_err() {
                        break;
                    }
                }
                Ok(_) => {}
                Err(e) => {
                    tracing::warn!(%broker, error = %e, "mqtt connection error, retrying");
                    tokio::time::sleep(Duration::from_secs(1)).await;
                }
            }
        }
    }))
}

/// Publisher for fused rows and annotation echoes.
pub fn spawn_publisher(broker: &str) -> Result<(AsyncClient, JoinHandle<()>)> {
    let opts = mqtt_options(&format!("cabin-collector-pub-{}", std::process::id()), broker)?;
    let (client, mut eventloop) = AsyncClient::new(opts, 1024);
    let handle = tokio::spawn(async move {
        loop {
            if let Err(e) = eventloop.poll().await {
                tracing::warn!(error = %e, "mqtt publisher connection error, retrying");
                tokio::time::sleep(Duration::from_secs(1)).await;
            }
        }
    });
    Ok((client, handle))
}
