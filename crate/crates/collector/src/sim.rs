//! Paced replay of generated sensor streams over the collector's transports.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use cabin_core::model::{encode_record, topic_for, SourceId, Timestamp};
use cabin_core::simulators::Generated;
use rumqttc::{AsyncClient, Event, Packet, QoS};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::bus::{radar_raw_topic, Bus, BusMessage};
use crate::error::{CollectorError, Result};
use crate::ingest::mqtt_options;

/// Virtual time between pacing points.
const PACE_STEP_MS: i64 = 100;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

pub enum SimTransport {
    /// Everything over the in-process bus; radar as raw bytes.
    Bus(Bus),
    /// Radar bytes over TCP, wearable and camera records over MQTT.
    /// A source with no endpoint is not sent.
    Network { radar_tcp: Option<SocketAddr>, mqtt: Option<String> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServeReport {
    /// Messages sent per source; radar counts frames.
    pub sent: BTreeMap<SourceId, u64>,
}

enum Item<'a> {
    Frame(&'a [u8]),
    Record(String),
}

struct Outbound<'a> {
    wall: Timestamp,
    source: SourceId,
    session_id: &'a str,
    item: Item<'a>,
}

fn schedule(generated: &Generated, include: impl Fn(SourceId) -> bool) -> Vec<Outbound<'_>> {
    let mut out = Vec::new();
    if include(SourceId::Radar) {
        let radar = generated.records.get(&SourceId::Radar).map(Vec::as_slice).unwrap_or_default();
        for ((wall, bytes), r) in generated.radar_frames().into_iter().zip(radar) {
            out.push(Outbound {
                wall,
                source: SourceId::Radar,
                session_id: &r.session_id,
                item: Item::Frame(bytes),
            });
        }
    }
    for (source, records) in &generated.records {
        if *source == SourceId::Radar || !include(*source) {
            continue;
        }
        for r in records {
            out.push(Outbound {
                wall: r.wall_ts_ms,
                source: *source,
                session_id: &r.session_id,
                item: Item::Record(encode_record(r)),
            });
        }
    }
    // Stable sort keeps per-source send order for equal wall times.
    out.sort_by_key(|o| (o.wall, o.source));
    out
}

enum Sink {
    Bus(Bus),
    Network {
        radar: Option<TcpStream>,
        mqtt: Option<(AsyncClient, JoinHandle<()>)>,
    },
}

impl Sink {
    async fn send(&mut self, o: &Outbound<'_>) -> Result<()> {
        match self {
            Sink::Bus(bus) => {
                let (topic, payload, wall) = match &o.item {
                    Item::Frame(bytes) => (radar_raw_topic(o.session_id), bytes.to_vec(), Some(o.wall)),
                    Item::Record(json) => (topic_for(o.session_id, o.source)?, json.clone().into_bytes(), None),
                };
                if bus.publish(BusMessage { topic: topic.clone(), payload, wall }) == 0 {
                    return Err(CollectorError::Transport(format!("no subscriber for {topic}")));
                }
            }
            Sink::Network { radar, mqtt } => match &o.item {
                Item::Frame(bytes) => {
                    if let Some(sock) = radar {
                        sock.write_all(bytes)
                            .await
                            .map_err(|e| CollectorError::Transport(format!("radar stream: {e}")))?;
                    }
                }
                Item::Record(json) => {
                    if let Some((client, _)) = mqtt {
                        client
                            .publish(topic_for(o.session_id, o.source)?, QoS::AtLeastOnce, false, json.clone())
                            .await
                            .map_err(|e| CollectorError::Transport(format!("mqtt publish: {e}")))?;
                    }
                }
            },
        }
        Ok(())
    }

    async fn close(self) -> Result<()> {
        if let Sink::Network { radar, mqtt } = self {
            if let Some(mut sock) = radar {
                sock.shutdown().await.map_err(|e| CollectorError::Transport(format!("radar stream: {e}")))?;
            }
            if let Some((client, poller)) = mqtt {
                let _ = client.disconnect().await;
                let _ = tokio::time::timeout(Duration::from_secs(30), poller).await;
            }
        }
        Ok(())
    }
}

async fn connect_mqtt(url: &str) -> Result<(AsyncClient, JoinHandle<()>)> {
    let opts = mqtt_options(&format!("cabin-sim-{}", std::process::id()), url)?;
    let (client, mut eventloop) = AsyncClient::new(opts, 1024);
    let connected = tokio::time::timeout(CONNECT_TIMEOUT, async {
        loop {
            match eventloop.poll().await {
                Ok(Event::Incoming(Packet::ConnAck(_))) => return Ok(()),
                Ok(_) => {}
                Err(e) => return Err(CollectorError::Transport(format!("mqtt broker {url}: {e}"))),
            }
        }
    })
    .await
    .map_err(|_| CollectorError::Transport(format!("mqtt broker {url}: connect timed out")))?;
    connected?;
    // Keep driving the connection until the disconnect goes out.
    let poller = tokio::spawn(async move {
        loop {
            match eventloop.poll().await {
                Ok(Event::Outgoing(rumqttc::Outgoing::Disconnect)) => break,
                Ok(_) => {}
                Err(e) => {
                    tracing::warn!(error = %e, "mqtt connection closed");
                    break;
                }
            }
        }
    });
    Ok((client, poller))
}

/// Send every generated record at its wall time, compressed by `speed`
/// (60 sends a 20-minute script in 20 s).
///
/// Sending advances in 100 ms steps of script time; within a step, messages
/// go out in wall-time order.
pub async fn serve(generated: &Generated, speed: f64, transport: SimTransport) -> Result<ServeReport> {
    if !(speed.is_finite() && speed > 0.0) {
        return Err(CollectorError::Config(format!("speed must be positive, got {speed}")));
    }
    let (mut sink, queue) = match transport {
        SimTransport::Bus(bus) => (Sink::Bus(bus), schedule(generated, |_| true)),
        SimTransport::Network { radar_tcp, mqtt } => {
            let radar = match radar_tcp {
                Some(addr) => Some(
                    TcpStream::connect(addr)
                        .await
                        .map_err(|e| CollectorError::Transport(format!("radar endpoint {addr}: {e}")))?,
                ),
                None => None,
            };
            let mqtt = match mqtt {
                Some(url) => Some(connect_mqtt(&url).await?),
                None => None,
            };
            let has_radar = radar.is_some();
            let has_mqtt = mqtt.is_some();
            if !has_radar && !has_mqtt {
                return Err(CollectorError::Config("no transport endpoint given".into()));
            }
            let queue = schedule(generated, |s| if s == SourceId::Radar { has_radar } else { has_mqtt });
            (Sink::Network { radar, mqtt }, queue)
        }
    };

    let mut report = ServeReport::default();
    let Some(t0) = queue.first().map(|o| o.wall) else {
        sink.close().await?;
        return Ok(report);
    };
    let started = Instant::now();
    let mut current_step = -1;
    for o in &queue {
        let step = o.wall.since(t0) / PACE_STEP_MS;
        if step != current_step {
            current_step = step;
            let virtual_ms = (step * PACE_STEP_MS) as f64 / speed;
            tokio::time::sleep_until(started + Duration::from_secs_f64(virtual_ms / 1000.0)).await;
        }
        sink.send(o).await?;
        *report.sent.entry(o.source).or_default() += 1;
    }
    sink.close().await?;
    Ok(report)
}
