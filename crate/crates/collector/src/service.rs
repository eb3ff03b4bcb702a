//! Session lifecycle and the pipeline owner task.
//!
//! One task per running session owns the [`Pipeline`]; every input (bus
//! messages, network ingress, control commands) reaches it through channels,
//! so records are aligned and fused in a single place.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use cabin_core::alignment::IngestOutcome;
use cabin_core::fusion::WarningEpisode;
use cabin_core::model::{
    decode_record, topic_for, Annotation, AnnotationValue, DeviceInfo, FusedRow, Payload, SessionMeta, SourceId,
    TimedRecord, Timestamp, WarningLevel,
};
use cabin_core::persistence::{CsvWriter, DocumentStore, JsonlStore, CSV_FLUSH_INTERVAL};
use cabin_core::pipeline::Pipeline;
use cabin_core::radar::{DecoderState, DecoderStats};
use rumqttc::{AsyncClient, QoS};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::bus::{Bus, BusMessage};
use crate::config::{ClockMode, CollectorConfig, SourceTransport};
use crate::error::{CollectorError, Result};
use crate::ingest::{self, system_now, Ingress, BUS_RADAR_STREAM};

const STREAM_CAPACITY: usize = 1024;
const TICK_INTERVAL: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Idle,
    Running,
    Stopping,
    Closed,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct StartRequest {
    pub subject_pseudo_id: Option<String>,
    pub devices: Vec<DeviceInfo>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnnotateRequest {
    #[serde(flatten)]
    pub value: AnnotationValue,
    /// Defaults to the session clock at the time of the request.
    #[serde(default)]
    pub ts: Option<Timestamp>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SourceStatus {
    pub records: u64,
    pub last_seen_age_ms: Option<i64>,
    pub fresh: bool,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Counters {
    pub rows: u64,
    pub late_drops: u64,
    pub duplicates: u64,
    pub frames_bad_checksum: u64,
    pub bytes_skipped: u64,
    pub decode_errors: u64,
}

/// Document served by `GET /status` and pushed on the live stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Status {
    pub state: LifecycleState,
    pub session_id: Option<String>,
    pub sources: BTreeMap<SourceId, SourceStatus>,
    pub warning: Option<WarningLevel>,
    pub radar_reliable: Option<bool>,
    pub last_row: Option<FusedRow>,
    pub counters: Counters,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SourceFreshness {
    /// Emitted ticks at which the source had a fresh sample.
    pub fresh_ticks: u64,
    pub last_seen_age_ms: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionSummary {
    pub session_id: String,
    pub subject_pseudo_id: String,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub rows: u64,
    /// Accepted records per sensor source.
    pub records: BTreeMap<SourceId, u64>,
    pub late_drops: u64,
    pub duplicates: u64,
    pub frames_bad_checksum: u64,
    pub bytes_skipped: u64,
    pub decode_errors: u64,
    pub warning_episodes: Vec<WarningEpisode>,
    pub annotations: Vec<Annotation>,
    pub clock_offset_ms: BTreeMap<SourceId, i64>,
    pub freshness: BTreeMap<SourceId, SourceFreshness>,
    pub csv_path: PathBuf,
}

/// Event on the live stream.
#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "event", content = "data", rename_all = "snake_case")]
pub enum StreamEvent {
    Row(FusedRow),
    Status(Box<Status>),
    Annotation(Annotation),
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::Row(_) => "row",
            StreamEvent::Status(_) => "status",
            StreamEvent::Annotation(_) => "annotation",
        }
    }

    pub fn data_json(&self) -> String {
        let v = match self {
            StreamEvent::Row(r) => serde_json::to_string(r),
            StreamEvent::Status(s) => serde_json::to_string(s),
            StreamEvent::Annotation(a) => serde_json::to_string(a),
        };
        v.expect("stream events serialize")
    }
}

/// Live state the owner task publishes for status readers.
#[derive(Debug, Clone)]
struct View {
    state: LifecycleState,
    session_id: Option<String>,
    clock: ClockMode,
    sources: Vec<SourceId>,
    staleness: BTreeMap<SourceId, i64>,
    records: BTreeMap<SourceId, u64>,
    last_wall: BTreeMap<SourceId, i64>,
    /// Session clock in records mode.
    records_now: Option<i64>,
    last_row: Option<FusedRow>,
    counters: Counters,
}

impl View {
    fn idle(clock: ClockMode) -> Self {
        View {
            state: LifecycleState::Idle,
            session_id: None,
            clock,
            sources: Vec::new(),
            staleness: BTreeMap::new(),
            records: BTreeMap::new(),
            last_wall: BTreeMap::new(),
            records_now: None,
            last_row: None,
            counters: Counters::default(),
        }
    }

    fn now(&self) -> Option<i64> {
        match self.clock {
            ClockMode::System => Some(system_now().ms()),
            ClockMode::Records => self.records_now,
        }
    }

    fn status(&self) -> Status {
        let now = self.now();
        let sources = self
            .sources
            .iter()
            .map(|s| {
                let age = match (now, self.last_wall.get(s)) {
                    (Some(now), Some(w)) => Some((now - w).max(0)),
                    _ => None,
                };
                let staleness = self.staleness.get(s).copied().unwrap_or(0);
                let status = SourceStatus {
                    records: self.records.get(s).copied().unwrap_or(0),
                    last_seen_age_ms: age,
                    fresh: age.is_some_and(|a| a <= staleness),
                };
                (*s, status)
            })
            .collect();
        Status {
            state: self.state,
            session_id: self.session_id.clone(),
            sources,
            warning: self.last_row.map(|r| r.warning),
            radar_reliable: self.last_row.map(|r| r.radar_reliable),
            last_row: self.last_row,
            counters: self.counters,
        }
    }
}

enum Command {
    Annotate(AnnotateRequest, oneshot::Sender<Result<Annotation>>),
    Stop,
}

struct Running {
    session_id: String,
    cmd_tx: mpsc::UnboundedSender<Command>,
    owner: JoinHandle<Result<SessionSummary>>,
    tasks: Vec<JoinHandle<()>>,
}

enum Lifecycle {
    Idle,
    Running(Running),
    Closed,
}

struct Shared {
    cfg: CollectorConfig,
    bus: Bus,
    store: Arc<JsonlStore>,
    events: broadcast::Sender<StreamEvent>,
    lifecycle: tokio::sync::Mutex<Lifecycle>,
    view: Arc<Mutex<View>>,
    radar_addr: Mutex<Option<std::net::SocketAddr>>,
}

/// The collector service. Cheap to clone; all clones share one session.
#[derive(Clone)]
pub struct Collector {
    shared: Arc<Shared>,
}

impl Collector {
    pub fn new(cfg: CollectorConfig, bus: Bus) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.storage_dir)?;
        let store = JsonlStore::open(&cfg.storage_dir)?;
        let (events, _) = broadcast::channel(STREAM_CAPACITY);
        let view = View::idle(cfg.clock);
        Ok(Collector {
            shared: Arc::new(Shared {
                cfg,
                bus,
                store: Arc::new(store),
                events,
                lifecycle: tokio::sync::Mutex::new(Lifecycle::Idle),
                view: Arc::new(Mutex::new(view)),
                radar_addr: Mutex::new(None),
            }),
        })
    }

    pub fn config(&self) -> &CollectorConfig {
        &self.shared.cfg
    }

    pub fn bus(&self) -> &Bus {
        &self.shared.bus
    }

    pub fn store(&self) -> &JsonlStore {
        &self.shared.store
    }

    /// Address of the radar TCP listener of the running session, if any.
    pub fn radar_addr(&self) -> Option<std::net::SocketAddr> {
        *self.shared.radar_addr.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn status(&self) -> Status {
        lock(&self.shared.view).status()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.shared.events.subscribe()
    }

    pub fn csv_path(&self, session_id: &str) -> PathBuf {
        self.shared.cfg.storage_dir.join(format!("{session_id}.csv"))
    }

    pub async fn start_session(&self, req: StartRequest) -> Result<String> {
        let cfg = &self.shared.cfg;
        let sources = cfg.sources.enabled();
        if sources.is_empty() {
            return Err(CollectorError::Config("no sources configured".into()));
        }
        let mut lifecycle = self.shared.lifecycle.lock().await;
        if let Lifecycle::Running(r) = &*lifecycle {
            return Err(CollectorError::State(format!("session {} is already running", r.session_id)));
        }

        let session_id = ulid::Ulid::new().to_string();
        let started_at = system_now();
        let meta = SessionMeta {
            session_id: session_id.clone(),
            subject_pseudo_id: req
                .subject_pseudo_id
                .or_else(|| cfg.session_defaults.subject_pseudo_id.clone())
                .unwrap_or_default(),
            started_at,
            ended_at: None,
            devices: req.devices,
            clock_offset_ms: BTreeMap::new(),
            annotations: Vec::new(),
        };
        self.shared.store.save_meta(&meta)?;
        let csv_path = self.csv_path(&session_id);
        let csv = CsvWriter::new(BufWriter::new(File::create(&csv_path)?))?;

        let (net_tx, net_rx) = mpsc::unbounded_channel();
        let mut tasks = Vec::new();
        let mut radar_addr = None;
        let mut bus_rx = None;
        let result: Result<()> = async {
            if sources.iter().any(|s| cfg.sources.get(*s) == Some(&SourceTransport::Bus)) {
                bus_rx = Some(self.shared.bus.subscribe("cabin/#"));
            }
            for source in &sources {
                match cfg.sources.get(*source) {
                    Some(SourceTransport::Tcp { listen }) => {
                        let (addr, handle) = ingest::spawn_radar_tcp(*listen, net_tx.clone()).await?;
                        radar_addr = Some(addr);
                        tasks.push(handle);
                    }
                    Some(SourceTransport::Serial { path } | SourceTransport::File { path }) => {
                        tasks.push(ingest::spawn_radar_reader(path, net_tx.clone()).await?);
                    }
                    Some(SourceTransport::Mqtt { broker, topic }) => {
                        tasks.push(ingest::spawn_mqtt(*source, broker, topic.as_deref(), net_tx.clone())?);
                    }
                    Some(SourceTransport::Bus) | None => {}
                }
            }
            Ok(())
        }
        .await;
        if let Err(e) = result {
            tasks.iter().for_each(JoinHandle::abort);
            return Err(e);
        }
        let publisher = match &cfg.publish_broker {
            Some(broker) => {
                let (client, handle) = ingest::spawn_publisher(broker)?;
                tasks.push(handle);
                Some(client)
            }
            None => None,
        };

        {
            let mut view = lock(&self.shared.view);
            *view = View::idle(cfg.clock);
            view.state = LifecycleState::Running;
            view.session_id = Some(session_id.clone());
            view.sources = sources.clone();
            view.staleness = sources.iter().map(|s| (*s, cfg.pipeline.grid.staleness(*s))).collect();
        }
        *self.shared.radar_addr.lock().unwrap_or_else(|e| e.into_inner()) = radar_addr;

        let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
        let owner = Owner {
            session_id: session_id.clone(),
            cfg: cfg.clone(),
            pipeline: Pipeline::new(cfg.pipeline, sources.iter().copied()),
            decoders: HashMap::new(),
            radar_seq: 0,
            annotation_seq: 0,
            max_wall: None,
            csv: Some(csv),
            csv_path,
            last_flush: Instant::now(),
            store: Arc::clone(&self.shared.store),
            meta,
            events: self.shared.events.clone(),
            view: Arc::clone(&self.shared.view),
            publisher,
            last_warning: None,
            counters: Counters::default(),
            records: BTreeMap::new(),
            last_wall: BTreeMap::new(),
            _net_tx: net_tx,
        };
        let owner = tokio::spawn(owner.run(cmd_rx, bus_rx, net_rx));
        *lifecycle = Lifecycle::Running(Running {
            session_id: session_id.clone(),
            cmd_tx,
            owner,
            tasks,
        });
        drop(lifecycle);
        self.broadcast_status();
        tracing::info!(%session_id, "session started");
        Ok(session_id)
    }

    pub async fn annotate(&self, session_id: &str, req: AnnotateRequest) -> Result<Annotation> {
        let lifecycle = self.shared.lifecycle.lock().await;
        let Lifecycle::Running(running) = &*lifecycle else {
            return Err(CollectorError::State("no session is running".into()));
        };
        if running.session_id != session_id {
            return Err(CollectorError::NotFound(format!("session {session_id}")));
        }
        let (tx, rx) = oneshot::channel();
        running
            .cmd_tx
            .send(Command::Annotate(req, tx))
            .map_err(|_| CollectorError::State("session pipeline has stopped".into()))?;
        drop(lifecycle);
        rx.await
            .map_err(|_| CollectorError::State("session pipeline has stopped".into()))?
    }

    pub async fn stop_session(&self, session_id: &str) -> Result<SessionSummary> {
        let mut lifecycle = self.shared.lifecycle.lock().await;
        match &*lifecycle {
            Lifecycle::Running(r) if r.session_id == session_id => {}
            _ => return Err(CollectorError::NotFound(format!("no running session {session_id}"))),
        }
        let Lifecycle::Running(running) = std::mem::replace(&mut *lifecycle, Lifecycle::Closed) else {
            unreachable!("checked above");
        };
        lock(&self.shared.view).state = LifecycleState::Stopping;
        self.broadcast_status();

        // Ingestion stops first so the drain sees a closed input set.
        for task in &running.tasks {
            task.abort();
        }
        *self.shared.radar_addr.lock().unwrap_or_else(|e| e.into_inner()) = None;
        let _ = running.cmd_tx.send(Command::Stop);
        let summary = match running.owner.await {
            Ok(result) => result,
            Err(e) => Err(CollectorError::State(format!("session pipeline failed: {e}"))),
        };
        lock(&self.shared.view).state = LifecycleState::Closed;
        drop(lifecycle);
        self.broadcast_status();
        if let Ok(s) = &summary {
            tracing::info!(session_id, rows = s.rows, "session stopped");
        }
        summary
    }

    /// Stop whatever session is running; used on shutdown.
    pub async fn shutdown(&self) -> Option<Result<SessionSummary>> {
        let id = match &*self.shared.lifecycle.lock().await {
            Lifecycle::Running(r) => r.session_id.clone(),
            Lifecycle::Idle | Lifecycle::Closed => return None,
        };
        Some(self.stop_session(&id).await)
    }

    fn broadcast_status(&self) {
        let _ = self.shared.events.send(StreamEvent::Status(Box::new(self.status())));
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

async fn recv_bus(rx: &mut Option<mpsc::UnboundedReceiver<BusMessage>>) -> Option<BusMessage> {
    match rx {
        Some(rx) => rx.recv().await,
        None => std::future::pending().await,
    }
}

struct Owner {
    session_id: String,
    cfg: CollectorConfig,
    pipeline: Pipeline,
    decoders: HashMap<u64, DecoderState>,
    radar_seq: u64,
    annotation_seq: u64,
    max_wall: Option<i64>,
    csv: Option<CsvWriter<BufWriter<File>>>,
    csv_path: PathBuf,
    last_flush: Instant,
    store: Arc<JsonlStore>,
    meta: SessionMeta,
    events: broadcast::Sender<StreamEvent>,
    view: Arc<Mutex<View>>,
    publisher: Option<AsyncClient>,
    last_warning: Option<WarningLevel>,
    counters: Counters,
    records: BTreeMap<SourceId, u64>,
    last_wall: BTreeMap<SourceId, i64>,
    /// Keeps the ingress channel open when no network source holds a sender.
    _net_tx: mpsc::UnboundedSender<Ingress>,
}

impl Owner {
    async fn run(
        mut self,
        mut cmd_rx: mpsc::UnboundedReceiver<Command>,
        mut bus_rx: Option<mpsc::UnboundedReceiver<BusMessage>>,
        mut net_rx: mpsc::UnboundedReceiver<Ingress>,
    ) -> Result<SessionSummary> {
        let mut tick = tokio::time::interval(TICK_INTERVAL);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                biased;
                cmd = cmd_rx.recv() => match cmd {
                    Some(Command::Annotate(req, reply)) => {
                        let _ = reply.send(self.annotate(req));
                    }
                    Some(Command::Stop) | None => break,
                },
                Some(msg) = recv_bus(&mut bus_rx) => self.on_bus(msg),
                Some(msg) = net_rx.recv() => self.on_ingress(msg),
                _ = tick.tick() => self.on_tick(),
            }
        }

        // Drain everything that was delivered before the stop.
        if let Some(rx) = bus_rx.as_mut() {
            while let Ok(msg) = rx.try_recv() {
                self.on_bus(msg);
            }
        }
        while let Ok(msg) = net_rx.try_recv() {
            self.on_ingress(msg);
        }
        self.finish()
    }

    fn now(&self) -> Option<Timestamp> {
        match self.cfg.clock {
            ClockMode::System => Some(system_now()),
            ClockMode::Records => self.max_wall.map(Timestamp),
        }
    }

    fn transport_is_bus(&self, source: SourceId) -> bool {
        self.cfg.sources.get(source) == Some(&SourceTransport::Bus)
    }

    fn on_bus(&mut self, msg: BusMessage) {
        if msg.topic.ends_with("/radar/raw") {
            if self.transport_is_bus(SourceId::Radar) {
                let wall = msg.wall.unwrap_or_else(system_now);
                self.on_radar_bytes(BUS_RADAR_STREAM, &msg.payload, wall);
            }
        } else if msg.topic.ends_with("/data") {
            self.on_json(&msg.payload, true);
        }
    }

    fn on_ingress(&mut self, msg: Ingress) {
        match msg {
            Ingress::RadarBytes { stream, bytes, wall } => self.on_radar_bytes(stream, &bytes, wall),
            Ingress::Json(bytes) => self.on_json(&bytes, false),
        }
    }

    fn on_json(&mut self, bytes: &[u8], from_bus: bool) {
        let record = std::str::from_utf8(bytes)
            .map_err(|e| e.to_string())
            .and_then(|text| decode_record(text).map_err(|e| e.to_string()));
        match record {
            Ok(record) => {
                if !record.source.is_sensor() || from_bus != self.transport_is_bus(record.source) {
                    return;
                }
                self.on_record(record);
            }
            Err(e) => {
                self.counters.decode_errors += 1;
                tracing::warn!(error = %e, "dropping undecodable record");
            }
        }
    }

    fn on_radar_bytes(&mut self, stream: u64, bytes: &[u8], wall: Timestamp) {
        let frames = self.decoders.entry(stream).or_default().decode(bytes);
        let stats = self.decoders.values().fold(DecoderStats::default(), |acc, d| {
            let s = d.stats();
            DecoderStats {
                frames_ok: acc.frames_ok + s.frames_ok,
                frames_bad_checksum: acc.frames_bad_checksum + s.frames_bad_checksum,
                bytes_skipped: acc.bytes_skipped + s.bytes_skipped,
            }
        });
        self.counters.frames_bad_checksum = stats.frames_bad_checksum;
        self.counters.bytes_skipped = stats.bytes_skipped;
        for frame in frames {
            let seq = self.radar_seq;
            self.radar_seq += 1;
            let record = TimedRecord::new(
                self.session_id.clone(),
                seq,
                i64::from(frame.device_ts),
                wall,
                Payload::Radar(frame),
            );
            self.on_record(record);
        }
    }

    fn on_record(&mut self, mut record: TimedRecord) {
        record.session_id.clone_from(&self.session_id);
        let outcome = self.pipeline.ingest(&record);
        let wall = record.wall_ts_ms.ms();
        self.max_wall = Some(self.max_wall.map_or(wall, |m| m.max(wall)));
        if outcome == IngestOutcome::Accepted {
            *self.records.entry(record.source).or_default() += 1;
            let last = self.last_wall.entry(record.source).or_insert(wall);
            *last = (*last).max(wall);
            if let Err(e) = self.store.append(&record) {
                tracing::error!(error = %e, "store append failed");
            }
        }
        if let Some(now) = self.now() {
            match self.pipeline.advance(now) {
                Ok(rows) => self.emit(rows),
                Err(e) => tracing::error!(error = %e, "pipeline advance failed"),
            }
        }
        self.sync_view();
    }

    fn on_tick(&mut self) {
        if self.cfg.clock == ClockMode::System {
            match self.pipeline.advance(system_now()) {
                Ok(rows) => self.emit(rows),
                Err(e) => tracing::error!(error = %e, "pipeline advance failed"),
            }
        }
        if self.last_flush.elapsed() >= CSV_FLUSH_INTERVAL {
            self.flush_csv();
        }
        self.sync_view();
    }

    fn flush_csv(&mut self) {
        if let Some(csv) = self.csv.as_mut() {
            if let Err(e) = csv.flush() {
                tracing::error!(error = %e, "csv flush failed");
            }
        }
        self.last_flush = Instant::now();
    }

    fn emit(&mut self, rows: Vec<FusedRow>) {
        for row in rows {
            let index = self.counters.rows;
            self.counters.rows += 1;
            if let Some(csv) = self.csv.as_mut() {
                if let Err(e) = csv.write_row(&row) {
                    tracing::error!(error = %e, "csv write failed");
                }
            }
            let record = TimedRecord::new(self.session_id.clone(), index, row.grid_ts.ms(), row.grid_ts, Payload::Fused(row));
            if let Err(e) = self.store.append(&record) {
                tracing::error!(error = %e, "store append failed");
            }
            self.publish(&record);
            let _ = self.events.send(StreamEvent::Row(row));
            lock(&self.view).last_row = Some(row);
            if self.last_warning != Some(row.warning) {
                if self.last_warning.is_some() {
                    tracing::info!(grid_ts = row.grid_ts.ms(), warning = row.warning.as_str(), "warning state changed");
                }
                self.last_warning = Some(row.warning);
                self.sync_view();
                let status = lock(&self.view).status();
                let _ = self.events.send(StreamEvent::Status(Box::new(status)));
            }
        }
    }

    fn publish(&self, record: &TimedRecord) {
        let Some(client) = &self.publisher else { return };
        let Ok(topic) = topic_for(&self.session_id, SourceId::Fused) else { return };
        let payload = cabin_core::model::encode_record(record);
        if let Err(e) = client.try_publish(topic, QoS::AtLeastOnce, false, payload) {
            tracing::warn!(error = %e, "fused publish dropped");
        }
    }

    fn annotate(&mut self, req: AnnotateRequest) -> Result<Annotation> {
        let ts = req.ts.or_else(|| self.now()).unwrap_or_else(system_now);
        let annotation = Annotation { ts, value: req.value };
        annotation.validate()?;
        let record = TimedRecord::new(
            self.session_id.clone(),
            self.annotation_seq,
            ts.ms(),
            ts,
            Payload::Annotation(annotation.clone()),
        );
        self.store.append(&record)?;
        self.annotation_seq += 1;
        self.meta.annotations.push(annotation.clone());
        self.store.save_meta(&self.meta)?;
        self.publish(&record);
        let _ = self.events.send(StreamEvent::Annotation(annotation.clone()));
        Ok(annotation)
    }

    fn sync_view(&self) {
        let stats = self.pipeline.aligner().stats();
        let mut view = lock(&self.view);
        view.records.clone_from(&self.records);
        view.last_wall.clone_from(&self.last_wall);
        view.records_now = self.max_wall;
        view.counters = Counters {
            late_drops: stats.late_drops,
            duplicates: stats.duplicates,
            ..self.counters
        };
    }

    fn finish(mut self) -> Result<SessionSummary> {
        match self.pipeline.finish() {
            Ok(rows) => self.emit(rows),
            Err(e) => tracing::error!(error = %e, "pipeline flush failed"),
        }
        if let Some(csv) = self.csv.take() {
            csv.finish()?;
        }
        self.sync_view();

        let ended_at = system_now();
        let clock_offset_ms: BTreeMap<SourceId, i64> = self
            .pipeline
            .aligner()
            .sources()
            .filter_map(|s| self.pipeline.aligner().clock(s).map(|c| (s, c.offset_ms)))
            .collect();
        self.meta.ended_at = Some(ended_at);
        self.meta.clock_offset_ms = clock_offset_ms.clone();
        self.store.save_meta(&self.meta)?;

        let status = lock(&self.view).status();
        let freshness = self
            .pipeline
            .aligner()
            .sources()
            .map(|s| {
                let fresh = SourceFreshness {
                    fresh_ticks: self.pipeline.fresh_ticks().get(&s).copied().unwrap_or(0),
                    last_seen_age_ms: status.sources.get(&s).and_then(|st| st.last_seen_age_ms),
                };
                (s, fresh)
            })
            .collect();
        let stats = self.pipeline.aligner().stats();
        Ok(SessionSummary {
            session_id: self.session_id.clone(),
            subject_pseudo_id: self.meta.subject_pseudo_id.clone(),
            started_at: self.meta.started_at,
            ended_at,
            rows: self.counters.rows,
            records: self.records.clone(),
            late_drops: stats.late_drops,
            duplicates: stats.duplicates,
            frames_bad_checksum: self.counters.frames_bad_checksum,
            bytes_skipped: self.counters.bytes_skipped,
            decode_errors: self.counters.decode_errors,
            warning_episodes: self.pipeline.fuser().episodes().to_vec(),
            annotations: self.meta.annotations.clone(),
            clock_offset_ms,
            freshness,
            csv_path: self.csv_path.clone(),
        })
    }
}

