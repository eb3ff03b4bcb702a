//! Time alignment of the sensor streams onto one session timeline.
//!
//! Each source's device clock is mapped to session time with a constant
//! offset estimated from its first records. Records are buffered by session
//! time; a watermark (the slowest live source, capped at `now - lateness`)
//! decides which grid ticks are complete, and each complete tick yields one
//! sample-and-hold [`AlignedSnapshot`]. Live ingestion and offline replay
//! drive the same [`Aligner`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decode_record, CameraSample, Payload, RadarSample, SourceId, Stamped, Timestamp, TimedRecord, WearableSample};

/// Fewest records a clock offset may be estimated from.
pub const MIN_CALIBRATION_RECORDS: usize = 5;

const U32_SPAN: i64 = 1 << 32;

/// Per-sensor setting, serialized as a `{"radar": .., "wearable": .., "camera": ..}` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerSensor<T> {
    pub radar: T,
    pub wearable: T,
    pub camera: T,
}

impl<T: Copy> PerSensor<T> {
    pub fn get(&self, source: SourceId) -> Option<T> {
        match source {
            SourceId::Radar => Some(self.radar),
            SourceId::Wearable => Some(self.wearable),
            SourceId::Camera => Some(self.camera),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub step_ms: i64,
    pub lateness_ms: i64,
    pub staleness_ms: PerSensor<i64>,
    /// Trailing radar samples attached to each snapshot (reliability window).
    pub radar_history_ms: i64,
    /// Trailing camera samples attached to each snapshot (metric windows).
    pub camera_history_ms: i64,
    pub calibration_records: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            step_ms: 1_000,
            lateness_ms: 500,
            staleness_ms: PerSensor {
                radar: 2_500,
                wearable: 5_000,
                camera: 1_500,
            },
            radar_history_ms: 5_000,
            camera_history_ms: 70_000,
            calibration_records: 20,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_ms <= 0 {
            return Err(Error::validation("grid.step_ms must be positive"));
        }
        if self.lateness_ms < 0 {
            return Err(Error::validation("grid.lateness_ms must be non-negative"));
        }
        let s = self.staleness_ms;
        if [s.radar, s.wearable, s.camera].iter().any(|v| *v <= 0) {
            return Err(Error::validation("grid.staleness_ms entries must be positive"));
        }
        if self.radar_history_ms < 0 || self.camera_history_ms < 0 {
            return Err(Error::validation("grid history spans must be non-negative"));
        }
        if self.calibration_records < MIN_CALIBRATION_RECORDS {
            return Err(Error::Validation(format!(
                "grid.calibration_records must be at least {MIN_CALIBRATION_RECORDS}"
            )));
        }
        Ok(())
    }

    pub fn staleness(&self, source: SourceId) -> i64 {
        self.staleness_ms.get(source).unwrap_or(0)
    }

    fn retention(&self, source: SourceId) -> i64 {
        let history = match source {
            SourceId::Radar => self.radar_history_ms,
            SourceId::Camera => self.camera_history_ms,
            _ => 0,
        };
        history.max(self.staleness(source)) + self.step_ms
    }
}

/// Maps a device clock onto session time: `session_ts = device_ts + offset_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockModel {
    pub offset_ms: i64,
    pub calibrated: bool,
    /// Median absolute deviation of the calibration offsets.
    pub residual_ms: i64,
    /// Last unwrapped device time, for sources with a wrapping u32 clock.
    unwrap_ref: Option<i64>,
}

impl ClockModel {
    /// Unwrap a 32-bit device counter to the candidate nearest the previous value.
    fn unwrap(reference: i64, raw: i64) -> i64 {
        let base = reference - reference.rem_euclid(U32_SPAN) + raw.rem_euclid(U32_SPAN);
        [base - U32_SPAN, base, base + U32_SPAN]
            .into_iter()
            .min_by_key(|c| (c - reference).abs())
            .unwrap_or(base)
    }

    pub fn session_ts(&mut self, device_ts_ms: i64) -> Timestamp {
        let device = match self.unwrap_ref {
            Some(reference) => {
                let unwrapped = Self::unwrap(reference, device_ts_ms);
                self.unwrap_ref = Some(unwrapped);
                unwrapped
            }
            None => device_ts_ms,
        };
        Timestamp(device + self.offset_ms)
    }
}

fn integer_median(values: &mut [i64]) -> i64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]).div_euclid(2)
    }
}

/// Estimate a source's clock offset from (at most) its first `n` records.
///
/// The offset is the median of `wall_ts - device_ts`; radar device clocks are
/// 32-bit and are unwrapped monotonically first.
pub fn calibrate(source: SourceId, first_records: &[TimedRecord], n: usize) -> Result<ClockModel> {
    let records = &first_records[..first_records.len().min(n)];
    if records.len() < MIN_CALIBRATION_RECORDS {
        return Err(Error::Calibration(format!(
            "{source}: {} records, need at least {MIN_CALIBRATION_RECORDS}",
            records.len()
        )));
    }
    let wraps = source == SourceId::Radar;
    let mut reference: Option<i64> = None;
    let mut diffs: Vec<i64> = records
        .iter()
        .map(|r| {
            let device = match (wraps, reference) {
                (true, Some(prev)) => ClockModel::unwrap(prev, r.device_ts_ms),
                _ => r.device_ts_ms,
            };
            if wraps {
                reference = Some(device);
            }
            r.wall_ts_ms.ms() - device
        })
        .collect();
    let offset = integer_median(&mut diffs);
    let mut deviations: Vec<i64> = diffs.iter().map(|d| (d - offset).abs()).collect();
    let residual = integer_median(&mut deviations);
    Ok(ClockModel {
        offset_ms: offset,
        calibrated: true,
        residual_ms: residual,
        unwrap_ref: reference,
    })
}

/// Everything the fusion stage needs about one grid tick.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSnapshot {
    pub grid_ts: Timestamp,
    /// Latest sample at or before the tick, present only when fresh.
    pub radar: Option<Stamped<RadarSample>>,
    pub wearable: Option<Stamped<WearableSample>>,
    pub camera: Option<Stamped<CameraSample>>,
    /// Radar samples in `[grid_ts - radar_history_ms, grid_ts]`.
    pub radar_window: Vec<Stamped<RadarSample>>,
    /// Camera samples in `[grid_ts - camera_history_ms, grid_ts]`.
    pub camera_window: Vec<Stamped<CameraSample>>,
}

impl AlignedSnapshot {
    pub fn radar_fresh(&self) -> bool {
        self.radar.is_some()
    }

    pub fn wearable_fresh(&self) -> bool {
        self.wearable.is_some()
    }

    pub fn camera_fresh(&self) -> bool {
        self.camera.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted,
    Duplicate,
    /// Older than the watermark minus the source's staleness.
    Late,
    /// Not a configured sensor source.
    Ignored,
}

#[derive(Debug, Default)]
struct Track {
    clock: Option<ClockModel>,
    /// Records waiting for calibration, keyed by seq.
    pending: BTreeMap<u64, TimedRecord>,
    seen: HashSet<u64>,
    samples: BTreeMap<(i64, u64), Payload>,
    earliest: Option<i64>,
    latest: Option<i64>,
    latest_wall: Option<i64>,
}

impl Track {
    fn insert(&mut self, ts: Timestamp, seq: u64, payload: Payload) {
        self.samples.insert((ts.ms(), seq), payload);
        self.earliest = Some(self.earliest.map_or(ts.ms(), |e| e.min(ts.ms())));
        self.latest = Some(self.latest.map_or(ts.ms(), |l| l.max(ts.ms())));
    }

    fn held(&self, tick: i64) -> Option<(i64, &Payload)> {
        self.samples.range(..=(tick, u64::MAX)).next_back().map(|((ts, _), p)| (*ts, p))
    }

    fn window(&self, from: i64, to: i64) -> impl Iterator<Item = (i64, &Payload)> {
        self.samples.range((from, 0)..=(to, u64::MAX)).map(|((ts, _), p)| (*ts, p))
    }
}

/// The first `n` records are known once seqs `0..n` have all arrived, so
/// calibration does not depend on arrival order. If some of them never
/// arrive, calibration goes ahead once `2n` records are waiting.
fn calibration_ready(pending: &BTreeMap<u64, TimedRecord>, n: usize) -> bool {
    let n = n.max(1);
    pending.len() >= 2 * n || (pending.len() >= n && pending.keys().take(n).copied().eq(0..n as u64))
}

enum Liveness {
    Live(i64),
    Blocked,
    Excluded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlignerStats {
    pub late_drops: u64,
    pub duplicates: u64,
}

/// Buffers records from the configured sensors and emits aligned snapshots.
#[derive(Debug)]
pub struct Aligner {
    cfg: GridConfig,
    tracks: BTreeMap<SourceId, Track>,
    now: Option<i64>,
    first_wall: Option<i64>,
    watermark: Option<i64>,
    next_tick: Option<i64>,
    stats: AlignerStats,
}

impl Aligner {
    pub fn new(cfg: GridConfig, sources: impl IntoIterator<Item = SourceId>) -> Self {
        let tracks = sources
            .into_iter()
            .filter(|s| s.is_sensor())
            .map(|s| (s, Track::default()))
            .collect();
        Aligner {
            cfg,
            tracks,
            now: None,
            first_wall: None,
            watermark: None,
            next_tick: None,
            stats: AlignerStats::default(),
        }
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn sources(&self) -> impl Iterator<Item = SourceId> + '_ {
        self.tracks.keys().copied()
    }

    pub fn stats(&self) -> AlignerStats {
        self.stats
    }

    pub fn watermark(&self) -> Option<Timestamp> {
        self.watermark.map(Timestamp)
    }

    pub fn clock(&self, source: SourceId) -> Option<ClockModel> {
        self.tracks.get(&source).and_then(|t| t.clock)
    }

    /// Records held, either calibrated or awaiting calibration.
    pub fn buffer_len(&self) -> usize {
        self.tracks.values().map(|t| t.samples.len() + t.pending.len()).sum()
    }

    /// Calibrated samples of one source in session-time order.
    pub fn buffered(&self, source: SourceId) -> Vec<Stamped<Payload>> {
        self.tracks
            .get(&source)
            .map(|t| t.samples.iter().map(|((ts, _), p)| Stamped::new(Timestamp(*ts), p.clone())).collect())
            .unwrap_or_default()
    }

    pub fn ingest(&mut self, record: &TimedRecord) -> IngestOutcome {
        let staleness = self.cfg.staleness(record.source);
        let calibration_records = self.cfg.calibration_records;
        let watermark = self.watermark;
        let Some(track) = self.tracks.get_mut(&record.source) else {
            return IngestOutcome::Ignored;
        };
        if !track.seen.insert(record.seq) {
            self.stats.duplicates += 1;
            return IngestOutcome::Duplicate;
        }
        let wall = record.wall_ts_ms.ms();
        track.latest_wall = Some(track.latest_wall.map_or(wall, |w| w.max(wall)));
        self.first_wall = Some(self.first_wall.map_or(wall, |w| w.min(wall)));

        let is_late = |ts: Timestamp| watermark.is_some_and(|wm| ts.ms() < wm - staleness);
        match track.clock.as_mut() {
            Some(clock) => {
                let ts = clock.session_ts(record.device_ts_ms);
                if is_late(ts) {
                    self.stats.late_drops += 1;
                    return IngestOutcome::Late;
                }
                track.insert(ts, record.seq, record.payload.clone());
            }
            None => {
                track.pending.insert(record.seq, record.clone());
                if calibration_ready(&track.pending, calibration_records) {
                    let late = Self::calibrate_track(record.source, track, calibration_records, watermark, staleness);
                    self.stats.late_drops += late;
                }
            }
        }
        IngestOutcome::Accepted
    }

    /// Calibrate from pending records and move them into the sample buffer.
    /// Returns how many of them turned out to be late.
    fn calibrate_track(source: SourceId, track: &mut Track, n: usize, watermark: Option<i64>, staleness: i64) -> u64 {
        let pending: Vec<TimedRecord> = std::mem::take(&mut track.pending).into_values().collect();
        let Ok(clock) = calibrate(source, &pending, n) else {
            track.pending = pending.into_iter().map(|r| (r.seq, r)).collect();
            return 0;
        };
        tracing::debug!(%source, offset_ms = clock.offset_ms, residual_ms = clock.residual_ms, "clock calibrated");
        let mut clock = clock;
        // Restart unwrapping from the first record so every pending one converts in order.
        if source == SourceId::Radar {
            clock.unwrap_ref = pending.first().map(|r| r.device_ts_ms);
        }
        let mut late = 0;
        for r in pending {
            let ts = clock.session_ts(r.device_ts_ms);
            if watermark.is_some_and(|wm| ts.ms() < wm - staleness) {
                late += 1;
            } else {
                track.insert(ts, r.seq, r.payload);
            }
        }
        track.clock = Some(clock);
        late
    }

    fn liveness(&self, source: SourceId, track: &Track, now: i64) -> Liveness {
        let staleness = self.cfg.staleness(source);
        match (track.clock, track.latest, track.latest_wall) {
            (Some(_), Some(latest), _) => {
                if now - latest > staleness {
                    Liveness::Excluded
                } else {
                    Liveness::Live(latest)
                }
            }
            (_, _, Some(wall)) if now - wall <= staleness => Liveness::Blocked,
            (_, _, Some(_)) => Liveness::Excluded,
            (_, _, None) => match self.first_wall {
                Some(first) if now - first > staleness => Liveness::Excluded,
                _ => Liveness::Blocked,
            },
        }
    }

    /// Move the clock forward and emit every grid tick now known to be complete.
    pub fn advance(&mut self, now_wall: Timestamp) -> Vec<AlignedSnapshot> {
        let now = self.now.map_or(now_wall.ms(), |n| n.max(now_wall.ms()));
        self.now = Some(now);
        let mut watermark = now - self.cfg.lateness_ms;
        for (source, track) in &self.tracks {
            match self.liveness(*source, track, now) {
                Liveness::Live(latest) => watermark = watermark.min(latest),
                Liveness::Blocked => return Vec::new(),
                Liveness::Excluded => {}
            }
        }
        self.emit_through(watermark)
    }

    /// Flush at end of input: calibrate what can be calibrated and emit
    /// through the latest sample of the slowest live source.
    pub fn finish(&mut self) -> Vec<AlignedSnapshot> {
        let n = self.cfg.calibration_records;
        let watermark = self.watermark;
        for (source, track) in self.tracks.iter_mut() {
            if track.clock.is_none() && track.pending.len() >= MIN_CALIBRATION_RECORDS {
                let staleness = self.cfg.staleness(*source);
                self.stats.late_drops += Self::calibrate_track(*source, track, n, watermark, staleness);
            }
        }
        let latest_wall = self.tracks.values().filter_map(|t| t.latest_wall).max();
        let Some(now) = self.now.max(latest_wall) else {
            return Vec::new();
        };
        self.now = Some(now);
        let watermark = self
            .tracks
            .iter()
            .filter_map(|(source, track)| match self.liveness(*source, track, now) {
                Liveness::Live(latest) => Some(latest),
                _ => None,
            })
            .min();
        match watermark {
            Some(wm) => self.emit_through(wm),
            None => Vec::new(),
        }
    }

    fn emit_through(&mut self, watermark: i64) -> Vec<AlignedSnapshot> {
        let step = self.cfg.step_ms;
        if self.next_tick.is_none() {
            let Some(earliest) = self.tracks.values().filter(|t| t.clock.is_some()).filter_map(|t| t.earliest).min() else {
                return Vec::new();
            };
            self.next_tick = Some((earliest.div_euclid(step) + 1) * step);
        }
        self.watermark = Some(self.watermark.map_or(watermark, |w| w.max(watermark)));
        let mut out = Vec::new();
        while let Some(tick) = self.next_tick.filter(|t| *t <= watermark) {
            out.push(self.snapshot(tick));
            self.next_tick = Some(tick + step);
        }
        if let Some(last) = out.last() {
            self.prune(last.grid_ts.ms());
        }
        out
    }

    fn snapshot(&self, tick: i64) -> AlignedSnapshot {
        let mut snap = AlignedSnapshot {
            grid_ts: Timestamp(tick),
            radar: None,
            wearable: None,
            camera: None,
            radar_window: Vec::new(),
            camera_window: Vec::new(),
        };
        for (source, track) in &self.tracks {
            let fresh = track
                .held(tick)
                .filter(|(ts, _)| tick - ts <= self.cfg.staleness(*source))
                .map(|(ts, p)| (Timestamp(ts), p));
            match (source, fresh) {
                (SourceId::Radar, Some((ts, Payload::Radar(s)))) => snap.radar = Some(Stamped::new(ts, *s)),
                (SourceId::Wearable, Some((ts, Payload::Wearable(s)))) => snap.wearable = Some(Stamped::new(ts, *s)),
                (SourceId::Camera, Some((ts, Payload::Camera(s)))) => snap.camera = Some(Stamped::new(ts, *s)),
                _ => {}
            }
            match source {
                SourceId::Radar => {
                    snap.radar_window = track
                        .window(tick - self.cfg.radar_history_ms, tick)
                        .filter_map(|(ts, p)| match p {
                            Payload::Radar(s) => Some(Stamped::new(Timestamp(ts), *s)),
                            _ => None,
                        })
                        .collect();
                }
                SourceId::Camera => {
                    snap.camera_window = track
                        .window(tick - self.cfg.camera_history_ms, tick)
                        .filter_map(|(ts, p)| match p {
                            Payload::Camera(s) => Some(Stamped::new(Timestamp(ts), *s)),
                            _ => None,
                        })
                        .collect();
                }
                _ => {}
            }
        }
        snap
    }

    fn prune(&mut self, last_tick: i64) {
        for (source, track) in self.tracks.iter_mut() {
            let cutoff = last_tick - self.cfg.retention(*source);
            track.samples = track.samples.split_off(&(cutoff, 0));
        }
    }
}

/// Offline mode: feed recorded logs through an [`Aligner`] exactly as a live
/// run would have seen them.
///
/// Records are grouped per source, de-duplicated and put in sequence order,
/// then merged by wall time; the simulated clock is the largest wall time
/// seen so far. The result does not depend on the order of `records`.
pub fn replay_records(cfg: GridConfig, sources: Option<&BTreeSet<SourceId>>, records: Vec<TimedRecord>) -> Vec<AlignedSnapshot> {
    let mut replay = Replay::new(cfg, sources, records);
    let mut out = Vec::new();
    while let Some(batch) = replay.step() {
        out.extend(batch.snapshots);
    }
    out
}

/// Step-wise replay, one record per step, for callers that need to observe
/// the records alongside the snapshots they release.
pub struct Replay {
    aligner: Aligner,
    queue: std::vec::IntoIter<TimedRecord>,
    finished: bool,
}

pub struct ReplayStep {
    pub record: Option<TimedRecord>,
    pub outcome: Option<IngestOutcome>,
    pub snapshots: Vec<AlignedSnapshot>,
}

impl Replay {
    pub fn new(cfg: GridConfig, sources: Option<&BTreeSet<SourceId>>, records: Vec<TimedRecord>) -> Self {
        let ordered = merge_by_wall(records, sources);
        let present: BTreeSet<SourceId> = match sources {
            Some(s) => s.clone(),
            None => ordered.iter().map(|r| r.source).collect(),
        };
        Replay {
            aligner: Aligner::new(cfg, present),
            queue: ordered.into_iter(),
            finished: false,
        }
    }

    pub fn aligner(&self) -> &Aligner {
        &self.aligner
    }

    pub fn step(&mut self) -> Option<ReplayStep> {
        if let Some(record) = self.queue.next() {
            let outcome = self.aligner.ingest(&record);
            let snapshots = self.aligner.advance(record.wall_ts_ms);
            return Some(ReplayStep {
                record: Some(record),
                outcome: Some(outcome),
                snapshots,
            });
        }
        if self.finished {
            return None;
        }
        self.finished = true;
        Some(ReplayStep {
            record: None,
            outcome: None,
            snapshots: self.aligner.finish(),
        })
    }
}

fn merge_by_wall(records: Vec<TimedRecord>, sources: Option<&BTreeSet<SourceId>>) -> Vec<TimedRecord> {
    let mut per_source: BTreeMap<SourceId, BTreeMap<u64, TimedRecord>> = BTreeMap::new();
    for r in records {
        if !r.source.is_sensor() || sources.is_some_and(|s| !s.contains(&r.source)) {
            continue;
        }
        per_source.entry(r.source).or_default().entry(r.seq).or_insert(r);
    }
    let mut streams: Vec<std::iter::Peekable<std::collections::btree_map::IntoValues<u64, TimedRecord>>> =
        per_source.into_values().map(|m| m.into_values().peekable()).collect();
    let mut merged = Vec::new();
    loop {
        // Ties go to the earlier source in SourceId order.
        let next = streams
            .iter_mut()
            .enumerate()
            .filter_map(|(i, s)| s.peek().map(|r| (r.wall_ts_ms, i)))
            .min();
        let Some((_, i)) = next else { break };
        merged.extend(streams[i].next());
    }
    merged
}

/// Read a JSON-lines record dump. Blank lines are skipped.
pub fn read_record_log(path: &Path) -> Result<Vec<TimedRecord>> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Replay {
        file: file.clone(),
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            decode_record(line).map_err(|e| Error::Replay {
                file: file.clone(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Read every log and replay the union.
pub fn replay_logs(cfg: GridConfig, paths: &[impl AsRef<Path>]) -> Result<Vec<AlignedSnapshot>> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_record_log(p.as_ref())?);
    }
    Ok(replay_records(cfg, None, records))
}
