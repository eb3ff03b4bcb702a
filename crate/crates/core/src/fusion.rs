//! Per-tick fusion: radar reliability gating, redundant channel selection,
//! camera metrics, the composite drowsiness index and the warning state machine.

use serde::{Deserialize, Serialize};

use crate::alignment::AlignedSnapshot;
use crate::error::{Error, Result};
use crate::model::{FusedRow, RadarSample, SourceId, Stamped, Timestamp, WarningLevel};
use crate::ocular::{self, Attention, MetricsWindowConfig, Window};

/// Round to the 4 fractional digits carried by the CSV log.
pub fn quantize(x: f64) -> f64 {
    let q = (x * 1e4).round() / 1e4;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliabilityConfig {
    pub radar_distance_window_ms: i64,
    pub radar_distance_stddev_mm: f64,
    pub radar_motion_fraction: f64,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        ReliabilityConfig {
            radar_distance_window_ms: 5_000,
            radar_distance_stddev_mm: 50.0,
            radar_motion_fraction: 0.2,
        }
    }
}

impl ReliabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radar_distance_window_ms <= 0 || !(self.radar_distance_stddev_mm > 0.0) || !(self.radar_motion_fraction > 0.0) {
            return Err(Error::validation("reliability thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarningConfig {
    pub warn_threshold: f64,
    pub critical_threshold: f64,
    pub clear_threshold: f64,
    pub warn_sustain_ms: i64,
    pub clear_sustain_ms: i64,
    pub attention_threshold: f64,
    pub attention_sustain_ms: i64,
    pub physio_weight: f64,
    pub camera_weight: f64,
}

impl Default for WarningConfig {
    fn default() -> Self {
        WarningConfig {
            warn_threshold: 0.6,
            critical_threshold: 0.8,
            clear_threshold: 0.5,
            warn_sustain_ms: 10_000,
            clear_sustain_ms: 30_000,
            attention_threshold: 0.5,
            attention_sustain_ms: 3_000,
            physio_weight: 0.6,
            camera_weight: 0.4,
        }
    }
}

impl WarningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clear_threshold < self.warn_threshold && self.warn_threshold < self.critical_threshold) {
            return Err(Error::validation("warning thresholds must satisfy clear < warn < critical"));
        }
        if ((self.physio_weight + self.camera_weight) - 1.0).abs() > 1e-9 || self.physio_weight < 0.0 || self.camera_weight < 0.0 {
            return Err(Error::validation("physio_weight + camera_weight must equal 1"));
        }
        if self.warn_sustain_ms < 0 || self.clear_sustain_ms < 0 || self.attention_sustain_ms < 0 {
            return Err(Error::validation("sustain durations must be non-negative"));
        }
        Ok(())
    }
}

/// True iff the window holds at least two samples, the distance spread is at
/// most the threshold and motion was flagged in at most the allowed fraction.
pub fn radar_reliable(window: &[Stamped<RadarSample>], cfg: &ReliabilityConfig) -> bool {
    if window.len() < 2 {
        return false;
    }
    let n = window.len() as f64;
    let mean = window.iter().map(|s| s.value.distance_mm).sum::<f64>() / n;
    let var = window.iter().map(|s| (s.value.distance_mm - mean).powi(2)).sum::<f64>() / n;
    let motion = window.iter().filter(|s| s.value.motion).count() as f64 / n;
    var.sqrt() <= cfg.radar_distance_stddev_mm && motion <= cfg.radar_motion_fraction
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Channels {
    pub hr: Option<(f64, SourceId)>,
    pub rr: Option<(f64, SourceId)>,
    pub hrv: Option<f64>,
}

/// Heart rate prefers the wearable, respiration prefers the radar; each falls
/// back to the other device. HRV only exists on the wearable.
pub fn select_channels(snapshot: &AlignedSnapshot, radar_reliable: bool) -> Channels {
    let wearable = snapshot.wearable.map(|s| s.value).filter(|w| w.worn);
    let radar = snapshot.radar.map(|s| s.value).filter(|_| radar_reliable);
    let from_wearable_hr = wearable.and_then(|w| w.hr_bpm).map(|v| (v, SourceId::Wearable));
    let from_radar_hr = radar.map(|r| (r.hr_bpm, SourceId::Radar));
    let from_radar_rr = radar.map(|r| (r.rr_bpm, SourceId::Radar));
    let from_wearable_rr = wearable.and_then(|w| w.rr_bpm).map(|v| (v, SourceId::Wearable));
    Channels {
        hr: from_wearable_hr.or(from_radar_hr),
        rr: from_radar_rr.or(from_wearable_rr),
        hrv: wearable.and_then(|w| w.hrv_rmssd_ms),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CameraMetrics {
    pub perclos: Option<f64>,
    pub blink_rate_per_min: Option<f64>,
    pub long_blink_rate_per_min: Option<f64>,
    pub nod_rate_per_min: Option<f64>,
    pub attention: Option<Attention>,
    pub drowsiness_camera: Option<f64>,
}

/// Evaluate the ocular metrics on the trailing camera buffer ending at the tick.
///
/// Event rates are normalized by the full metric window, so they read low
/// until a whole window of data has been seen.
pub fn camera_metrics(snapshot: &AlignedSnapshot, cfg: &MetricsWindowConfig) -> Result<CameraMetrics> {
    let tick = snapshot.grid_ts;
    let window = Window::trailing(tick, cfg.perclos_window_ms);
    let in_window: Vec<_> = snapshot.camera_window.iter().filter(|s| s.ts >= window.start).copied().collect();
    if in_window.is_empty() {
        return Ok(CameraMetrics::default());
    }
    let perclos = ocular::perclos_over(&in_window, window, cfg.perclos_threshold)?;
    let blinks = ocular::detect_blinks(&in_window, cfg)?;
    let (blink_rate, long_rate) = ocular::blink_rates(&blinks, cfg.perclos_window_ms, cfg.long_blink_ms)?;
    let nods = ocular::detect_nods(&snapshot.camera_window, cfg)?;
    let nod_count = nods.iter().filter(|n| n.onset_ts >= window.start).count();
    let nod_rate = nod_count as f64 * 60_000.0 / cfg.perclos_window_ms as f64;
    let att_window = Window::trailing(tick, cfg.attention_window_ms);
    let att_samples: Vec<_> = in_window.iter().filter(|s| s.ts >= att_window.start).copied().collect();
    let attention = ocular::attention(&att_samples, att_window, cfg)?;
    let drowsiness_camera = perclos.map(|p| ocular::camera_drowsiness(p, long_rate, nod_rate, cfg));
    Ok(CameraMetrics {
        perclos,
        blink_rate_per_min: Some(blink_rate),
        long_blink_rate_per_min: Some(long_rate),
        nod_rate_per_min: Some(nod_rate),
        attention,
        drowsiness_camera,
    })
}

/// Composite drowsiness index; a single present channel is used on its own.
pub fn drowsiness_index(physio: Option<f64>, camera: Option<f64>, cfg: &WarningConfig) -> Option<f64> {
    match (physio, camera) {
        (Some(p), Some(c)) => Some(cfg.physio_weight * p + cfg.camera_weight * c),
        (Some(p), None) => Some(p),
        (None, Some(c)) => Some(c),
        (None, None) => None,
    }
}

/// Time a condition has held continuously, measured tick to tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Sustain {
    pub held_ms: i64,
    pub holding: bool,
}

impl Sustain {
    fn update(&mut self, holds: bool, dt_ms: i64) {
        if holds {
            self.held_ms = if self.holding { self.held_ms + dt_ms } else { 0 };
        } else {
            self.held_ms = 0;
        }
        self.holding = holds;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DrowsyLevel {
    Normal,
    Drowsy,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WarningState {
    pub current: WarningLevel,
    pub entered_at: Timestamp,
    pub level: DrowsyLevel,
    pub distracted: bool,
    pub warn: Sustain,
    pub critical: Sustain,
    pub clear: Sustain,
    pub inattentive: Sustain,
    last_tick: Option<Timestamp>,
    last_d_tick: Option<Timestamp>,
    last_attention_tick: Option<Timestamp>,
}

impl Default for WarningState {
    fn default() -> Self {
        WarningState {
            current: WarningLevel::Normal,
            entered_at: Timestamp(0),
            level: DrowsyLevel::Normal,
            distracted: false,
            warn: Sustain::default(),
            critical: Sustain::default(),
            clear: Sustain::default(),
            inattentive: Sustain::default(),
            last_tick: None,
            last_d_tick: None,
            last_attention_tick: None,
        }
    }
}

impl WarningState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_tick(&self) -> Option<Timestamp> {
        self.last_tick
    }
}

/// Advance the warning state machine by one grid tick.
///
/// Sustain timers accumulate the spacing between consecutive ticks that both
/// carry the input. An absent input freezes its timers: the interval spanning
/// the gap adds nothing, and a run in progress resumes where it stopped.
pub fn step_warning(
    state: &WarningState,
    d: Option<f64>,
    attention: Option<f64>,
    distraction_active: bool,
    grid_ts: Timestamp,
    cfg: &WarningConfig,
) -> Result<WarningState> {
    if let Some(last) = state.last_tick {
        if grid_ts <= last {
            return Err(Error::Validation(format!(
                "grid_ts {} not after previous tick {}",
                grid_ts.ms(),
                last.ms()
            )));
        }
    }
    let mut next = *state;
    if state.last_tick.is_none() {
        next.entered_at = grid_ts;
    }
    next.last_tick = Some(grid_ts);

    if let Some(d) = d {
        let dt = state.last_d_tick.map_or(0, |t| grid_ts.since(t));
        let contiguous = state.last_d_tick == state.last_tick && state.last_tick.is_some();
        let dt = if contiguous { dt } else { 0 };
        next.warn.update(d >= cfg.warn_threshold, dt);
        next.critical.update(d >= cfg.critical_threshold, dt);
        next.clear.update(d <= cfg.clear_threshold, dt);
        next.last_d_tick = Some(grid_ts);
        next.level = match state.level {
            DrowsyLevel::Normal | DrowsyLevel::Drowsy if next.critical.holding && next.critical.held_ms >= cfg.warn_sustain_ms => DrowsyLevel::Critical,
            DrowsyLevel::Normal if next.warn.holding && next.warn.held_ms >= cfg.warn_sustain_ms => DrowsyLevel::Drowsy,
            DrowsyLevel::Drowsy | DrowsyLevel::Critical if next.clear.holding && next.clear.held_ms >= cfg.clear_sustain_ms => DrowsyLevel::Normal,
            level => level,
        };
    }

    if let Some(a) = attention {
        let contiguous = state.last_attention_tick == state.last_tick && state.last_tick.is_some();
        let dt = if contiguous { state.last_attention_tick.map_or(0, |t| grid_ts.since(t)) } else { 0 };
        next.inattentive.update(a < cfg.attention_threshold, dt);
        next.last_attention_tick = Some(grid_ts);
        next.distracted =
            distraction_active || (next.inattentive.holding && next.inattentive.held_ms >= cfg.attention_sustain_ms);
    }

    let emitted = match next.level {
        DrowsyLevel::Critical => WarningLevel::Critical,
        DrowsyLevel::Drowsy => WarningLevel::DrowsyWarning,
        DrowsyLevel::Normal if next.distracted => WarningLevel::DistractionWarning,
        DrowsyLevel::Normal => WarningLevel::Normal,
    };
    if emitted != state.current {
        next.entered_at = grid_ts;
    }
    next.current = emitted;
    Ok(next)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub metrics: MetricsWindowConfig,
    pub reliability: ReliabilityConfig,
    pub warning: WarningConfig,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        self.metrics.validate()?;
        self.reliability.validate()?;
        self.warning.validate()
    }
}

/// Build the row for one snapshot and advance the warning state.
pub fn fuse_row(
    snapshot: &AlignedSnapshot,
    metrics: &CameraMetrics,
    state: &WarningState,
    cfg: &FusionConfig,
) -> Result<(FusedRow, WarningState)> {
    let tick = snapshot.grid_ts;
    let from = tick.offset(-cfg.reliability.radar_distance_window_ms);
    let window: Vec<_> = snapshot.radar_window.iter().filter(|s| s.ts >= from).copied().collect();
    let reliable = snapshot.radar_fresh() && radar_reliable(&window, &cfg.reliability);
    let channels = select_channels(snapshot, reliable);
    let physio = snapshot
        .wearable
        .map(|s| s.value)
        .filter(|w| w.worn)
        .and_then(|w| w.drowsiness_score);

    let q = |v: Option<f64>| v.map(quantize);
    let mut row = FusedRow::empty(tick);
    row.hr_bpm = q(channels.hr.map(|c| c.0));
    row.hr_source = channels.hr.map(|c| c.1);
    row.rr_bpm = q(channels.rr.map(|c| c.0));
    row.rr_source = channels.rr.map(|c| c.1);
    row.hrv_rmssd_ms = q(channels.hrv);
    row.drowsiness_physio = q(physio);
    if snapshot.camera_fresh() {
        row.perclos = q(metrics.perclos);
        row.blink_rate_per_min = q(metrics.blink_rate_per_min);
        row.long_blink_rate_per_min = q(metrics.long_blink_rate_per_min);
        row.attention = q(metrics.attention.map(|a| a.fraction));
        row.drowsiness_camera = q(metrics.drowsiness_camera);
    }
    row.radar_reliable = reliable;
    row.wearable_fresh = snapshot.wearable_fresh();
    row.camera_fresh = snapshot.camera_fresh();

    let d = drowsiness_index(row.drowsiness_physio, row.drowsiness_camera, &cfg.warning);
    let distraction_active = snapshot.camera_fresh() && metrics.attention.is_some_and(|a| a.distraction_active);
    let next = step_warning(state, d, row.attention, distraction_active, tick, &cfg.warning)?;
    row.warning = next.current;
    Ok((row, next))
}

/// A contiguous run of one non-normal warning level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarningEpisode {
    pub level: WarningLevel,
    pub start: Timestamp,
    /// Last tick of the episode; open episodes carry the latest tick so far.
    pub end: Timestamp,
}

/// Stateful wrapper running [`camera_metrics`] and [`fuse_row`] tick by tick.
#[derive(Debug, Clone)]
pub struct Fuser {
    cfg: FusionConfig,
    state: WarningState,
    episodes: Vec<WarningEpisode>,
    last_level: Option<WarningLevel>,
}

impl Fuser {
    pub fn new(cfg: FusionConfig) -> Self {
        Fuser {
            cfg,
            state: WarningState::new(),
            episodes: Vec::new(),
            last_level: None,
        }
    }

    pub fn state(&self) -> &WarningState {
        &self.state
    }

    pub fn episodes(&self) -> &[WarningEpisode] {
        &self.episodes
    }

    pub fn fuse(&mut self, snapshot: &AlignedSnapshot) -> Result<FusedRow> {
        let metrics = if snapshot.camera_fresh() {
            camera_metrics(snapshot, &self.cfg.metrics)?
        } else {
            CameraMetrics::default()
        };
        let (row, next) = fuse_row(snapshot, &metrics, &self.state, &self.cfg)?;
        self.state = next;
        if row.warning != WarningLevel::Normal {
            let continuing = self.last_level == Some(row.warning);
            match self.episodes.last_mut() {
                Some(ep) if continuing && ep.level == row.warning => ep.end = row.grid_ts,
                _ => self.episodes.push(WarningEpisode {
                    level: row.warning,
                    start: row.grid_ts,
                    end: row.grid_ts,
                }),
            }
        }
        self.last_level = Some(row.warning);
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CameraSample, WearableSample};

    fn radar_at(ts: i64, dist: f64, motion: bool) -> Stamped<RadarSample> {
        Stamped::new(
            Timestamp(ts),
            RadarSample {
                device_ts: ts as u32,
                hr_bpm: 68.0,
                rr_bpm: 14.0,
                distance_mm: dist,
                motion,
                presence: true,
            },
        )
    }

    fn wearable_at(ts: i64, worn: bool) -> Stamped<WearableSample> {
        Stamped::new(
            Timestamp(ts),
            WearableSample {
                device_ts: Timestamp(ts),
                hr_bpm: worn.then_some(71.0),
                rr_bpm: Some(16.0),
                hrv_rmssd_ms: Some(44.0),
                drowsiness_score: Some(0.3),
                worn,
            },
        )
    }

    fn snapshot(tick: i64) -> AlignedSnapshot {
        AlignedSnapshot {
            grid_ts: Timestamp(tick),
            radar: None,
            wearable: None,
            camera: None,
            radar_window: Vec::new(),
            camera_window: Vec::new(),
        }
    }

    fn stddev_oracle(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn reliability_examples() {
        let cfg = ReliabilityConfig::default();
        let steady: Vec<_> = (0..5).map(|i| radar_at(i * 1000, 800.0, false)).collect();
        assert!(radar_reliable(&steady, &cfg));
        let alternating: Vec<_> = (0..6).map(|i| radar_at(i * 1000, if i % 2 == 0 { 700.0 } else { 900.0 }, false)).collect();
        assert_eq!(stddev_oracle(&[700.0, 900.0, 700.0, 900.0, 700.0, 900.0]), 100.0);
        assert!(!radar_reliable(&alternating, &cfg));
        assert!(!radar_reliable(&[], &cfg));
        assert!(!radar_reliable(&steady[..1], &cfg));
        let moving: Vec<_> = (0..5).map(|i| radar_at(i * 1000, 800.0, i < 2)).collect();
        assert!(!radar_reliable(&moving, &cfg));
        let one_motion: Vec<_> = (0..5).map(|i| radar_at(i * 1000, 800.0, i == 0)).collect();
        assert!(radar_reliable(&one_motion, &cfg));
    }

    #[test]
    fn channel_selection_examples() {
        let mut s = snapshot(5000);
        s.radar = Some(radar_at(4800, 800.0, false));
        s.wearable = Some(wearable_at(4900, true));
        let c = select_channels(&s, true);
        assert_eq!(c.hr, Some((71.0, SourceId::Wearable)));
        assert_eq!(c.rr, Some((14.0, SourceId::Radar)));
        assert_eq!(c.hrv, Some(44.0));

        s.wearable = Some(wearable_at(4900, false));
        let c = select_channels(&s, true);
        assert_eq!(c.hr.map(|h| h.1), Some(SourceId::Radar));
        assert_eq!(c.rr.map(|h| h.1), Some(SourceId::Radar));
        assert_eq!(c.hrv, None);

        s.wearable = Some(wearable_at(4900, true));
        let c = select_channels(&s, false);
        assert_eq!(c.rr, Some((16.0, SourceId::Wearable)));

        assert_eq!(select_channels(&snapshot(5000), false), Channels::default());
    }

    #[test]
    fn drowsiness_index_examples() {
        let cfg = WarningConfig::default();
        assert!((drowsiness_index(Some(0.9), Some(0.5), &cfg).unwrap() - 0.74).abs() < 1e-12);
        assert_eq!(drowsiness_index(None, Some(0.5), &cfg), Some(0.5));
        assert_eq!(drowsiness_index(None, None, &cfg), None);
    }

    fn run(ds: &[Option<f64>], atts: &[Option<f64>]) -> Vec<WarningState> {
        let cfg = WarningConfig::default();
        let mut st = WarningState::new();
        let mut out = Vec::new();
        for (i, (d, a)) in ds.iter().zip(atts).enumerate() {
            st = step_warning(&st, *d, *a, false, Timestamp(i as i64 * 1000), &cfg).unwrap();
            out.push(st);
        }
        out
    }

    #[test]
    fn drowsy_warning_fires_after_full_sustain() {
        // D = 0.2 on ticks 0..=9, 0.7 from tick 10 (t0 = 10 s). The window
        // [t0, t0 + 10 s] is fully >= 0.6 first at tick 20.
        let ds: Vec<_> = (0..40).map(|i| Some(if i < 10 { 0.2 } else { 0.7 })).collect();
        let states = run(&ds, &vec![None; 40]);
        let first = states.iter().position(|s| s.current == WarningLevel::DrowsyWarning).unwrap();
        assert_eq!(first, 20);
        assert_eq!(states[first].entered_at, Timestamp(20_000));
    }

    #[test]
    fn short_excursion_stays_normal() {
        let ds: Vec<_> = (0..30).map(|i| Some(if i < 5 { 0.65 } else { 0.2 })).collect();
        assert!(run(&ds, &vec![None; 30]).iter().all(|s| s.current == WarningLevel::Normal));
    }

    #[test]
    fn low_attention_triggers_distraction() {
        // attention 0.3 on ticks 1..=4: 3 s held at tick 4
        let atts: Vec<_> = (0..6).map(|i| Some(if (1..=4).contains(&i) { 0.3 } else { 0.9 })).collect();
        let states = run(&vec![Some(0.1); 6], &atts);
        let levels: Vec<_> = states.iter().map(|s| s.current).collect();
        assert_eq!(levels[3], WarningLevel::Normal);
        assert_eq!(levels[4], WarningLevel::DistractionWarning);
        assert_eq!(levels[5], WarningLevel::Normal);
    }

    #[test]
    fn critical_outranks_distraction_and_absence_holds() {
        let mut ds = vec![Some(0.9); 15];
        ds.extend(vec![None; 60]);
        let states = run(&ds, &vec![Some(0.1); 75]);
        assert_eq!(states[10].current, WarningLevel::Critical);
        assert!(states[10].distracted);
        assert!(states.iter().skip(10).all(|s| s.current == WarningLevel::Critical));
    }

    #[test]
    fn clears_after_clear_sustain() {
        let mut ds = vec![Some(0.7); 12];
        ds.extend(vec![Some(0.4); 40]);
        let states = run(&ds, &vec![None; 52]);
        assert_eq!(states[11].current, WarningLevel::DrowsyWarning);
        // low from tick 12; 30 s held at tick 42
        assert_eq!(states[41].current, WarningLevel::DrowsyWarning);
        assert_eq!(states[42].current, WarningLevel::Normal);
    }

    #[test]
    fn gap_freezes_sustain() {
        let mut ds = vec![Some(0.7); 8];
        ds.push(None);
        ds.extend(vec![Some(0.7); 12]);
        let states = run(&ds, &vec![None; ds.len()]);
        // 7 s held by tick 7, frozen over the gap, 10 s reached at tick 12
        let first = states.iter().position(|s| s.current == WarningLevel::DrowsyWarning).unwrap();
        assert_eq!(first, 12);
    }

    #[test]
    fn non_monotone_tick_rejected() {
        let cfg = WarningConfig::default();
        let st = step_warning(&WarningState::new(), None, None, false, Timestamp(1000), &cfg).unwrap();
        assert!(matches!(
            step_warning(&st, None, None, false, Timestamp(1000), &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn fused_row_quantizes_and_pairs_sources() {
        let mut s = snapshot(5000);
        s.radar = Some(radar_at(4800, 800.0, false));
        s.radar_window = (0..5).map(|i| radar_at(800 + i * 1000, 800.0, false)).collect();
        let mut w = wearable_at(4900, true);
        w.value.hr_bpm = Some(71.123456);
        s.wearable = Some(w);
        let (row, _) = fuse_row(&s, &CameraMetrics::default(), &WarningState::new(), &FusionConfig::default()).unwrap();
        assert_eq!(row.hr_bpm, Some(71.1235));
        assert!(row.radar_reliable && row.wearable_fresh && !row.camera_fresh);
        assert_eq!(row.drowsiness_physio, Some(0.3));
        row.validate().unwrap();
    }

    #[test]
    fn camera_metrics_on_open_eyes() {
        let mut s = snapshot(60_000);
        s.camera_window = (0..=600)
            .map(|i| {
                let ts = Timestamp(i * 100);
                Stamped::new(
                    ts,
                    CameraSample {
                        device_ts: ts,
                        aperture: Some(0.9),
                        gaze_yaw_deg: Some(0.0),
                        gaze_pitch_deg: Some(0.0),
                        head_yaw_deg: Some(0.0),
                        head_pitch_deg: Some(0.0),
                        head_roll_deg: Some(0.0),
                        face_detected: true,
                    },
                )
            })
            .collect();
        s.camera = s.camera_window.last().copied();
        let m = camera_metrics(&s, &MetricsWindowConfig::default()).unwrap();
        assert_eq!(m.perclos, Some(0.0));
        assert_eq!(m.blink_rate_per_min, Some(0.0));
        assert_eq!(m.attention.map(|a| a.fraction), Some(1.0));
        assert_eq!(m.drowsiness_camera, Some(0.0));
    }

    #[test]
    fn quantize_is_exact_for_four_digit_text() {
        for x in [0.1235, 71.1234999, -0.00004, 1.0 / 3.0] {
            let q = quantize(x);
            assert_eq!(format!("{q:.4}").parse::<f64>().unwrap(), q);
        }
        assert_eq!(quantize(-0.00004).to_string(), "0");
    }
}
