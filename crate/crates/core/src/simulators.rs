//! Deterministic sensor simulators driven by a [`ScenarioScript`].
//!
//! Every source draws from its own seeded RNG stream, so adding or removing
//! one source's samples never perturbs another's. The same script and seed
//! always produce byte-identical output.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraSample, Payload, RadarSample, SourceId, Timestamp, TimedRecord, WearableSample};
use crate::radar::{encode_frame, FRAME_LEN};

/// Resting physiological drowsiness level the wearable score sits at.
pub const BASELINE_LEVEL: f64 = 0.1;

const ALERT_BLINKS_PER_MIN: f64 = 15.0;
const EXTRA_BLINKS_PER_MIN: f64 = 10.0;
const LONG_BLINK_SHARE: f64 = 0.8;
const CLOSED_APERTURE: f64 = 0.05;
const OPEN_APERTURE: f64 = 0.9;
const NOD_DEPTH_DEG: f64 = 25.0;
const NOD_DIP_MS: i64 = 300;
const NOD_HOLD_MS: i64 = 600;
const NOD_RISE_MS: i64 = 400;

fn default_epoch() -> i64 {
    1_700_000_000_000
}

fn default_session() -> String {
    "sim".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceParams {
    pub enabled: bool,
    pub rate_hz: f64,
    /// Device clock minus session clock.
    pub clock_offset_ms: i64,
    /// Upper bound of the uniform delay between sampling and wall stamping.
    pub jitter_ms: i64,
    /// Offset of the first sample from the session start.
    pub phase_ms: i64,
}

impl SourceParams {
    fn with_rate(rate_hz: f64, phase_ms: i64) -> Self {
        SourceParams {
            enabled: true,
            rate_hz,
            clock_offset_ms: 0,
            jitter_ms: 0,
            phase_ms,
        }
    }

    fn period_ms(&self) -> f64 {
        1000.0 / self.rate_hz
    }
}

impl Default for SourceParams {
    fn default() -> Self {
        Self::with_rate(1.0, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSources {
    pub radar: SourceParams,
    pub wearable: SourceParams,
    pub camera: SourceParams,
}

impl Default for ScenarioSources {
    fn default() -> Self {
        ScenarioSources {
            radar: SourceParams::with_rate(1.0, 250),
            wearable: SourceParams::with_rate(1.0, 0),
            camera: SourceParams::with_rate(10.0, 0),
        }
    }
}

impl ScenarioSources {
    pub fn get(&self, source: SourceId) -> Option<&SourceParams> {
        match source {
            SourceId::Radar => Some(&self.radar),
            SourceId::Wearable => Some(&self.wearable),
            SourceId::Camera => Some(&self.camera),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentKind {
    /// Physiological level back to baseline.
    Alert,
    /// Linear rise of the physiological level to `target`. The camera
    /// signs follow the same ramp `camera_lag_ms` later.
    DrowsyRamp {
        target: f64,
        #[serde(default)]
        camera_lag_ms: i64,
    },
    Distracted { gaze_yaw_deg: f64 },
    Dropout { source: SourceId },
    Motion,
    NodBurst { rate_per_min: f64 },
}

impl SegmentKind {
    /// Segments sharing a channel may not overlap.
    fn channel(&self) -> String {
        match self {
            SegmentKind::Alert | SegmentKind::DrowsyRamp { .. } => "level".into(),
            SegmentKind::Distracted { .. } => "gaze".into(),
            SegmentKind::Dropout { source } => format!("dropout:{source}"),
            SegmentKind::Motion => "motion".into(),
            SegmentKind::NodBurst { .. } => "nod".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t0_ms: i64,
    pub t1_ms: i64,
    #[serde(flatten)]
    pub kind: SegmentKind,
}

impl Segment {
    fn contains(&self, t: i64) -> bool {
        self.t0_ms <= t && t < self.t1_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub seed: u64,
    pub duration_ms: i64,
    #[serde(default = "default_epoch")]
    pub epoch_ms: i64,
    #[serde(default = "default_session")]
    pub session_id: String,
    #[serde(default)]
    pub sources: ScenarioSources,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self> {
        let script: ScenarioScript = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_ms <= 0 {
            return Err(Error::validation("duration_ms must be positive"));
        }
        if self.epoch_ms < 0 {
            return Err(Error::validation("epoch_ms must be non-negative"));
        }
        for source in SourceId::SENSORS {
            let p = self.sources.get(source).expect("sensor");
            if !(p.rate_hz > 0.0 && p.rate_hz.is_finite()) {
                return Err(Error::Validation(format!("{source}: rate_hz must be positive")));
            }
            if p.jitter_ms < 0 || p.phase_ms < 0 {
                return Err(Error::Validation(format!("{source}: jitter_ms and phase_ms must be non-negative")));
            }
        }
        let mut by_channel: BTreeMap<String, Vec<&Segment>> = BTreeMap::new();
        for seg in &self.segments {
            if seg.t1_ms <= seg.t0_ms || seg.t0_ms < 0 {
                return Err(Error::Validation(format!("segment [{}, {}) is empty or negative", seg.t0_ms, seg.t1_ms)));
            }
            match &seg.kind {
                SegmentKind::DrowsyRamp { target, camera_lag_ms } => {
                    if !(0.0..=1.0).contains(target) || *camera_lag_ms < 0 {
                        return Err(Error::validation("drowsy_ramp target must be in [0, 1] and camera_lag_ms >= 0"));
                    }
                }
                SegmentKind::Distracted { gaze_yaw_deg } if !(-90.0..=90.0).contains(gaze_yaw_deg) => {
                    return Err(Error::validation("distracted gaze_yaw_deg must be in [-90, 90]"));
                }
                SegmentKind::Dropout { source } if !source.is_sensor() => {
                    return Err(Error::Validation(format!("cannot drop out {source}")));
                }
                SegmentKind::NodBurst { rate_per_min } if !(*rate_per_min > 0.0 && *rate_per_min <= 30.0) => {
                    return Err(Error::validation("nod_burst rate_per_min must be in (0, 30]"));
                }
                _ => {}
            }
            by_channel.entry(seg.kind.channel()).or_default().push(seg);
        }
        for (channel, mut segs) in by_channel {
            segs.sort_by_key(|s| s.t0_ms);
            if segs.windows(2).any(|w| w[1].t0_ms < w[0].t1_ms) {
                return Err(Error::Validation(format!("overlapping {channel} segments")));
            }
        }
        Ok(())
    }

    fn level_segments(&self) -> Vec<&Segment> {
        let mut segs: Vec<_> = self
            .segments
            .iter()
            .filter(|s| matches!(s.kind, SegmentKind::Alert | SegmentKind::DrowsyRamp { .. }))
            .collect();
        segs.sort_by_key(|s| s.t0_ms);
        segs
    }

    fn level_at(&self, t: i64, camera: bool) -> f64 {
        let mut level = BASELINE_LEVEL;
        for seg in self.level_segments() {
            let (t0, t1, target) = match seg.kind {
                SegmentKind::Alert => (seg.t0_ms, seg.t0_ms, BASELINE_LEVEL),
                SegmentKind::DrowsyRamp { target, camera_lag_ms } => {
                    let lag = if camera { camera_lag_ms } else { 0 };
                    (seg.t0_ms + lag, seg.t1_ms + lag, target)
                }
                _ => unreachable!(),
            };
            if t < t0 {
                break;
            }
            level = if t >= t1 {
                target
            } else {
                level + (target - level) * (t - t0) as f64 / (t1 - t0) as f64
            };
        }
        level
    }

    /// Scripted physiological drowsiness level at session time `t`.
    pub fn physio_level(&self, t: i64) -> f64 {
        self.level_at(t, false)
    }

    /// Drowsiness expressed by the eyes and head at `t`, in [0, 1].
    pub fn camera_intensity(&self, t: i64) -> f64 {
        ((self.level_at(t, true) - BASELINE_LEVEL) / (1.0 - BASELINE_LEVEL)).clamp(0.0, 1.0)
    }

    fn active(&self, t: i64, pred: impl Fn(&SegmentKind) -> bool) -> Option<&Segment> {
        self.segments.iter().find(|s| pred(&s.kind) && s.contains(t))
    }

    pub fn dropped(&self, source: SourceId, t: i64) -> bool {
        self.active(t, |k| matches!(k, SegmentKind::Dropout { source: s } if *s == source)).is_some()
    }

    pub fn in_motion(&self, t: i64) -> bool {
        self.active(t, |k| matches!(k, SegmentKind::Motion)).is_some()
    }

    pub fn gaze_yaw(&self, t: i64) -> Option<f64> {
        match self.active(t, |k| matches!(k, SegmentKind::Distracted { .. })).map(|s| &s.kind) {
            Some(SegmentKind::Distracted { gaze_yaw_deg }) => Some(*gaze_yaw_deg),
            _ => None,
        }
    }

    /// The built-in 20-minute wakefulness-test script: an alert phase with a
    /// short distraction, a motion episode, a brief wearable dropout, then a
    /// drowsy ramp whose camera signs lag the physiological ones.
    pub fn mwt_drowsy_ramp(seed: u64) -> Self {
        let text = include_str!("../scenarios/mwt_drowsy_ramp.json");
        let mut script = Self::from_json(text).expect("bundled scenario is valid");
        script.seed = seed;
        script
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthTick {
    pub ts: Timestamp,
    pub physio_level: f64,
    pub camera_intensity: f64,
    pub gaze_on_road: bool,
    pub motion: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// One entry per second of session time.
    pub ticks: Vec<TruthTick>,
    pub dropouts: Vec<(SourceId, TruthEvent)>,
    pub blinks: Vec<TruthEvent>,
    pub long_blinks: usize,
    pub nods: Vec<TruthEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub records: BTreeMap<SourceId, Vec<TimedRecord>>,
    /// Concatenated radar frames, in the order the device would send them.
    pub radar_bytes: Vec<u8>,
    pub truth: GroundTruth,
}

impl Generated {
    /// Every record of every source, ordered by wall time.
    pub fn all_records(&self) -> Vec<TimedRecord> {
        let mut all: Vec<_> = self.records.values().flatten().cloned().collect();
        all.sort_by_key(|r| (r.wall_ts_ms, r.source, r.seq));
        all
    }

    /// Radar frames paired with their wall times, for transports that carry bytes.
    pub fn radar_frames(&self) -> Vec<(Timestamp, &[u8])> {
        self.records
            .get(&SourceId::Radar)
            .map(|rs| {
                rs.iter()
                    .zip(self.radar_bytes.chunks(FRAME_LEN))
                    .map(|(r, bytes)| (r.wall_ts_ms, bytes))
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn rng_for(seed: u64, source: SourceId) -> ChaCha8Rng {
    let stream = match source {
        SourceId::Radar => 1,
        SourceId::Wearable => 2,
        SourceId::Camera => 3,
        _ => 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("positive standard deviation")
}

/// Round to `1 / per_unit`, dividing last so the result is the nearest double.
fn round_to(x: f64, per_unit: f64) -> f64 {
    (x * per_unit).round() / per_unit
}

struct Clock {
    params: SourceParams,
    epoch: i64,
}

impl Clock {
    fn sample_times(&self, duration: i64) -> impl Iterator<Item = i64> + '_ {
        let period = self.params.period_ms();
        (0..)
            .map(move |k| self.params.phase_ms + (k as f64 * period).round() as i64)
            .take_while(move |t| *t < duration)
    }

    fn wall(&self, t: i64, rng: &mut ChaCha8Rng) -> Timestamp {
        let jitter = if self.params.jitter_ms > 0 {
            rng.random_range(0..=self.params.jitter_ms)
        } else {
            0
        };
        Timestamp(self.epoch + t + jitter)
    }
}

/// Produce every source's records, the radar byte stream and the ground truth.
pub fn generate(script: &ScenarioScript) -> Result<Generated> {
    script.validate()?;
    let mut records = BTreeMap::new();
    let mut truth = GroundTruth::default();
    let mut radar_bytes = Vec::new();

    if script.sources.radar.enabled {
        let (recs, bytes) = gen_radar(script)?;
        records.insert(SourceId::Radar, recs);
        radar_bytes = bytes;
    }
    if script.sources.wearable.enabled {
        records.insert(SourceId::Wearable, gen_wearable(script));
    }
    if script.sources.camera.enabled {
        records.insert(SourceId::Camera, gen_camera(script, &mut truth));
    }

    let mut t = 0;
    while t < script.duration_ms {
        truth.ticks.push(TruthTick {
            ts: Timestamp(script.epoch_ms + t),
            physio_level: script.physio_level(t),
            camera_intensity: script.camera_intensity(t),
            gaze_on_road: script.gaze_yaw(t).is_none_or(|y| y.abs() <= 15.0),
            motion: script.in_motion(t),
        });
        t += 1000;
    }
    for seg in &script.segments {
        if let SegmentKind::Dropout { source } = seg.kind {
            truth.dropouts.push((
                source,
                TruthEvent {
                    start: Timestamp(script.epoch_ms + seg.t0_ms),
                    end: Timestamp(script.epoch_ms + seg.t1_ms),
                },
            ));
        }
    }
    Ok(Generated {
        records,
        radar_bytes,
        truth,
    })
}

fn gen_radar(script: &ScenarioScript) -> Result<(Vec<TimedRecord>, Vec<u8>)> {
    let mut rng = rng_for(script.seed, SourceId::Radar);
    let clock = Clock {
        params: script.sources.radar,
        epoch: script.epoch_ms,
    };
    let (hr_noise, rr_noise, dist_noise) = (normal(1.0), normal(0.5), normal(3.0));
    let mut out = Vec::new();
    let mut bytes = Vec::new();
    for t in clock.sample_times(script.duration_ms) {
        // Draw unconditionally so dropouts do not shift later samples.
        let hr = 70.0 + hr_noise.sample(&mut rng);
        let rr = 15.0 + rr_noise.sample(&mut rng);
        let still = 800.0 + dist_noise.sample(&mut rng);
        let swing = rng.random_range(100.0..250.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let wall = clock.wall(t, &mut rng);
        if script.dropped(SourceId::Radar, t) {
            continue;
        }
        let motion = script.in_motion(t);
        let frame = RadarSample {
            device_ts: (t + clock.params.clock_offset_ms).rem_euclid(1 << 32) as u32,
            hr_bpm: round_to(hr.clamp(30.0, 200.0), 10.0),
            rr_bpm: round_to(rr.clamp(4.0, 40.0), 10.0),
            distance_mm: (if motion { 800.0 + swing } else { still }).round(),
            motion,
            presence: true,
        };
        bytes.extend_from_slice(&encode_frame(&frame)?);
        let seq = out.len() as u64;
        out.push(TimedRecord::new(
            &script.session_id,
            seq,
            i64::from(frame.device_ts),
            wall,
            Payload::Radar(frame),
        ));
    }
    Ok((out, bytes))
}

fn gen_wearable(script: &ScenarioScript) -> Vec<TimedRecord> {
    let mut rng = rng_for(script.seed, SourceId::Wearable);
    let clock = Clock {
        params: script.sources.wearable,
        epoch: script.epoch_ms,
    };
    let (hr_noise, rr_noise, hrv_noise, score_noise) = (normal(1.5), normal(0.7), normal(3.0), normal(0.02));
    let mut out = Vec::new();
    for t in clock.sample_times(script.duration_ms) {
        let hr = 70.0 + hr_noise.sample(&mut rng);
        let rr = 15.0 + rr_noise.sample(&mut rng);
        let hrv = 45.0 + hrv_noise.sample(&mut rng);
        let score = script.physio_level(t) + score_noise.sample(&mut rng);
        let wall = clock.wall(t, &mut rng);
        if script.dropped(SourceId::Wearable, t) {
            continue;
        }
        let device = script.epoch_ms + t + clock.params.clock_offset_ms;
        let sample = WearableSample {
            device_ts: Timestamp(device),
            hr_bpm: Some(round_to(hr, 10.0)),
            rr_bpm: Some(round_to(rr, 10.0)),
            hrv_rmssd_ms: Some(round_to(hrv.max(1.0), 10.0)),
            drowsiness_score: Some(round_to(score.clamp(0.0, 1.0), 1000.0)),
            worn: true,
        };
        let seq = out.len() as u64;
        out.push(TimedRecord::new(&script.session_id, seq, device, wall, Payload::Wearable(sample)));
    }
    out
}

/// Pitch offset of a nod `dt` ms after its onset.
fn nod_profile(dt: i64) -> f64 {
    if dt < NOD_DIP_MS {
        -NOD_DEPTH_DEG * dt as f64 / NOD_DIP_MS as f64
    } else if dt < NOD_DIP_MS + NOD_HOLD_MS {
        -NOD_DEPTH_DEG
    } else {
        let rise = (dt - NOD_DIP_MS - NOD_HOLD_MS) as f64 / NOD_RISE_MS as f64;
        -NOD_DEPTH_DEG * (1.0 - rise).max(0.0)
    }
}

const NOD_TOTAL_MS: i64 = NOD_DIP_MS + NOD_HOLD_MS + NOD_RISE_MS;

fn gen_camera(script: &ScenarioScript, truth: &mut GroundTruth) -> Vec<TimedRecord> {
    let mut rng = rng_for(script.seed, SourceId::Camera);
    let epoch = script.epoch_ms;

    // Eye and head events are scheduled in continuous time first.
    let mut blinks: Vec<(i64, i64)> = Vec::new();
    let mut t = rng.random_range(0..4000);
    while t < script.duration_ms {
        let e = script.camera_intensity(t);
        let long = rng.random_bool((LONG_BLINK_SHARE * e).clamp(0.0, 1.0));
        let len = if long {
            rng.random_range(520..650)
        } else {
            rng.random_range(150..=250)
        };
        blinks.push((t, t + len));
        if long {
            truth.long_blinks += 1;
        }
        let per_min = ALERT_BLINKS_PER_MIN + EXTRA_BLINKS_PER_MIN * e;
        let mean_gap = 60_000.0 / per_min;
        t += len + (mean_gap * rng.random_range(0.6..1.4)) as i64;
    }
    let mut nods: Vec<i64> = Vec::new();
    for seg in &script.segments {
        if let SegmentKind::NodBurst { rate_per_min } = seg.kind {
            let gap = 60_000.0 / rate_per_min;
            let mut t = seg.t0_ms + rng.random_range(0..(gap as i64).max(1));
            while t + NOD_TOTAL_MS <= seg.t1_ms {
                nods.push(t);
                t += (gap * rng.random_range(0.8..1.2)) as i64;
            }
        }
    }
    nods.sort_unstable();

    let clock = Clock {
        params: script.sources.camera,
        epoch,
    };
    let (open_noise, angle_noise) = (normal(0.02), normal(1.0));
    let mut out = Vec::new();
    let mut blink_idx = 0;
    let mut nod_idx = 0;
    for t in clock.sample_times(script.duration_ms) {
        while blink_idx < blinks.len() && blinks[blink_idx].1 <= t {
            blink_idx += 1;
        }
        while nod_idx < nods.len() && nods[nod_idx] + NOD_TOTAL_MS <= t {
            nod_idx += 1;
        }
        let closed = blinks.get(blink_idx).is_some_and(|(s, _)| *s <= t);
        let aperture = if closed {
            CLOSED_APERTURE + rng.random_range(0.0..0.03)
        } else {
            OPEN_APERTURE + open_noise.sample(&mut rng)
        };
        let nod = nods.get(nod_idx).filter(|s| **s <= t).map_or(0.0, |s| nod_profile(t - s));
        let yaw_target = script.gaze_yaw(t).unwrap_or(0.0);
        let gaze_yaw = yaw_target + 2.0 * angle_noise.sample(&mut rng);
        let gaze_pitch = 2.0 * angle_noise.sample(&mut rng) + nod * 0.5;
        let head_yaw = yaw_target * 0.5 + angle_noise.sample(&mut rng);
        let head_pitch = nod + angle_noise.sample(&mut rng);
        let head_roll = angle_noise.sample(&mut rng);
        let wall = clock.wall(t, &mut rng);
        if script.dropped(SourceId::Camera, t) {
            continue;
        }
        let device = epoch + t + clock.params.clock_offset_ms;
        let deg = |x: f64| Some(round_to(x.clamp(-90.0, 90.0), 10.0));
        let sample = CameraSample {
            device_ts: Timestamp(device),
            aperture: Some(round_to(aperture.clamp(0.0, 1.0), 1000.0)),
            gaze_yaw_deg: deg(gaze_yaw),
            gaze_pitch_deg: deg(gaze_pitch),
            head_yaw_deg: deg(head_yaw),
            head_pitch_deg: deg(head_pitch),
            head_roll_deg: deg(head_roll),
            face_detected: true,
        };
        let seq = out.len() as u64;
        out.push(TimedRecord::new(&script.session_id, seq, device, wall, Payload::Camera(sample)));
    }
    truth.blinks = blinks
        .into_iter()
        .map(|(s, e)| TruthEvent {
            start: Timestamp(epoch + s),
            end: Timestamp(epoch + e),
        })
        .collect();
    truth.nods = nods
        .into_iter()
        .map(|s| TruthEvent {
            start: Timestamp(epoch + s),
            end: Timestamp(epoch + s + NOD_TOTAL_MS),
        })
        .collect();
    out
}
