//! Camera-derived indicators: PERCLOS, blink events and rates, gaze-on-road
//! attention, head nods, and the composite camera drowsiness level.
//!
//! Every function works on a time-sorted series of [`Stamped<CameraSample>`]
//! and treats the series as piecewise constant: each sample holds its value
//! until the next sample (or the end of the evaluation window).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraSample, Stamped, Timestamp};

/// Baseline span for the rolling head-pitch median used by nod detection.
const NOD_BASELINE_MS: i64 = 10_000;
/// A nod must come back up within this long after onset.
const NOD_RECOVERY_MS: i64 = 3_000;

// Saturation points of the composite camera score.
const PERCLOS_SATURATION: f64 = 0.15;
const LONG_BLINK_SATURATION_PER_MIN: f64 = 6.0;
const NOD_SATURATION_PER_MIN: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraWeights {
    pub perclos: f64,
    pub long_blink: f64,
    pub nod: f64,
}

impl Default for CameraWeights {
    fn default() -> Self {
        CameraWeights {
            perclos: 0.5,
            long_blink: 0.3,
            nod: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsWindowConfig {
    /// Closure (1 - aperture) at or above which the eye counts as closed.
    pub perclos_threshold: f64,
    pub perclos_window_ms: i64,
    pub blink_close_threshold: f64,
    pub blink_reopen_threshold: f64,
    pub long_blink_ms: i64,
    pub gaze_yaw_limit_deg: f64,
    pub gaze_pitch_limit_deg: f64,
    pub distraction_dwell_ms: i64,
    /// Trailing span over which the attention fraction is evaluated.
    pub attention_window_ms: i64,
    pub nod_drop_deg: f64,
    pub camera_weights: CameraWeights,
}

impl Default for MetricsWindowConfig {
    fn default() -> Self {
        MetricsWindowConfig {
            perclos_threshold: 0.8,
            perclos_window_ms: 60_000,
            blink_close_threshold: 0.8,
            blink_reopen_threshold: 0.6,
            long_blink_ms: 500,
            gaze_yaw_limit_deg: 15.0,
            gaze_pitch_limit_deg: 10.0,
            distraction_dwell_ms: 2_000,
            attention_window_ms: 10_000,
            nod_drop_deg: 20.0,
            camera_weights: CameraWeights::default(),
        }
    }
}

impl MetricsWindowConfig {
    /// The P70 variant evaluated over one minute.
    pub fn p70_one_minute() -> Self {
        MetricsWindowConfig {
            perclos_threshold: 0.7,
            perclos_window_ms: 60_000,
            ..Self::default()
        }
    }

    /// The P80 variant evaluated over thirty seconds.
    pub fn p80_half_minute() -> Self {
        MetricsWindowConfig {
            perclos_threshold: 0.8,
            perclos_window_ms: 30_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("metrics.{name} = {v} must be in (0, 1]")))
            }
        };
        unit("perclos_threshold", self.perclos_threshold)?;
        unit("blink_close_threshold", self.blink_close_threshold)?;
        if !(self.blink_reopen_threshold > 0.0 && self.blink_reopen_threshold < self.blink_close_threshold) {
            return Err(Error::validation(
                "metrics: need 0 < blink_reopen_threshold < blink_close_threshold",
            ));
        }
        for (name, v) in [
            ("perclos_window_ms", self.perclos_window_ms),
            ("long_blink_ms", self.long_blink_ms),
            ("attention_window_ms", self.attention_window_ms),
        ] {
            if v <= 0 {
                return Err(Error::Validation(format!("metrics.{name} must be positive")));
            }
        }
        if self.distraction_dwell_ms < 0 {
            return Err(Error::validation("metrics.distraction_dwell_ms must be non-negative"));
        }
        for (name, v) in [
            ("gaze_yaw_limit_deg", self.gaze_yaw_limit_deg),
            ("gaze_pitch_limit_deg", self.gaze_pitch_limit_deg),
            ("nod_drop_deg", self.nod_drop_deg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("metrics.{name} must be positive")));
            }
        }
        let w = self.camera_weights;
        if [w.perclos, w.long_blink, w.nod].iter().any(|x| *x < 0.0) || (w.perclos + w.long_blink + w.nod - 1.0).abs() > 1e-9 {
            return Err(Error::validation("metrics.camera_weights must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

/// Closed evaluation interval `[start, end]` on the session timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        Window { start, end }
    }

    /// The `len_ms` long window ending at `end`.
    pub fn trailing(end: Timestamp, len_ms: i64) -> Self {
        Window {
            start: end.offset(-len_ms),
            end,
        }
    }

    pub fn len_ms(&self) -> i64 {
        self.end.since(self.start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlinkEvent {
    pub close_ts: Timestamp,
    pub reopen_ts: Timestamp,
    pub duration_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodEvent {
    pub onset_ts: Timestamp,
    /// Peak downward excursion below the rolling baseline.
    pub drop_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attention {
    /// Time-weighted fraction of the observed span with gaze on the road.
    pub fraction: f64,
    pub distraction_active: bool,
}

fn check_sorted(samples: &[Stamped<CameraSample>]) -> Result<()> {
    if samples.windows(2).any(|w| w[1].ts <= w[0].ts) {
        return Err(Error::validation("camera samples must have strictly increasing timestamps"));
    }
    Ok(())
}

fn check_in_window(samples: &[Stamped<CameraSample>], window: Window) -> Result<()> {
    if window.end < window.start {
        return Err(Error::validation("window end precedes start"));
    }
    if samples.iter().any(|s| s.ts < window.start || s.ts > window.end) {
        return Err(Error::validation("camera sample outside the evaluation window"));
    }
    Ok(())
}

/// Iterate `(sample, held_ms)` pairs: each sample holds until the next one,
/// the last one until the window end.
fn held<'a>(samples: &'a [Stamped<CameraSample>], end: Timestamp) -> impl Iterator<Item = (&'a CameraSample, i64)> + 'a {
    samples.iter().enumerate().map(move |(i, s)| {
        let until = samples.get(i + 1).map_or(end, |n| n.ts);
        (&s.value, until.since(s.ts))
    })
}

/// PERCLOS over the window of `cfg.perclos_window_ms` that starts at the first sample.
pub fn perclos(samples: &[Stamped<CameraSample>], cfg: &MetricsWindowConfig) -> Result<Option<f64>> {
    if samples.len() < 2 {
        return Err(Error::validation("perclos needs at least two samples"));
    }
    let start = samples[0].ts;
    perclos_over(samples, Window::new(start, start.offset(cfg.perclos_window_ms)), cfg.perclos_threshold)
}

/// Fraction of observed time in `window` with closure at or above `threshold`.
///
/// Face-lost intervals are left out of both numerator and denominator, as is
/// any part of the window before the first sample. Returns `None` when no
/// eyelid data was observed at all.
pub fn perclos_over(samples: &[Stamped<CameraSample>], window: Window, threshold: f64) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Err(Error::validation("perclos needs at least one sample"));
    }
    check_sorted(samples)?;
    check_in_window(samples, window)?;
    let (mut closed, mut observed) = (0i64, 0i64);
    for (sample, dt) in held(samples, window.end) {
        if let Some(c) = sample.closure() {
            observed += dt;
            if c >= threshold {
                closed += dt;
            }
        }
    }
    Ok((observed > 0).then(|| closed as f64 / observed as f64))
}

/// Hysteresis blink detector on eyelid closure.
///
/// An event opens when closure rises to `blink_close_threshold` and closes when
/// it falls to `blink_reopen_threshold`. Losing the face aborts an open event
/// and an event still open at the end of the series is dropped.
pub fn detect_blinks(samples: &[Stamped<CameraSample>], cfg: &MetricsWindowConfig) -> Result<Vec<BlinkEvent>> {
    check_sorted(samples)?;
    let mut events = Vec::new();
    // `armed` means the eye has been seen below the close threshold, so a
    // subsequent reading at or above it is a genuine crossing.
    let mut armed = false;
    let mut open: Option<Timestamp> = None;
    for s in samples {
        let Some(c) = s.value.closure() else {
            armed = false;
            open = None;
            continue;
        };
        match open {
            None if c >= cfg.blink_close_threshold => {
                if armed {
                    open = Some(s.ts);
                }
            }
            None => armed = true,
            Some(close_ts) if c <= cfg.blink_reopen_threshold => {
                events.push(BlinkEvent {
                    close_ts,
                    reopen_ts: s.ts,
                    duration_ms: s.ts.since(close_ts),
                });
                open = None;
                armed = true;
            }
            Some(_) => {}
        }
    }
    Ok(events)
}

/// Per-minute blink and long-blink rates over `window_ms`.
pub fn blink_rates(events: &[BlinkEvent], window_ms: i64, long_blink_ms: i64) -> Result<(f64, f64)> {
    if window_ms <= 0 {
        return Err(Error::validation("blink rate window must be positive"));
    }
    let per_min = 60_000.0 / window_ms as f64;
    let long = events.iter().filter(|e| e.duration_ms >= long_blink_ms).count();
    Ok((events.len() as f64 * per_min, long as f64 * per_min))
}

fn on_road(s: &CameraSample, cfg: &MetricsWindowConfig) -> bool {
    match (s.face_detected, s.gaze_yaw_deg, s.gaze_pitch_deg) {
        (true, Some(yaw), Some(pitch)) => yaw.abs() <= cfg.gaze_yaw_limit_deg && pitch.abs() <= cfg.gaze_pitch_limit_deg,
        _ => false,
    }
}

/// Gaze-on-road fraction over the observed part of `window`, and whether the
/// trailing off-road dwell has lasted at least `distraction_dwell_ms`.
/// A lost face counts as off-road. `None` for an empty series.
pub fn attention(samples: &[Stamped<CameraSample>], window: Window, cfg: &MetricsWindowConfig) -> Result<Option<Attention>> {
    let Some(first) = samples.first() else {
        return Ok(None);
    };
    check_sorted(samples)?;
    check_in_window(samples, window)?;
    let span = window.end.since(first.ts);
    let on: i64 = held(samples, window.end)
        .filter(|(s, _)| on_road(s, cfg))
        .map(|(_, dt)| dt)
        .sum();
    let fraction = if span > 0 {
        on as f64 / span as f64
    } else if on_road(&first.value, cfg) {
        1.0
    } else {
        0.0
    };
    let dwell_start = samples
        .iter()
        .rev()
        .take_while(|s| !on_road(&s.value, cfg))
        .last()
        .map(|s| s.ts);
    let distraction_active = dwell_start.is_some_and(|t| window.end.since(t) >= cfg.distraction_dwell_ms);
    Ok(Some(Attention {
        fraction,
        distraction_active,
    }))
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

enum NodState {
    Idle,
    Dipping { onset: Timestamp, baseline: f64, lowest: f64 },
    /// Excursion outlasted the recovery bound; wait for the head to come back.
    Holding,
}

/// Head-nod detector.
///
/// A nod starts when head pitch falls at least `nod_drop_deg` below the median
/// pitch of the preceding 10 s and ends when pitch climbs back above half that
/// drop. Excursions that take longer than 3 s to recover are not nods.
pub fn detect_nods(samples: &[Stamped<CameraSample>], cfg: &MetricsWindowConfig) -> Result<Vec<NodEvent>> {
    check_sorted(samples)?;
    let mut events = Vec::new();
    let mut history: VecDeque<(Timestamp, f64)> = VecDeque::new();
    let mut scratch = Vec::new();
    let mut state = NodState::Idle;
    let drop = cfg.nod_drop_deg;

    for s in samples {
        let Some(pitch) = s.value.head_pitch_deg.filter(|_| s.value.face_detected) else {
            state = NodState::Idle;
            continue;
        };
        while history.front().is_some_and(|(t, _)| s.ts.since(*t) > NOD_BASELINE_MS) {
            history.pop_front();
        }
        let baseline = (!history.is_empty()).then(|| {
            scratch.clear();
            scratch.extend(history.iter().map(|(_, p)| *p));
            median(&mut scratch)
        });

        state = match state {
            NodState::Idle => match baseline {
                Some(b) if pitch <= b - drop => NodState::Dipping {
                    onset: s.ts,
                    baseline: b,
                    lowest: pitch,
                },
                _ => NodState::Idle,
            },
            NodState::Dipping { onset, baseline, lowest } => {
                let lowest = lowest.min(pitch);
                let recovered = pitch > baseline - drop / 2.0;
                let elapsed = s.ts.since(onset);
                if recovered && elapsed <= NOD_RECOVERY_MS {
                    events.push(NodEvent {
                        onset_ts: onset,
                        drop_deg: baseline - lowest,
                    });
                    NodState::Idle
                } else if elapsed > NOD_RECOVERY_MS {
                    NodState::Holding
                } else {
                    NodState::Dipping { onset, baseline, lowest }
                }
            }
            NodState::Holding => match baseline {
                Some(b) if pitch > b - drop / 2.0 => NodState::Idle,
                _ => NodState::Holding,
            },
        };
        history.push_back((s.ts, pitch));
    }
    Ok(events)
}

fn saturate(value: f64, at: f64) -> f64 {
    (value / at).min(1.0)
}

/// Weighted composite of PERCLOS, long-blink rate and nod rate, each
/// normalised by its saturation point and clamped to `[0, 1]`.
pub fn camera_drowsiness(perclos: f64, long_blink_rate_per_min: f64, nod_rate_per_min: f64, cfg: &MetricsWindowConfig) -> f64 {
    let w = cfg.camera_weights;
    let d = w.perclos * saturate(perclos.max(0.0), PERCLOS_SATURATION)
        + w.long_blink * saturate(long_blink_rate_per_min.max(0.0), LONG_BLINK_SATURATION_PER_MIN)
        + w.nod * saturate(nod_rate_per_min.max(0.0), NOD_SATURATION_PER_MIN);
    d.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(ts: i64, aperture: f64) -> Stamped<CameraSample> {
        Stamped::new(
            Timestamp(ts),
            CameraSample {
                device_ts: Timestamp(ts),
                aperture: Some(aperture),
                gaze_yaw_deg: Some(0.0),
                gaze_pitch_deg: Some(0.0),
                head_yaw_deg: Some(0.0),
                head_pitch_deg: Some(0.0),
                head_roll_deg: Some(0.0),
                face_detected: true,
            },
        )
    }

    fn lost(ts: i64) -> Stamped<CameraSample> {
        Stamped::new(Timestamp(ts), CameraSample::face_lost(Timestamp(ts)))
    }

    fn gaze(ts: i64, yaw: f64) -> Stamped<CameraSample> {
        let mut s = cam(ts, 0.9);
        s.value.gaze_yaw_deg = Some(yaw);
        s
    }

    fn pitch(ts: i64, p: f64) -> Stamped<CameraSample> {
        let mut s = cam(ts, 0.9);
        s.value.head_pitch_deg = Some(p);
        s
    }

    /// Brute-force oracle: count every millisecond of the window held closed.
    fn perclos_by_millisecond(samples: &[Stamped<CameraSample>], window: Window, threshold: f64) -> Option<f64> {
        let (mut closed, mut observed) = (0u64, 0u64);
        for t in window.start.0..window.end.0 {
            let Some(s) = samples.iter().rev().find(|s| s.ts.0 <= t) else {
                continue;
            };
            if let Some(c) = s.value.closure() {
                observed += 1;
                if c >= threshold {
                    closed += 1;
                }
            }
        }
        (observed > 0).then(|| closed as f64 / observed as f64)
    }

    #[test]
    fn open_eyes_give_zero_perclos() {
        let samples: Vec<_> = (0..600).map(|i| cam(i * 100, 1.0)).collect();
        assert_eq!(perclos(&samples, &MetricsWindowConfig::default()).unwrap(), Some(0.0));
    }

    #[test]
    fn twelve_closed_seconds_in_a_minute() {
        let samples: Vec<_> = (0..600)
            .map(|i| {
                let t = i * 100;
                cam(t, if (20_000..32_000).contains(&t) { 0.0 } else { 1.0 })
            })
            .collect();
        let window = Window::new(Timestamp(0), Timestamp(60_000));
        assert_eq!(perclos_by_millisecond(&samples, window, 0.8), Some(0.2));
        let p80 = perclos(&samples, &MetricsWindowConfig::default()).unwrap().unwrap();
        let p70 = perclos(&samples, &MetricsWindowConfig::p70_one_minute()).unwrap().unwrap();
        assert!((p80 - 0.2).abs() < 1e-12);
        assert_eq!(p70, p80);
    }

    #[test]
    fn perclos_excludes_face_lost_time() {
        let samples = vec![cam(0, 0.0), lost(500), cam(1000, 1.0)];
        let w = Window::new(Timestamp(0), Timestamp(2000));
        // closed 500 ms, open 1000 ms, face lost 500 ms
        assert!((perclos_over(&samples, w, 0.8).unwrap().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(perclos_over(&[lost(0), lost(10)], w, 0.8).unwrap(), None);
    }

    #[test]
    fn perclos_rejects_bad_input() {
        let cfg = MetricsWindowConfig::default();
        assert!(perclos(&[], &cfg).is_err());
        assert!(perclos(&[cam(0, 1.0)], &cfg).is_err());
        assert!(perclos(&[cam(10, 1.0), cam(0, 1.0)], &cfg).is_err());
        let w = Window::new(Timestamp(0), Timestamp(100));
        assert!(perclos_over(&[cam(0, 1.0), cam(200, 1.0)], w, 0.8).is_err());
    }

    #[test]
    fn constant_open_eye_has_no_blinks() {
        let samples: Vec<_> = (0..100).map(|i| cam(i * 100, 1.0)).collect();
        assert!(detect_blinks(&samples, &MetricsWindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_pulse_is_one_blink() {
        // closure 1.0 held for 200 ms starting at t=1000, sampled at 10 Hz
        let samples: Vec<_> = (0..30)
            .map(|i| {
                let t = i * 100;
                cam(t, if (1000..1200).contains(&t) { 0.0 } else { 1.0 })
            })
            .collect();
        let events = detect_blinks(&samples, &MetricsWindowConfig::default()).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].duration_ms - 200).abs() <= 100);
        assert_eq!(events[0].close_ts, Timestamp(1000));
    }

    #[test]
    fn face_lost_gap_separates_blinks() {
        let mut samples = vec![cam(0, 1.0), cam(100, 0.0), cam(200, 0.0), cam(300, 1.0)];
        samples.extend([lost(400), lost(500)]);
        samples.extend([cam(600, 1.0), cam(700, 0.0), cam(800, 1.0)]);
        let events = detect_blinks(&samples, &MetricsWindowConfig::default()).unwrap();
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| e.reopen_ts <= Timestamp(400) || e.close_ts >= Timestamp(600)));
    }

    #[test]
    fn closure_lost_mid_blink_aborts_event() {
        let samples = vec![cam(0, 1.0), cam(100, 0.0), lost(200), cam(300, 1.0)];
        assert!(detect_blinks(&samples, &MetricsWindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn blink_open_at_end_is_dropped() {
        let samples = vec![cam(0, 1.0), cam(100, 0.0), cam(200, 0.0)];
        assert!(detect_blinks(&samples, &MetricsWindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn rates_per_minute() {
        let ev = |d| BlinkEvent {
            close_ts: Timestamp(0),
            reopen_ts: Timestamp(d),
            duration_ms: d,
        };
        assert_eq!(blink_rates(&[], 60_000, 500).unwrap(), (0.0, 0.0));
        let mut events: Vec<_> = (0..15).map(|_| ev(200)).collect();
        events.extend((0..3).map(|_| ev(500)));
        assert_eq!(blink_rates(&events, 60_000, 500).unwrap(), (18.0, 3.0));
        let nine: Vec<_> = (0..9).map(|_| ev(200)).collect();
        assert_eq!(blink_rates(&nine, 30_000, 500).unwrap().0, 9.0 * 60_000.0 / 30_000.0);
        assert!(blink_rates(&nine, 0, 500).is_err());
    }

    #[test]
    fn centred_gaze_is_attentive() {
        let samples: Vec<_> = (0..100).map(|i| gaze(i * 100, 0.0)).collect();
        let w = Window::new(Timestamp(0), Timestamp(10_000));
        let a = attention(&samples, w, &MetricsWindowConfig::default()).unwrap().unwrap();
        assert_eq!((a.fraction, a.distraction_active), (1.0, false));
    }

    #[test]
    fn averted_gaze_is_distraction() {
        let samples: Vec<_> = (0..100).map(|i| gaze(i * 100, 40.0)).collect();
        let w = Window::new(Timestamp(0), Timestamp(10_000));
        let a = attention(&samples, w, &MetricsWindowConfig::default()).unwrap().unwrap();
        assert_eq!((a.fraction, a.distraction_active), (0.0, true));
    }

    #[test]
    fn fifteen_seconds_off_road_in_a_minute() {
        let samples: Vec<_> = (0..600)
            .map(|i| {
                let t = i * 100;
                gaze(t, if (20_000..35_000).contains(&t) { 30.0 } else { 2.0 })
            })
            .collect();
        let w = Window::new(Timestamp(0), Timestamp(60_000));
        let a = attention(&samples, w, &MetricsWindowConfig::default()).unwrap().unwrap();
        assert!((a.fraction - 0.75).abs() < 1e-12);
        assert!(!a.distraction_active);
    }

    #[test]
    fn face_lost_counts_as_off_road() {
        let samples = vec![gaze(0, 0.0), lost(5_000)];
        let w = Window::new(Timestamp(0), Timestamp(10_000));
        let a = attention(&samples, w, &MetricsWindowConfig::default()).unwrap().unwrap();
        assert_eq!((a.fraction, a.distraction_active), (0.5, true));
    }

    #[test]
    fn empty_series_has_no_attention() {
        let w = Window::new(Timestamp(0), Timestamp(10_000));
        assert_eq!(attention(&[], w, &MetricsWindowConfig::default()).unwrap(), None);
    }

    #[test]
    fn constant_pitch_has_no_nods() {
        let samples: Vec<_> = (0..300).map(|i| pitch(i * 100, -3.0)).collect();
        assert!(detect_nods(&samples, &MetricsWindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_dip_is_one_nod() {
        // 25 degree dip lasting 1.5 s after 12 s of level head
        let samples: Vec<_> = (0..200)
            .map(|i| {
                let t = i * 100;
                pitch(t, if (12_000..13_500).contains(&t) { -25.0 } else { 0.0 })
            })
            .collect();
        let nods = detect_nods(&samples, &MetricsWindowConfig::default()).unwrap();
        assert_eq!(nods.len(), 1);
        assert!((nods[0].drop_deg - 25.0).abs() <= 2.0);
        assert_eq!(nods[0].onset_ts, Timestamp(12_000));
    }

    #[test]
    fn slow_drift_is_not_a_nod() {
        let samples: Vec<_> = (0..600).map(|i| pitch(i * 100, -25.0 * i as f64 / 600.0)).collect();
        assert!(detect_nods(&samples, &MetricsWindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn slow_recovery_is_not_a_nod() {
        // drops 25 degrees but stays down 5 s before coming back
        let samples: Vec<_> = (0..250)
            .map(|i| {
                let t = i * 100;
                pitch(t, if (12_000..17_000).contains(&t) { -25.0 } else { 0.0 })
            })
            .collect();
        assert!(detect_nods(&samples, &MetricsWindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn composite_camera_score() {
        let cfg = MetricsWindowConfig::default();
        assert_eq!(camera_drowsiness(0.0, 0.0, 0.0, &cfg), 0.0);
        assert!((camera_drowsiness(0.15, 6.0, 3.0, &cfg) - 1.0).abs() < 1e-12);
        assert!((camera_drowsiness(0.075, 0.0, 0.0, &cfg) - 0.25).abs() < 1e-12);
        assert!((camera_drowsiness(1.0, 60.0, 30.0, &cfg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(MetricsWindowConfig::default().validate().is_ok());
        assert!(MetricsWindowConfig::p80_half_minute().validate().is_ok());
        let bad = MetricsWindowConfig {
            blink_reopen_threshold: 0.9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MetricsWindowConfig {
            camera_weights: CameraWeights {
                perclos: 0.5,
                long_blink: 0.5,
                nod: 0.5,
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn series() -> impl Strategy<Value = Vec<Stamped<CameraSample>>> {
            prop::collection::vec((1i64..400, prop::option::weighted(0.9, 0.0f64..=1.0)), 1..40).prop_map(|steps| {
                let mut t = 0;
                steps
                    .into_iter()
                    .map(|(dt, ap)| {
                        t += dt;
                        match ap {
                            Some(a) => cam(t, a),
                            None => lost(t),
                        }
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn perclos_matches_oracle(samples in series(), tail in 0i64..500, threshold in 0.05f64..=1.0) {
                let w = Window::new(samples[0].ts, samples.last().unwrap().ts.offset(tail));
                let got = perclos_over(&samples, w, threshold).unwrap();
                let want = perclos_by_millisecond(&samples, w, threshold);
                match (got, want) {
                    (Some(g), Some(o)) => prop_assert!((g - o).abs() <= 1e-9 && (0.0..=1.0).contains(&g)),
                    (g, o) => prop_assert_eq!(g, o),
                }
            }

            #[test]
            fn perclos_monotone_in_threshold(samples in series(), a in 0.05f64..=1.0, b in 0.05f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let w = Window::new(samples[0].ts, samples.last().unwrap().ts.offset(100));
                let p_lo = perclos_over(&samples, w, lo).unwrap();
                let p_hi = perclos_over(&samples, w, hi).unwrap();
                if let (Some(l), Some(h)) = (p_lo, p_hi) {
                    prop_assert!(h <= l);
                }
            }

            #[test]
            fn blinks_are_ordered_and_disjoint(samples in series()) {
                let events = detect_blinks(&samples, &MetricsWindowConfig::default()).unwrap();
                for e in &events {
                    prop_assert!(e.reopen_ts > e.close_ts);
                    prop_assert_eq!(e.duration_ms, e.reopen_ts.since(e.close_ts));
                }
                for pair in events.windows(2) {
                    prop_assert!(pair[0].reopen_ts <= pair[1].close_ts);
                }
            }

            #[test]
            fn mid_band_jitter_never_blinks(closures in prop::collection::vec(0.601f64..0.799, 2..60)) {
                let samples: Vec<_> = closures.iter().enumerate().map(|(i, c)| cam(i as i64 * 100, 1.0 - c)).collect();
                prop_assert!(detect_blinks(&samples, &MetricsWindowConfig::default()).unwrap().is_empty());
            }

            #[test]
            fn attention_translation_invariant(yaws in prop::collection::vec(-40.0f64..40.0, 1..40), shift in 0i64..1_000_000) {
                let cfg = MetricsWindowConfig::default();
                let base: Vec<_> = yaws.iter().enumerate().map(|(i, y)| gaze(i as i64 * 250, *y)).collect();
                let moved: Vec<_> = base.iter().map(|s| Stamped::new(s.ts.offset(shift), s.value)).collect();
                let end = base.last().unwrap().ts.offset(250);
                let a = attention(&base, Window::new(Timestamp(0), end), &cfg).unwrap();
                let b = attention(&moved, Window::new(Timestamp(shift), end.offset(shift)), &cfg).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn camera_score_monotone(p in 0.0f64..0.3, l in 0.0f64..10.0, n in 0.0f64..5.0, dp in 0.0f64..0.1, dl in 0.0f64..3.0, dn in 0.0f64..2.0) {
                let cfg = MetricsWindowConfig::default();
                let base = camera_drowsiness(p, l, n, &cfg);
                prop_assert!((0.0..=1.0).contains(&base));
                prop_assert!(camera_drowsiness(p + dp, l, n, &cfg) >= base);
                prop_assert!(camera_drowsiness(p, l + dl, n, &cfg) >= base);
                prop_assert!(camera_drowsiness(p, l, n + dn, &cfg) >= base);
            }
        }
    }
}
