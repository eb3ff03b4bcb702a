//! Domain types shared by every stage of the collector, plus the JSON wire
//! envelope ([`TimedRecord`]) and the MQTT topic plan.
//!
//! Wire rules: optional fields are omitted instead of being written as
//! `null`, all timestamps are UTC epoch milliseconds, and unknown keys in
//! incoming records are ignored so vendors can attach extra fields.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Milliseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_ms(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn ms(self) -> i64 {
        self.0
    }

    /// Signed distance `self - earlier` in milliseconds.
    pub const fn since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }

    pub const fn offset(self, delta_ms: i64) -> Timestamp {
        Timestamp(self.0 + delta_ms)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceId {
    Radar,
    Wearable,
    Camera,
    Annotation,
    Fused,
}

impl SourceId {
    pub const ALL: [SourceId; 5] = [
        SourceId::Radar,
        SourceId::Wearable,
        SourceId::Camera,
        SourceId::Annotation,
        SourceId::Fused,
    ];

    /// The three physical sensors.
    pub const SENSORS: [SourceId; 3] = [SourceId::Radar, SourceId::Wearable, SourceId::Camera];

    pub const fn as_str(self) -> &'static str {
        match self {
            SourceId::Radar => "radar",
            SourceId::Wearable => "wearable",
            SourceId::Camera => "camera",
            SourceId::Annotation => "annotation",
            SourceId::Fused => "fused",
        }
    }

    pub const fn is_sensor(self) -> bool {
        matches!(self, SourceId::Radar | SourceId::Wearable | SourceId::Camera)
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown source {s:?}")))
    }
}

/// One reading of the vital-sign radar. HR and RR travel as deci-units on
/// the serial link, so both are multiples of 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarSample {
    /// Milliseconds since device boot; wraps at `u32::MAX`.
    pub device_ts: u32,
    pub hr_bpm: f64,
    pub rr_bpm: f64,
    pub distance_mm: f64,
    pub motion: bool,
    pub presence: bool,
}

impl RadarSample {
    pub fn validate(&self) -> Result<()> {
        check_range("radar hr_bpm", self.hr_bpm, 0.0, 300.0)?;
        check_range("radar rr_bpm", self.rr_bpm, 0.0, 60.0)?;
        check_range("radar distance_mm", self.distance_mm, 0.0, 65535.0)?;
        check_deci("radar hr_bpm", self.hr_bpm)?;
        check_deci("radar rr_bpm", self.rr_bpm)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WearableSample {
    pub device_ts: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hrv_rmssd_ms: Option<f64>,
    /// Opaque output of the wearable's own drowsiness predictor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drowsiness_score: Option<f64>,
    pub worn: bool,
}

impl WearableSample {
    pub fn validate(&self) -> Result<()> {
        check_timestamp("wearable device_ts", self.device_ts)?;
        if let Some(hr) = self.hr_bpm {
            if !self.worn {
                return Err(Error::validation("wearable hr_bpm present while not worn"));
            }
            check_range("wearable hr_bpm", hr, 0.0, 300.0)?;
        }
        if let Some(rr) = self.rr_bpm {
            check_range("wearable rr_bpm", rr, 0.0, 60.0)?;
        }
        if let Some(hrv) = self.hrv_rmssd_ms {
            check_range("wearable hrv_rmssd_ms", hrv, 0.0, f64::MAX)?;
        }
        if let Some(score) = self.drowsiness_score {
            check_range("wearable drowsiness_score", score, 0.0, 1.0)?;
        }
        Ok(())
    }
}

/// Eyelid aperture, gaze and head pose as reported by the smart camera.
/// When no face is detected every measurement is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSample {
    pub device_ts: Timestamp,
    /// Eyelid opening fraction, 1 = fully open.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_yaw_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_pitch_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_yaw_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_pitch_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_roll_deg: Option<f64>,
    pub face_detected: bool,
}

impl CameraSample {
    /// A sample with no face in view.
    pub fn face_lost(device_ts: Timestamp) -> Self {
        CameraSample {
            device_ts,
            aperture: None,
            gaze_yaw_deg: None,
            gaze_pitch_deg: None,
            head_yaw_deg: None,
            head_pitch_deg: None,
            head_roll_deg: None,
            face_detected: false,
        }
    }

    fn angles(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("gaze_yaw_deg", self.gaze_yaw_deg),
            ("gaze_pitch_deg", self.gaze_pitch_deg),
            ("head_yaw_deg", self.head_yaw_deg),
            ("head_pitch_deg", self.head_pitch_deg),
            ("head_roll_deg", self.head_roll_deg),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        check_timestamp("camera device_ts", self.device_ts)?;
        if !self.face_detected {
            let any = self.aperture.is_some() || self.angles().iter().any(|(_, v)| v.is_some());
            if any {
                return Err(Error::validation("camera measurements present without a face"));
            }
            return Ok(());
        }
        match self.aperture {
            Some(a) => check_range("camera aperture", a, 0.0, 1.0)?,
            None => return Err(Error::validation("camera aperture missing with face detected")),
        }
        for (name, value) in self.angles() {
            match value {
                Some(v) => check_range(name, v, -90.0, 90.0)?,
                None => return Err(Error::Validation(format!("camera {name} missing with face detected"))),
            }
        }
        Ok(())
    }

    /// Eyelid closure `1 - aperture`, absent when the face is lost.
    pub fn closure(&self) -> Option<f64> {
        if self.face_detected {
            self.aperture.map(|a| 1.0 - a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum AnnotationValue {
    /// Karolinska Sleepiness Scale, 1..=9.
    Kss(i64),
    /// Epworth Sleepiness Scale, 0..=24.
    Ess(i64),
    Marker(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub ts: Timestamp,
    #[serde(flatten)]
    pub value: AnnotationValue,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        check_timestamp("annotation ts", self.ts)?;
        match self.value {
            AnnotationValue::Kss(v) if !(1..=9).contains(&v) => {
                Err(Error::Validation(format!("kss {v} outside 1..=9")))
            }
            AnnotationValue::Ess(v) if !(0..=24).contains(&v) => {
                Err(Error::Validation(format!("ess {v} outside 0..=24")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningLevel {
    #[default]
    Normal,
    DrowsyWarning,
    Critical,
    DistractionWarning,
}

impl WarningLevel {
    pub const fn as_str(self) -> &'static str {
        match self {
            WarningLevel::Normal => "normal",
            WarningLevel::DrowsyWarning => "drowsy_warning",
            WarningLevel::Critical => "critical",
            WarningLevel::DistractionWarning => "distraction_warning",
        }
    }
}

impl fmt::Display for WarningLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WarningLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            WarningLevel::Normal,
            WarningLevel::DrowsyWarning,
            WarningLevel::Critical,
            WarningLevel::DistractionWarning,
        ]
        .into_iter()
        .find(|w| w.as_str() == s)
        .ok_or_else(|| Error::Schema(format!("unknown warning state {s:?}")))
    }
}

/// One grid-aligned output row of the fusion stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedRow {
    pub grid_ts: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_source: Option<SourceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr_source: Option<SourceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hrv_rmssd_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drowsiness_physio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perclos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blink_rate_per_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_blink_rate_per_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drowsiness_camera: Option<f64>,
    pub warning: WarningLevel,
    pub radar_reliable: bool,
    pub wearable_fresh: bool,
    pub camera_fresh: bool,
}

impl FusedRow {
    /// A row with every optional channel absent.
    pub fn empty(grid_ts: Timestamp) -> Self {
        FusedRow {
            grid_ts,
            hr_bpm: None,
            hr_source: None,
            rr_bpm: None,
            rr_source: None,
            hrv_rmssd_ms: None,
            drowsiness_physio: None,
            perclos: None,
            blink_rate_per_min: None,
            long_blink_rate_per_min: None,
            attention: None,
            drowsiness_camera: None,
            warning: WarningLevel::Normal,
            radar_reliable: false,
            wearable_fresh: false,
            camera_fresh: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_timestamp("grid_ts", self.grid_ts)?;
        for (name, value, source) in [
            ("hr", self.hr_bpm, self.hr_source),
            ("rr", self.rr_bpm, self.rr_source),
        ] {
            match (value, source) {
                (Some(v), Some(SourceId::Radar | SourceId::Wearable)) => check_range(name, v, 0.0, 300.0)?,
                (None, None) => {}
                (Some(_), Some(other)) => {
                    return Err(Error::Validation(format!("{name}_source {other} is not a vital-sign sensor")))
                }
                _ => return Err(Error::Validation(format!("{name} value and source must be present together"))),
            }
        }
        for (name, value) in [
            ("drowsiness_physio", self.drowsiness_physio),
            ("perclos", self.perclos),
            ("attention", self.attention),
            ("drowsiness_camera", self.drowsiness_camera),
        ] {
            if let Some(v) = value {
                check_range(name, v, 0.0, 1.0)?;
            }
        }
        for (name, value) in [
            ("hrv_rmssd_ms", self.hrv_rmssd_ms),
            ("blink_rate_per_min", self.blink_rate_per_min),
            ("long_blink_rate_per_min", self.long_blink_rate_per_min),
        ] {
            if let Some(v) = value {
                check_range(name, v, 0.0, f64::MAX)?;
            }
        }
        Ok(())
    }
}

/// The body of a [`TimedRecord`]; its variant must agree with the record's source.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Radar(RadarSample),
    Wearable(WearableSample),
    Camera(CameraSample),
    Annotation(Annotation),
    Fused(FusedRow),
}

impl Payload {
    pub fn source(&self) -> SourceId {
        match self {
            Payload::Radar(_) => SourceId::Radar,
            Payload::Wearable(_) => SourceId::Wearable,
            Payload::Camera(_) => SourceId::Camera,
            Payload::Annotation(_) => SourceId::Annotation,
            Payload::Fused(_) => SourceId::Fused,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Payload::Radar(s) => s.validate(),
            Payload::Wearable(s) => s.validate(),
            Payload::Camera(s) => s.validate(),
            Payload::Annotation(a) => a.validate(),
            Payload::Fused(r) => r.validate(),
        }
    }
}

/// Envelope for anything that crosses a transport or lands in the store.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimedRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub source: SourceId,
    /// Strictly increasing per (session, source), starting at 0.
    pub seq: u64,
    /// Timestamp on the producing device's own clock.
    pub device_ts_ms: i64,
    pub wall_ts_ms: Timestamp,
    pub payload: Payload,
}

impl TimedRecord {
    pub fn new(session_id: impl Into<String>, seq: u64, device_ts_ms: i64, wall_ts_ms: Timestamp, payload: Payload) -> Self {
        TimedRecord {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.into(),
            source: payload.source(),
            seq,
            device_ts_ms,
            wall_ts_ms,
            payload,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.session_id.is_empty() {
            return Err(Error::validation("empty session_id"));
        }
        if self.payload.source() != self.source {
            return Err(Error::Schema(format!(
                "payload of kind {} under source {}",
                self.payload.source(),
                self.source
            )));
        }
        check_timestamp("wall_ts_ms", self.wall_ts_ms)?;
        self.payload.validate()
    }
}

/// Serialize a record to its JSON wire form.
pub fn encode_record(record: &TimedRecord) -> String {
    // Validated records contain only finite reals and plain data, so this cannot fail.
    serde_json::to_string(record).expect("record serialization is infallible")
}

#[derive(Deserialize)]
struct WireRecord {
    schema_version: u32,
    session_id: String,
    source: SourceId,
    seq: u64,
    device_ts_ms: i64,
    wall_ts_ms: Timestamp,
    payload: serde_json::Value,
}

fn classify(err: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match err.classify() {
        Category::Syntax | Category::Eof | Category::Io => Error::Parse(err.to_string()),
        Category::Data => Error::Schema(err.to_string()),
    }
}

/// Parse and validate a JSON wire record. Unknown keys are ignored.
pub fn decode_record(text: &str) -> Result<TimedRecord> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(classify)?;
    let wire: WireRecord = serde_json::from_value(value).map_err(classify)?;
    if wire.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!("unsupported schema_version {}", wire.schema_version)));
    }
    let payload_err = |e: serde_json::Error| Error::Schema(format!("{} payload: {e}", wire.source));
    let payload = match wire.source {
        SourceId::Radar => Payload::Radar(serde_json::from_value(wire.payload).map_err(payload_err)?),
        SourceId::Wearable => Payload::Wearable(serde_json::from_value(wire.payload).map_err(payload_err)?),
        SourceId::Camera => Payload::Camera(serde_json::from_value(wire.payload).map_err(payload_err)?),
        SourceId::Annotation => Payload::Annotation(serde_json::from_value(wire.payload).map_err(payload_err)?),
        SourceId::Fused => Payload::Fused(serde_json::from_value(wire.payload).map_err(payload_err)?),
    };
    let record = TimedRecord {
        schema_version: wire.schema_version,
        session_id: wire.session_id,
        source: wire.source,
        seq: wire.seq,
        device_ts_ms: wire.device_ts_ms,
        wall_ts_ms: wire.wall_ts_ms,
        payload,
    };
    record.validate()?;
    Ok(record)
}

fn check_session_id(session_id: &str) -> Result<()> {
    if session_id.is_empty() {
        return Err(Error::validation("empty session id"));
    }
    if let Some(c) = session_id.chars().find(|c| matches!(c, '/' | '#' | '+') || c.is_control()) {
        return Err(Error::Validation(format!("session id contains forbidden character {c:?}")));
    }
    Ok(())
}

/// MQTT topic carrying a source's records for a session.
///
/// Sensor and annotation data go to `cabin/{session}/{source}/data`; fused rows
/// go to `cabin/{session}/fused`.
pub fn topic_for(session_id: &str, source: SourceId) -> Result<String> {
    check_session_id(session_id)?;
    Ok(match source {
        SourceId::Fused => format!("cabin/{session_id}/fused"),
        other => format!("cabin/{session_id}/{other}/data"),
    })
}

/// Reserved for device control.
pub fn control_topic(session_id: &str) -> Result<String> {
    check_session_id(session_id)?;
    Ok(format!("cabin/{session_id}/control"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub source: SourceId,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub subject_pseudo_id: String,
    pub started_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_at: Option<Timestamp>,
    #[serde(default)]
    pub devices: Vec<DeviceInfo>,
    #[serde(default)]
    pub clock_offset_ms: BTreeMap<SourceId, i64>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

/// A sample placed on the session timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stamped<T> {
    pub ts: Timestamp,
    pub value: T,
}

impl<T> Stamped<T> {
    pub fn new(ts: Timestamp, value: T) -> Self {
        Stamped { ts, value }
    }
}

fn check_range(name: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if !value.is_finite() || value < lo || value > hi {
        return Err(Error::Validation(format!("{name} = {value} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_deci(name: &str, value: f64) -> Result<()> {
    let scaled = value * 10.0;
    if (scaled - scaled.round()).abs() > 1e-6 {
        return Err(Error::Validation(format!("{name} = {value} is not a multiple of 0.1")));
    }
    Ok(())
}

fn check_timestamp(name: &str, ts: Timestamp) -> Result<()> {
    if ts.0 < 0 {
        return Err(Error::Validation(format!("{name} is negative")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kss(value: i64) -> TimedRecord {
        TimedRecord::new(
            "s01",
            3,
            1_000,
            Timestamp(1_700_000_000_000),
            Payload::Annotation(Annotation {
                ts: Timestamp(1_700_000_000_000),
                value: AnnotationValue::Kss(value),
            }),
        )
    }

    fn unworn() -> TimedRecord {
        TimedRecord::new(
            "s01",
            0,
            5,
            Timestamp(10),
            Payload::Wearable(WearableSample {
                device_ts: Timestamp(5),
                hr_bpm: None,
                rr_bpm: None,
                hrv_rmssd_ms: None,
                drowsiness_score: Some(0.25),
                worn: false,
            }),
        )
    }

    #[test]
    fn annotation_encodes_kind_and_value() {
        let text = encode_record(&kss(7));
        assert!(text.contains(r#""kind":"kss","value":7"#), "{text}");
        assert!(!text.contains("null"));
        assert_eq!(decode_record(&text).unwrap(), kss(7));
    }

    #[test]
    fn unworn_wearable_omits_hr() {
        let text = encode_record(&unworn());
        assert!(text.contains(r#""worn":false"#));
        assert!(!text.contains("hr_bpm"));
        assert!(!text.contains("null"));
    }

    #[test]
    fn envelope_field_names_are_fixed() {
        let v: serde_json::Value = serde_json::from_str(&encode_record(&unworn())).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        let mut expected = vec!["schema_version", "session_id", "source", "seq", "device_ts_ms", "wall_ts_ms", "payload"];
        expected.sort();
        let mut keys_sorted = keys.clone();
        keys_sorted.sort();
        assert_eq!(keys_sorted, expected);
    }

    #[test]
    fn extra_keys_are_ignored() {
        let mut v: serde_json::Value = serde_json::from_str(&encode_record(&unworn())).unwrap();
        v["battery"] = 55.into();
        v["payload"]["firmware"] = "2.1".into();
        assert_eq!(decode_record(&v.to_string()).unwrap(), unworn());
    }

    #[test]
    fn payload_must_match_source() {
        let mut v: serde_json::Value = serde_json::from_str(&encode_record(&unworn())).unwrap();
        v["source"] = "radar".into();
        assert!(matches!(decode_record(&v.to_string()), Err(Error::Schema(_))));
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(decode_record("{\"schema_version\":"), Err(Error::Parse(_))));
        assert!(matches!(decode_record("not json"), Err(Error::Parse(_))));
        assert!(matches!(decode_record("{\"schema_version\":1}"), Err(Error::Schema(_))));
        assert!(matches!(decode_record(&encode_record(&kss(12))), Err(Error::Validation(_))));
        assert!(matches!(decode_record(&encode_record(&kss(0))), Err(Error::Validation(_))));
        let mut v: serde_json::Value = serde_json::from_str(&encode_record(&kss(5))).unwrap();
        v["schema_version"] = 2.into();
        assert!(matches!(decode_record(&v.to_string()), Err(Error::Schema(_))));
    }

    #[test]
    fn ess_and_marker_ranges() {
        let ann = |value| Annotation { ts: Timestamp(0), value };
        assert!(ann(AnnotationValue::Ess(0)).validate().is_ok());
        assert!(ann(AnnotationValue::Ess(24)).validate().is_ok());
        assert!(ann(AnnotationValue::Ess(25)).validate().is_err());
        assert!(ann(AnnotationValue::Marker("MWT2 start".into())).validate().is_ok());
    }

    #[test]
    fn topic_plan() {
        assert_eq!(topic_for("s01", SourceId::Radar).unwrap(), "cabin/s01/radar/data");
        assert_eq!(topic_for("s01", SourceId::Fused).unwrap(), "cabin/s01/fused");
        assert_eq!(control_topic("s01").unwrap(), "cabin/s01/control");
        for bad in ["a/b", "a#", "+", ""] {
            assert!(matches!(topic_for(bad, SourceId::Camera), Err(Error::Validation(_))), "{bad}");
        }
    }

    #[test]
    fn camera_face_rules() {
        let mut lost = CameraSample::face_lost(Timestamp(1));
        assert!(lost.validate().is_ok());
        assert_eq!(lost.closure(), None);
        lost.aperture = Some(0.5);
        assert!(lost.validate().is_err());
    }

    #[test]
    fn radar_quantization_rule() {
        let s = RadarSample {
            device_ts: 0,
            hr_bpm: 72.05,
            rr_bpm: 15.0,
            distance_mm: 800.0,
            motion: false,
            presence: true,
        };
        assert!(s.validate().is_err());
        assert!(RadarSample { hr_bpm: 72.1, ..s }.validate().is_ok());
    }

    #[test]
    fn fused_row_pairs_value_with_source() {
        let mut row = FusedRow::empty(Timestamp(1000));
        assert!(row.validate().is_ok());
        row.hr_bpm = Some(70.0);
        assert!(row.validate().is_err());
        row.hr_source = Some(SourceId::Camera);
        assert!(row.validate().is_err());
        row.hr_source = Some(SourceId::Wearable);
        assert!(row.validate().is_ok());
    }
}
